"""``pickpoint`` command line: one subcommand per pipeline stage plus an end-to-end runner.

Every subcommand accepts ``--config FILE``: a flat JSON object whose keys are
the subcommand's flag names without the leading dashes (``"voxel-size": 0.01``).
Flags given on the command line override the config file.

stdout carries exactly one JSON line summarizing the run; logs go to stderr.
Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from pickpoint import __version__
from pickpoint.errors import PickPointError

log = logging.getLogger("pickpoint")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class UsageError(PickPointError):
    pass


class StageError(PickPointError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage


# --- argument plumbing -------------------------------------------------------------------

def _flag(p, name, type=str, default=None, help=None, **kw):
    if "action" not in kw:
        kw["type"] = type
    p.add_argument(f"--{name}", default=default, help=help, **kw)


def _add_filter_flags(p):
    _flag(p, "sigma1", int, 100, "red threshold: keep R > sigma1 (0-255)")
    _flag(p, "sigma2", int, 150, "green threshold: keep G <= sigma2 (0-255)")
    _flag(p, "knn", int, 20, "neighbours per point for the statistical filter")
    _flag(p, "alpha-v", float, 2.0, "interval half-width in standard deviations (0 < a < 3)")


def _add_detect_flags(p):
    _flag(p, "weights", help="SPNW weight file")
    _flag(p, "score-threshold", float, 0.3, "minimum class_prob * centerness")
    _flag(p, "nms-iou", float, 0.5, "suppress boxes overlapping a better one at IoU >= this")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pickpoint", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"pickpoint {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def cmd(name, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="flat JSON file keyed by flag names")
        return p

    p = cmd("calibrate", "estimate the camera->flange transform from a calibration sample file")
    _flag(p, "samples", help="calibration sample file (JSON)")
    _flag(p, "out", help="output transform file (JSON)")

    p = cmd("stitch", "map every view of a manifest into the base frame and concatenate")
    _flag(p, "manifest", help="view-set manifest (JSON)")
    _flag(p, "out", help="output cloud (PLY)")
    _flag(p, "format", default="ply_binary_le", choices=("ply_ascii", "ply_binary_le"))

    p = cmd("filter", "color filter followed by the statistical outlier filter")
    _flag(p, "input", help="input cloud (PLY or PCD)")
    _flag(p, "out", help="output cloud (PLY)")
    _add_filter_flags(p)
    _flag(p, "stage", default="both", choices=("color", "statistical", "both"))
    _flag(p, "format", default="ply_binary_le", choices=("ply_ascii", "ply_binary_le"))

    p = cmd("downsample", "voxel-grid centroid downsampling")
    _flag(p, "input", help="input cloud (PLY or PCD)")
    _flag(p, "out", help="output cloud (PLY)")
    _flag(p, "voxel-size", float, 0.01, "voxel edge length in meters")
    _flag(p, "format", default="ply_binary_le", choices=("ply_ascii", "ply_binary_le"))

    p = cmd("detect", "run the sparse detector on a preprocessed cloud")
    _flag(p, "input", help="preprocessed cloud (PLY or PCD)")
    _flag(p, "out", help="output detections (JSON box file)")
    _flag(p, "voxel-size", float, 0.01, "network input voxel size in meters")
    _flag(p, "scene-id", default="scene", help="scene identifier in the output file")
    _add_detect_flags(p)

    p = cmd("eval", "match detections to ground truth and write the metric report")
    _flag(p, "pred", help="prediction box file")
    _flag(p, "gt", help="ground-truth box file")
    _flag(p, "out-dir", help="directory for report.json, errors.csv and figures")
    _flag(p, "iou-threshold", float, 0.25, "minimum IoU for a match")
    _flag(p, "no-figures", default=False, action="store_true", help="skip the PNG figures")

    p = cmd("synth", "write a synthetic scene: views, manifest, ground truth, calibration samples")
    _flag(p, "out-dir", help="output directory")
    _flag(p, "seed", int, 0, "scene and noise seed")
    _flag(p, "occlusion", default="none", choices=("none", "slight", "severe"))
    _flag(p, "n-clusters", int, 3, "fruit clusters (one picking point each)")
    _flag(p, "leaf-count", int, 40, "background leaves")
    _flag(p, "pitch", float, 0.0015, "surface sampling pitch in meters")
    _flag(p, "depth-sigma", float, 0.0005, "depth noise along the ray (m)")
    _flag(p, "dropout", float, 0.02, "per-point dropout probability")
    _flag(p, "n-calib", int, 16, "calibration poses")
    _flag(p, "calib-rot-sigma", float, 0.1, "board observation rotation noise (deg)")
    _flag(p, "calib-trans-sigma", float, 0.001, "board observation translation noise (m)")

    p = cmd("weights", "write a detector weight file")
    _flag(p, "out", help="output SPNW file")
    _flag(p, "kind", default="constructed", choices=("constructed", "random"))
    _flag(p, "seed", int, 0, "seed for --kind random")
    _flag(p, "voxel-size", float, 0.01, "voxel size the constructed detector is tuned for")

    p = cmd("pipeline", "stitch -> filter -> downsample -> detect -> (eval) in one run")
    _flag(p, "manifest", help="view-set manifest (JSON)")
    _flag(p, "out-dir", help="output directory")
    _flag(p, "gt", help="optional ground-truth box file; enables the report")
    _flag(p, "scene-id", help="scene identifier (default: the single scene in --gt, else 'scene')")
    _flag(p, "voxel-size", float, 0.01, "downsampling and network voxel size (m)")
    _flag(p, "iou-threshold", float, 0.25, "minimum IoU for a match")
    _add_filter_flags(p)
    _add_detect_flags(p)
    _flag(p, "skip-detect", default=False, action="store_true",
          help="stop after downsampling and emit the preprocessed cloud")
    _flag(p, "no-figures", default=False, action="store_true", help="skip the PNG figures")
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(EXIT_INPUT)
    if getattr(args, "config", None):
        sub = _subparser(parser, args.command)
        flags = {a.option_strings[0][2:]: a for a in sub._actions
                 if a.option_strings and a.option_strings[0].startswith("--") and a.dest not in ("help", "config")}
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config '{args.config}': {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config '{args.config}' is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"config '{args.config}' must be a flat JSON object")
        defaults = {}
        for key, value in doc.items():
            if key not in flags:
                raise UsageError(f"unknown config key '{key}' for '{args.command}'")
            action = flags[key]
            if action.type is not None and value is not None:
                try:
                    value = action.type(value)
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"config key '{key}': {exc}") from exc
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config key '{key}': {value!r} not one of {list(action.choices)}")
            defaults[action.dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) in (None, ""):
            raise UsageError(f"missing required setting '{name}'")


def _path_exists(args, *names):
    for name in names:
        p = getattr(args, name.replace("-", "_"))
        if p is not None and not Path(p).exists():
            raise UsageError(f"'{name}' path does not exist: {p}")


# --- subcommands -----------------------------------------------------------------------------

def cmd_calibrate(args, timer):
    from pickpoint.geometry import estimate_hand_eye, load_calibration, save_transform
    _require(args, "samples", "out")
    _path_exists(args, "samples")
    samples, board = load_calibration(args.samples)
    t = estimate_hand_eye(samples, board)
    save_transform(args.out, t)
    return {"samples": len(samples), "out": args.out}


def cmd_stitch(args, timer):
    from pickpoint.pointcloud import write_cloud
    from pickpoint.stitch import load_manifest, stitch_views
    _require(args, "manifest", "out")
    _path_exists(args, "manifest")
    views, hand_eye = load_manifest(args.manifest)
    cloud = stitch_views(views, hand_eye)
    write_cloud(cloud, args.out, args.format)
    return {"views": {v.view_label: len(v.cloud) for v in views}, "points": len(cloud)}


def cmd_filter(args, timer):
    from pickpoint.pointcloud import read_cloud, write_cloud
    from pickpoint.preprocess import ColorFilterParams, StatFilterParams, color_filter, statistical_filter
    _require(args, "input", "out")
    _path_exists(args, "input")
    cp = ColorFilterParams(args.sigma1, args.sigma2)
    sp = StatFilterParams(args.knn, args.alpha_v)
    cloud = read_cloud(args.input)
    n_in = len(cloud)
    out = {"input": n_in}
    if args.stage in ("color", "both"):
        cloud = color_filter(cloud, cp)
        out["after_color"] = len(cloud)
    if args.stage in ("statistical", "both"):
        cloud = statistical_filter(cloud, sp)
        out["after_statistical"] = len(cloud)
    write_cloud(cloud, args.out, args.format)
    out["points"] = len(cloud)
    return out


def cmd_downsample(args, timer):
    from pickpoint.pointcloud import read_cloud, write_cloud
    from pickpoint.preprocess import VoxelParams, voxel_downsample
    _require(args, "input", "out")
    _path_exists(args, "input")
    vp = VoxelParams(args.voxel_size)
    cloud = read_cloud(args.input)
    out = voxel_downsample(cloud, vp)
    write_cloud(out, args.out, args.format)
    return {"input": len(cloud), "points": len(out)}


def _check_detect_params(args):
    for name in ("score_threshold", "nms_iou"):
        v = getattr(args, name)
        if not (0.0 <= v <= 1.0):
            raise UsageError(f"{name.replace('_', '-')} must lie in [0, 1], got {v}")
    if not args.voxel_size > 0:
        raise UsageError(f"voxel-size must be > 0, got {args.voxel_size}")


def cmd_detect(args, timer):
    from pickpoint.eval import save_boxes
    from pickpoint.pointcloud import read_cloud
    from pickpoint.sparsenn import detect, load_weights
    _require(args, "input", "weights", "out")
    _path_exists(args, "input", "weights")
    _check_detect_params(args)
    weights = load_weights(args.weights)
    cloud = read_cloud(args.input)
    boxes = detect(cloud, weights, args.voxel_size, args.score_threshold, args.nms_iou)
    save_boxes(args.out, {args.scene_id: boxes})
    return {"points": len(cloud), "detections": len(boxes)}


def _write_report(out_dir: Path, report, figures: bool) -> list:
    from pickpoint.eval import write_error_csv, write_report
    written = [out_dir / "report.json", out_dir / "errors.csv"]
    write_report(written[0], report)
    write_error_csv(written[1], report)
    if figures:
        from pickpoint.plotting import plot_error_histograms, plot_error_scatter
        written += [out_dir / "errors_scatter.png", out_dir / "errors_hist.png"]
        plot_error_scatter(report.errors, written[2])
        plot_error_histograms(report.histogram, written[3])
    return written


def _metrics_summary(report):
    d = report.metrics.to_dict()
    d.update(report.totals())
    return d


def cmd_eval(args, timer):
    from pickpoint.eval import evaluate_dataset, load_boxes
    _require(args, "pred", "gt", "out-dir")
    _path_exists(args, "pred", "gt")
    if not (0.0 < args.iou_threshold <= 1.0):
        raise UsageError(f"iou-threshold must lie in (0, 1], got {args.iou_threshold}")
    preds, gts = load_boxes(args.pred), load_boxes(args.gt)
    report = evaluate_dataset(preds, gts, args.iou_threshold)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _write_report(out_dir, report, not args.no_figures)
    return {"scenes": len(report.per_scene), **_metrics_summary(report), "files": [p.name for p in files]}


def cmd_synth(args, timer):
    from pickpoint.synth import NoiseModel, SceneSpec, write_bundle
    _require(args, "out-dir")
    try:
        spec = SceneSpec(seed=args.seed, n_clusters=args.n_clusters, leaf_count=args.leaf_count,
                         sampling_pitch=args.pitch, occlusion_level=args.occlusion)
        noise = NoiseModel(depth_sigma=args.depth_sigma, dropout_rate=args.dropout)
        calib = NoiseModel(pose_rot_sigma=args.calib_rot_sigma, pose_trans_sigma=args.calib_trans_sigma)
    except PickPointError as exc:
        raise UsageError(str(exc)) from exc
    info = write_bundle(args.out_dir, spec, noise, calib, args.n_calib, args.seed)
    return info


def cmd_weights(args, timer):
    from pickpoint.sparsenn import constructed_weights, random_weights, save_weights
    _require(args, "out")
    if args.kind == "constructed":
        w = constructed_weights(args.voxel_size)
    else:
        w = random_weights(seed=args.seed, with_prune=True)
    save_weights(w, args.out)
    return {"kind": args.kind, "layers": len(w.tensors), "fingerprint": w.config.fingerprint()}


def cmd_pipeline(args, timer):
    from pickpoint.eval import evaluate_dataset, load_boxes, save_boxes
    from pickpoint.pointcloud import write_cloud
    from pickpoint.preprocess import (
        ColorFilterParams, StatFilterParams, VoxelParams, color_filter, statistical_filter, voxel_downsample,
    )
    from pickpoint.sparsenn import build_sparse_tensor, decode_detections, load_weights, network_forward
    from pickpoint.stitch import load_manifest, stitch_views

    _require(args, "manifest", "out-dir")
    if not args.skip_detect:
        _require(args, "weights")
        _check_detect_params(args)
    _path_exists(args, "manifest", "gt", *(() if args.skip_detect else ("weights",)))
    if not (0.0 < args.iou_threshold <= 1.0):
        raise UsageError(f"iou-threshold must lie in (0, 1], got {args.iou_threshold}")
    try:
        cp = ColorFilterParams(args.sigma1, args.sigma2)
        sp = StatFilterParams(args.knn, args.alpha_v)
        vp = VoxelParams(args.voxel_size)
    except PickPointError as exc:
        raise UsageError(str(exc)) from exc

    out_dir = Path(args.out_dir)
    created_dir = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    counts = {}

    def stage(name, fn, *a):
        t0 = time.perf_counter()
        try:
            return fn(*a)
        except PickPointError as exc:
            raise StageError(name, exc) from exc
        finally:
            timer[name] = round(time.perf_counter() - t0, 4)
            log.info("pipeline stage %s: %.3f s", name, timer[name])

    try:
        gts = stage("load-gt", load_boxes, args.gt) if args.gt else None
        weights = None if args.skip_detect else stage("load-weights", load_weights, args.weights)
        views, hand_eye = stage("load-views", load_manifest, args.manifest)
        cloud = stage("stitch", stitch_views, views, hand_eye)
        counts["stitched"] = len(cloud)
        cloud = stage("color-filter", color_filter, cloud, cp)
        counts["after_color"] = len(cloud)
        cloud = stage("statistical-filter", statistical_filter, cloud, sp)
        counts["after_statistical"] = len(cloud)
        cloud = stage("downsample", voxel_downsample, cloud, vp)
        counts["downsampled"] = len(cloud)
        written.append(out_dir / "preprocessed.ply")
        write_cloud(cloud, written[-1], "ply_binary_le")
        if args.skip_detect:
            return {**counts, "files": [p.name for p in written]}

        tensor = stage("voxelize", build_sparse_tensor, cloud, args.voxel_size)
        outputs = stage("network", network_forward, tensor, weights)
        boxes = stage("decode", decode_detections, outputs, args.voxel_size, args.score_threshold, args.nms_iou)
        counts["detections"] = len(boxes)
        scene_id = args.scene_id
        if scene_id is None:
            scene_id = next(iter(gts)) if gts is not None and len(gts) == 1 else "scene"
        written.append(out_dir / "detections.json")
        save_boxes(written[-1], {scene_id: boxes})
        summary = {**counts}
        if gts is not None:
            if scene_id not in gts:
                raise StageError("eval", PickPointError(f"scene '{scene_id}' not found in ground truth"))
            report = stage("eval", evaluate_dataset, {scene_id: boxes}, {scene_id: gts[scene_id]},
                           args.iou_threshold)
            written += _write_report(out_dir, report, not args.no_figures)
            summary.update(_metrics_summary(report))
        summary["files"] = [p.name for p in written]
        return summary
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        if created_dir and not any(out_dir.iterdir()):
            out_dir.rmdir()
        raise


COMMANDS = {
    "calibrate": cmd_calibrate, "stitch": cmd_stitch, "filter": cmd_filter,
    "downsample": cmd_downsample, "detect": cmd_detect, "eval": cmd_eval,
    "synth": cmd_synth, "weights": cmd_weights, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"pickpoint: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # argparse usage errors, --help, --version
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2), force=True)
    timer = {}
    t0 = time.perf_counter()
    try:
        result = COMMANDS[args.command](args, timer)
    except PickPointError as exc:
        print(f"pickpoint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"pickpoint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a bug
        log.exception("internal error")
        print(f"pickpoint {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    timer["total"] = round(time.perf_counter() - t0, 4)
    summary = {"command": args.command, "status": "ok", **result, "timings": timer}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
