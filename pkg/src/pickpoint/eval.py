"""Box matching, detection metrics and localization-error reporting.

Box files (JSON) hold either a bare list of boxes (one scene, named after the
file stem) or ``{"scenes": {"<scene id>": [box, ...], ...}}`` where a box is
``{"center": [x, y, z], "size": [w, h, l], "score": s, "label": "..."}``
(``score`` and ``label`` optional).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from pickpoint.errors import ParseError, PickPointError

DEFAULT_IOU_THRESHOLD = 0.25
DEFAULT_LABEL = "picking_point"


@dataclass(frozen=True)
class BoundingBox3D:
    """Axis-aligned box: ``center`` (m), ``size`` = (w, h, l) along (x, y, z) in m."""

    center: tuple
    size: tuple
    score: Optional[float] = None
    label: str = DEFAULT_LABEL

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("center and size need three components")
        if not all(v > 0 for v in s):
            raise ValueError(f"box sizes must be positive, got {s}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        if self.score is not None:
            object.__setattr__(self, "score", float(self.score))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * np.asarray(self.size)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * np.asarray(self.size)

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz).reshape(-1, 3)
        return np.all((xyz >= self.lo) & (xyz <= self.hi), axis=1)

    def to_dict(self) -> dict:
        d = {"center": list(self.center), "size": list(self.size)}
        if self.score is not None:
            d["score"] = self.score
        if self.label != DEFAULT_LABEL:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> BoundingBox3D:
        return cls(tuple(d["center"]), tuple(d["size"]), d.get("score"), d.get("label", DEFAULT_LABEL))


def iou3d(a: BoundingBox3D, b: BoundingBox3D) -> float:
    overlap = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
    if np.any(overlap <= 0.0):
        return 0.0
    inter = float(np.prod(overlap))
    # volumes from the same corner arithmetic, so identical boxes give exactly 1
    va, vb = float(np.prod(a.hi - a.lo)), float(np.prod(b.hi - b.lo))
    return min(1.0, inter / (va + vb - inter))


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    tn: int = 0
    pairs: list = field(default_factory=list)  # (pred index, gt index, iou)


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    # TP / (TP + FP): the convention the occlusion-study table reports as accuracy
    accuracy_tp_fp: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("precision", "recall", "f1", "accuracy", "accuracy_tp_fp", "degenerate")}


def _ratio(num, den):
    return (num / den, False) if den > 0 else (0.0, True)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; works for fractions or percentages alike."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(m: MatchResult) -> DetectionMetrics:
    """Precision, recall, F1 and accuracy from match counts.

    Any 0/0 ratio evaluates to 0 and sets ``degenerate``.
    """
    p, d1 = _ratio(m.tp, m.tp + m.fp)
    r, d2 = _ratio(m.tp, m.tp + m.fn)
    f1, d3 = _ratio(2.0 * p * r, p + r)
    acc, d4 = _ratio(m.tp + m.tn, m.tp + m.fn + m.fp + m.tn)
    acc2, d5 = _ratio(m.tp, m.tp + m.fp)
    return DetectionMetrics(p, r, f1, acc, acc2, d1 or d2 or d3 or d4 or d5)


def _score_key(box: BoundingBox3D) -> float:
    return -(box.score if box.score is not None else 1.0)


def match(preds: Sequence[BoundingBox3D], gts: Sequence[BoundingBox3D],
          iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedy matching: predictions by descending score, each to the free ground truth of highest IoU."""
    if not (0.0 < iou_threshold <= 1.0):
        raise PickPointError(f"iou threshold must lie in (0, 1], got {iou_threshold}")
    order = sorted(range(len(preds)), key=lambda i: (_score_key(preds[i]), i))
    taken = [False] * len(gts)
    pairs = []
    for pi in order:
        best, best_iou = -1, iou_threshold
        for gi, gt in enumerate(gts):
            if taken[gi]:
                continue
            v = iou3d(preds[pi], gt)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = gi, v
        if best >= 0:
            taken[best] = True
            pairs.append((pi, best, best_iou))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(preds) - tp, fn=len(gts) - tp, tn=0, pairs=pairs)


def localization_error(pred: BoundingBox3D, gt: BoundingBox3D) -> tuple:
    """Signed per-axis center error ``pred - gt`` in meters."""
    return tuple(float(p - g) for p, g in zip(pred.center, gt.center))


@dataclass
class EvaluationReport:
    metrics: DetectionMetrics
    per_scene: dict  # scene id -> MatchResult
    errors: np.ndarray  # (n_matched, 3) signed errors, scene-sorted
    error_scenes: list
    histogram: dict = field(default_factory=dict)

    def totals(self) -> dict:
        tp = sum(m.tp for m in self.per_scene.values())
        fp = sum(m.fp for m in self.per_scene.values())
        fn = sum(m.fn for m in self.per_scene.values())
        return {"tp": tp, "fp": fp, "fn": fn, "tn": 0}

    def to_dict(self) -> dict:
        errs = self.errors
        summary = {}
        if len(errs):
            summary = {
                "max_abs": [float(v) for v in np.abs(errs).max(axis=0)],
                "mean": [float(v) for v in errs.mean(axis=0)],
                "rmse": [float(v) for v in np.sqrt((errs ** 2).mean(axis=0))],
            }
        return {
            "metrics": self.metrics.to_dict(),
            "totals": self.totals(),
            "scenes": {
                sid: {"tp": m.tp, "fp": m.fp, "fn": m.fn,
                      "pairs": [[int(a), int(b), float(c)] for a, b, c in m.pairs]}
                for sid, m in self.per_scene.items()
            },
            "localization_error": {"n": int(len(errs)), **summary},
            "histogram": self.histogram,
        }


def error_histogram(errors: np.ndarray, bin_width: float = 0.0025, limit: float = 0.03) -> dict:
    edges = np.arange(-limit, limit + bin_width / 2, bin_width)
    out = {"edges": [round(float(e), 10) for e in edges]}
    for k, axis in enumerate("xyz"):
        col = errors[:, k] if len(errors) else np.zeros(0)
        counts, _ = np.histogram(np.clip(col, -limit, limit), bins=edges)
        out[axis] = [int(c) for c in counts]
    return out


def evaluate_dataset(pred_sets: Mapping[str, Sequence[BoundingBox3D]],
                     gt_sets: Mapping[str, Sequence[BoundingBox3D]],
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> EvaluationReport:
    """Match every scene, then micro-average counts across scenes."""
    for sid in pred_sets:
        if sid not in gt_sets:
            raise PickPointError(f"scene '{sid}' has predictions but no ground truth")
    for sid in gt_sets:
        if sid not in pred_sets:
            raise PickPointError(f"scene '{sid}' has ground truth but no predictions")
    per_scene = {}
    errors, error_scenes = [], []
    for sid in sorted(gt_sets):
        preds, gts = pred_sets[sid], gt_sets[sid]
        m = match(preds, gts, iou_threshold)
        per_scene[sid] = m
        for pi, gi, _ in m.pairs:
            errors.append(localization_error(preds[pi], gts[gi]))
            error_scenes.append(sid)
    tp = sum(m.tp for m in per_scene.values())
    fp = sum(m.fp for m in per_scene.values())
    fn = sum(m.fn for m in per_scene.values())
    agg = metrics(MatchResult(tp, fp, fn, 0))
    err = np.asarray(errors, dtype=np.float64).reshape(-1, 3)
    return EvaluationReport(agg, per_scene, err, error_scenes, error_histogram(err))


# --- files ----------------------------------------------------------------------

def load_boxes(path) -> dict[str, list[BoundingBox3D]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        if isinstance(doc, list):
            return {path.stem: [BoundingBox3D.from_dict(b) for b in doc]}
        return {str(sid): [BoundingBox3D.from_dict(b) for b in boxes]
                for sid, boxes in doc["scenes"].items()}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad box file {path}: {exc}") from exc


def save_boxes(path, scenes: Mapping[str, Sequence[BoundingBox3D]]) -> None:
    doc = {"scenes": {sid: [b.to_dict() for b in boxes] for sid, boxes in sorted(scenes.items())}}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def write_error_csv(path, report: EvaluationReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene", "dx", "dy", "dz"])
        for sid, (dx, dy, dz) in zip(report.error_scenes, report.errors.tolist()):
            w.writerow([sid, repr(dx), repr(dy), repr(dz)])


def write_report(path, report: EvaluationReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
