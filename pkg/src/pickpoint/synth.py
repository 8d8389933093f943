"""Deterministic synthetic fruit-cluster scenes, camera views and calibration sets.

World frame = robot base frame, z up, meters.  A horizontal brown branch
runs along x; from its underside hang short vertical stems (the picking
segments), each carrying a cluster of red spherical fruit.  Green elliptic
leaves sit behind the clusters; the occlusion levels add leaves in front of
the fruit ("slight") and in front of the stems ("severe").  Leaf points are
always appended last, so the non-leaf part of a scene is identical for every
occlusion level of a given seed.

Surfaces are sampled on regular parameter grids at ``sampling_pitch``; all
randomness comes from ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pickpoint.errors import PickPointError
from pickpoint.eval import BoundingBox3D, save_boxes
from pickpoint.geometry import (
    CalibrationSample, RigidTransform, compose, invert, rot_x, rot_z,
    rotvec_to_matrix, save_calibration, transform_points,
)
from pickpoint.pointcloud import ColoredPointCloud, write_cloud
from pickpoint.stitch import ViewCapture, save_manifest

OCCLUSION_LEVELS = ("none", "slight", "severe")
PART_BRANCH, PART_STEM, PART_FRUIT, PART_LEAF = 0, 1, 2, 3

STEM_RGB = (150, 120, 50)
BRANCH_RGB = (120, 80, 45)
FRUIT_RGB = (200, 35, 45)
LEAF_RGB = (60, 170, 60)

GT_BOX_SIDE = 0.03
BRANCH_RADIUS = 0.008
CLUSTER_SPACING = 0.17

IMAGE_SIZE = 512
FOV_DEG = 60.0
MAX_RANGE = 2.0
STANDOFF = 0.5
VIEW_AZIMUTHS = (("A", 0.0), ("B", 45.0), ("C", -45.0))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_clusters: int = 3
    cluster_radius: float = 0.045
    stem_length: float = 0.06
    stem_radius: float = 0.004
    leaf_count: int = 40
    sampling_pitch: float = 0.0015
    occlusion_level: str = "none"
    fruit_radius: float = 0.016
    fruits_per_cluster: int = 8

    def __post_init__(self):
        if self.occlusion_level not in OCCLUSION_LEVELS:
            raise PickPointError(f"occlusion level must be one of {OCCLUSION_LEVELS}, got {self.occlusion_level!r}")
        if self.n_clusters < 1:
            raise PickPointError("n_clusters must be >= 1")
        for name in ("cluster_radius", "stem_length", "stem_radius", "sampling_pitch", "fruit_radius"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise PickPointError(f"{name} must be > 0, got {v}")
        if self.leaf_count < 0 or self.fruits_per_cluster < 1:
            raise PickPointError("leaf_count must be >= 0 and fruits_per_cluster >= 1")
        if self.fruit_radius > self.cluster_radius:
            raise PickPointError("fruit_radius cannot exceed cluster_radius")


@dataclass(frozen=True)
class NoiseModel:
    depth_sigma: float = 0.0
    dropout_rate: float = 0.0
    pose_rot_sigma: float = 0.0    # degrees, per rotation-vector component
    pose_trans_sigma: float = 0.0  # meters, per axis

    def __post_init__(self):
        for name in ("depth_sigma", "pose_rot_sigma", "pose_trans_sigma"):
            if not getattr(self, name) >= 0:
                raise PickPointError(f"{name} must be >= 0")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise PickPointError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @classmethod
    def sensor(cls) -> NoiseModel:
        """Mild depth-camera noise used by the CLI and the end-to-end tests."""
        return cls(depth_sigma=0.0005, dropout_rate=0.02)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    cloud: ColoredPointCloud
    gt_boxes: list
    surface_samples: np.ndarray
    parts: np.ndarray                  # per-point PART_* code
    spec: Optional[SceneSpec] = None
    point_spacing: float = 0.0015
    stem_axes: list = field(default_factory=list)  # (top, bottom) endpoints per stem

    @property
    def look_at(self) -> np.ndarray:
        return np.mean([b.center for b in self.gt_boxes], axis=0) if self.gt_boxes else \
            self.cloud.xyz.mean(axis=0)


# --- surface samplers (regular parameter grids) ----------------------------------------------

def _fibonacci_sphere(center, radius, pitch):
    n = max(int(round(4.0 * math.pi * radius * radius / (pitch * pitch))), 1)
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = math.pi * (1.0 + 5.0 ** 0.5) * i
    d = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    return np.asarray(center) + radius * d


def _cylinder(p0, p1, radius, pitch):
    """Lateral surface of the cylinder with axis p0 -> p1."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    a = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)
    n_ang = max(int(round(2.0 * math.pi * radius / pitch)), 3)
    n_len = max(int(round(length / pitch)), 1)
    ang = 2.0 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
    t = (np.arange(n_len) + 0.5) / n_len
    tt, aa = np.meshgrid(t, ang, indexing="ij")
    tt, aa = tt.ravel(), aa.ravel()
    ring = np.cos(aa)[:, None] * u + np.sin(aa)[:, None] * v
    return p0 + tt[:, None] * axis + radius * ring


def _ellipse(center, rotation, a, b, pitch):
    """Flat elliptic patch in the local xz plane (normal = local y), then rotated."""
    xs = np.arange(-a + pitch / 2, a, pitch)
    zs = np.arange(-b + pitch / 2, b, pitch)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    keep = (gx / a) ** 2 + (gz / b) ** 2 <= 1.0
    local = np.stack([gx[keep], np.zeros(keep.sum()), gz[keep]], axis=1)
    return np.asarray(center) + local @ np.asarray(rotation).T


def _colors(n, rgb, jitter, rng):
    base = np.tile(np.asarray(rgb, dtype=np.int64), (n, 1))
    if jitter:
        base = base + rng.integers(-jitter, jitter + 1, size=(n, 3))
    return np.clip(base, 0, 255).astype(np.uint8)


# --- scene ---------------------------------------------------------------------------------------------

def generate_scene(spec: SceneSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    pitch = spec.sampling_pitch
    n = spec.n_clusters
    origin = np.array([0.55, 0.0, 0.45])
    half_span = 0.5 * CLUSTER_SPACING * (n - 1) + 0.12

    parts_xyz, parts_rgb, parts_code = [], [], []

    def add(xyz, rgb, jitter, code):
        parts_xyz.append(xyz)
        parts_rgb.append(_colors(len(xyz), rgb, jitter, rng))
        parts_code.append(np.full(len(xyz), code, dtype=np.int8))

    branch_z = origin[2] + rng.uniform(-0.01, 0.01)
    add(_cylinder(origin + [-half_span, 0.0, branch_z - origin[2]], origin + [half_span, 0.0, branch_z - origin[2]],
                  BRANCH_RADIUS, pitch), BRANCH_RGB, 6, PART_BRANCH)

    boxes, axes, clusters = [], [], []
    for i in range(n):
        x = origin[0] + (i - (n - 1) / 2) * CLUSTER_SPACING + rng.uniform(-0.01, 0.01)
        y = rng.uniform(-0.003, 0.003)
        top = np.array([x, y, branch_z - 0.5 * BRANCH_RADIUS])
        bottom = top - [0.0, 0.0, spec.stem_length]
        add(_cylinder(top, bottom, spec.stem_radius, pitch), STEM_RGB, 4, PART_STEM)
        axes.append((top, bottom))
        mid = 0.5 * (top + bottom)
        boxes.append(BoundingBox3D(tuple(mid), (GT_BOX_SIDE,) * 3))
        clusters.append(bottom - [0.0, 0.0, spec.cluster_radius - 0.2 * spec.fruit_radius])

    for c in clusters:
        centers = [c + [0.0, 0.0, spec.cluster_radius - spec.fruit_radius]]
        while len(centers) < spec.fruits_per_cluster:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            r = (spec.cluster_radius - spec.fruit_radius) * rng.uniform(0.3, 1.0)
            cand = c + r * d
            if all(np.linalg.norm(cand - q) >= 1.2 * spec.fruit_radius for q in centers):
                centers.append(cand)
        fruit_r = spec.fruit_radius * rng.uniform(0.9, 1.1, size=len(centers))
        pts = []
        for k, (fc, fr) in enumerate(zip(centers, fruit_r)):
            p = _fibonacci_sphere(fc, fr, pitch)
            inside = np.zeros(len(p), dtype=bool)
            for j, (oc, orad) in enumerate(zip(centers, fruit_r)):
                if j != k:
                    inside |= np.linalg.norm(p - oc, axis=1) < orad
            pts.append(p[~inside])
        add(np.concatenate(pts), FRUIT_RGB, 12, PART_FRUIT)

    # leaves last: background set, then front-of-fruit, then front-of-stem
    leaves = []
    for _ in range(spec.leaf_count):
        center = origin + [rng.uniform(-half_span - 0.04, half_span + 0.04), rng.uniform(0.07, 0.3),
                           rng.uniform(-0.28, 0.18)]
        rot = rot_z(rng.uniform(-0.5, 0.5)) @ rot_x(rng.uniform(-0.5, 0.5))
        leaves.append((center, rot, rng.uniform(0.07, 0.10), rng.uniform(0.035, 0.05)))
    if spec.occlusion_level in ("slight", "severe"):
        for c in clusters:
            center = c + [rng.uniform(-0.02, 0.02), -spec.cluster_radius - 0.03, -0.6 * spec.cluster_radius]
            leaves.append((center, rot_x(rng.uniform(-0.2, 0.2)), 0.05, 0.025))
    if spec.occlusion_level == "severe":
        for top, bottom in axes:
            center = 0.5 * (top + bottom) + [0.0, -0.025, 0.0]
            leaves.append((center, np.eye(3), 0.09, 0.06))
    for center, rot, a, b in leaves:
        add(_ellipse(center, rot, a, b, pitch), LEAF_RGB, 10, PART_LEAF)

    xyz = np.concatenate(parts_xyz)
    cloud = ColoredPointCloud(xyz, np.concatenate(parts_rgb), "world")
    return SyntheticScene(cloud, boxes, xyz.copy(), np.concatenate(parts_code), spec, pitch, axes)


def scene_from_points(xyz, rgb=None, parts=None, point_spacing: float = 0.0015) -> SyntheticScene:
    """Wrap arbitrary points (e.g. a single analytic primitive) as a scene for rendering."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if rgb is None:
        rgb = np.tile(np.array(FRUIT_RGB, dtype=np.uint8), (len(xyz), 1))
    if parts is None:
        parts = np.full(len(xyz), PART_FRUIT, dtype=np.int8)
    cloud = ColoredPointCloud(xyz, rgb, "world")
    return SyntheticScene(cloud, [], xyz.copy(), np.asarray(parts, dtype=np.int8), None, point_spacing)


# --- rendering -----------------------------------------------------------------------------------------

def look_at_camera(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """camera_in_world for a camera at ``position`` with its +z axis on ``target`` (+y image down)."""
    position, target = np.asarray(position, float), np.asarray(target, float)
    z = target - position
    z /= np.linalg.norm(z)
    y = -np.asarray(up, float)
    y = y - np.dot(y, z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return RigidTransform.from_rt(np.stack([x, y, z], axis=1), position)


def canonical_views(target, standoff: float = STANDOFF, azimuths=VIEW_AZIMUTHS) -> list:
    """(label, camera_in_world) for the frontal and +/-45 degree views from -y."""
    target = np.asarray(target, float)
    out = []
    for label, az in azimuths:
        offset = rot_z(np.radians(az)) @ np.array([0.0, -standoff, 0.0])
        out.append((label, look_at_camera(target + offset, target)))
    return out


def visible_indices(scene: SyntheticScene, camera_in_world: RigidTransform,
                    image_size: int = IMAGE_SIZE, fov_deg: float = FOV_DEG,
                    max_range: float = MAX_RANGE) -> np.ndarray:
    """Scene point indices surviving frustum culling and z-buffer visibility, ascending."""
    cam = transform_points(invert(camera_in_world), scene.cloud.xyz)
    z = cam[:, 2]
    tan_half = math.tan(math.radians(fov_deg) / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam[:, 0] / z
        v = cam[:, 1] / z
    ok = (z > 1e-6) & (z <= max_range) & (np.abs(u) < tan_half) & (np.abs(v) < tan_half)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return idx
    px = np.floor((u[idx] / tan_half + 1.0) * 0.5 * image_size).astype(np.int64).clip(0, image_size - 1)
    py = np.floor((v[idx] / tan_half + 1.0) * 0.5 * image_size).astype(np.int64).clip(0, image_size - 1)
    zi = z[idx]

    # splat each point over its projected footprint so surfaces have no see-through gaps
    pix_angle = 2.0 * tan_half / image_size
    radius = np.clip(np.ceil(0.75 * scene.point_spacing / (zi * pix_angle)).astype(np.int64), 0, 4)
    zbuf = np.full(image_size * image_size, np.inf)
    rmax = int(radius.max())
    for dx in range(-rmax, rmax + 1):
        for dy in range(-rmax, rmax + 1):
            sel = (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
            qx, qy = px[sel] + dx, py[sel] + dy
            inb = (qx >= 0) & (qx < image_size) & (qy >= 0) & (qy < image_size)
            np.minimum.at(zbuf, qy[inb] * image_size + qx[inb], zi[sel][inb])
    cell = py * image_size + px
    tol = 2.5 * scene.point_spacing
    front = zi <= zbuf[cell] + tol
    idx, cell, zi = idx[front], cell[front], zi[front]
    # one point per cell: the nearest (ties by index)
    order = np.lexsort((idx, zi, cell))
    first = np.r_[True, cell[order][1:] != cell[order][:-1]]
    return np.sort(idx[order][first])


def render_view(scene: SyntheticScene, camera_in_world: RigidTransform,
                noise: NoiseModel = NoiseModel(), seed: int = 0, label: str = "A") -> ColoredPointCloud:
    """Camera-frame cloud of what the camera sees, with depth noise and dropout."""
    n = len(scene.cloud)
    rng = np.random.default_rng(seed)
    # one draw per scene point, so the draws for a point never depend on what else is in view
    depth_noise = rng.standard_normal(n) * noise.depth_sigma
    keep_draw = rng.random(n)
    idx = visible_indices(scene, camera_in_world)
    idx = idx[keep_draw[idx] >= noise.dropout_rate]
    cam = transform_points(invert(camera_in_world), scene.cloud.xyz[idx])
    if noise.depth_sigma > 0 and len(idx):
        ray = cam / np.linalg.norm(cam, axis=1, keepdims=True)
        cam = cam + depth_noise[idx, None] * ray
    return ColoredPointCloud(cam, scene.cloud.rgb[idx], f"camera:{label}")


# --- calibration ------------------------------------------------------------------------------------------

DEFAULT_HAND_EYE = RigidTransform.from_rt(rot_z(np.radians(90.0)) @ rotvec_to_matrix([0.02, -0.03, 0.01]),
                                          [0.032, -0.011, 0.085])
DEFAULT_BOARD_IN_BASE = invert(RigidTransform.from_rt(rot_z(np.radians(5.0)), [0.62, 0.05, 0.02]))


def perturb(t: RigidTransform, rot_sigma_deg: float, trans_sigma: float, rng) -> RigidTransform:
    """Left-multiply by a random small motion."""
    w = rng.normal(0.0, np.radians(rot_sigma_deg), size=3) if rot_sigma_deg > 0 else np.zeros(3)
    d = rng.normal(0.0, trans_sigma, size=3) if trans_sigma > 0 else np.zeros(3)
    return compose(RigidTransform.from_rt(rotvec_to_matrix(w), d), t)


def random_flange_pose(rng) -> RigidTransform:
    """A flange pose in front of the robot, tool pointing roughly along +x."""
    base_rot = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    r = rotvec_to_matrix(rng.uniform(-0.5, 0.5, size=3)) @ base_rot
    t = rng.uniform([0.25, -0.2, 0.2], [0.45, 0.2, 0.6])
    return RigidTransform.from_rt(r, t)


def generate_calibration_set(t_true: RigidTransform, n_c: int = 16, noise: NoiseModel = NoiseModel(),
                             seed: int = 0, board_in_base: RigidTransform = DEFAULT_BOARD_IN_BASE):
    """Samples whose chains invert exactly to ``t_true``, then noisy board observations.

    board_to_camera(i) = t_true^-1 . flange(i)^-1 . board_in_base^-1, perturbed on
    the left by the noise model's pose sigmas.
    """
    if n_c < 1:
        raise PickPointError("n_c must be >= 1")
    rng = np.random.default_rng(seed)
    flanges = [random_flange_pose(rng) for _ in range(n_c)]
    samples = []
    inv_t, inv_b = invert(t_true), invert(board_in_base)
    for i, f in enumerate(flanges, start=1):
        c = compose(compose(inv_t, invert(f)), inv_b)
        c = perturb(c, noise.pose_rot_sigma, noise.pose_trans_sigma, rng)
        samples.append(CalibrationSample(i, c, f))
    return samples, board_in_base


# --- multi-view capture ----------------------------------------------------------------------------------

def capture_views(scene: SyntheticScene, hand_eye: RigidTransform = DEFAULT_HAND_EYE,
                  noise: NoiseModel = NoiseModel(), seed: int = 0, views=None) -> list:
    """Render the canonical views; flange poses follow from the true hand-eye transform."""
    views = views if views is not None else canonical_views(scene.look_at)
    out = []
    inv_he = invert(hand_eye)
    for k, (label, cam) in enumerate(views):
        cloud = render_view(scene, cam, noise, seed=seed * 1000 + k, label=label)
        out.append(ViewCapture(cloud, compose(cam, inv_he), label))
    return out


def write_bundle(out_dir, spec: SceneSpec, noise: NoiseModel = NoiseModel.sensor(),
                 calib_noise: NoiseModel = NoiseModel(pose_rot_sigma=0.1, pose_trans_sigma=0.001),
                 n_c: int = 16, seed: int = 0, hand_eye: RigidTransform = DEFAULT_HAND_EYE,
                 scene_id: Optional[str] = None) -> dict:
    """Write views (PLY), manifest, gt boxes and a calibration set for one scene."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(spec)
    views = capture_views(scene, hand_eye, noise, seed)
    entries = []
    for v in views:
        name = f"view_{v.view_label}.ply"
        write_cloud(v.cloud, out / name, "ply_binary_le")
        entries.append({"label": v.view_label, "cloud": name, "flange_in_base": v.flange_in_base})
    save_manifest(out / "manifest.json", entries, hand_eye)
    sid = scene_id or f"scene_{spec.seed:04d}"
    save_boxes(out / "gt.json", {sid: scene.gt_boxes})
    samples, board = generate_calibration_set(hand_eye, n_c, calib_noise, seed)
    save_calibration(out / "calibration.json", samples, board)
    (out / "hand_eye_true.json").write_text(json.dumps({"matrix": hand_eye.to_list()}) + "\n")
    return {"scene": sid, "points": len(scene.cloud),
            "views": {v.view_label: len(v.cloud) for v in views}, "gt_boxes": len(scene.gt_boxes)}


def count_parts(scene: SyntheticScene, indices: Sequence[int]) -> dict:
    codes = scene.parts[np.asarray(indices, dtype=np.int64)]
    return {name: int((codes == c).sum()) for name, c in
            (("branch", PART_BRANCH), ("stem", PART_STEM), ("fruit", PART_FRUIT), ("leaf", PART_LEAF))}
