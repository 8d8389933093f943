"""SE(3) transforms and closed-loop hand-eye calibration.

Conventions: right-handed frames, column vectors, ``T @ [p; 1]``.  A transform
named ``a_to_b`` (or "a in b") maps coordinates expressed in frame ``a`` into
frame ``b``.

Calibration sample file (JSON)::

    {
      "board_in_base": [16 numbers, row-major],
      "samples": [
        {"pose_index": 1,
         "board_to_camera": [16 numbers],
         "flange_in_base": [16 numbers]},
        ...
      ]
    }

``board_in_base`` is the fixed base/board transform that sits between the
board->camera and flange->base factors of every summand, i.e. it maps
robot-base coordinates into board coordinates.  The estimate is the mean of
``inv(board_to_camera @ board_in_base @ flange_in_base)`` over all samples,
projected back onto SE(3).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from pickpoint.errors import CalibrationError, ParseError
from pickpoint.pointcloud import ColoredPointCloud

ORTHO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A 4x4 homogeneous rigid-body transform (rotation + translation in meters)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"transform must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("transform has non-finite entries")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("bottom row must be exactly (0, 0, 0, 1)")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation block is not a proper rotation")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> RigidTransform:
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != 16:
            raise ParseError(f"transform needs 16 numbers, got {arr.size}")
        return cls(arr.reshape(4, 4))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix.reshape(-1)]

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __repr__(self):
        return f"RigidTransform(t={self.translation.tolist()})"


@dataclass(frozen=True)
class CalibrationSample:
    pose_index: int
    board_to_camera: RigidTransform
    flange_in_base: RigidTransform

    def __post_init__(self):
        if self.pose_index < 1:
            raise ValueError("pose_index must be >= 1")


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotvec_to_matrix(rotvec) -> np.ndarray:
    """Rodrigues formula; exact identity for a zero vector."""
    v = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta == 0.0:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a @ b``: apply ``b`` first, then ``a``."""
    m = a.matrix @ b.matrix
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return RigidTransform(m)


def invert(t: RigidTransform) -> RigidTransform:
    r = t.rotation
    m = np.eye(4)
    m[:3, :3] = r.T
    m[:3, 3] = -r.T @ t.translation
    return RigidTransform(m)


def transform_points(t: RigidTransform, xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    return xyz @ t.rotation.T + t.translation


def apply(t: RigidTransform, cloud: ColoredPointCloud) -> ColoredPointCloud:
    return cloud.with_positions(transform_points(t, cloud.xyz))


def project_to_se3(m) -> RigidTransform:
    """Nearest rigid transform to an arbitrary 4x4 matrix.

    The rotation block is replaced by the closest orthonormal matrix in the
    Frobenius sense (orthogonal Procrustes, determinant forced to +1); the
    translation column is kept and the bottom row reset to (0, 0, 0, 1).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
    block = m[:3, :3]
    if not np.linalg.det(block) > 0.0:
        raise CalibrationError("degenerate rotation average")
    u, _, vt = np.linalg.svd(block)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = m[:3, 3]
    return RigidTransform(out)


def hand_eye_summand(sample: CalibrationSample, board_in_base: RigidTransform) -> np.ndarray:
    chain = sample.board_to_camera.matrix @ board_in_base.matrix @ sample.flange_in_base.matrix
    r, p = chain[:3, :3], chain[:3, 3]
    out = np.eye(4)
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ p
    return out


def estimate_hand_eye(samples: Sequence[CalibrationSample], board_in_base: RigidTransform) -> RigidTransform:
    """Closed-loop hand-eye estimate (camera -> flange).

    Averages the inverted board/base/flange chains arithmetically, then
    projects the mean matrix onto SE(3).
    """
    if not samples:
        raise CalibrationError("no calibration samples")
    # canonical order so the floating-point sum is independent of list order
    ordered = sorted(samples, key=lambda s: (s.pose_index, s.board_to_camera.to_list(), s.flange_in_base.to_list()))
    terms = np.stack([hand_eye_summand(s, board_in_base) for s in ordered])
    mean = np.mean(terms, axis=0)
    return project_to_se3(mean)


def chordal_distance(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.rotation - b.rotation))


def rotation_angle_deg(a: RigidTransform, b: RigidTransform) -> float:
    rel = a.rotation.T @ b.rotation
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def translation_distance(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


# --- calibration sample files -------------------------------------------------

def save_calibration(path, samples: Sequence[CalibrationSample], board_in_base: RigidTransform) -> None:
    doc = {
        "board_in_base": board_in_base.to_list(),
        "samples": [
            {
                "pose_index": s.pose_index,
                "board_to_camera": s.board_to_camera.to_list(),
                "flange_in_base": s.flange_in_base.to_list(),
            }
            for s in samples
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_calibration(path) -> tuple[list[CalibrationSample], RigidTransform]:
    text = Path(path).read_text()
    if not text.strip():
        raise CalibrationError("no calibration samples")
    try:
        doc = json.loads(text)
        entries = doc.get("samples", [])
        if not entries:
            raise CalibrationError("no calibration samples")
        board = RigidTransform.from_list(doc["board_in_base"])
        samples = [
            CalibrationSample(
                pose_index=int(e["pose_index"]),
                board_to_camera=RigidTransform.from_list(e["board_to_camera"]),
                flange_in_base=RigidTransform.from_list(e["flange_in_base"]),
            )
            for e in entries
        ]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad calibration file {path}: {exc}") from exc
    return samples, board


def save_transform(path, t: RigidTransform) -> None:
    Path(path).write_text(json.dumps({"matrix": t.to_list()}) + "\n")


def load_transform(path) -> RigidTransform:
    try:
        doc = json.loads(Path(path).read_text())
        return RigidTransform.from_list(doc["matrix"] if isinstance(doc, dict) else doc)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad transform file {path}: {exc}") from exc
