"""Multi-view stitching into the robot base frame via calibrated kinematics.

View-set manifest (JSON)::

    {
      "hand_eye": [16 numbers]  |  "hand_eye_file": "path/to/hand_eye.json",
      "views": [
        {"label": "A", "cloud": "view_A.ply", "flange_in_base": [16 numbers]},
        ...
      ]
    }

Relative paths are resolved against the manifest's directory.  ``hand_eye``
is the camera->flange transform produced by ``pickpoint calibrate``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from pickpoint.errors import ParseError, PickPointError
from pickpoint.geometry import RigidTransform, apply, compose, load_transform
from pickpoint.pointcloud import ColoredPointCloud, concat, read_cloud


@dataclass(frozen=True)
class ViewCapture:
    cloud: ColoredPointCloud
    flange_in_base: RigidTransform
    view_label: str = ""


def camera_in_base(flange_in_base: RigidTransform, hand_eye: RigidTransform) -> RigidTransform:
    return compose(flange_in_base, hand_eye)


def stitch_views(views: Sequence[ViewCapture], hand_eye: RigidTransform) -> ColoredPointCloud:
    """Map every view into the base frame and concatenate them in input order.

    No registration refinement and no deduplication happen here; overlapping
    surfaces are merged later by voxel downsampling.
    """
    if not views:
        raise PickPointError("no views")
    parts = [apply(camera_in_base(v.flange_in_base, hand_eye), v.cloud) for v in views]
    return concat(parts, frame_label="base")


def load_manifest(path) -> tuple[list[ViewCapture], RigidTransform]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad manifest {path}: {exc}") from exc
    root = path.parent
    try:
        if "hand_eye" in doc:
            hand_eye = RigidTransform.from_list(doc["hand_eye"])
        elif "hand_eye_file" in doc:
            hand_eye = load_transform(root / doc["hand_eye_file"])
        else:
            raise ParseError(f"manifest {path} has neither 'hand_eye' nor 'hand_eye_file'")
        views = []
        for i, entry in enumerate(doc.get("views", [])):
            cloud = read_cloud(root / entry["cloud"])
            label = str(entry.get("label", i))
            views.append(ViewCapture(cloud.relabel(f"camera:{label}"),
                                     RigidTransform.from_list(entry["flange_in_base"]), label))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad manifest {path}: {exc}") from exc
    return views, hand_eye


def save_manifest(path, entries: Sequence[dict], hand_eye: RigidTransform) -> None:
    """``entries``: dicts with ``label``, ``cloud`` (path relative to the manifest), ``flange_in_base``."""
    doc = {
        "hand_eye": hand_eye.to_list(),
        "views": [
            {"label": e["label"], "cloud": str(e["cloud"]), "flange_in_base": e["flange_in_base"].to_list()}
            for e in entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
