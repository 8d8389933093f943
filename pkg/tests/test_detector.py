import numpy as np
import pytest

from pickpoint.eval import evaluate_dataset
from pickpoint.pointcloud import ColoredPointCloud
from pickpoint.preprocess import preprocess
from pickpoint.sparsenn import build_sparse_tensor, constructed_weights, decode_detections, detect, network_forward
from pickpoint.stitch import stitch_views
from pickpoint.synth import (
    BRANCH_RGB, DEFAULT_HAND_EYE, FRUIT_RGB, STEM_RGB, SceneSpec, capture_views, generate_scene,
)


@pytest.fixture(scope="module")
def weights():
    return constructed_weights()


def stem_column(center, length=0.06, pitch=0.003, rgb=STEM_RGB):
    z = np.arange(-length / 2, length / 2 + 1e-9, pitch)
    xyz = np.c_[np.full_like(z, center[0]), np.full_like(z, center[1]), center[2] + z]
    return ColoredPointCloud(xyz, np.tile(rgb, (len(z), 1)))


@pytest.mark.parametrize("center", [(0.505, 0.013, 0.402), (-0.2, 0.31, 1.05), (0.0, 0.0, 0.0)])
def test_single_stem_gives_one_box_near_its_midpoint(weights, center):
    boxes = detect(stem_column(center), weights)
    assert len(boxes) == 1
    assert np.all(np.abs(np.subtract(boxes[0].center, center)) <= 0.01)
    assert 0.0 < boxes[0].score <= 1.0


# colors that survive the color filter (G <= 150) but are not stem bark
@pytest.mark.parametrize("rgb", [FRUIT_RGB, BRANCH_RGB, (220, 90, 40)])
def test_other_colors_are_ignored(weights, rgb):
    assert detect(stem_column((0.1, 0.1, 0.1), rgb=rgb), weights) == []


def test_two_separate_stems(weights):
    a, b = stem_column((0.0, 0.0, 0.5)), stem_column((0.17, 0.0, 0.5))
    cloud = ColoredPointCloud(np.r_[a.xyz, b.xyz], np.r_[a.rgb, b.rgb])
    boxes = sorted(detect(cloud, weights), key=lambda bx: bx.center[0])
    assert len(boxes) == 2
    assert boxes[0].center[0] == pytest.approx(0.0, abs=0.01)
    assert boxes[1].center[0] == pytest.approx(0.17, abs=0.01)


def test_detect_is_voxelize_forward_decode(weights):
    c = stem_column((0.3, 0.2, 0.1))
    ref = decode_detections(network_forward(build_sparse_tensor(c, 0.01), weights), 0.01)
    assert [b.to_dict() for b in detect(c, weights)] == [b.to_dict() for b in ref]


@pytest.mark.parametrize("seed", [0, 1])
def test_noise_free_scene(weights, seed):
    scene = generate_scene(SceneSpec(seed=seed))
    cloud = preprocess(stitch_views(capture_views(scene, DEFAULT_HAND_EYE), DEFAULT_HAND_EYE))
    report = evaluate_dataset({"s": detect(cloud, weights)}, {"s": scene.gt_boxes})
    assert report.totals()["tp"] == 3 and report.totals()["fp"] == 0
    assert np.abs(report.errors).max() <= 0.015


def test_only_shallow_layers_are_nonzero(weights):
    nonzero = {k.split(".")[0] + "." + k.split(".")[1] for k, v in weights.tensors.items() if np.any(v)}
    assert not any(k.startswith(("stage2", "stage3", "stage4")) for k in nonzero)
    assert "neck.out1" in nonzero and "head.cls" in nonzero
