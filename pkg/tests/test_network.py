import numpy as np
import pytest

import oracles
from pickpoint.errors import PickPointError, ShapeError
from pickpoint.sparsenn.network import (
    ArchConfig, HeadOutput, NetworkWeights, backbone_forward, decode_boxes, decode_detections,
    head_forward, neck_forward, network_forward, nms, random_weights, zero_weights,
)
from pickpoint.sparsenn.tensor import SparseTensor

SMALL = ArchConfig(3, 8, (8, 16, 16, 16), 8, 4, 1)


def _coordset(t):
    return {tuple(r) for r in t.coords.tolist()}


def test_fingerprint_roundtrip():
    cfg = ArchConfig()
    assert cfg.fingerprint() == "fcaf3d-se:in=3;stem=64;ch=64,128,256,256;head=64;se=16;cls=1"
    assert ArchConfig.from_fingerprint(cfg.fingerprint()) == cfg
    assert ArchConfig.from_fingerprint(SMALL.fingerprint()) == SMALL
    with pytest.raises(PickPointError):
        ArchConfig.from_fingerprint("resnet:in=3")
    with pytest.raises(ShapeError):
        ArchConfig(channels=(64, 128, 256))
    with pytest.raises(ShapeError):
        ArchConfig(channels=(64, 128, 250, 256))


@pytest.mark.parametrize("seed", range(6))
def test_backbone_matches_dense_oracle_small(seed):
    rng = np.random.default_rng(seed)
    w = random_weights(SMALL, seed)
    c, f = oracles.random_sparse(rng, batches=2)
    levels = backbone_forward(SparseTensor(c, f), w)
    x, m = oracles.to_dense(c, f, (5, 5, 5))
    for lv, (d, dm) in zip(levels, oracles.dense_backbone(x, m, w.tensors)):
        assert _coordset(lv) == oracles.mask_coords(dm)
        np.testing.assert_allclose(lv.feats, oracles.gather(d, lv.coords), rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_neck_matches_dense_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    w = random_weights(SMALL, seed)
    c, f = oracles.random_sparse(rng, grid=6, batches=2)
    levels = backbone_forward(SparseTensor(c, f), w)
    x, m = oracles.to_dense(c, f, (6, 6, 6))
    dense = oracles.dense_neck(oracles.dense_backbone(x, m, w.tensors), w.tensors)
    for lv, (d, dm) in zip(neck_forward(levels, w), dense):
        assert _coordset(lv) == oracles.mask_coords(dm)
        np.testing.assert_allclose(lv.feats, oracles.gather(d, lv.coords), rtol=0, atol=1e-10)


def test_backbone_shape_contract_default_config():
    rng = np.random.default_rng(0)
    w = zero_weights()
    c = np.c_[np.zeros(40, int), rng.integers(-30, 30, (40, 3))]
    c = np.unique(c, axis=0)
    levels = backbone_forward(SparseTensor(c, rng.random((len(c), 3))), w)
    assert [lv.n_channels for lv in levels] == [64, 128, 256, 256]
    assert [lv.stride for lv in levels] == [2, 4, 8, 16]
    outs = network_forward(SparseTensor(c, rng.random((len(c), 3))), w)
    assert [o.stride for o in outs] == [2, 4, 8, 16]
    assert all(o.box_params.shape[1] == 6 for o in outs)


def test_backbone_input_errors():
    w = zero_weights(SMALL)
    with pytest.raises(ShapeError):
        backbone_forward(SparseTensor([[0, 0, 0, 0]], [[1.0, 2.0]]), w)
    with pytest.raises(ShapeError):
        backbone_forward(SparseTensor([[0, 0, 0, 0]], [[1.0, 2.0, 3.0]], stride=2), w)
    with pytest.raises(ShapeError):
        neck_forward([], w)


def test_weights_validation_names_layer():
    t = dict(zero_weights(SMALL).tensors)
    del t["stage2.block.conv1.weight"]
    with pytest.raises(ShapeError, match="stage2.block.conv1.weight"):
        NetworkWeights(t, SMALL)
    t = dict(zero_weights(SMALL).tensors)
    t["head.reg.bias"] = np.zeros(5)
    with pytest.raises(ShapeError, match="head.reg.bias"):
        NetworkWeights(t, SMALL)
    t = dict(zero_weights(SMALL).tensors)
    t["extra.weight"] = np.zeros(1)
    with pytest.raises(ShapeError, match="extra.weight"):
        NetworkWeights(t, SMALL)


def test_weights_are_float32_values_and_read_only():
    w = random_weights(SMALL, 1)
    arr = w["stem.weight"]
    np.testing.assert_array_equal(arr, arr.astype(np.float32).astype(np.float64))
    with pytest.raises(ValueError):
        arr[0, 0, 0] = 1.0
    assert random_weights(SMALL, 1).equals(w)
    assert not random_weights(SMALL, 2).equals(w)


def test_pruning_everything_is_an_error():
    t = dict(zero_weights(SMALL, with_prune=True).tensors)
    t["neck.prune2.bias"] = np.array([-10.0])
    w = NetworkWeights(t, SMALL)
    with pytest.raises(PickPointError, match="neck level 2"):
        network_forward(SparseTensor([[0, 0, 0, 0], [0, 9, 9, 9]], np.ones((2, 3))), w)


def test_prune_keeps_only_scored_sites():
    t = dict(zero_weights(SMALL, with_prune=True).tensors)
    for lvl in (1, 2, 3):
        t[f"neck.prune{lvl}.bias"] = np.array([5.0])
    keep_all = NetworkWeights(t, SMALL)
    no_prune = zero_weights(SMALL)
    rng = np.random.default_rng(1)
    c = np.unique(np.c_[np.zeros(30, int), rng.integers(0, 20, (30, 3))], axis=0)
    x = SparseTensor(c, rng.random((len(c), 3)))
    a, b = neck_forward(backbone_forward(x, keep_all), keep_all), neck_forward(backbone_forward(x, no_prune), no_prune)
    assert [_coordset(p) for p in a] == [_coordset(q) for q in b]


def _head(coords, stride, prob, reg, ctr):
    return HeadOutput(np.asarray(coords), stride, np.asarray(prob, float), np.asarray(reg, float),
                      np.asarray(ctr, float))


def test_decode_formula():
    out = _head([[0, 2, -1, 0]], 4, [0.8], [[0.001, 0.0, -0.002, 0.0, np.log(2), 0.0]], [0.5])
    centers, sizes, scores = decode_boxes([out], 0.01)
    np.testing.assert_allclose(centers[0], [(2.5) * 0.04 + 0.001, -0.5 * 0.04, 0.5 * 0.04 - 0.002])
    np.testing.assert_allclose(sizes[0], [0.04, 0.08, 0.04])
    assert scores[0] == pytest.approx(0.4)


def test_decode_threshold_nms_and_batch():
    reg = np.zeros((3, 6))
    out = _head([[0, 0, 0, 0], [0, 0, 0, 1], [0, 9, 9, 9]], 2, [0.9, 0.8, 0.2], reg, [1.0, 1.0, 1.0])
    boxes = decode_detections([out], 0.01, score_threshold=0.3, nms_iou=0.5)
    # 2 cm cubes 2 cm apart touch but do not overlap; the third falls below the threshold
    assert [b.score for b in boxes] == pytest.approx([0.9, 0.8])
    reg2 = reg.copy()
    reg2[:, 3:] = np.log(3.0)
    boxes = decode_detections([_head(out.coords, 2, [0.9, 0.8, 0.2], reg2, [1, 1, 1])], 0.01, 0.3, 0.5)
    assert [b.score for b in boxes] == pytest.approx([0.9])
    assert decode_detections([out], 0.01, batch_index=1) == []
    with pytest.raises(PickPointError):
        decode_detections([out], 0.01, score_threshold=1.5)


def test_nms_against_pairwise_iou_oracle():
    rng = np.random.default_rng(3)
    centers = rng.uniform(0, 0.1, (25, 3))
    sizes = rng.uniform(0.02, 0.05, (25, 3))
    scores = rng.random(25)
    keep = nms(centers, sizes, scores, 0.3)
    kept = set(keep)
    for i in range(25):
        overlaps = [j for j in kept if j != i and scores[j] >= scores[i]
                    and oracles.box_iou(centers[i], sizes[i], centers[j], sizes[j]) >= 0.3]
        if i in kept:
            assert not overlaps
        else:
            assert overlaps
    assert keep == sorted(keep, key=lambda i: -scores[i])


def test_head_is_shared_across_levels():
    w = random_weights(SMALL, 4)
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(3, 8))
    lv1 = SparseTensor([[0, 0, 0, 0], [0, 1, 0, 0], [0, 2, 0, 0]], feats, 2)
    lv2 = SparseTensor([[0, 0, 0, 0], [0, 1, 0, 0], [0, 2, 0, 0]], feats, 8)
    a, b = head_forward([lv1, lv2], w)
    np.testing.assert_array_equal(a.box_params, b.box_params)
    np.testing.assert_allclose(a.class_prob, oracles.sigmoid(feats @ w["head.cls.weight"][0] + w["head.cls.bias"])[:, 0])
