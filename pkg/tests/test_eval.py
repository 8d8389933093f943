import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pickpoint.errors import ParseError, PickPointError
from pickpoint.eval import (
    BoundingBox3D, MatchResult, error_histogram, evaluate_dataset, f1_score, iou3d, load_boxes,
    localization_error, match, metrics, save_boxes, write_error_csv, write_report,
)

F1_ROWS = [((60.03, 66.67), 63.18), ((53.31, 61.11), 56.94), ((63.12, 74.44), 68.31), ((83.39, 94.44), 88.57)]
ACC_ROWS = [((232, 17), 0.932), ((103, 22), 0.824), ((75, 23), 0.765)]

box_strategy = st.builds(
    lambda c, s: BoundingBox3D(c, s),
    st.tuples(*[st.floats(-1, 1)] * 3), st.tuples(*[st.floats(0.05, 1)] * 3))


@pytest.mark.parametrize("pr, f1", F1_ROWS)
def test_f1_table(pr, f1):
    assert abs(f1_score(*pr) - f1) <= 0.01
    # the same in fractions
    assert abs(100 * f1_score(pr[0] / 100, pr[1] / 100) - f1) <= 0.01


@pytest.mark.parametrize("counts, acc", ACC_ROWS)
def test_tp_fp_accuracy_table(counts, acc):
    m = metrics(MatchResult(tp=counts[0], fp=counts[1], fn=0))
    assert abs(m.accuracy_tp_fp - acc) <= 0.001
    assert m.accuracy_tp_fp == m.precision


def test_metrics_definitions_and_degenerate():
    m = metrics(MatchResult(tp=6, fp=2, fn=4))
    assert (m.precision, m.recall) == (0.75, 0.6)
    assert m.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
    assert m.accuracy == pytest.approx(6 / 12)
    assert not m.degenerate
    z = metrics(MatchResult(0, 0, 0))
    assert z.degenerate and (z.precision, z.recall, z.f1, z.accuracy) == (0.0, 0.0, 0.0, 0.0)
    assert metrics(MatchResult(0, 3, 0)).degenerate
    assert f1_score(0, 0) == 0.0


@settings(max_examples=100, deadline=None)
@given(box_strategy, box_strategy)
def test_iou_symmetric_bounded_matches_interval_oracle(a, b):
    v = iou3d(a, b)
    assert v == pytest.approx(iou3d(b, a))
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(oracles.box_iou(a.center, a.size, b.center, b.size), abs=1e-12)
    assert iou3d(a, a) == pytest.approx(1.0)


def test_iou_monte_carlo():
    rng = np.random.default_rng(0)
    a = BoundingBox3D((0, 0, 0), (1.0, 0.5, 0.8))
    b = BoundingBox3D((0.3, 0.1, -0.2), (0.6, 0.9, 0.5))
    lo = np.minimum(a.lo, b.lo)
    hi = np.maximum(a.hi, b.hi)
    p = rng.uniform(lo, hi, (400_000, 3))
    ia, ib = a.contains(p), b.contains(p)
    mc = (ia & ib).sum() / (ia | ib).sum()
    assert iou3d(a, b) == pytest.approx(mc, abs=0.005)


def test_touching_boxes_do_not_overlap():
    assert iou3d(BoundingBox3D((0, 0, 0), (1, 1, 1)), BoundingBox3D((1, 0, 0), (1, 1, 1))) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(box_strategy, max_size=5), st.lists(box_strategy, max_size=5), st.floats(0.05, 0.9))
def test_match_is_a_valid_assignment(preds, gts, thr):
    m = match(preds, gts, thr)
    ps = [p for p, _, _ in m.pairs]
    gs = [g for _, g, _ in m.pairs]
    assert len(set(ps)) == len(ps) and len(set(gs)) == len(gs)
    assert all(iou3d(preds[p], gts[g]) >= thr for p, g, _ in m.pairs)
    assert m.tp + m.fp == len(preds) and m.tp + m.fn == len(gts)
    ious = np.array([[iou3d(p, g) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    best = oracles.max_matching_size(ious, thr) if len(preds) and len(gts) else 0
    # greedy never beats the optimum, and a maximal matching is at least half of it
    assert best // 2 <= m.tp <= best


def test_match_prefers_higher_score_then_higher_iou():
    gt = [BoundingBox3D((0, 0, 0), (1, 1, 1))]
    preds = [BoundingBox3D((0.1, 0, 0), (1, 1, 1), 0.5), BoundingBox3D((0.3, 0, 0), (1, 1, 1), 0.9)]
    m = match(preds, gt, 0.25)
    assert m.pairs[0][0] == 1 and m.fp == 1
    gts = [BoundingBox3D((0.3, 0, 0), (1, 1, 1)), BoundingBox3D((0.05, 0, 0), (1, 1, 1))]
    m = match([BoundingBox3D((0, 0, 0), (1, 1, 1))], gts, 0.25)
    assert m.pairs[0][1] == 1
    with pytest.raises(PickPointError):
        match([], [], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(box_strategy, max_size=6), st.lists(box_strategy, max_size=6))
def test_recall_non_increasing_in_threshold(preds, gts):
    recalls = [metrics(match(preds, gts, t)).recall for t in (0.1, 0.25, 0.5, 0.75, 0.95)]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(box_strategy, st.floats(0, 1)), max_size=6), st.lists(box_strategy, max_size=6))
def test_recall_non_increasing_in_score_threshold(scored, gts):
    preds = [BoundingBox3D(b.center, b.size, s) for b, s in scored]
    recalls = [metrics(match([p for p in preds if p.score >= t], gts, 0.25)).recall
               for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))


def test_precision_not_monotone_in_score_threshold():
    gt = [BoundingBox3D((0, 0, 0), (1, 1, 1))]
    hit = BoundingBox3D((0.05, 0, 0), (1, 1, 1), 0.2)
    miss = BoundingBox3D((5, 5, 5), (1, 1, 1), 0.9)

    def precision_at(preds, t):
        return metrics(match([p for p in preds if p.score >= t], gt, 0.25)).precision

    # dropping a low-score true positive lowers precision ...
    assert (precision_at([hit, miss], 0.0), precision_at([hit, miss], 0.5)) == (0.5, 0.0)
    # ... dropping a low-score false positive raises it
    hit_hi = BoundingBox3D((0.05, 0, 0), (1, 1, 1), 0.9)
    miss_lo = BoundingBox3D((5, 5, 5), (1, 1, 1), 0.2)
    assert (precision_at([hit_hi, miss_lo], 0.0), precision_at([hit_hi, miss_lo], 0.5)) == (0.5, 1.0)


def test_evaluate_dataset_and_errors():
    gts = {"a": [BoundingBox3D((0, 0, 0), (0.03,) * 3), BoundingBox3D((1, 0, 0), (0.03,) * 3)],
           "b": [BoundingBox3D((0, 1, 0), (0.03,) * 3)]}
    preds = {"a": [BoundingBox3D((0.004, -0.002, 0.001), (0.03,) * 3, 0.9)],
             "b": [BoundingBox3D((0, 1.003, 0), (0.03,) * 3, 0.8), BoundingBox3D((5, 5, 5), (0.03,) * 3, 0.7)]}
    r = evaluate_dataset(preds, gts)
    assert r.totals() == {"tp": 2, "fp": 1, "fn": 1, "tn": 0}
    assert r.metrics.precision == pytest.approx(2 / 3) and r.metrics.recall == pytest.approx(2 / 3)
    np.testing.assert_allclose(r.errors, [[0.004, -0.002, 0.001], [0.0, 0.003, 0.0]], atol=1e-12)
    assert r.error_scenes == ["a", "b"]
    assert sum(r.histogram["x"]) == 2
    with pytest.raises(PickPointError):
        evaluate_dataset({"a": []}, {})
    with pytest.raises(PickPointError):
        evaluate_dataset({}, {"a": []})


def test_localization_error_sign():
    assert localization_error(BoundingBox3D((1, 2, 3), (1, 1, 1)), BoundingBox3D((0, 2, 4), (1, 1, 1))) == (1, 0, -1)


def test_histogram_bins():
    h = error_histogram(np.array([[0.0, -0.1, 0.001]]))
    assert len(h["edges"]) == 25 and h["edges"][0] == -0.03
    assert sum(h["x"]) == sum(h["y"]) == sum(h["z"]) == 1
    assert h["y"][0] == 1  # clipped into the outermost bin


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox3D((0, 0, 0), (0, 1, 1))
    with pytest.raises(ValueError):
        BoundingBox3D((0, 0, 0), (1, 1, 1), score=1.5)
    with pytest.raises(ValueError):
        BoundingBox3D((0, 0), (1, 1, 1))


def test_box_files(tmp_path):
    scenes = {"s1": [BoundingBox3D((0.1, 0.2, 0.3), (0.03, 0.03, 0.03), 0.5)], "s0": []}
    save_boxes(tmp_path / "b.json", scenes)
    back = load_boxes(tmp_path / "b.json")
    assert list(back) == ["s0", "s1"] and back["s1"][0] == scenes["s1"][0]
    (tmp_path / "bare.json").write_text(json.dumps([{"center": [0, 0, 0], "size": [1, 1, 1]}]))
    assert list(load_boxes(tmp_path / "bare.json")) == ["bare"]
    (tmp_path / "bad.json").write_text(json.dumps([{"center": [0, 0, 0], "size": [-1, 1, 1]}]))
    with pytest.raises(ParseError):
        load_boxes(tmp_path / "bad.json")


def test_report_files(tmp_path):
    gts = {"a": [BoundingBox3D((0, 0, 0), (0.03,) * 3)]}
    preds = {"a": [BoundingBox3D((0.001, 0, 0), (0.03,) * 3, 0.9)]}
    r = evaluate_dataset(preds, gts)
    write_report(tmp_path / "r.json", r)
    write_error_csv(tmp_path / "e.csv", r)
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["totals"]["tp"] == 1 and doc["localization_error"]["n"] == 1
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["scene", "dx", "dy", "dz"] and float(rows[1][1]) == pytest.approx(0.001)
