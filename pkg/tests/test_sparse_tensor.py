import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pickpoint.errors import PickPointError, ShapeError
from pickpoint.pointcloud import ColoredPointCloud
from pickpoint.sparsenn.tensor import (
    CoordIndex, SparseTensor, build_sparse_tensor, canonical_order, global_avg_pool, pack_coords,
    prune, sparse_add, stack_batches, unique_coords,
)

coord_rows = st.lists(st.tuples(st.integers(0, 3), *[st.integers(-1000, 1000)] * 3), min_size=1, max_size=50)


@settings(max_examples=50, deadline=None)
@given(coord_rows)
def test_pack_is_injective_and_lookup_finds_rows(rows):
    c = np.unique(np.array(rows, dtype=np.int64), axis=0)
    keys = pack_coords(c)
    assert len(np.unique(keys)) == len(c)
    idx = CoordIndex(c[::-1])
    np.testing.assert_array_equal(idx.lookup(c[::-1]), np.arange(len(c)))
    missing = c.copy()
    missing[:, 1] += 5000
    assert np.all(idx.lookup(missing) == -1)


def test_canonical_order_and_unique():
    c = np.array([[1, 0, 0, 0], [0, 2, 0, 0], [0, -1, 5, 0], [0, -1, 5, 0]])
    np.testing.assert_array_equal(unique_coords(c), [[0, -1, 5, 0], [0, 2, 0, 0], [1, 0, 0, 0]])
    np.testing.assert_array_equal(c[canonical_order(c)][0], [0, -1, 5, 0])


def test_tensor_validation():
    with pytest.raises(PickPointError):
        SparseTensor([[0, 1, 1, 1], [0, 1, 1, 1]], np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        SparseTensor([[0, 1, 1, 1]], np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        SparseTensor([[0, 1, 1, 1]], np.zeros((1, 1)), stride=3)
    t = SparseTensor([[0, 1, 1, 1], [1, 1, 1, 1]], np.zeros((2, 1)))
    assert t.batch_size == 2


def test_build_from_cloud_uses_world_grid_and_mean_color():
    xyz = [[0.001, 0.001, 0.001], [0.009, 0.002, 0.003], [-0.001, 0.0, 0.0], [0.011, 0.0, 0.0]]
    rgb = [[255, 0, 0], [0, 0, 255], [10, 20, 30], [51, 51, 51]]
    t = build_sparse_tensor(ColoredPointCloud(xyz, rgb), 0.01)
    got = {tuple(c): tuple(f) for c, f in zip(t.coords.tolist(), t.feats.tolist())}
    assert got[(0, 0, 0, 0)] == pytest.approx((127.5 / 255, 0.0, 127.5 / 255))
    assert got[(0, -1, 0, 0)] == pytest.approx((10 / 255, 20 / 255, 30 / 255))
    assert got[(0, 1, 0, 0)] == pytest.approx((0.2, 0.2, 0.2))
    assert len(got) == 3
    with pytest.raises(PickPointError):
        build_sparse_tensor(ColoredPointCloud.empty(), 0.01)


def test_stack_batches_and_pool():
    a = SparseTensor([[0, 0, 0, 0], [0, 1, 0, 0]], [[1.0], [3.0]])
    b = SparseTensor([[0, 0, 0, 0]], [[5.0]])
    s = stack_batches([a, b])
    np.testing.assert_array_equal(s.coords[:, 0], [0, 0, 1])
    np.testing.assert_array_equal(global_avg_pool(s), [[2.0], [5.0]])
    with pytest.raises(PickPointError, match="empty batch 1"):
        global_avg_pool(a, batch_size=2)


def test_prune_keeps_threshold_sites_in_order():
    t = SparseTensor([[0, 0, 0, 0], [0, 1, 0, 0], [0, 2, 0, 0]], [[1.0], [2.0], [3.0]])
    p = prune(t, [0.5, 0.49, 0.9], 0.5)
    np.testing.assert_array_equal(p.feats[:, 0], [1.0, 3.0])
    with pytest.raises(ShapeError):
        prune(t, [1.0], 0.5)


def test_sparse_add_union():
    a = SparseTensor([[0, 0, 0, 0], [0, 1, 0, 0]], [[1.0], [2.0]], 2)
    b = SparseTensor([[0, 1, 0, 0], [0, 5, 0, 0]], [[10.0], [20.0]], 2)
    s = sparse_add(a, b)
    np.testing.assert_array_equal(s.coords[:, 1], [0, 1, 5])
    np.testing.assert_array_equal(s.feats[:, 0], [1.0, 12.0, 20.0])
    with pytest.raises(ShapeError):
        sparse_add(a, SparseTensor([[0, 0, 0, 0]], [[1.0]], 4))
