"""Sparse convolutions against dense-grid oracles, plus structural properties."""

import numpy as np
import pytest

import oracles
from pickpoint.errors import ShapeError
from pickpoint.sparsenn.conv import (
    SparseKernel, block_offsets, cube_offsets, downsample_conv, sparse_conv, submanifold_conv,
    transposed_conv,
)
from pickpoint.sparsenn.network import SeWeights, ResBlockWeights, se_forward, se_res_block
from pickpoint.sparsenn.tensor import SparseTensor

SEEDS = range(20)


def _kernel(rng, offsets, cin, cout):
    return SparseKernel(offsets, rng.normal(size=(len(offsets), cin, cout)), rng.normal(size=cout))


def test_offset_orders():
    c = cube_offsets(3)
    assert len(c) == 27 and tuple(c[0]) == (-1, -1, -1) and tuple(c[13]) == (0, 0, 0)
    assert [tuple(o) for o in block_offsets(2)][:3] == [(0, 0, 0), (0, 0, 1), (0, 1, 0)]


@pytest.mark.parametrize("seed", SEEDS)
def test_sparse_conv_arbitrary_out_coords(seed):
    rng = np.random.default_rng(seed)
    c, f = oracles.random_sparse(rng, channels=3, batches=2)
    k = _kernel(rng, cube_offsets(3), 3, 4)
    out_coords = np.argwhere(rng.random((2, 5, 5, 5)) < 0.3)
    out = sparse_conv(SparseTensor(c, f), k, out_coords)
    x, _ = oracles.to_dense(c, f, (5, 5, 5))
    ref = oracles.dense_conv(x, k.weights, oracles.OFF3, 1, (5, 5, 5), k.bias)
    np.testing.assert_allclose(out.feats, oracles.gather(ref, out_coords), rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", SEEDS)
def test_downsample_conv(seed):
    rng = np.random.default_rng(seed)
    c, f = oracles.random_sparse(rng, channels=2, batches=2)
    k = _kernel(rng, block_offsets(2), 2, 3)
    out = downsample_conv(SparseTensor(c, f), k)
    x, m = oracles.to_dense(c, f, (5, 5, 5))
    pm = oracles.parent_mask(m)
    assert {tuple(r) for r in out.coords.tolist()} == oracles.mask_coords(pm)
    ref = oracles.dense_conv(x, k.weights, oracles.OFF2, 2, pm.shape[1:], k.bias)
    np.testing.assert_allclose(out.feats, oracles.gather(ref, out.coords), rtol=0, atol=1e-10)
    assert out.stride == 2


@pytest.mark.parametrize("seed", SEEDS)
def test_transposed_conv(seed):
    rng = np.random.default_rng(seed)
    c, f = oracles.random_sparse(rng, channels=3, batches=2)
    k = _kernel(rng, block_offsets(2), 3, 2)
    out = transposed_conv(SparseTensor(c, f, stride=2), k)
    x, m = oracles.to_dense(c, f, (5, 5, 5))
    ref, gm = oracles.dense_transposed(x, m, k.weights, oracles.OFF2, k.bias)
    assert {tuple(r) for r in out.coords.tolist()} == oracles.mask_coords(gm)
    np.testing.assert_allclose(out.feats, oracles.gather(ref, out.coords), rtol=0, atol=1e-10)
    assert out.stride == 1


def test_transposed_conv_restricted_outputs():
    rng = np.random.default_rng(0)
    t = SparseTensor([[0, 1, 1, 1]], [[1.0, 2.0]], stride=4)
    k = _kernel(rng, block_offsets(2), 2, 1)
    out = transposed_conv(t, k, out_coords=[[0, 2, 2, 2], [0, 9, 9, 9]])
    np.testing.assert_allclose(out.feats[0], [1.0, 2.0] @ k.weights[0] + k.bias)
    np.testing.assert_allclose(out.feats[1], k.bias)
    with pytest.raises(ShapeError):
        transposed_conv(SparseTensor([[0, 0, 0, 0]], [[1.0, 2.0]]), k)


@pytest.mark.parametrize("seed", SEEDS)
def test_se_forward(seed):
    rng = np.random.default_rng(seed)
    c, f = oracles.random_sparse(rng, channels=32, batches=2)
    se = SeWeights(rng.normal(size=(32, 2)), rng.normal(size=2), rng.normal(size=(2, 32)), rng.normal(size=32), 16)
    out = se_forward(SparseTensor(c, f), se)
    x, m = oracles.to_dense(c, f, (5, 5, 5))
    ref = oracles.dense_se(x, m, se.w1, se.b1, se.w2, se.b2)
    np.testing.assert_allclose(out.feats, oracles.gather(ref, c), rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", SEEDS)
def test_se_res_block(seed):
    rng = np.random.default_rng(seed)
    c, f = oracles.random_sparse(rng, channels=16, batches=2)
    k1, k2 = _kernel(rng, cube_offsets(3), 16, 16), _kernel(rng, cube_offsets(3), 16, 16)
    se = SeWeights(rng.normal(size=(16, 4)), rng.normal(size=4), rng.normal(size=(4, 16)), rng.normal(size=16), 4)
    out = se_res_block(SparseTensor(c, f), ResBlockWeights(k1, k2, se))
    x, m = oracles.to_dense(c, f, (5, 5, 5))
    ref = oracles.dense_res_block(x, m, k1.weights, k1.bias, k2.weights, k2.bias, (se.w1, se.b1, se.w2, se.b2))
    np.testing.assert_allclose(out.feats, oracles.gather(ref, c), rtol=0, atol=1e-10)


def test_res_block_channel_change_needs_projection():
    rng = np.random.default_rng(0)
    t = SparseTensor([[0, 0, 0, 0]], [[1.0, 2.0]])
    k1, k2 = _kernel(rng, cube_offsets(3), 2, 4), _kernel(rng, cube_offsets(3), 4, 4)
    with pytest.raises(ShapeError):
        se_res_block(t, ResBlockWeights(k1, k2, SeWeights.zeros(4, 4)))
    proj = _kernel(rng, np.zeros((1, 3)), 2, 4)
    out = se_res_block(t, ResBlockWeights(k1, k2, SeWeights.zeros(4, 4), proj))
    assert out.n_channels == 4


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    c, f = oracles.random_sparse(rng, channels=3, batches=2)
    k = _kernel(rng, cube_offsets(3), 3, 4)
    a = submanifold_conv(SparseTensor(c, f), k)
    perm = rng.permutation(len(c))
    b = submanifold_conv(SparseTensor(c[perm], f[perm]), k)
    np.testing.assert_allclose(b.feats, a.feats[perm], atol=1e-12)


def test_linearity_and_translation():
    rng = np.random.default_rng(6)
    c, f = oracles.random_sparse(rng, channels=3)
    g = rng.normal(size=f.shape)
    k = SparseKernel(cube_offsets(3), rng.normal(size=(27, 3, 2)))
    conv = lambda feats, coords=c: submanifold_conv(SparseTensor(coords, feats), k).feats  # noqa: E731
    np.testing.assert_allclose(conv(2 * f + g), 2 * conv(f) + conv(g), atol=1e-12)
    shifted = c + np.array([0, -7, 3, 100])
    np.testing.assert_allclose(conv(f, shifted), conv(f), atol=1e-12)


def test_locality_only_neighbours_matter():
    rng = np.random.default_rng(7)
    k = SparseKernel(cube_offsets(3), rng.normal(size=(27, 1, 1)))
    t = SparseTensor([[0, 0, 0, 0], [0, 1, 1, 1], [0, 2, 0, 0]], [[1.0], [2.0], [4.0]])
    out = submanifold_conv(t, k)
    w = k.weights[:, 0, 0]
    assert out.feats[0, 0] == pytest.approx(w[13] * 1 + w[26] * 2)
    assert out.feats[2, 0] == pytest.approx(w[13] * 4 + w[8] * 2)


def test_zero_offsets_are_skipped_without_changing_results():
    rng = np.random.default_rng(8)
    c, f = oracles.random_sparse(rng, channels=3)
    w = rng.normal(size=(27, 3, 2))
    w[::2] = 0.0
    k = SparseKernel(cube_offsets(3), w)
    assert k.active.sum() == 13
    x, _ = oracles.to_dense(c, f, (5, 5, 5))
    ref = oracles.dense_conv(x, w, oracles.OFF3, 1, (5, 5, 5))
    np.testing.assert_allclose(submanifold_conv(SparseTensor(c, f), k).feats, oracles.gather(ref, c), atol=1e-12)


def test_kernel_shape_errors():
    with pytest.raises(ShapeError):
        SparseKernel(cube_offsets(3), np.zeros((26, 1, 1)))
    with pytest.raises(ShapeError):
        SparseKernel(cube_offsets(3), np.zeros((27, 1, 2)), bias=np.zeros(3))
    with pytest.raises(ShapeError):
        submanifold_conv(SparseTensor([[0, 0, 0, 0]], [[1.0, 2.0]]), SparseKernel(cube_offsets(3), np.zeros((27, 1, 1))))
