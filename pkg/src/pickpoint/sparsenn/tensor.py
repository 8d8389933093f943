"""Batch-indexed COO sparse tensors and coordinate lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pickpoint.errors import PickPointError, ShapeError
from pickpoint.pointcloud import ColoredPointCloud
from pickpoint.preprocess import sequential_group_sums

_BITS = 18
_HALF = 1 << (_BITS - 1)
_MAX_BATCH = 1 << (63 - 3 * _BITS)


def pack_coords(coords: np.ndarray) -> np.ndarray:
    """Encode (batch, x, y, z) rows as order-preserving int64 keys."""
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    if len(c) == 0:
        return np.zeros(0, dtype=np.int64)
    xyz = c[:, 1:] + _HALF
    if xyz.min() < 0 or xyz.max() >= (1 << _BITS):
        raise PickPointError(f"voxel coordinates exceed +/-{_HALF}")
    if c[:, 0].min() < 0 or c[:, 0].max() >= _MAX_BATCH:
        raise PickPointError(f"batch index must lie in [0, {_MAX_BATCH})")
    return (((c[:, 0] << _BITS) | xyz[:, 0]) << _BITS | xyz[:, 1]) << _BITS | xyz[:, 2]


class CoordIndex:
    """Sorted-key index answering "which row holds coordinate q?" queries."""

    def __init__(self, coords: np.ndarray):
        keys = pack_coords(coords)
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]

    def __len__(self):
        return len(self.sorted_keys)

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Row index of each query coordinate, or -1 where absent."""
        q = pack_coords(coords)
        if len(self.sorted_keys) == 0 or len(q) == 0:
            return np.full(len(q), -1, dtype=np.int64)
        pos = np.searchsorted(self.sorted_keys, q)
        pos_c = np.minimum(pos, len(self.sorted_keys) - 1)
        hit = self.sorted_keys[pos_c] == q
        return np.where(hit, self.order[pos_c], -1)


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Active sites ``coords`` (N, 4) = (batch, x, y, z) with feature rows ``feats`` (N, C).

    Spatial coordinates are integer indices on this tensor's own grid: a site
    ``u`` at ``stride`` s covers world voxels ``s*u .. s*u + s - 1``.
    """

    coords: np.ndarray
    feats: np.ndarray
    stride: int = 1

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.int64).reshape(-1, 4)
        feats = np.array(self.feats, dtype=np.float64)
        if feats.ndim != 2:
            feats = feats.reshape(len(coords), -1)
        if len(coords) != len(feats):
            raise ShapeError(f"{len(coords)} coordinates but {len(feats)} feature rows")
        if self.stride < 1 or (self.stride & (self.stride - 1)):
            raise ShapeError(f"stride must be a power of two, got {self.stride}")
        keys = pack_coords(coords)
        if len(np.unique(keys)) != len(keys):
            raise PickPointError("duplicate coordinates within a batch")
        coords.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "feats", feats)

    def __len__(self):
        return len(self.coords)

    @property
    def n_channels(self) -> int:
        return self.feats.shape[1]

    @property
    def batch_size(self) -> int:
        return int(self.coords[:, 0].max()) + 1 if len(self.coords) else 0

    def index(self) -> CoordIndex:
        return CoordIndex(self.coords)

    def with_feats(self, feats) -> SparseTensor:
        return SparseTensor(self.coords, feats, self.stride)

    def canonical(self) -> SparseTensor:
        """Rows sorted by (batch, x, y, z)."""
        order = canonical_order(self.coords)
        return SparseTensor(self.coords[order], self.feats[order], self.stride)

    def take(self, rows) -> SparseTensor:
        return SparseTensor(self.coords[rows], self.feats[rows], self.stride)


def canonical_order(coords: np.ndarray) -> np.ndarray:
    c = np.asarray(coords)
    return np.lexsort((c[:, 3], c[:, 2], c[:, 1], c[:, 0]))


def unique_coords(coords: np.ndarray) -> np.ndarray:
    """Distinct rows of ``coords`` in canonical order."""
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    if len(c) == 0:
        return c
    keys = pack_coords(c)
    _, first = np.unique(keys, return_index=True)
    return c[first]


def build_sparse_tensor(cloud: ColoredPointCloud, voxel_size: float, batch_index: int = 0) -> SparseTensor:
    """Quantize a cloud on the world-anchored grid ``floor(p / voxel_size)``.

    One site per occupied voxel, feature = mean RGB scaled to [0, 1].
    """
    if len(cloud) == 0:
        raise PickPointError("empty cloud")
    if not voxel_size > 0:
        raise PickPointError(f"voxel-size must be > 0, got {voxel_size}")
    vox = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    coords = np.concatenate([np.full((len(vox), 1), batch_index, dtype=np.int64), vox], axis=1)
    keys = pack_coords(coords)
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    group = np.cumsum(np.r_[True, ks[1:] != ks[:-1]]) - 1
    n = int(group[-1]) + 1
    counts = np.bincount(group, minlength=n)
    sums = sequential_group_sums(cloud.rgb[order].astype(np.float64), group, n)
    feats = sums / counts[:, None] / 255.0
    first = np.r_[0, np.flatnonzero(ks[1:] != ks[:-1]) + 1]
    return SparseTensor(coords[order][first], feats, 1)


def stack_batches(tensors) -> SparseTensor:
    """Merge single-batch tensors into one, assigning batch indices 0..n-1 in order."""
    if not tensors:
        raise PickPointError("no tensors to batch")
    stride = tensors[0].stride
    coords, feats = [], []
    for b, t in enumerate(tensors):
        if t.stride != stride:
            raise ShapeError("cannot batch tensors of different strides")
        c = t.coords.copy()
        c[:, 0] = b
        coords.append(c)
        feats.append(t.feats)
    return SparseTensor(np.concatenate(coords), np.concatenate(feats), stride)


def prune(inp: SparseTensor, keep_scores, threshold: float) -> SparseTensor:
    """Keep the sites whose score is >= ``threshold``, in their existing order."""
    scores = np.asarray(keep_scores, dtype=np.float64).reshape(-1)
    if len(scores) != len(inp):
        raise ShapeError(f"prune: {len(scores)} scores for {len(inp)} sites")
    return inp.take(scores >= threshold)


def global_avg_pool(inp: SparseTensor, batch_size: int | None = None) -> np.ndarray:
    """Per-batch mean feature row over the active sites, shape (B, C)."""
    b = inp.coords[:, 0]
    n_batches = batch_size if batch_size is not None else inp.batch_size
    if n_batches == 0:
        raise PickPointError("empty batch 0")
    counts = np.bincount(b, minlength=n_batches)[:n_batches]
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise PickPointError(f"empty batch {int(empty[0])}")
    out = np.empty((n_batches, inp.n_channels))
    for i in range(n_batches):
        out[i] = inp.feats[b == i].mean(axis=0)
    return out


def sparse_add(a: SparseTensor, b: SparseTensor) -> SparseTensor:
    """Feature sum over the union of both coordinate sets (canonical order)."""
    if a.stride != b.stride:
        raise ShapeError(f"cannot add tensors at strides {a.stride} and {b.stride}")
    if a.n_channels != b.n_channels:
        raise ShapeError(f"cannot add {a.n_channels}- and {b.n_channels}-channel tensors")
    coords = unique_coords(np.concatenate([a.coords, b.coords]))
    idx = CoordIndex(coords)
    feats = np.zeros((len(coords), a.n_channels))
    feats[idx.lookup(a.coords)] += a.feats
    feats[idx.lookup(b.coords)] += b.feats
    return SparseTensor(coords, feats, a.stride)
