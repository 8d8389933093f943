"""Color filtering, statistical outlier removal and voxel-grid downsampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from pickpoint.errors import PickPointError
from pickpoint.pointcloud import ColoredPointCloud

DEFAULT_SIGMA1 = 100
DEFAULT_SIGMA2 = 150
DEFAULT_KNN = 20
DEFAULT_ALPHA_V = 2.0
DEFAULT_VOXEL_SIZE = 0.01


@dataclass(frozen=True)
class ColorFilterParams:
    """Red threshold ``sigma1`` and green threshold ``sigma2`` on 8-bit channels."""

    sigma1: int = DEFAULT_SIGMA1
    sigma2: int = DEFAULT_SIGMA2

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            v = getattr(self, name)
            if not (0 <= v <= 255) or int(v) != v:
                raise PickPointError(f"{name} must be an integer in [0, 255], got {v}")


@dataclass(frozen=True)
class StatFilterParams:
    k: int = DEFAULT_KNN
    alpha_v: float = DEFAULT_ALPHA_V

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise PickPointError(f"knn must be an integer >= 1, got {self.k}")
        if not (0.0 < self.alpha_v < 3.0):
            raise PickPointError(f"alpha-v must satisfy 0 < alpha-v < 3, got {self.alpha_v}")


@dataclass(frozen=True)
class VoxelParams:
    voxel_size: float = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        if not (self.voxel_size > 0.0) or not np.isfinite(self.voxel_size):
            raise PickPointError(f"voxel-size must be > 0, got {self.voxel_size}")


def color_mask(rgb: np.ndarray, p: ColorFilterParams) -> np.ndarray:
    rgb = np.asarray(rgb)
    return (rgb[:, 0].astype(np.int64) > p.sigma1) & (rgb[:, 1].astype(np.int64) <= p.sigma2)


def color_filter(cloud: ColoredPointCloud, p: ColorFilterParams) -> ColoredPointCloud:
    """Keep points whose red channel exceeds sigma1 and whose green channel is at most sigma2."""
    return cloud.select(color_mask(cloud.rgb, p))


def mean_knn_distances(xyz: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points.

    Candidate neighbors come from a k-d tree; the distances are then
    recomputed directly and sorted so the result depends only on the
    neighbor distance multiset, not on the tree's tie-breaking.
    """
    n = len(xyz)
    if n < k + 1:
        raise PickPointError("insufficient points for k-NN statistics")
    extra = 2
    q = min(k + 1 + extra, n)
    tree = cKDTree(xyz)
    _, idx = tree.query(xyz, k=q)
    idx = idx.reshape(n, q)
    diff = xyz[idx] - xyz[:, None, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    self_hit = idx == np.arange(n)[:, None]
    # self is always at distance 0; if the tree returned it, push it past the k window
    d = np.where(self_hit, np.inf, d)
    d.sort(axis=1)
    return d[:, :k].mean(axis=1)


def statistical_filter(cloud: ColoredPointCloud, p: StatFilterParams) -> ColoredPointCloud:
    """Drop points whose mean k-NN distance leaves [mu - a*sigma, mu + a*sigma].

    ``sigma`` is the population standard deviation of the per-point means.
    """
    if len(cloud) < p.k + 1:
        raise PickPointError("insufficient points for k-NN statistics")
    d = mean_knn_distances(cloud.xyz, p.k)
    mu = d.mean()
    sigma = d.std()
    keep = (d >= mu - p.alpha_v * sigma) & (d <= mu + p.alpha_v * sigma)
    return cloud.select(keep)


def voxel_indices(xyz: np.ndarray, voxel_size: float, origin) -> np.ndarray:
    return np.floor((xyz - origin) / voxel_size).astype(np.int64)


def sequential_group_sums(values: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    """Per-group sums accumulated strictly in input order.

    ``group`` must be sorted (stable) so members of a group are contiguous.
    The loop runs over rank-within-group, vectorized across groups, which
    keeps the floating-point summation order fixed and reproducible.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n_groups,) + values.shape[1:])
    if len(group) == 0:
        return out
    starts = np.flatnonzero(np.r_[True, group[1:] != group[:-1]])
    counts = np.diff(np.r_[starts, len(group)])
    rank = np.arange(len(group)) - np.repeat(starts, counts)
    order = np.argsort(rank, kind="stable")
    rank_sorted = rank[order]
    bounds = np.flatnonzero(np.r_[True, rank_sorted[1:] != rank_sorted[:-1], True])
    for a, b in zip(bounds[:-1], bounds[1:]):
        sel = order[a:b]
        out[group[sel]] += values[sel]
    return out


def voxel_downsample(cloud: ColoredPointCloud, p: VoxelParams, origin=None) -> ColoredPointCloud:
    """Replace the points of every occupied voxel by their centroid.

    The grid is anchored at ``origin`` (default: the cloud's per-axis minimum).
    Colors are averaged per channel and rounded half-up to integers.  Output
    points are ordered by voxel index (ix, iy, iz).
    """
    if len(cloud) == 0:
        raise PickPointError("empty cloud")
    xyz = cloud.xyz
    if origin is None:
        origin = xyz.min(axis=0)
    vox = voxel_indices(xyz, p.voxel_size, np.asarray(origin, dtype=np.float64))
    order = np.lexsort((vox[:, 2], vox[:, 1], vox[:, 0]))
    vs = vox[order]
    new = np.r_[True, np.any(vs[1:] != vs[:-1], axis=1)]
    group_sorted = np.cumsum(new) - 1
    n_groups = int(group_sorted[-1]) + 1
    counts = np.bincount(group_sorted, minlength=n_groups)
    sums = sequential_group_sums(xyz[order], group_sorted, n_groups)
    centroids = sums / counts[:, None]
    csum = np.zeros((n_groups, 3), dtype=np.int64)
    np.add.at(csum, group_sorted, cloud.rgb[order].astype(np.int64))
    colors = (2 * csum + counts[:, None]) // (2 * counts[:, None])
    return ColoredPointCloud(centroids, colors.astype(np.uint8), cloud.frame_label)


def preprocess(
    cloud: ColoredPointCloud,
    color: Optional[ColorFilterParams] = None,
    stat: Optional[StatFilterParams] = None,
    voxel: Optional[VoxelParams] = None,
) -> ColoredPointCloud:
    """Color filter, then statistical filter, then voxel downsampling."""
    out = color_filter(cloud, color or ColorFilterParams())
    out = statistical_filter(out, stat or StatFilterParams())
    return voxel_downsample(out, voxel or VoxelParams())
