"""Generalized sparse convolution and its strided / transposed variants.

For an output site ``u`` the convolution sums ``W_i @ x[stride*u + i]`` over
the kernel offsets ``i`` whose input site exists; offsets are visited in
their stored (lexicographic) order so accumulation is deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pickpoint.errors import ShapeError
from pickpoint.sparsenn.tensor import CoordIndex, SparseTensor, unique_coords


def cube_offsets(size: int = 3) -> np.ndarray:
    """Centered ``size``^3 offsets (size odd), lexicographic."""
    r = range(-(size // 2), size // 2 + 1)
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


def block_offsets(size: int = 2) -> np.ndarray:
    """Non-negative ``size``^3 offsets {0..size-1}^3, lexicographic."""
    r = range(size)
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


CENTER = np.zeros((1, 3), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SparseKernel:
    """Offsets (K, 3), one (N_in, N_out) matrix per offset, optional bias."""

    offsets: np.ndarray
    weights: np.ndarray
    bias: Optional[np.ndarray] = None
    name: str = "conv"

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] != len(off):
            raise ShapeError(f"{self.name}: need one weight matrix per offset, "
                             f"got weights {w.shape} for {len(off)} offsets")
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if len(b) != w.shape[2]:
                raise ShapeError(f"{self.name}: bias length {len(b)} != {w.shape[2]} output channels")
            object.__setattr__(self, "bias", b)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "weights", w)
        # all-zero matrices contribute exact zeros, so their lookups can be skipped
        object.__setattr__(self, "active", np.any(w != 0.0, axis=(1, 2)))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[2]


def _check_width(inp: SparseTensor, kernel: SparseKernel):
    if inp.n_channels != kernel.n_in:
        raise ShapeError(f"{kernel.name}: expects {kernel.n_in} input channels, got {inp.n_channels}")


def sparse_conv(inp: SparseTensor, kernel: SparseKernel, out_coords, stride: int = 1) -> SparseTensor:
    """Evaluate the kernel at ``out_coords`` (on the output grid).

    Input site ``stride*u + i`` feeds output ``u`` through ``W_i``.  Output
    sites without any contributing input receive only the bias.
    """
    _check_width(inp, kernel)
    out_coords = np.asarray(out_coords, dtype=np.int64).reshape(-1, 4)
    index = inp.index()
    out = np.zeros((len(out_coords), kernel.n_out))
    base = out_coords.copy()
    base[:, 1:] *= stride
    for k, off in enumerate(kernel.offsets):
        if not kernel.active[k]:
            continue
        q = base.copy()
        q[:, 1:] += off
        rows = index.lookup(q)
        hit = rows >= 0
        if hit.any():
            out[hit] += inp.feats[rows[hit]] @ kernel.weights[k]
    if kernel.bias is not None:
        out += kernel.bias
    return SparseTensor(out_coords, out, inp.stride * stride)


def submanifold_conv(inp: SparseTensor, kernel: SparseKernel) -> SparseTensor:
    """Stride-1 convolution evaluated on the input's own coordinate set."""
    return sparse_conv(inp, kernel, inp.coords, 1)


def downsampled_coords(coords: np.ndarray, factor: int = 2) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64).copy()
    c[:, 1:] = np.floor_divide(c[:, 1:], factor)
    return unique_coords(c)


def downsample_conv(inp: SparseTensor, kernel: SparseKernel) -> SparseTensor:
    """Stride-2 convolution onto the occupied parent cells ``floor(u / 2)``."""
    return sparse_conv(inp, kernel, downsampled_coords(inp.coords, 2), 2)


def transposed_conv(inp: SparseTensor, kernel: SparseKernel, out_coords=None) -> SparseTensor:
    """Generative stride-2 transposed convolution.

    Input site ``u`` scatters ``W_i @ x_u`` to output ``2u + i``.  Without
    ``out_coords`` every generated coordinate becomes an output site;
    otherwise contributions outside ``out_coords`` are dropped.
    """
    _check_width(inp, kernel)
    if inp.stride < 2:
        raise ShapeError(f"{kernel.name}: transposed convolution needs input stride >= 2")
    if out_coords is None:
        cand = []
        for off in kernel.offsets:
            c = inp.coords.copy()
            c[:, 1:] = 2 * c[:, 1:] + off
            cand.append(c)
        out_coords = unique_coords(np.concatenate(cand)) if cand else np.zeros((0, 4), np.int64)
    out_coords = np.asarray(out_coords, dtype=np.int64).reshape(-1, 4)
    index = CoordIndex(out_coords)
    out = np.zeros((len(out_coords), kernel.n_out))
    for k, off in enumerate(kernel.offsets):
        if not kernel.active[k]:
            continue
        t = inp.coords.copy()
        t[:, 1:] = 2 * t[:, 1:] + off
        rows = index.lookup(t)
        hit = rows >= 0
        if hit.any():
            out[rows[hit]] += inp.feats[hit] @ kernel.weights[k]
    if kernel.bias is not None:
        out += kernel.bias
    return SparseTensor(out_coords, out, inp.stride // 2)


def linear(inp: SparseTensor, weight: np.ndarray, bias=None) -> np.ndarray:
    """1x1x1 convolution as a plain per-site matrix product; returns feature rows."""
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim == 3:
        w = w[0]
    if inp.n_channels != w.shape[0]:
        raise ShapeError(f"expects {w.shape[0]} input channels, got {inp.n_channels}")
    out = inp.feats @ w
    if bias is not None:
        out = out + bias
    return out
