"""SE-residual sparse backbone, pruning neck and anchor-free head (inference only).

Layer map (``C = channels``, ``H = head_channels``, ``r = se_ratio``)::

    stem                      3^3 conv   in -> stem_channels, ReLU        stride 1
    stage{s}.down             2^3 conv   C[s-1] -> C[s], stride 2, ReLU   s = 1..4
    stage{s}.block.conv1/2    3^3 convs  C[s] -> C[s]
    stage{s}.block.se.fc1/2   C[s] -> C[s]/r -> C[s]
    neck.up{l}                2^3 transposed conv C[l+1] -> C[l], ReLU     l = 1..3
    neck.prune{l}             1x1x1 C[l] -> 1 (optional, keep if sigmoid >= 0.5)
    neck.out{l}               3^3 conv C[l] -> H, ReLU                      l = 1..4
    head.cls / head.reg / head.ctr   1x1x1 H -> classes / 6 / 1, shared by all levels

Every weight tensor of a ``*.weight`` layer is stored as (K, N_in, N_out)
with K kernel offsets in lexicographic order; biases are (N_out,).
Batch normalization is assumed folded into the conv biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from pickpoint.errors import PickPointError, ShapeError
from pickpoint.eval import BoundingBox3D, iou3d
from pickpoint.sparsenn.conv import (
    CENTER, SparseKernel, block_offsets, cube_offsets, downsample_conv,
    linear, submanifold_conv, transposed_conv,
)
from pickpoint.sparsenn.tensor import SparseTensor, global_avg_pool, prune, sparse_add

FORMAT_VERSION = 1
DEFAULT_SCORE_THRESHOLD = 0.3
DEFAULT_NMS_IOU = 0.5
PRUNE_THRESHOLD = 0.5


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int = 3
    stem_channels: int = 64
    channels: tuple = (64, 128, 256, 256)
    head_channels: int = 64
    se_ratio: int = 16
    n_classes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 4:
            raise ShapeError("the backbone has exactly four stages")
        for c in self.channels:
            if c % self.se_ratio:
                raise ShapeError(f"se ratio {self.se_ratio} does not divide {c} channels")

    def fingerprint(self) -> str:
        return ("fcaf3d-se:in={};stem={};ch={};head={};se={};cls={}".format(
            self.in_channels, self.stem_channels, ",".join(map(str, self.channels)),
            self.head_channels, self.se_ratio, self.n_classes))

    @classmethod
    def from_fingerprint(cls, text: str) -> ArchConfig:
        try:
            kind, rest = text.split(":", 1)
            if kind != "fcaf3d-se":
                raise ValueError(kind)
            kv = dict(part.split("=", 1) for part in rest.split(";"))
            return cls(int(kv["in"]), int(kv["stem"]), tuple(int(c) for c in kv["ch"].split(",")),
                       int(kv["head"]), int(kv["se"]), int(kv["cls"]))
        except (ValueError, KeyError) as exc:
            raise PickPointError(f"unrecognized architecture fingerprint {text!r}") from exc

    def layer_shapes(self, with_prune: bool = True) -> dict:
        """Every tensor the forward pass needs, name -> shape."""
        shapes = {}

        def conv(name, k, cin, cout):
            shapes[f"{name}.weight"] = (k, cin, cout)
            shapes[f"{name}.bias"] = (cout,)

        conv("stem", 27, self.in_channels, self.stem_channels)
        prev = self.stem_channels
        for s, c in enumerate(self.channels, start=1):
            conv(f"stage{s}.down", 8, prev, c)
            conv(f"stage{s}.block.conv1", 27, c, c)
            conv(f"stage{s}.block.conv2", 27, c, c)
            shapes[f"stage{s}.block.se.fc1.weight"] = (c, c // self.se_ratio)
            shapes[f"stage{s}.block.se.fc1.bias"] = (c // self.se_ratio,)
            shapes[f"stage{s}.block.se.fc2.weight"] = (c // self.se_ratio, c)
            shapes[f"stage{s}.block.se.fc2.bias"] = (c,)
            prev = c
        for lvl in range(1, 4):
            conv(f"neck.up{lvl}", 8, self.channels[lvl], self.channels[lvl - 1])
            if with_prune:
                conv(f"neck.prune{lvl}", 1, self.channels[lvl - 1], 1)
        for lvl in range(1, 5):
            conv(f"neck.out{lvl}", 27, self.channels[lvl - 1], self.head_channels)
        conv("head.cls", 1, self.head_channels, self.n_classes)
        conv("head.reg", 1, self.head_channels, 6)
        conv("head.ctr", 1, self.head_channels, 1)
        return shapes


def as_float32_values(a) -> np.ndarray:
    """float64 array holding exactly float32-representable values (what weight files store)."""
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


@dataclass(frozen=True, eq=False)
class NetworkWeights:
    """Named weight tensors plus the architecture they belong to."""

    tensors: Mapping[str, np.ndarray]
    config: ArchConfig = field(default_factory=ArchConfig)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        frozen = {}
        for name in sorted(self.tensors):
            arr = as_float32_values(self.tensors[name])
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)
        self.validate()

    @property
    def has_prune(self) -> bool:
        return any(k.startswith("neck.prune") for k in self.tensors)

    def validate(self) -> None:
        expected = self.config.layer_shapes(with_prune=self.has_prune)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ShapeError(f"missing layer '{name}'")
            if tuple(self.tensors[name].shape) != tuple(shape):
                raise ShapeError(f"layer '{name}' has shape {self.tensors[name].shape}, expected {shape}")
        extra = sorted(set(self.tensors) - set(expected))
        if extra:
            raise ShapeError(f"unexpected layer '{extra[0]}'")

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ShapeError(f"missing layer '{name}'") from None

    def kernel(self, name: str, offsets: np.ndarray) -> SparseKernel:
        return SparseKernel(offsets, self[f"{name}.weight"], self[f"{name}.bias"], name=name)

    def se(self, prefix: str) -> SeWeights:
        return SeWeights(self[f"{prefix}.fc1.weight"], self[f"{prefix}.fc1.bias"],
                         self[f"{prefix}.fc2.weight"], self[f"{prefix}.fc2.bias"],
                         self.config.se_ratio)

    def block(self, prefix: str) -> ResBlockWeights:
        return ResBlockWeights(self.kernel(f"{prefix}.conv1", cube_offsets(3)),
                               self.kernel(f"{prefix}.conv2", cube_offsets(3)),
                               self.se(f"{prefix}.se"))

    def equals(self, other: NetworkWeights) -> bool:
        return (self.config == other.config and self.tensors.keys() == other.tensors.keys()
                and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors))


# --- squeeze-and-excitation ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SeWeights:
    w1: np.ndarray  # (C, C/r)
    b1: np.ndarray
    w2: np.ndarray  # (C/r, C)
    b2: np.ndarray
    ratio: int = 16

    def __post_init__(self):
        w1, w2 = np.asarray(self.w1, float), np.asarray(self.w2, float)
        c, h = w1.shape
        if w2.shape != (h, c):
            raise ShapeError(f"se: fc2 shape {w2.shape} does not mirror fc1 {w1.shape}")
        if c % self.ratio or c // self.ratio != h:
            raise ShapeError(f"se: {c} channels with ratio {self.ratio} needs {c // self.ratio} hidden units, got {h}")
        b1 = np.zeros(h) if self.b1 is None else np.asarray(self.b1, float)
        b2 = np.zeros(c) if self.b2 is None else np.asarray(self.b2, float)
        if b1.shape != (h,) or b2.shape != (c,):
            raise ShapeError("se: bias shapes do not match the fully connected layers")
        for k, v in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)):
            object.__setattr__(self, k, v)

    @classmethod
    def zeros(cls, channels: int, ratio: int = 16) -> SeWeights:
        h = channels // ratio
        return cls(np.zeros((channels, h)), np.zeros(h), np.zeros((h, channels)), np.zeros(channels), ratio)


def se_scale(inp: SparseTensor, se: SeWeights) -> np.ndarray:
    """Per-batch channel gates sigmoid(fc2(relu(fc1(avgpool)))), shape (B, C)."""
    if inp.n_channels != se.w1.shape[0]:
        raise ShapeError(f"se: expects {se.w1.shape[0]} channels, got {inp.n_channels}")
    pooled = global_avg_pool(inp)
    return expit(relu(pooled @ se.w1 + se.b1) @ se.w2 + se.b2)


def se_forward(inp: SparseTensor, se: SeWeights) -> SparseTensor:
    s = se_scale(inp, se)
    return inp.with_feats(inp.feats * s[inp.coords[:, 0]])


@dataclass(frozen=True)
class ResBlockWeights:
    conv1: SparseKernel
    conv2: SparseKernel
    se: SeWeights
    proj: Optional[SparseKernel] = None


def se_res_block(inp: SparseTensor, w: ResBlockWeights) -> SparseTensor:
    """relu(shortcut(x) + se(conv2(relu(conv1(x)))))."""
    h = submanifold_conv(inp, w.conv1)
    h = submanifold_conv(h.with_feats(relu(h.feats)), w.conv2)
    h = se_forward(h, w.se)
    if w.proj is not None:
        shortcut = submanifold_conv(inp, w.proj).feats
    elif inp.n_channels == w.conv2.n_out:
        shortcut = inp.feats
    else:
        raise ShapeError(f"{w.conv2.name}: channel change {inp.n_channels}->{w.conv2.n_out} needs a projection")
    return h.with_feats(relu(shortcut + h.feats))


# --- backbone / neck / head ---------------------------------------------------------

def backbone_forward(inp: SparseTensor, weights: NetworkWeights) -> list:
    """Four feature levels at strides 2, 4, 8, 16 (channels per the config)."""
    cfg = weights.config
    if inp.stride != 1:
        raise ShapeError(f"backbone input must be stride 1, got {inp.stride}")
    if inp.n_channels != cfg.in_channels:
        raise ShapeError(f"stem: expects {cfg.in_channels} input channels, got {inp.n_channels}")
    x = submanifold_conv(inp, weights.kernel("stem", cube_offsets(3)))
    x = x.with_feats(relu(x.feats))
    levels = []
    for s in range(1, 5):
        x = downsample_conv(x, weights.kernel(f"stage{s}.down", block_offsets(2)))
        x = x.with_feats(relu(x.feats))
        x = se_res_block(x, weights.block(f"stage{s}.block"))
        levels.append(x)
    return levels


@dataclass(frozen=True, eq=False)
class HeadOutput:
    """Per-site head predictions for one feature level."""

    coords: np.ndarray
    stride: int
    class_prob: np.ndarray   # (N,) for single-class, else (N, classes)
    box_params: np.ndarray   # (N, 6): dx, dy, dz offsets (m); log-size factors
    centerness: np.ndarray   # (N,)

    def __len__(self):
        return len(self.coords)


def head_forward_single(feat: SparseTensor, weights: NetworkWeights) -> HeadOutput:
    cls = expit(linear(feat, weights["head.cls.weight"], weights["head.cls.bias"]))
    reg = linear(feat, weights["head.reg.weight"], weights["head.reg.bias"])
    ctr = expit(linear(feat, weights["head.ctr.weight"], weights["head.ctr.bias"]))[:, 0]
    if cls.shape[1] == 1:
        cls = cls[:, 0]
    return HeadOutput(feat.coords, feat.stride, cls, reg, ctr)


def head_forward(levels, weights: NetworkWeights) -> list:
    """Shared 1x1x1 classification / regression / centerness branches on every level."""
    return [head_forward_single(lv, weights) for lv in levels]


def neck_forward(levels, weights: NetworkWeights) -> list:
    """Top-down neck: upsample, add the lateral level, prune, then the per-level output conv.

    Returns the four head-input tensors, finest level first.
    """
    if len(levels) != 4:
        raise ShapeError(f"neck expects 4 levels, got {len(levels)}")
    outs = [None] * 4
    x = levels[3]
    for lvl in range(4, 0, -1):
        if lvl < 4:
            up = transposed_conv(x, weights.kernel(f"neck.up{lvl}", block_offsets(2)))
            up = up.with_feats(relu(up.feats))
            x = sparse_add(levels[lvl - 1], up)
            if weights.has_prune:
                score = expit(linear(x, weights[f"neck.prune{lvl}.weight"], weights[f"neck.prune{lvl}.bias"]))
                x = prune(x, score[:, 0], PRUNE_THRESHOLD)
        if len(x) == 0:
            raise PickPointError(f"neck level {lvl}: every site was pruned")
        y = submanifold_conv(x, weights.kernel(f"neck.out{lvl}", cube_offsets(3)))
        outs[lvl - 1] = y.with_feats(relu(y.feats))
    return outs


def network_forward(inp: SparseTensor, weights: NetworkWeights) -> list:
    """Backbone -> neck -> head; one :class:`HeadOutput` per level."""
    return head_forward(neck_forward(backbone_forward(inp, weights), weights), weights)


# --- decoding -------------------------------------------------------------------------

def decode_boxes(outputs, voxel_size: float, batch_index: int = 0):
    """All candidate boxes as arrays: centers (N, 3), sizes (N, 3), scores (N,)."""
    centers, sizes, scores = [], [], []
    for out in outputs:
        sel = out.coords[:, 0] == batch_index
        if not sel.any():
            continue
        cell = out.stride * voxel_size
        reg = out.box_params[sel]
        prob = out.class_prob[sel]
        if prob.ndim == 2:
            prob = prob.max(axis=1)
        centers.append((out.coords[sel, 1:] + 0.5) * cell + reg[:, :3])
        sizes.append(np.exp(reg[:, 3:]) * cell)
        scores.append(prob * out.centerness[sel])
    if not centers:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(centers), np.concatenate(sizes), np.concatenate(scores)


def nms(centers, sizes, scores, iou_threshold: float) -> list:
    """Greedy suppression by descending score; returns kept indices."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    lo = centers - sizes / 2
    hi = centers + sizes / 2
    vol = np.prod(sizes, axis=1)
    keep = []
    alive = np.ones(len(scores), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        keep.append(i)
        overlap = np.clip(np.minimum(hi[i], hi) - np.maximum(lo[i], lo), 0.0, None)
        inter = np.prod(overlap, axis=1)
        iou = inter / (vol[i] + vol - inter)
        alive &= iou < iou_threshold
    return keep


def decode_detections(outputs, voxel_size: float, score_threshold: float = DEFAULT_SCORE_THRESHOLD,
                      nms_iou: float = DEFAULT_NMS_IOU, batch_index: int = 0) -> list:
    """Turn head outputs into scored boxes.

    center = (coord + 0.5) * stride * voxel + offset; size = exp(size param) * stride * voxel;
    score = class probability * centerness.
    """
    for name, v in (("score threshold", score_threshold), ("nms iou", nms_iou)):
        if not (0.0 <= v <= 1.0):
            raise PickPointError(f"{name} must lie in [0, 1], got {v}")
    centers, sizes, scores = decode_boxes(outputs, voxel_size, batch_index)
    ok = scores >= score_threshold
    centers, sizes, scores = centers[ok], sizes[ok], scores[ok]
    keep = nms(centers, sizes, scores, nms_iou)
    return [BoundingBox3D(tuple(centers[i]), tuple(sizes[i]), float(min(max(scores[i], 0.0), 1.0)))
            for i in keep]


# --- initializers -------------------------------------------------------------------------

def zero_weights(config: ArchConfig = ArchConfig(), with_prune: bool = False) -> NetworkWeights:
    shapes = config.layer_shapes(with_prune)
    return NetworkWeights({k: np.zeros(s) for k, s in shapes.items()}, config)


def random_weights(config: ArchConfig = ArchConfig(), seed: int = 0, with_prune: bool = False,
                   bias_scale: float = 0.05) -> NetworkWeights:
    """He-style random initialization (fan-in scaled), deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in config.layer_shapes(with_prune).items():
        if name.endswith(".bias"):
            tensors[name] = rng.normal(0.0, bias_scale, size=shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return NetworkWeights(tensors, config)


def iou_of(a: BoundingBox3D, b: BoundingBox3D) -> float:
    return iou3d(a, b)
