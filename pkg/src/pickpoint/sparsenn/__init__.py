"""Sparse voxel tensors, sparse convolutions and the SE-residual detector (inference only)."""

from pickpoint.sparsenn.conv import (
    SparseKernel, block_offsets, cube_offsets, downsample_conv, sparse_conv,
    submanifold_conv, transposed_conv,
)
from pickpoint.sparsenn.detector import constructed_weights
from pickpoint.sparsenn.network import (
    ArchConfig, HeadOutput, NetworkWeights, ResBlockWeights, SeWeights,
    backbone_forward, decode_detections, head_forward, neck_forward,
    network_forward, random_weights, se_forward, se_res_block, zero_weights,
)
from pickpoint.sparsenn.tensor import (
    SparseTensor, build_sparse_tensor, global_avg_pool, prune, sparse_add,
)
from pickpoint.sparsenn.weights_io import load_weights, save_weights


def detect(cloud, weights, voxel_size=0.01, score_threshold=0.3, nms_iou=0.5):
    """Voxelize ``cloud`` and run the full network; returns decoded boxes."""
    tensor = build_sparse_tensor(cloud, voxel_size)
    outputs = network_forward(tensor, weights)
    return decode_detections(outputs, voxel_size, score_threshold, nms_iou)


__all__ = [
    "ArchConfig", "HeadOutput", "NetworkWeights", "ResBlockWeights", "SeWeights",
    "SparseKernel", "SparseTensor", "backbone_forward", "block_offsets",
    "build_sparse_tensor", "constructed_weights", "cube_offsets", "decode_detections",
    "detect", "downsample_conv", "global_avg_pool", "head_forward", "load_weights",
    "neck_forward", "network_forward", "prune", "random_weights", "save_weights",
    "se_forward", "se_res_block", "sparse_add", "sparse_conv", "submanifold_conv",
    "transposed_conv", "zero_weights",
]
