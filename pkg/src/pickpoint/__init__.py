"""Picking-point perception toolkit for clustered-fruit harvesting robots.

Pipeline: hand-eye calibration -> per-view capture -> stitching in the robot
base frame -> color / statistical filtering -> voxel downsampling -> sparse
convolutional detector with squeeze-and-excitation residual blocks ->
box decoding -> evaluation.
"""

from pickpoint.errors import PickPointError

__version__ = "0.1.0"

__all__ = ["PickPointError", "__version__"]
