"""Anchor-boundary analysis for anchor-based object detectors.

Anchor generation, positive-sample assignment (binary and soft), momentarily
missed detection (MMD) extraction from score tracks, and warp-probe analysis
of score valleys at anchor boundaries.
"""

__version__ = "0.1.0"

from anchorlens.geometry import AxisWarp, BBox, ImageExtent, apply_warp, clip_box, iou
from anchorlens.anchors import (
    Anchor,
    AnchorSet,
    NeighborKind,
    PyramidConfig,
    PyramidLevel,
    best_anchor_for_box,
    generate_anchors,
    neighbor_kind,
)

__all__ = [
    "__version__",
    "AxisWarp",
    "BBox",
    "ImageExtent",
    "apply_warp",
    "clip_box",
    "iou",
    "Anchor",
    "AnchorSet",
    "NeighborKind",
    "PyramidConfig",
    "PyramidLevel",
    "best_anchor_for_box",
    "generate_anchors",
    "neighbor_kind",
]
