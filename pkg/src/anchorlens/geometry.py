"""Axis-aligned box arithmetic.

Boxes live in continuous pixel coordinates with no +1 pixel convention:
the area of ``(x_min, y_min, x_max, y_max)`` is ``(x_max - x_min) * (y_max - y_min)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite: {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"box must have positive area: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BBox":
        return cls(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)


@dataclass(frozen=True)
class ImageExtent:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"image extent must be integral: {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image extent must be positive: {self.width}x{self.height}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)


@dataclass(frozen=True)
class AxisWarp:
    """Per-axis scale about ``(cx, cy)`` followed by a translation."""

    sx: float = 1.0
    sy: float = 1.0
    tx: float = 0.0
    ty: float = 0.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise ValueError(f"warp scales must be positive: sx={self.sx}, sy={self.sy}")

    @property
    def is_identity(self) -> bool:
        return self.sx == 1.0 and self.sy == 1.0 and self.tx == 0.0 and self.ty == 0.0

    def map_point(self, x: float, y: float) -> tuple[float, float]:
        if self.is_identity:
            return (x, y)
        return (
            self.cx + self.sx * (x - self.cx) + self.tx,
            self.cy + self.sy * (y - self.cy) + self.ty,
        )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when they do not overlap."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_many(boxes: np.ndarray, box: BBox) -> np.ndarray:
    """IOU of every row of an ``[N, 4]`` array against one box.

    Uses the same operation order as :func:`iou`, so entries agree bitwise.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(boxes[:, 2], box.x_max) - np.maximum(boxes[:, 0], box.x_min)
    ih = np.minimum(boxes[:, 3], box.y_max) - np.maximum(boxes[:, 1], box.y_min)
    overlap = (iw > 0.0) & (ih > 0.0)
    inter = np.where(overlap, iw * ih, 0.0)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    out = np.zeros(len(boxes))
    out[overlap] = inter[overlap] / (areas[overlap] + box.area - inter[overlap])
    return out


def apply_warp(w: AxisWarp, b: BBox) -> BBox:
    x0, y0 = w.map_point(b.x_min, b.y_min)
    x1, y1 = w.map_point(b.x_max, b.y_max)
    return BBox(x0, y0, x1, y1)


def clip_box(b: BBox, e: ImageExtent) -> Optional[BBox]:
    x0, y0 = max(b.x_min, 0.0), max(b.y_min, 0.0)
    x1, y1 = min(b.x_max, float(e.width)), min(b.y_max, float(e.height))
    if x0 >= x1 or y0 >= y1:
        return None
    return BBox(x0, y0, x1, y1)
