"""Multi-level anchor generation and the neighbor taxonomy between anchors."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from anchorlens.geometry import BBox, ImageExtent, iou_many

# relative tolerance when grouping template areas into size ranks
_AREA_RTOL = 1e-9


class NeighborKind(enum.Enum):
    SCALE = "ScaleBoundary"
    GRID = "GridBoundary"
    ASPECT = "AspectBoundary"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PyramidLevel:
    grid_w: int
    grid_h: int
    stride_x: float
    stride_y: float
    templates: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple((float(w), float(h)) for w, h in self.templates))

    def validate(self, where: str = "level") -> None:
        if int(self.grid_w) != self.grid_w or self.grid_w < 1:
            raise ValueError(f"{where}.grid_w: must be an integer >= 1, got {self.grid_w!r}")
        if int(self.grid_h) != self.grid_h or self.grid_h < 1:
            raise ValueError(f"{where}.grid_h: must be an integer >= 1, got {self.grid_h!r}")
        if not self.stride_x > 0:
            raise ValueError(f"{where}.stride_x: must be > 0, got {self.stride_x!r}")
        if not self.stride_y > 0:
            raise ValueError(f"{where}.stride_y: must be > 0, got {self.stride_y!r}")
        if not self.templates:
            raise ValueError(f"{where}.templates: must not be empty")
        for t, (w, h) in enumerate(self.templates):
            if not (w > 0 and h > 0):
                raise ValueError(f"{where}.templates[{t}]: width and height must be > 0, got ({w}, {h})")

    def size_ranks(self) -> tuple[int, ...]:
        """Rank of each template by area; templates of equal area share a rank."""
        areas = [w * h for w, h in self.templates]
        distinct: list[float] = []
        for a in sorted(areas):
            if not distinct or not math.isclose(a, distinct[-1], rel_tol=_AREA_RTOL):
                distinct.append(a)
        ranks = []
        for a in areas:
            ranks.append(next(r for r, d in enumerate(distinct) if math.isclose(a, d, rel_tol=_AREA_RTOL)))
        return tuple(ranks)


@dataclass(frozen=True)
class PyramidConfig:
    levels: tuple[PyramidLevel, ...]
    extent: ImageExtent

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))

    def validate(self) -> None:
        if not self.levels:
            raise ValueError("levels: at least one level is required")
        for k, level in enumerate(self.levels):
            where = f"levels[{k}]"
            level.validate(where)
            span_x = level.grid_w * level.stride_x
            span_y = level.grid_h * level.stride_y
            if abs(span_x - self.extent.width) > level.stride_x:
                raise ValueError(
                    f"{where}: grid_w*stride_x={span_x:g} does not span image width {self.extent.width}"
                )
            if abs(span_y - self.extent.height) > level.stride_y:
                raise ValueError(
                    f"{where}: grid_h*stride_y={span_y:g} does not span image height {self.extent.height}"
                )


@dataclass(frozen=True)
class Anchor:
    id: int
    level_index: int
    cell_i: int
    cell_j: int
    template_index: int
    box: BBox


@dataclass(frozen=True)
class AnchorSet:
    """Immutable ordered anchor collection; ``anchors[k].id == k``."""

    config: PyramidConfig
    anchors: tuple[Anchor, ...]
    boxes: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.anchors)

    def __iter__(self) -> Iterator[Anchor]:
        return iter(self.anchors)

    def __getitem__(self, anchor_id: int) -> Anchor:
        return self.anchors[anchor_id]

    def __contains__(self, anchor_id) -> bool:
        return isinstance(anchor_id, (int, np.integer)) and 0 <= anchor_id < len(self.anchors)

    def ious(self, box: BBox) -> np.ndarray:
        return iou_many(self.boxes, box)

    def level_ids(self, level_index: int) -> list[int]:
        return [a.id for a in self.anchors if a.level_index == level_index]


def generate_anchors(config: PyramidConfig) -> AnchorSet:
    """Enumerate one anchor per (level, cell, template).

    Order is level-major, then row-major over cells (``cell_j`` outer,
    ``cell_i`` inner), then template index. Boxes are not clipped.
    """
    config.validate()
    anchors = []
    for li, level in enumerate(config.levels):
        for j in range(level.grid_h):
            cy = (j + 0.5) * level.stride_y
            for i in range(level.grid_w):
                cx = (i + 0.5) * level.stride_x
                for t, (w, h) in enumerate(level.templates):
                    box = BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
                    anchors.append(Anchor(len(anchors), li, i, j, t, box))
    boxes = np.array([a.box.as_tuple() for a in anchors], dtype=np.float64)
    boxes.setflags(write=False)
    return AnchorSet(config, tuple(anchors), boxes)


def anchor_center(anchor: Anchor, config: PyramidConfig) -> tuple[float, float]:
    level = config.levels[anchor.level_index]
    return ((anchor.cell_i + 0.5) * level.stride_x, (anchor.cell_j + 0.5) * level.stride_y)


def neighbor_kind(a: Anchor, b: Anchor, config: PyramidConfig | AnchorSet) -> Optional[NeighborKind]:
    """Classify the boundary between two anchors, or None if they are not neighbors.

    Same level: 4-adjacent cells with the same template are a grid boundary;
    the same cell with different templates is an aspect boundary when the
    templates share a size rank and a scale boundary otherwise. Adjacent
    levels form a scale boundary when their centers lie within one stride of
    the coarser level on both axes.
    """
    if isinstance(config, AnchorSet):
        config = config.config
    if a.id == b.id:
        raise ValueError(f"neighbor_kind needs two distinct anchors, got id {a.id} twice")
    if a.level_index == b.level_index:
        level = config.levels[a.level_index]
        same_cell = a.cell_i == b.cell_i and a.cell_j == b.cell_j
        if same_cell:
            if a.template_index == b.template_index:
                return None
            ranks = level.size_ranks()
            if ranks[a.template_index] != ranks[b.template_index]:
                return NeighborKind.SCALE
            wa, ha = level.templates[a.template_index]
            wb, hb = level.templates[b.template_index]
            if math.isclose(wa / ha, wb / hb, rel_tol=_AREA_RTOL):
                return None
            return NeighborKind.ASPECT
        if a.template_index == b.template_index:
            if abs(a.cell_i - b.cell_i) + abs(a.cell_j - b.cell_j) == 1:
                return NeighborKind.GRID
        return None
    if abs(a.level_index - b.level_index) != 1:
        return None
    la, lb = config.levels[a.level_index], config.levels[b.level_index]
    coarse = la if la.stride_x * la.stride_y >= lb.stride_x * lb.stride_y else lb
    ax, ay = anchor_center(a, config)
    bx, by = anchor_center(b, config)
    if math.isclose(a.box.area, b.box.area, rel_tol=_AREA_RTOL):
        return None
    if abs(ax - bx) <= coarse.stride_x and abs(ay - by) <= coarse.stride_y:
        return NeighborKind.SCALE
    return None


def best_anchor_for_box(anchors: Sequence[Anchor] | AnchorSet, box: BBox) -> tuple[Anchor, float]:
    """Anchor with the largest IOU against ``box``; ties go to the smallest id."""
    if isinstance(anchors, AnchorSet):
        ordered = anchors.anchors
        boxes = anchors.boxes
    else:
        ordered = tuple(sorted(anchors, key=lambda a: a.id))
        if not ordered:
            raise ValueError("best_anchor_for_box needs at least one anchor")
        boxes = np.array([a.box.as_tuple() for a in ordered], dtype=np.float64)
    scores = iou_many(boxes, box)
    k = int(np.argmax(scores))
    return ordered[k], float(scores[k])
