"""Positive-sample assignment: binary IOU thresholds, the clipped-sigmoid soft
weight, the YOLOv2 center-cell rule, and hard-negative selection."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from anchorlens.anchors import AnchorSet
from anchorlens.geometry import BBox


@dataclass(frozen=True)
class SoftThresholdParams:
    alpha: float = 0.1
    beta: float = 0.001
    center: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.beta < 0.5:
            raise ValueError(f"beta must lie in (0, 0.5), got {self.beta}")
        if self.center != 0.5:
            raise ValueError("the sigmoid center is fixed at IOU 0.5")

    @property
    def slope(self) -> float:
        # chosen so the sigmoid equals beta at the lower band edge
        return math.log((1.0 - self.beta) / self.beta) / self.alpha

    @property
    def lower(self) -> float:
        return self.center - self.alpha

    @property
    def upper(self) -> float:
        return self.center + self.alpha


def soft_weight(r: float, p: SoftThresholdParams = SoftThresholdParams()) -> float:
    """Clipped logistic weight for an anchor with IOU ``r``.

    Zero below ``0.5 - alpha``, one above ``0.5 + alpha``; the sigmoid is
    evaluated on the closed band so the edges give exactly beta and 1 - beta.
    """
    if r < p.lower:
        return 0.0
    if r > p.upper:
        return 1.0
    return 1.0 / (1.0 + math.exp(-p.slope * (r - p.center)))


def soft_weights(r: np.ndarray, p: SoftThresholdParams = SoftThresholdParams()) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    out = np.where(r > p.upper, 1.0, 0.0)
    # the band goes through the scalar path so both forms agree bitwise
    band = (r >= p.lower) & (r <= p.upper)
    out[band] = [soft_weight(float(v), p) for v in r[band]]
    return out


# -- strategies -------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryThreshold:
    """Positive when IOU clears ``pos_iou`` (strictly unless ``pos_inclusive``).

    With ``neg_iou`` set, negatives are anchors whose max IOU is below it;
    without it every non-positive anchor is a negative candidate.
    """

    pos_iou: float
    pos_inclusive: bool = False
    neg_iou: Optional[float] = None
    neg_inclusive: bool = False

    def __post_init__(self):
        if not 0.0 <= self.pos_iou <= 1.0:
            raise ValueError(f"pos_iou must lie in [0, 1], got {self.pos_iou}")
        if self.neg_iou is not None:
            if not 0.0 <= self.neg_iou <= 1.0:
                raise ValueError(f"neg_iou must lie in [0, 1], got {self.neg_iou}")
            if self.neg_iou > self.pos_iou:
                raise ValueError("neg_iou must not exceed pos_iou")

    def weights(self, r: np.ndarray) -> np.ndarray:
        hit = r >= self.pos_iou if self.pos_inclusive else r > self.pos_iou
        return hit.astype(np.float64)

    def negative_mask(self, max_iou: np.ndarray) -> np.ndarray:
        if self.neg_iou is None:
            return np.ones(max_iou.shape, dtype=bool)
        return max_iou <= self.neg_iou if self.neg_inclusive else max_iou < self.neg_iou


@dataclass(frozen=True)
class SoftSigmoid:
    params: SoftThresholdParams = SoftThresholdParams()

    def weights(self, r: np.ndarray) -> np.ndarray:
        return soft_weights(r, self.params)

    def negative_mask(self, max_iou: np.ndarray) -> np.ndarray:
        return max_iou < self.params.lower


@dataclass(frozen=True)
class CenterBest:
    neg_iou: float = 0.6


MatchStrategy = Union[BinaryThreshold, SoftSigmoid, CenterBest]

PRESETS: dict[str, MatchStrategy] = {
    "faster-rcnn": BinaryThreshold(0.7, neg_iou=0.3),
    "ssd": BinaryThreshold(0.5),
    "retinanet": BinaryThreshold(0.5, pos_inclusive=True, neg_iou=0.4),
    "refinedet": BinaryThreshold(0.5),
    "m2det": BinaryThreshold(0.5, pos_inclusive=True),
    "yolov2": CenterBest(0.6),
    "soft": SoftSigmoid(),
}

# hard-negative mining ratio (negatives per positive) for presets that use it
HNM_RATIO: dict[str, int] = {"ssd": 3, "refinedet": 3, "m2det": 3, "soft": 3}


def strategy_from_name(name: str, soft_params: Optional[SoftThresholdParams] = None) -> MatchStrategy:
    try:
        strategy = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown strategy preset {name!r}; choose from {', '.join(PRESETS)}") from None
    if isinstance(strategy, SoftSigmoid) and soft_params is not None:
        strategy = SoftSigmoid(soft_params)
    return strategy


# -- assignment tables ------------------------------------------------------------------


@dataclass(frozen=True)
class AssignmentRow:
    anchor_id: int
    gt_index: int
    weight: float


@dataclass
class AssignmentTable:
    rows: list[AssignmentRow] = field(default_factory=list)
    negative_anchor_ids: frozenset[int] = frozenset()
    fallback_flags: list[bool] = field(default_factory=list)
    image_id: str = "0"
    # gts that could not be given any anchor (center-cell rule only)
    unassignable: list[int] = field(default_factory=list)

    def weights_by_anchor(self) -> dict[int, float]:
        return {row.anchor_id: row.weight for row in self.rows}

    def rows_for_gt(self, gt_index: int) -> list[AssignmentRow]:
        return [row for row in self.rows if row.gt_index == gt_index]

    def positive_count(self) -> int:
        """Anchors counted as positives for the hard-negative ratio (weight >= 0.5)."""
        return sum(1 for row in self.rows if row.weight >= 0.5)


def _iou_matrix(anchors: AnchorSet, gt_boxes: Sequence[BBox]) -> np.ndarray:
    if not gt_boxes:
        return np.zeros((len(anchors), 0))
    return np.stack([anchors.ious(g) for g in gt_boxes], axis=1)


def _best_unclaimed(ious: np.ndarray, claimed: set[int]) -> Optional[int]:
    # stable sort: equal IOUs keep ascending anchor id
    for k in np.argsort(-ious, kind="stable"):
        if int(k) not in claimed:
            return int(k)
    return None


def assign(anchors: AnchorSet, gt_boxes: Sequence[BBox], strategy: MatchStrategy, image_id: str = "0") -> AssignmentTable:
    """Weight every anchor against every ground-truth box.

    Each anchor keeps only its highest-weight gt (ties to the smaller gt
    index). A gt left without any positive anchor receives its best-IOU
    anchor at weight 1 and has its fallback flag set; an anchor already
    forced by an earlier fallback is skipped in favour of the next best.
    """
    if isinstance(strategy, CenterBest):
        return assign_center_best(anchors, gt_boxes, strategy.neg_iou, image_id=image_id)
    if len(anchors) == 0:
        raise ValueError("assign needs a non-empty anchor set")
    gt_boxes = list(gt_boxes)
    n_gt = len(gt_boxes)
    ious = _iou_matrix(anchors, gt_boxes)
    max_iou = ious.max(axis=1) if n_gt else np.zeros(len(anchors))

    owner = np.full(len(anchors), -1)
    weight = np.zeros(len(anchors))
    if n_gt:
        w = strategy.weights(ious)
        best_gt = np.argmax(w, axis=1)
        best_w = w[np.arange(len(anchors)), best_gt]
        has = best_w > 0.0
        owner[has] = best_gt[has]
        weight[has] = best_w[has]

    fallback = [False] * n_gt
    forced: set[int] = set()
    pending = True
    while pending:
        pending = False
        owned = set(int(g) for g in owner[owner >= 0])
        for g in range(n_gt):
            if g in owned:
                continue
            k = _best_unclaimed(ious[:, g], forced)
            if k is None:
                continue
            fallback[g] = True
            forced.add(k)
            owner[k] = g
            weight[k] = 1.0
            # stealing k may strip another gt of its only anchor
            pending = True
            break

    rows = [AssignmentRow(int(k), int(owner[k]), float(weight[k])) for k in np.flatnonzero(owner >= 0)]
    neg = strategy.negative_mask(max_iou) & (owner < 0)
    negatives = frozenset(int(k) for k in np.flatnonzero(neg))
    unassigned = [g for g in range(n_gt) if not any(r.gt_index == g for r in rows)]
    return AssignmentTable(rows, negatives, fallback, image_id, unassigned)


def assign_center_best(
    anchors: AnchorSet, gt_boxes: Sequence[BBox], neg_iou: float = 0.6, image_id: str = "0"
) -> AssignmentTable:
    """YOLOv2-style rule on a single-level pyramid.

    The gt center picks a grid cell; among that cell's anchors the one with
    the highest IOU is positive. When two gts want the same anchor the
    smaller gt index keeps it and the other takes its next-best in-cell
    anchor. Negatives have no positive assignment and max IOU <= ``neg_iou``.
    """
    levels = anchors.config.levels
    if len(levels) != 1:
        raise ValueError(f"center-best assignment needs a single-level pyramid, got {len(levels)} levels")
    level = levels[0]
    gt_boxes = list(gt_boxes)
    ious = _iou_matrix(anchors, gt_boxes)
    max_iou = ious.max(axis=1) if gt_boxes else np.zeros(len(anchors))
    n_t = len(level.templates)

    taken: dict[int, int] = {}
    unassignable = []
    for g, box in enumerate(gt_boxes):
        cx, cy = box.center
        i, j = math.floor(cx / level.stride_x), math.floor(cy / level.stride_y)
        if not (0 <= i < level.grid_w and 0 <= j < level.grid_h):
            unassignable.append(g)
            continue
        first = (j * level.grid_w + i) * n_t
        cell_ids = np.arange(first, first + n_t)
        order = cell_ids[np.argsort(-ious[cell_ids, g], kind="stable")]
        choice = next((int(k) for k in order if int(k) not in taken), None)
        if choice is None:
            unassignable.append(g)
            continue
        taken[choice] = g

    rows = [AssignmentRow(k, g, 1.0) for k, g in sorted(taken.items())]
    positive = np.zeros(len(anchors), dtype=bool)
    positive[list(taken)] = True
    negatives = frozenset(int(k) for k in np.flatnonzero(~positive & (max_iou <= neg_iou)))
    return AssignmentTable(rows, negatives, [False] * len(gt_boxes), image_id, unassignable)


def select_hard_negatives(candidate_losses: Mapping[int, float], positive_count: int, ratio: int = 3) -> set[int]:
    """Highest-loss candidates, at most ``ratio`` per positive; ties go to the smaller id."""
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    for k, loss in candidate_losses.items():
        if not (math.isfinite(loss) and loss >= 0.0):
            raise ValueError(f"loss for anchor {k} must be finite and non-negative, got {loss}")
    if positive_count <= 0:
        return set()
    budget = min(ratio * positive_count, len(candidate_losses))
    ranked = sorted(candidate_losses.items(), key=lambda kv: (-kv[1], kv[0]))
    return {k for k, _ in ranked[:budget]}


# -- export -----------------------------------------------------------------------------

EXPORT_COLUMNS = ("image_id", "anchor_id", "gt_index", "weight")
NEGATIVES_PREFIX = "#negatives:"
FALLBACK_PREFIX = "#fallback:"


def format_assignment(tables: Iterable[AssignmentTable], header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(header.rstrip("\n") + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXPORT_COLUMNS)
    trailers = []
    for table in tables:
        for row in sorted(table.rows, key=lambda r: (r.anchor_id, r.gt_index)):
            writer.writerow([table.image_id, row.anchor_id, row.gt_index, f"{row.weight:.9f}"])
        negs = " ".join(str(k) for k in sorted(table.negative_anchor_ids))
        flags = " ".join("1" if f else "0" for f in table.fallback_flags)
        trailers.append(f"{NEGATIVES_PREFIX}{table.image_id}:{negs}")
        trailers.append(f"{FALLBACK_PREFIX}{table.image_id}:{flags}")
    for line in trailers:
        buf.write(line + "\n")
    return buf.getvalue()


def export_assignment(tables: AssignmentTable | Iterable[AssignmentTable], destination, header: Optional[str] = None) -> None:
    if isinstance(tables, AssignmentTable):
        tables = [tables]
    text = format_assignment(tables, header)
    try:
        with open(destination, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write assignment export to {os.fspath(destination)}: {exc.strerror}") from exc


def import_assignment(source) -> list[AssignmentTable]:
    """Read an export back into tables, in order of first appearance."""
    with open(source, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    tables: dict[str, AssignmentTable] = {}

    def table(image_id: str) -> AssignmentTable:
        if image_id not in tables:
            tables[image_id] = AssignmentTable(image_id=image_id)
        return tables[image_id]

    order: list[str] = []
    seen_columns = False
    for lineno, line in enumerate(lines, 1):
        if line.startswith(NEGATIVES_PREFIX):
            image_id, _, ids = line[len(NEGATIVES_PREFIX):].rpartition(":")
            order.append(image_id)
            table(image_id).negative_anchor_ids = frozenset(int(k) for k in ids.split())
        elif line.startswith(FALLBACK_PREFIX):
            image_id, _, flags = line[len(FALLBACK_PREFIX):].rpartition(":")
            table(image_id).fallback_flags = [f == "1" for f in flags.split()]
        elif line.startswith("#") or not line.strip():
            continue
        elif not seen_columns:
            if tuple(line.split(",")) != EXPORT_COLUMNS:
                raise ValueError(f"{source}:{lineno}: expected column header {','.join(EXPORT_COLUMNS)}")
            seen_columns = True
        else:
            fields = next(csv.reader([line]))
            if len(fields) != 4:
                raise ValueError(f"{source}:{lineno}: expected 4 fields, got {len(fields)}")
            image_id, anchor_id, gt_index, weight = fields
            table(image_id).rows.append(AssignmentRow(int(anchor_id), int(gt_index), float(weight)))
    # trailers list every table in export order, including row-less ones
    ranked = order + [k for k in tables if k not in order]
    return [tables[k] for k in ranked]
