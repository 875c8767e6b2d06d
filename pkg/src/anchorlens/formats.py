"""Readers and writers for the line-delimited CSV files the CLI exchanges.

Every file may start with ``#`` comment lines (the metadata header) and a
column-name row; both are skipped on input. Malformed rows raise
:class:`FormatError` carrying ``path:line``.
"""

from __future__ import annotations

import csv
import io
import re
from typing import Iterable, Optional, Sequence

from anchorlens.anchors import AnchorSet
from anchorlens.geometry import BBox
from anchorlens.mmd import DetectionRecord, GroundTruthRecord, MmdFrame
from anchorlens.probe import AnchorBoundary, BoundaryVerdict, FrameKey, NoBoundaryEvidence, NeighborKind

DETECTION_COLUMNS = ("video_id", "frame_index", "anchor_id", "class_id", "score")
GT_COLUMNS = ("video_id", "frame_index", "object_id", "class_id", "x_min", "y_min", "x_max", "y_max")
ANCHOR_COLUMNS = ("id", "level", "cell_i", "cell_j", "template", "x_min", "y_min", "x_max", "y_max")
MMD_COLUMNS = ("video_id", "frame_index", "object_id", "class_id", "p_prev", "p_t", "p_next")
VERDICT_COLUMNS = (
    "video_id", "frame_index", "object_id", "class_id", "verdict", "kind", "switch_n",
    "valley_score", "left_peak", "right_peak", "anchor_a", "anchor_b", "reason",
)
LABEL_COLUMNS = ("video_id", "frame_index", "object_id", "label")

_SCORE_RE = re.compile(r"^(?:0|1)(?:\.\d{1,9})?$")


class FormatError(ValueError):
    pass


def fmt_score(x: float) -> str:
    return f"{x:.9f}"


def parse_score(text: str) -> float:
    text = text.strip()
    if not _SCORE_RE.match(text):
        raise ValueError(f"score {text!r} is not a decimal in [0, 1] with at most 9 fractional digits")
    value = float(text)
    if value > 1.0:
        raise ValueError(f"score {text!r} exceeds 1")
    return value


def _data_rows(path, columns: Sequence[str]):
    """Yield ``(lineno, fields)`` for data rows, checking the field count."""
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = next(csv.reader([line]))
            if tuple(fields) == tuple(columns):
                continue
            if len(fields) != len(columns):
                raise FormatError(f"{path}:{lineno}: expected {len(columns)} fields ({','.join(columns)}), got {len(fields)}")
            yield lineno, [f.strip() for f in fields]


def _wrap(path, lineno, exc: Exception) -> FormatError:
    return FormatError(f"{path}:{lineno}: {exc}")


def render_csv(columns: Sequence[str], rows: Iterable[Sequence], header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(header.rstrip("\n") + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


# -- detections and ground truth --------------------------------------------------------


def read_detections(path) -> list[DetectionRecord]:
    out = []
    for lineno, (video_id, frame, anchor_id, class_id, score) in _data_rows(path, DETECTION_COLUMNS):
        try:
            out.append(DetectionRecord(video_id, int(frame), int(anchor_id), int(class_id), parse_score(score)))
        except ValueError as exc:
            raise _wrap(path, lineno, exc) from None
    return out


def detection_rows(records: Iterable[DetectionRecord]):
    for r in records:
        yield (r.video_id, r.frame_index, r.anchor_id, r.class_id, fmt_score(r.score))


def read_ground_truth(path) -> list[GroundTruthRecord]:
    out = []
    for lineno, fields in _data_rows(path, GT_COLUMNS):
        video_id, frame, object_id, class_id = fields[:4]
        try:
            box = BBox(*(float(v) for v in fields[4:]))
            out.append(GroundTruthRecord(video_id, int(frame), object_id, int(class_id), box))
        except ValueError as exc:
            raise _wrap(path, lineno, exc) from None
    return out


def gt_rows(records: Iterable[GroundTruthRecord]):
    for r in records:
        b = r.box
        yield (r.video_id, r.frame_index, r.object_id, r.class_id, repr(b.x_min), repr(b.y_min), repr(b.x_max), repr(b.y_max))


def anchor_rows(anchors: AnchorSet):
    for a in anchors:
        b = a.box
        yield (a.id, a.level_index, a.cell_i, a.cell_j, a.template_index, repr(b.x_min), repr(b.y_min), repr(b.x_max), repr(b.y_max))


def mmd_rows(frames: Iterable[MmdFrame]):
    for f in frames:
        yield (f.video_id, f.frame_index, f.object_id, f.class_id, fmt_score(f.p_prev), fmt_score(f.p_t), fmt_score(f.p_next))


def read_mmd(path) -> list[FrameKey]:
    out = []
    for lineno, fields in _data_rows(path, MMD_COLUMNS):
        try:
            out.append(FrameKey(fields[0], int(fields[1]), fields[2], int(fields[3])))
        except ValueError as exc:
            raise _wrap(path, lineno, exc) from None
    return out


# -- verdicts and labels ----------------------------------------------------------------


def verdict_row(key: FrameKey, verdict: BoundaryVerdict) -> tuple:
    head = (key.video_id, key.frame_index, key.object_id, key.class_id)
    if isinstance(verdict, AnchorBoundary):
        return head + (
            verdict.label, verdict.kind.value, verdict.switch_n, fmt_score(verdict.valley_score),
            fmt_score(verdict.side_peaks[0]), fmt_score(verdict.side_peaks[1]),
            verdict.anchor_pair[0], verdict.anchor_pair[1], "",
        )
    return head + (verdict.label, "", "", "", "", "", "", "", verdict.reason)


def read_verdicts(path) -> list[tuple[FrameKey, BoundaryVerdict]]:
    out = []
    for lineno, f in _data_rows(path, VERDICT_COLUMNS):
        try:
            key = FrameKey(f[0], int(f[1]), f[2], int(f[3]))
            if f[4] == AnchorBoundary.label:
                verdict = AnchorBoundary(
                    NeighborKind(f[5]), int(f[6]), float(f[7]), (float(f[8]), float(f[9])), (int(f[10]), int(f[11]))
                )
            elif f[4] == NoBoundaryEvidence.label:
                verdict = NoBoundaryEvidence(f[12])
            else:
                raise ValueError(f"unknown verdict {f[4]!r}")
        except ValueError as exc:
            raise _wrap(path, lineno, exc) from None
        out.append((key, verdict))
    return out


def read_labels(path) -> list[tuple[tuple[str, int, str], str, int]]:
    """``((video_id, frame_index, object_id), label, lineno)`` per row."""
    out = []
    for lineno, f in _data_rows(path, LABEL_COLUMNS):
        try:
            if f[3] not in ("external", "other"):
                raise ValueError(f"label must be 'external' or 'other', got {f[3]!r}")
            out.append(((f[0], int(f[1]), f[2]), f[3], lineno))
        except ValueError as exc:
            raise _wrap(path, lineno, exc) from None
    return out
