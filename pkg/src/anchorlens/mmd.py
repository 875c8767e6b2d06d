"""Per-object score tracks and momentarily missed detection (MMD) extraction.

A frame ``t`` is an MMD frame when both neighbours are confidently detected,
the score drops relative to the previous frame, and the score itself is low::

    p[t-1] >= gamma_min and p[t+1] >= gamma_min
    p[t] / p[t-1] <= gamma_ratio
    p[t] < gamma_max
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from anchorlens.anchors import AnchorSet
from anchorlens.geometry import BBox, iou

# anchors must overlap the ground truth strictly above this IOU to contribute p_t
FRAME_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class MmdThresholds:
    gamma_min: float = 0.5
    gamma_ratio: float = 0.9
    gamma_max: float = 0.6

    def __post_init__(self):
        for name in ("gamma_min", "gamma_ratio", "gamma_max"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    frame_index: int
    anchor_id: int
    class_id: int
    score: float
    box: Optional[BBox] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")


@dataclass(frozen=True)
class GroundTruthRecord:
    video_id: str
    frame_index: int
    object_id: str
    class_id: int
    box: BBox


@dataclass(frozen=True)
class TrackPoint:
    frame_index: int
    score: float
    anchor_id: Optional[int]

    @property
    def no_anchor(self) -> bool:
        """True when no anchor passed the IOU filter and the score was forced to 0."""
        return self.anchor_id is None


@dataclass
class ScoreTrack:
    video_id: str
    object_id: str
    class_id: int
    points: list[TrackPoint] = field(default_factory=list)

    def __post_init__(self):
        frames = [p.frame_index for p in self.points]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("track frame indices must be strictly increasing")
        for p in self.points:
            if not 0.0 <= p.score <= 1.0:
                raise ValueError(f"track score must lie in [0, 1], got {p.score}")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.video_id, self.object_id, self.class_id)

    @property
    def scores(self) -> list[float]:
        return [p.score for p in self.points]

    @property
    def gaps(self) -> list[int]:
        """Frame indices missing between the first and last tracked frame."""
        frames = [p.frame_index for p in self.points]
        missing = []
        for a, b in zip(frames, frames[1:]):
            missing.extend(range(a + 1, b))
        return missing

    def by_frame(self) -> dict[int, TrackPoint]:
        return {p.frame_index: p for p in self.points}

    @classmethod
    def from_scores(cls, scores: Sequence[float], video_id="v", object_id="o", class_id=0, start=0) -> "ScoreTrack":
        return cls(video_id, object_id, class_id, [TrackPoint(start + k, float(s), None) for k, s in enumerate(scores)])


@dataclass(frozen=True)
class MmdFrame:
    video_id: str
    object_id: str
    class_id: int
    frame_index: int
    p_prev: float
    p_t: float
    p_next: float


def frame_score(
    records: Iterable[DetectionRecord], gt: BBox, class_id: int, anchors: AnchorSet
) -> Optional[tuple[float, int]]:
    """Best score among same-class records whose anchor overlaps ``gt`` with IOU > 0.5.

    Returns ``(score, anchor_id)`` with ties resolved to the smaller anchor
    id, or None when no anchor qualifies.
    """
    best: Optional[tuple[float, int]] = None
    for rec in records:
        if rec.anchor_id not in anchors:
            raise ValueError(f"unknown anchor_id {rec.anchor_id}")
        if rec.class_id != class_id:
            continue
        if iou(anchors[rec.anchor_id].box, gt) <= FRAME_IOU_THRESHOLD:
            continue
        if best is None or rec.score > best[0] or (rec.score == best[0] and rec.anchor_id < best[1]):
            best = (rec.score, rec.anchor_id)
    return best


def is_mmd(p_prev: float, p_t: float, p_next: float, th: MmdThresholds) -> bool:
    if p_prev < th.gamma_min or p_next < th.gamma_min:
        return False
    # p_prev > 0 is guaranteed here since gamma_min > 0
    if p_t / p_prev > th.gamma_ratio:
        return False
    return p_t < th.gamma_max


def extract_mmd(track: ScoreTrack, th: MmdThresholds = MmdThresholds()) -> list[int]:
    """Frame indices flagged as MMD; neighbours must be consecutive frames."""
    flagged = []
    pts = track.points
    for k in range(1, len(pts) - 1):
        prev, cur, nxt = pts[k - 1], pts[k], pts[k + 1]
        if prev.frame_index != cur.frame_index - 1 or nxt.frame_index != cur.frame_index + 1:
            continue
        if is_mmd(prev.score, cur.score, nxt.score, th):
            flagged.append(cur.frame_index)
    return flagged


def mmd_frames(track: ScoreTrack, th: MmdThresholds = MmdThresholds()) -> list[MmdFrame]:
    pts = track.by_frame()
    return [
        MmdFrame(track.video_id, track.object_id, track.class_id, t, pts[t - 1].score, pts[t].score, pts[t + 1].score)
        for t in extract_mmd(track, th)
    ]


@dataclass
class TrackBuildResult:
    tracks: list[ScoreTrack]
    # (video_id, frame_index, object_id) of gt rows whose frame has no detections
    missing_frames: list[tuple[str, int, str]]
    # (video_id, frame_index, object_id) frames where no anchor passed the IOU filter
    no_anchor_frames: list[tuple[str, int, str]]


def build_tracks(
    detections: Iterable[DetectionRecord],
    ground_truth: Iterable[GroundTruthRecord],
    anchors: AnchorSet,
) -> TrackBuildResult:
    """Assemble one score track per (video, object, class).

    Frames without the object are simply absent from its track. Ground-truth
    rows pointing at a frame that has no detections at all are reported in
    ``missing_frames`` and leave a gap.
    """
    by_frame: dict[tuple[str, int], list[DetectionRecord]] = defaultdict(list)
    for rec in detections:
        by_frame[(rec.video_id, rec.frame_index)].append(rec)

    points: dict[tuple[str, str, int], list[TrackPoint]] = defaultdict(list)
    missing, no_anchor = [], []
    for gt in ground_truth:
        key = (gt.video_id, gt.object_id, gt.class_id)
        recs = by_frame.get((gt.video_id, gt.frame_index))
        if recs is None:
            missing.append((gt.video_id, gt.frame_index, gt.object_id))
            continue
        hit = frame_score(recs, gt.box, gt.class_id, anchors)
        if hit is None:
            no_anchor.append((gt.video_id, gt.frame_index, gt.object_id))
            points[key].append(TrackPoint(gt.frame_index, 0.0, None))
        else:
            points[key].append(TrackPoint(gt.frame_index, hit[0], hit[1]))

    tracks = []
    for key in sorted(points):
        pts = sorted(points[key], key=lambda p: p.frame_index)
        frames = [p.frame_index for p in pts]
        if len(set(frames)) != len(frames):
            raise ValueError(f"duplicate ground truth for object {key[1]!r} in video {key[0]!r}")
        tracks.append(ScoreTrack(key[0], key[1], key[2], pts))
    return TrackBuildResult(tracks, sorted(missing), sorted(no_anchor))


def group_by_video(records: Iterable, attr: str = "video_id") -> Mapping[str, list]:
    out: dict[str, list] = defaultdict(list)
    for rec in records:
        out[getattr(rec, attr)].append(rec)
    return out
