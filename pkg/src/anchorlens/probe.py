"""Warp probes around a suspected anchor boundary.

A probe re-runs a detector on 59 warped copies of one frame (scaling,
horizontal shift, or single-axis stretch) and records each anchor's score
against the warp index ``n``. Where the best anchor hands over to a
neighbour, a binary-trained detector tends to leave a valley in the upper
envelope of those curves.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, TextIO, Union

from anchorlens.anchors import AnchorSet, NeighborKind, neighbor_kind
from anchorlens.geometry import AxisWarp, ImageExtent
from anchorlens.mmd import MmdThresholds

N_MAX = 29
N_RANGE = tuple(range(-N_MAX, N_MAX + 1))

SCALE_UP, SCALE_DOWN = 1.02, 0.98
ASPECT_UP, ASPECT_DOWN = 1.01, 0.99
SHIFT_STEP = 3.0


class WarpFamily(enum.Enum):
    SCALING = "scaling"
    SHIFT_X = "shift-x"
    ASPECT_X = "aspect-x"
    ASPECT_Y = "aspect-y"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, name: str) -> "WarpFamily":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown warp family {name!r}; choose from {', '.join(f.value for f in cls)}") from None


def _factor(n: int, up: float, down: float) -> float:
    if n > 0:
        return up ** n
    if n < 0:
        return down ** (-n)
    return 1.0


def warp_for(family: WarpFamily, n: int, center: tuple[float, float]) -> AxisWarp:
    if not -N_MAX <= n <= N_MAX:
        raise ValueError(f"warp index must lie in [-{N_MAX}, {N_MAX}], got {n}")
    cx, cy = center
    if family is WarpFamily.SCALING:
        s = _factor(n, SCALE_UP, SCALE_DOWN)
        return AxisWarp(s, s, 0.0, 0.0, cx, cy)
    if family is WarpFamily.SHIFT_X:
        return AxisWarp(1.0, 1.0, SHIFT_STEP * n, 0.0, cx, cy)
    if family is WarpFamily.ASPECT_X:
        return AxisWarp(_factor(n, ASPECT_UP, ASPECT_DOWN), 1.0, 0.0, 0.0, cx, cy)
    if family is WarpFamily.ASPECT_Y:
        return AxisWarp(1.0, _factor(n, ASPECT_UP, ASPECT_DOWN), 0.0, 0.0, cx, cy)
    raise ValueError(f"unsupported warp family {family!r}")


@dataclass(frozen=True)
class ProbeManifest:
    family: WarpFamily
    extent: ImageExtent
    center: tuple[float, float]
    entries: tuple[tuple[int, AxisWarp], ...]

    @property
    def ns(self) -> tuple[int, ...]:
        return tuple(n for n, _ in self.entries)

    def warp(self, n: int) -> AxisWarp:
        for m, w in self.entries:
            if m == n:
                return w
        raise KeyError(n)


def build_manifest(family: WarpFamily, extent: ImageExtent, center: Optional[tuple[float, float]] = None) -> ProbeManifest:
    center = extent.center if center is None else center
    entries = tuple((n, warp_for(family, n, center)) for n in N_RANGE)
    return ProbeManifest(family, extent, center, entries)


MANIFEST_COLUMNS = ("n", "family", "sx", "sy", "tx", "ty", "cx", "cy")
EXTENT_PREFIX = "#extent,"


def format_manifests(manifests: Sequence[ProbeManifest], header: Optional[str] = None) -> str:
    """Render one or more manifests of the same extent; floats use round-trip repr."""
    if not manifests:
        raise ValueError("no manifests to write")
    extent = manifests[0].extent
    if any(m.extent != extent for m in manifests):
        raise ValueError("all manifests in one file must share an image extent")
    buf = io.StringIO()
    if header is not None:
        buf.write(header.rstrip("\n") + "\n")
    buf.write(f"{EXTENT_PREFIX}{extent.width},{extent.height}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for m in manifests:
        for n, w in m.entries:
            writer.writerow([n, m.family.value, repr(w.sx), repr(w.sy), repr(w.tx), repr(w.ty), repr(w.cx), repr(w.cy)])
    return buf.getvalue()


def read_manifests(source: Union[str, TextIO]) -> dict[WarpFamily, ProbeManifest]:
    text = _read_text(source)
    name = getattr(source, "name", source)
    extent = None
    rows: dict[WarpFamily, list[tuple[int, AxisWarp]]] = {}
    seen_columns = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith(EXTENT_PREFIX):
            w, h = line[len(EXTENT_PREFIX):].split(",")
            extent = ImageExtent(int(w), int(h))
            continue
        if line.startswith("#") or not line.strip():
            continue
        fields = line.split(",")
        if not seen_columns:
            if tuple(fields) != MANIFEST_COLUMNS:
                raise ValueError(f"{name}:{lineno}: expected column header {','.join(MANIFEST_COLUMNS)}")
            seen_columns = True
            continue
        try:
            if len(fields) != len(MANIFEST_COLUMNS):
                raise ValueError(f"expected {len(MANIFEST_COLUMNS)} fields, got {len(fields)}")
            n = int(fields[0])
            family = WarpFamily.parse(fields[1])
            sx, sy, tx, ty, cx, cy = (float(v) for v in fields[2:])
            warp = AxisWarp(sx, sy, tx, ty, cx, cy)
        except ValueError as exc:
            raise ValueError(f"{name}:{lineno}: {exc}") from None
        rows.setdefault(family, []).append((n, warp))
    if extent is None:
        raise ValueError(f"{name}: missing {EXTENT_PREFIX!r} line")
    manifests = {}
    for family, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        ns = [n for n, _ in entries]
        if len(set(ns)) != len(ns):
            raise ValueError(f"{name}: duplicate warp index in family {family.value}")
        center = (entries[0][1].cx, entries[0][1].cy)
        manifests[family] = ProbeManifest(family, extent, center, tuple(entries))
    return manifests


# -- profiles ---------------------------------------------------------------------------


@dataclass
class ScoreProfile:
    anchor_id: int
    scores: dict[int, float] = field(default_factory=dict)
    class_id: Optional[int] = None
    gaps: tuple[int, ...] = ()

    def __post_init__(self):
        for n, s in self.scores.items():
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"profile score at n={n} must lie in [0, 1], got {s}")


@dataclass(frozen=True)
class FrameKey:
    video_id: str
    frame_index: int
    object_id: str
    class_id: int


PROFILE_COLUMNS = ("n", "anchor_id", "class_id", "score")
FRAME_PREFIX = "#frame,"
FAMILY_PREFIX = "#family,"


def format_profiles(
    profiles: Mapping[int, ScoreProfile],
    class_id: int,
    frame: Optional[FrameKey] = None,
    family: Optional[WarpFamily] = None,
    header: Optional[str] = None,
) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(header.rstrip("\n") + "\n")
    if frame is not None:
        buf.write(f"{FRAME_PREFIX}{frame.video_id},{frame.frame_index},{frame.object_id},{frame.class_id}\n")
    if family is not None:
        buf.write(f"{FAMILY_PREFIX}{family.value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROFILE_COLUMNS)
    for anchor_id in sorted(profiles):
        prof = profiles[anchor_id]
        for n in sorted(prof.scores):
            writer.writerow([n, anchor_id, class_id, f"{prof.scores[n]:.9f}"])
    return buf.getvalue()


def _read_text(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    with open(source, encoding="utf-8") as fh:
        return fh.read()


def read_frame_key(source) -> Optional[FrameKey]:
    for line in _read_text(source).splitlines():
        if line.startswith(FRAME_PREFIX):
            video_id, frame_index, object_id, class_id = line[len(FRAME_PREFIX):].split(",")
            return FrameKey(video_id, int(frame_index), object_id, int(class_id))
    return None


def read_profile_family(source) -> Optional[WarpFamily]:
    for line in _read_text(source).splitlines():
        if line.startswith(FAMILY_PREFIX):
            return WarpFamily.parse(line[len(FAMILY_PREFIX):].strip())
    return None


def ingest_profile(source, manifest: ProbeManifest, anchors: Optional[AnchorSet] = None) -> dict[int, ScoreProfile]:
    """Parse a ``n,anchor_id,class_id,score`` file into one profile per anchor.

    Rows with an ``n`` outside the manifest, unknown anchors (when
    ``anchors`` is given), malformed fields, or a repeated ``(anchor, n)``
    pair are rejected with their line number.
    """
    text = _read_text(source)
    name = getattr(source, "name", source)
    valid_n = set(manifest.ns)
    scores: dict[int, dict[int, float]] = {}
    classes: dict[int, int] = {}
    seen_columns = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#") or not line.strip():
            continue
        fields = line.split(",")
        if not seen_columns and tuple(fields) == PROFILE_COLUMNS:
            seen_columns = True
            continue
        try:
            if len(fields) != 4:
                raise ValueError(f"expected 4 fields, got {len(fields)}")
            n, anchor_id, class_id = int(fields[0]), int(fields[1]), int(fields[2])
            score = float(fields[3])
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score must lie in [0, 1], got {fields[3]}")
            if n not in valid_n:
                raise ValueError(f"warp index n={n} is not in the {manifest.family.value} manifest")
            if anchors is not None and anchor_id not in anchors:
                raise ValueError(f"unknown anchor_id {anchor_id}")
            per_anchor = scores.setdefault(anchor_id, {})
            if n in per_anchor:
                raise ValueError(f"duplicate row for anchor {anchor_id} at n={n}")
        except ValueError as exc:
            raise ValueError(f"{name}:{lineno}: {exc}") from None
        per_anchor[n] = score
        classes.setdefault(anchor_id, class_id)
    out = {}
    for anchor_id in sorted(scores):
        gaps = tuple(n for n in manifest.ns if n not in scores[anchor_id])
        out[anchor_id] = ScoreProfile(anchor_id, scores[anchor_id], classes[anchor_id], gaps)
    return out


# -- verdicts ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnchorBoundary:
    kind: NeighborKind
    switch_n: int
    valley_score: float
    side_peaks: tuple[float, float]
    anchor_pair: tuple[int, int]

    label = "AnchorBoundary"


@dataclass(frozen=True)
class NoBoundaryEvidence:
    reason: str

    label = "NoBoundaryEvidence"


BoundaryVerdict = Union[AnchorBoundary, NoBoundaryEvidence]

REASON_NO_SCORES = "no scores"
REASON_WINDOW = "switch outside window"
REASON_PEAKS = "side peak below gamma_min"
REASON_VALLEY = "no valley"
REASON_CENTER = "score at n=0 not below gamma_max"
REASON_NO_SWITCH = "no anchor switch"


@dataclass(frozen=True)
class Envelope:
    ns: tuple[int, ...]
    values: tuple[float, ...]
    owners: tuple[int, ...]

    def value_at(self, n: int) -> Optional[float]:
        try:
            return self.values[self.ns.index(n)]
        except ValueError:
            return None


def upper_envelope(profiles: Iterable[ScoreProfile]) -> Envelope:
    """Pointwise max over profiles; the owner is the winning anchor (smaller id on ties)."""
    profs = sorted(profiles, key=lambda p: p.anchor_id)
    ns = sorted({n for p in profs for n in p.scores})
    values, owners = [], []
    for n in ns:
        best_v, best_a = -1.0, -1
        for p in profs:
            v = p.scores.get(n)
            if v is not None and v > best_v:
                best_v, best_a = v, p.anchor_id
        values.append(best_v)
        owners.append(best_a)
    return Envelope(tuple(ns), tuple(values), tuple(owners))


def find_switch(env: Envelope) -> Optional[tuple[int, int, int]]:
    """Owner change nearest ``n = 0`` as ``(n_star, left_owner, right_owner)``.

    A change between consecutive indices ``a < b`` is located at whichever of
    the two has the smaller ``|n|`` (``a`` on a tie).
    """
    best = None
    for k in range(len(env.ns) - 1):
        if env.owners[k] == env.owners[k + 1]:
            continue
        a, b = env.ns[k], env.ns[k + 1]
        n_star = a if abs(a) <= abs(b) else b
        cand = (abs(n_star), n_star, env.owners[k], env.owners[k + 1])
        if best is None or cand[:2] < best[:2]:
            best = cand
    if best is None:
        return None
    return best[1], best[2], best[3]


def analyze_profiles(
    profiles: Iterable[ScoreProfile],
    anchors: AnchorSet,
    th: MmdThresholds = MmdThresholds(),
    switch_window: int = 5,
) -> BoundaryVerdict:
    """Decide whether a score valley sits on the boundary between two neighbouring anchors.

    Criteria, checked in order, each naming the failure reason:

    * the owner switch nearest n=0 lies within ``switch_window``;
    * the envelope maxima on either side of the switch reach ``gamma_min``;
    * the envelope minimum within the window is at most ``gamma_ratio`` times
      the lower side peak;
    * the envelope at n=0 is below ``gamma_max``.

    Without any owner switch the same checks run around the envelope minimum
    nearest n=0, and a profile set that passes them all still yields
    ``NoBoundaryEvidence("no anchor switch")``.
    """
    profs = list(profiles)
    if len(profs) < 2:
        raise ValueError(f"analyze_profiles needs at least 2 profiles, got {len(profs)}")
    ids = [p.anchor_id for p in profs]
    if len(set(ids)) != len(ids):
        raise ValueError("profiles must have distinct anchor ids")
    for a in ids:
        if a not in anchors:
            raise ValueError(f"unknown anchor_id {a}")
    env = upper_envelope(profs)
    if not env.ns:
        return NoBoundaryEvidence(REASON_NO_SCORES)

    switch = find_switch(env)
    kind = None
    if switch is not None:
        n_star, left, right = switch
        kind = neighbor_kind(anchors[left], anchors[right], anchors)
        if kind is None:
            raise ValueError(f"anchors {left} and {right} at the switch are not neighbours")
    else:
        lowest = min(env.values)
        n_star = min((n for n, v in zip(env.ns, env.values) if v == lowest), key=lambda n: (abs(n), n))

    if abs(n_star) > switch_window:
        return NoBoundaryEvidence(REASON_WINDOW)
    left_side = [v for n, v in zip(env.ns, env.values) if n < n_star]
    right_side = [v for n, v in zip(env.ns, env.values) if n > n_star]
    if not left_side or not right_side:
        return NoBoundaryEvidence(REASON_PEAKS)
    peaks = (max(left_side), max(right_side))
    if min(peaks) < th.gamma_min:
        return NoBoundaryEvidence(REASON_PEAKS)
    valley = min(v for n, v in zip(env.ns, env.values) if abs(n - n_star) <= switch_window)
    if valley > th.gamma_ratio * min(peaks):
        return NoBoundaryEvidence(REASON_VALLEY)
    at_zero = env.value_at(0)
    if at_zero is None or at_zero >= th.gamma_max:
        return NoBoundaryEvidence(REASON_CENTER)
    if switch is None:
        return NoBoundaryEvidence(REASON_NO_SWITCH)
    return AnchorBoundary(kind, n_star, valley, peaks, (min(left, right), max(left, right)))


# -- cause tally ------------------------------------------------------------------------

CATEGORIES = ("external", "anchor_boundary", "others")
LABELS = ("external", "other")


@dataclass(frozen=True)
class CauseTotals:
    external: int = 0
    anchor_boundary: int = 0
    others: int = 0

    @property
    def total(self) -> int:
        return self.external + self.anchor_boundary + self.others

    def as_dict(self) -> dict[str, int]:
        return {c: getattr(self, c) for c in CATEGORIES}


def categorize(verdict: Optional[BoundaryVerdict], label: Optional[str]) -> str:
    """A human "external" label wins over any verdict."""
    if label is not None and label not in LABELS:
        raise ValueError(f"unknown label {label!r}; expected one of {', '.join(LABELS)}")
    if label == "external":
        return "external"
    if isinstance(verdict, AnchorBoundary):
        return "anchor_boundary"
    return "others"


def tally_causes(items: Iterable[tuple[Optional[BoundaryVerdict], Optional[str]]]) -> CauseTotals:
    counts = dict.fromkeys(CATEGORIES, 0)
    for verdict, label in items:
        counts[categorize(verdict, label)] += 1
    return CauseTotals(**counts)
