"""A deterministic stand-in detector and the canonical boundary scenarios.

Each anchor answers with ``s_max * clamp((iou - tau) / (1 - tau), 0, 1) ** kappa``.
With ``tau = 0.5`` this mimics a detector trained with a binary IOU > 0.5
cut (no response below the cut); the soft preset moves the onset down to the
lower edge of the sigmoid band, flattening the valley between anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from anchorlens.anchors import Anchor, AnchorSet, PyramidConfig, PyramidLevel, generate_anchors
from anchorlens.geometry import BBox, ImageExtent, apply_warp, iou, iou_many
from anchorlens.mmd import DetectionRecord, GroundTruthRecord, ScoreTrack, TrackPoint, FRAME_IOU_THRESHOLD
from anchorlens.probe import FrameKey, ProbeManifest, ScoreProfile, WarpFamily, build_manifest, warp_for


@dataclass(frozen=True)
class SynthParams:
    tau: float
    kappa: float = 1.0
    s_max: float = 0.95
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if self.kappa < 1.0:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if not 0.0 < self.s_max <= 1.0:
            raise ValueError(f"s_max must lie in (0, 1], got {self.s_max}")
        if self.noise_std < 0.0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


BINARY = SynthParams(tau=0.5)
SOFT = SynthParams(tau=0.4)
PRESETS = {"binary": BINARY, "soft": SOFT}


def response(r, p: SynthParams):
    """Score for IOU ``r`` (scalar or array), without noise."""
    x = np.clip((np.asarray(r, dtype=np.float64) - p.tau) / (1.0 - p.tau), 0.0, 1.0)
    out = p.s_max * x ** p.kappa
    return float(out) if out.ndim == 0 else out


def synth_score(anchor: Anchor, obj: BBox, p: SynthParams) -> float:
    return response(iou(anchor.box, obj), p)


def score_all(anchors: AnchorSet, obj: BBox, p: SynthParams, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    scores = response(iou_many(anchors.boxes, obj), p)
    if p.noise_std > 0.0 and rng is not None:
        scores = np.clip(scores + rng.normal(0.0, p.noise_std, size=scores.shape), 0.0, 1.0)
    return scores


@dataclass(frozen=True)
class Trajectory:
    base: BBox
    family: WarpFamily
    ns: tuple[int, ...]
    center: tuple[float, float]
    boxes: tuple[BBox, ...] = field(init=False)

    def __post_init__(self):
        boxes = tuple(apply_warp(warp_for(self.family, n, self.center), self.base) for n in self.ns)
        object.__setattr__(self, "boxes", boxes)


@dataclass
class TrajectoryRun:
    track: ScoreTrack
    profiles: dict[int, ScoreProfile]
    # per step, the score of every anchor (id order)
    scores: list[np.ndarray]


def run_trajectory(
    anchors: AnchorSet,
    traj: Trajectory,
    p: SynthParams,
    class_id: int = 0,
    video_id: str = "synth",
    object_id: str = "0",
) -> TrajectoryRun:
    """Score every anchor at every step.

    Step ``k`` becomes track frame ``k``; its p_t follows the per-frame rule
    used for real dumps (best score among anchors with IOU > 0.5, smaller id
    on ties, 0 when none qualifies). Profiles are keyed by anchor and by the
    step's warp index and keep only anchors that ever score above zero.
    """
    rng = np.random.default_rng(p.seed) if p.noise_std > 0.0 else None
    points, per_step = [], []
    for k, box in enumerate(traj.boxes):
        ious = iou_many(anchors.boxes, box)
        scores = score_all(anchors, box, p, rng)
        per_step.append(scores)
        eligible = np.flatnonzero(ious > FRAME_IOU_THRESHOLD)
        if len(eligible):
            best = int(eligible[np.argmax(scores[eligible])])
            points.append(TrackPoint(k, float(scores[best]), best))
        else:
            points.append(TrackPoint(k, 0.0, None))
    stacked = np.stack(per_step) if per_step else np.zeros((0, len(anchors)))
    profiles = {}
    for a in np.flatnonzero((stacked > 0.0).any(axis=0)):
        profiles[int(a)] = ScoreProfile(int(a), {n: float(stacked[k, a]) for k, n in enumerate(traj.ns)}, class_id)
    return TrajectoryRun(ScoreTrack(video_id, object_id, class_id, points), profiles, per_step)


# -- canonical scenarios ----------------------------------------------------------------
#
# Scale boundary: a 3x3 fine level and a 1x1 coarse level share the image
# center. The object is sized so that shrinking it by 0.98**6 lands exactly on
# the fine anchor and growing it by 1.02**6 lands on the coarse one; at n=0 it
# overlaps both with IOU ~0.79, which the binary preset scores below 0.6 and
# the soft preset above it.
#
# Grid boundary: a 10x10 level with 24 px stride and 100 px square templates;
# the object sits halfway between two horizontally adjacent cells, 4 shift
# steps from each, with IOU 88/112 against both.

SCALE_BOUNDARY_STEPS = 6
SCALE_BASE_SIZE = 120.0
GRID_STRIDE = 24.0
GRID_TEMPLATE = 100.0


@dataclass(frozen=True)
class Scenario:
    name: str
    config: PyramidConfig
    base: BBox
    family: WarpFamily
    # warp indices visited by the simulated video, one frame per entry
    video_ns: tuple[int, ...]
    params: SynthParams
    class_id: int = 14
    video_id: str = "synth"
    object_id: str = "0"

    @property
    def probe_frame(self) -> int:
        """Video frame holding the unwarped base image."""
        return self.video_ns.index(0)

    def anchors(self) -> AnchorSet:
        return generate_anchors(self.config)

    def video(self) -> Trajectory:
        return Trajectory(self.base, self.family, self.video_ns, self.config.extent.center)

    def manifest(self) -> ProbeManifest:
        return build_manifest(self.family, self.config.extent)

    def frame_key(self) -> FrameKey:
        return FrameKey(self.video_id, self.probe_frame, self.object_id, self.class_id)


def scale_pyramid(small: float, large: float) -> PyramidConfig:
    extent = ImageExtent(300, 300)
    return PyramidConfig(
        (
            PyramidLevel(3, 3, 100.0, 100.0, ((small, small),)),
            PyramidLevel(1, 1, 300.0, 300.0, ((large, large),)),
        ),
        extent,
    )


def scale_boundary_config(steps: int = SCALE_BOUNDARY_STEPS, base: float = SCALE_BASE_SIZE) -> PyramidConfig:
    return scale_pyramid(base * 0.98 ** steps, base * 1.02 ** steps)


def grid_config() -> PyramidConfig:
    return PyramidConfig((PyramidLevel(10, 10, GRID_STRIDE, GRID_STRIDE, ((GRID_TEMPLATE, GRID_TEMPLATE),)),), ImageExtent(240, 240))


def _scale_scenario(name: str, params: SynthParams) -> Scenario:
    config = scale_boundary_config()
    base = BBox.from_center(150.0, 150.0, SCALE_BASE_SIZE, SCALE_BASE_SIZE)
    return Scenario(name, config, base, WarpFamily.SCALING, (-9, -6, -3, 0, 3, 6, 9), params)


def _grid_scenario(name: str, params: SynthParams) -> Scenario:
    config = grid_config()
    # boundary between cells (4, 5) and (5, 5)
    base = BBox.from_center(5 * GRID_STRIDE, 5.5 * GRID_STRIDE, GRID_TEMPLATE, GRID_TEMPLATE)
    return Scenario(name, config, base, WarpFamily.SHIFT_X, (-6, -4, -2, 0, 2, 4, 6), params)


def _on_anchor_scenario(name: str, params: SynthParams) -> Scenario:
    config = scale_boundary_config()
    small = SCALE_BASE_SIZE * 0.98 ** SCALE_BOUNDARY_STEPS
    base = BBox.from_center(150.0, 150.0, small, small)
    return Scenario(name, config, base, WarpFamily.SCALING, (0, 0, 0, 0, 0), params)


def scenario(name: str) -> Scenario:
    builders = {
        "scale-boundary-binary": lambda: _scale_scenario(name, BINARY),
        "scale-boundary-soft": lambda: _scale_scenario(name, SOFT),
        "grid-boundary-binary": lambda: _grid_scenario(name, BINARY),
        "grid-boundary-soft": lambda: _grid_scenario(name, SOFT),
        "on-anchor": lambda: _on_anchor_scenario(name, BINARY),
    }
    try:
        return builders[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None


SCENARIOS = ("scale-boundary-binary", "scale-boundary-soft", "grid-boundary-binary", "grid-boundary-soft", "on-anchor")


@dataclass
class SimulationOutput:
    scenario: Scenario
    anchors: AnchorSet
    detections: list[DetectionRecord]
    ground_truth: list[GroundTruthRecord]
    video: TrajectoryRun
    probe: TrajectoryRun


def simulate(sc: Scenario) -> SimulationOutput:
    """Run a scenario's video and its probe sweep of the base frame."""
    anchors = sc.anchors()
    video = run_trajectory(anchors, sc.video(), sc.params, sc.class_id, sc.video_id, sc.object_id)
    detections, ground_truth = [], []
    for k, (box, scores) in enumerate(zip(sc.video().boxes, video.scores)):
        ground_truth.append(GroundTruthRecord(sc.video_id, k, sc.object_id, sc.class_id, box))
        for a, s in enumerate(scores):
            detections.append(DetectionRecord(sc.video_id, k, a, sc.class_id, round(float(s), 9)))
    probe = score_manifest(anchors, sc.manifest(), sc.base, sc.params, sc.class_id)
    return SimulationOutput(sc, anchors, detections, ground_truth, video, probe)


def score_manifest(
    anchors: AnchorSet, manifest: ProbeManifest, base: BBox, p: SynthParams, class_id: int = 0
) -> TrajectoryRun:
    """Play the external detector for a probe manifest: score ``base`` under every warp."""
    traj = Trajectory(base, manifest.family, manifest.ns, manifest.center)
    return run_trajectory(anchors, traj, p, class_id)


def boundary_profiles(steps: int, params: SynthParams = BINARY, base: float = SCALE_BASE_SIZE) -> tuple[AnchorSet, dict[int, ScoreProfile]]:
    """Scale-probe profiles of an object centered between two concentric anchors ``steps`` warps apart."""
    config = scale_boundary_config(steps, base)
    anchors = generate_anchors(config)
    traj = Trajectory(BBox.from_center(150.0, 150.0, base, base), WarpFamily.SCALING, tuple(range(-29, 30)), config.extent.center)
    return anchors, run_trajectory(anchors, traj, params).profiles
