import io

import pytest
from hypothesis import given, strategies as st

from anchorlens.anchors import NeighborKind
from anchorlens.geometry import ImageExtent
from anchorlens.mmd import MmdThresholds
from anchorlens.probe import (
    N_RANGE,
    AnchorBoundary,
    CauseTotals,
    FrameKey,
    NoBoundaryEvidence,
    ScoreProfile,
    WarpFamily,
    analyze_profiles,
    build_manifest,
    categorize,
    find_switch,
    format_manifests,
    format_profiles,
    ingest_profile,
    read_frame_key,
    read_manifests,
    read_profile_family,
    tally_causes,
    upper_envelope,
    warp_for,
)
from anchorlens.synthdet import BINARY, boundary_profiles

EXTENT = ImageExtent(300, 300)


# -- manifests ------------------------------------------------------------------


@pytest.mark.parametrize("family", list(WarpFamily))
def test_manifest_has_59_entries_with_identity(family):
    m = build_manifest(family, EXTENT)
    assert m.ns == tuple(range(-29, 30)) and len(m.entries) == 59
    assert m.warp(0).is_identity
    assert m.center == (150.0, 150.0)


def test_scaling_power():
    w = build_manifest(WarpFamily.SCALING, EXTENT).warp(15)
    assert abs(w.sx - 1.02**15) <= 1e-12 and w.sx == w.sy
    assert w.sx == pytest.approx(1.34587, abs=1e-5)
    assert build_manifest(WarpFamily.SCALING, EXTENT).warp(-15).sx == pytest.approx(0.98**15, abs=1e-12)


def test_shift_is_exact():
    m = build_manifest(WarpFamily.SHIFT_X, EXTENT)
    for n in N_RANGE:
        w = m.warp(n)
        assert w.tx == 3 * n and (w.sx, w.sy, w.ty) == (1.0, 1.0, 0.0)
    assert m.warp(-29).tx == -87.0


def test_aspect_families_touch_one_axis():
    for n in (-7, 7):
        wx = warp_for(WarpFamily.ASPECT_X, n, (0, 0))
        wy = warp_for(WarpFamily.ASPECT_Y, n, (0, 0))
        expected = 1.01**n if n > 0 else 0.99 ** (-n)
        assert (wx.sx, wx.sy) == (expected, 1.0)
        assert (wy.sx, wy.sy) == (1.0, expected)


def test_warp_index_range():
    with pytest.raises(ValueError):
        warp_for(WarpFamily.SCALING, 30, (0, 0))


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown warp family"):
        WarpFamily.parse("rotate")


def test_manifest_round_trip():
    ms = [build_manifest(f, ImageExtent(320, 240)) for f in WarpFamily]
    back = read_manifests(io.StringIO(format_manifests(ms, header="# h")))
    assert [back[f] for f in WarpFamily] == ms


# -- ingest ---------------------------------------------------------------------

SCALING = build_manifest(WarpFamily.SCALING, EXTENT)


def _profile_text(rows):
    return "n,anchor_id,class_id,score\n" + "".join(f"{n},{a},1,{s}\n" for n, a, s in rows)


def test_ingest_complete():
    rows = [(n, a, "0.500000000") for a in (3, 7) for n in N_RANGE]
    profiles = ingest_profile(io.StringIO(_profile_text(rows)), SCALING)
    assert sorted(profiles) == [3, 7]
    assert all(p.gaps == () and len(p.scores) == 59 for p in profiles.values())


def test_ingest_records_gaps():
    rows = [(n, 3, "0.5") for n in N_RANGE if n != 4]
    assert ingest_profile(io.StringIO(_profile_text(rows)), SCALING)[3].gaps == (4,)


@pytest.mark.parametrize(
    "extra, message",
    [
        ("30,3,1,0.5", "n=30"),
        ("0,3,1,0.5", "duplicate"),
        ("1,3,1", "expected 4 fields"),
        ("1,3,1,abc", "could not convert"),
        ("1,3,1,1.5", "score must lie"),
    ],
)
def test_ingest_rejects_with_line_number(extra, message):
    text = _profile_text([(0, 3, "0.5")]) + extra + "\n"
    with pytest.raises(ValueError, match=rf":3: .*{message}"):
        ingest_profile(io.StringIO(text), SCALING)


def test_ingest_unknown_anchor(eleven_anchors):
    with pytest.raises(ValueError, match="unknown anchor_id 99"):
        ingest_profile(io.StringIO(_profile_text([(0, 99, "0.5")])), SCALING, eleven_anchors)


def test_profile_format_round_trip():
    anchors, profiles = boundary_profiles(10)
    key = FrameKey("vid", 4, "obj", 14)
    text = format_profiles(profiles, 14, frame=key, family=WarpFamily.SCALING)
    back = ingest_profile(io.StringIO(text), SCALING, anchors)
    assert read_frame_key(io.StringIO(text)) == key
    assert read_profile_family(io.StringIO(text)) is WarpFamily.SCALING
    for a, p in profiles.items():
        assert back[a].scores == {n: round(s, 9) for n, s in p.scores.items()}


# -- envelope and switch --------------------------------------------------------


def test_envelope_tie_goes_to_smaller_id():
    env = upper_envelope([ScoreProfile(5, {0: 0.4}), ScoreProfile(2, {0: 0.4})])
    assert env.owners == (2,)


def test_switch_location_uses_smaller_abs_side():
    prof_a = ScoreProfile(0, {n: (0.9 if n <= 2 else 0.1) for n in range(-5, 6)})
    prof_b = ScoreProfile(1, {n: (0.1 if n <= 2 else 0.9) for n in range(-5, 6)})
    assert find_switch(upper_envelope([prof_a, prof_b])) == (2, 0, 1)
    prof_a = ScoreProfile(0, {n: (0.9 if n <= -3 else 0.1) for n in range(-5, 6)})
    prof_b = ScoreProfile(1, {n: (0.1 if n <= -3 else 0.9) for n in range(-5, 6)})
    assert find_switch(upper_envelope([prof_a, prof_b])) == (-2, 0, 1)


# -- verdicts -------------------------------------------------------------------


def test_scale_boundary_fixture():
    anchors, profiles = boundary_profiles(10, BINARY)
    verdict = analyze_profiles(profiles.values(), anchors)
    assert isinstance(verdict, AnchorBoundary)
    assert verdict.kind is NeighborKind.SCALE
    assert verdict.switch_n == 0
    assert verdict.valley_score == pytest.approx(0.33, abs=0.005)
    assert min(verdict.side_peaks) >= 0.9


def _switching_pair(a, b, switch_at, high=0.9, low=0.2):
    pa = ScoreProfile(a, {n: (high if n < switch_at else low) for n in N_RANGE})
    pb = ScoreProfile(b, {n: (low if n < switch_at else high) for n in N_RANGE})
    dip = {switch_at - 1: 0.3, switch_at: 0.3}
    pa.scores.update({n: min(pa.scores[n], v) for n, v in dip.items()})
    pb.scores.update({n: min(pb.scores[n], v) for n, v in dip.items()})
    return [pa, pb]


def test_grid_pair_near_zero(eleven_anchors):
    verdict = analyze_profiles(_switching_pair(0, 2, 1), eleven_anchors, MmdThresholds(), 5)
    assert isinstance(verdict, AnchorBoundary)
    assert verdict.kind is NeighborKind.GRID and verdict.anchor_pair == (0, 2)
    assert verdict.valley_score == 0.3


def test_flat_profiles_have_no_valley(eleven_anchors):
    flat = [ScoreProfile(a, {n: 0.9 for n in N_RANGE}) for a in (0, 2)]
    assert analyze_profiles(flat, eleven_anchors) == NoBoundaryEvidence("no valley")


def test_switch_outside_window(eleven_anchors):
    verdict = analyze_profiles(_switching_pair(0, 2, 21), eleven_anchors, switch_window=5)
    assert verdict == NoBoundaryEvidence("switch outside window")


def test_wider_window_admits_far_switch(eleven_anchors):
    verdict = analyze_profiles(_switching_pair(0, 2, 21), eleven_anchors, MmdThresholds(gamma_max=1.0), 25)
    assert isinstance(verdict, AnchorBoundary) and verdict.switch_n == 20


def test_weak_side_peak(eleven_anchors):
    verdict = analyze_profiles(_switching_pair(0, 2, 1, high=0.45), eleven_anchors)
    assert verdict == NoBoundaryEvidence("side peak below gamma_min")


def test_high_center_score(eleven_anchors):
    pair = _switching_pair(0, 2, 3)
    assert analyze_profiles(pair, eleven_anchors) == NoBoundaryEvidence("score at n=0 not below gamma_max")


def test_valley_without_switch(eleven_anchors):
    dip = {n: (0.3 if n == 0 else 0.9) for n in N_RANGE}
    verdict = analyze_profiles([ScoreProfile(0, dip), ScoreProfile(2, {n: 0.1 for n in N_RANGE})], eleven_anchors)
    assert verdict == NoBoundaryEvidence("no anchor switch")


def test_non_neighbours_rejected(eleven_anchors):
    with pytest.raises(ValueError, match="not neighbours"):
        analyze_profiles(_switching_pair(0, 6, 1), eleven_anchors)


def test_needs_two_profiles(eleven_anchors):
    with pytest.raises(ValueError):
        analyze_profiles([ScoreProfile(0, {0: 0.5})], eleven_anchors)


# -- tally ----------------------------------------------------------------------

BOUNDARY = AnchorBoundary(NeighborKind.SCALE, 0, 0.3, (0.9, 0.9), (1, 2))
NONE = NoBoundaryEvidence("no valley")


def test_tally_counts():
    assert tally_causes([(None, "external"), (BOUNDARY, None), (NONE, None)]) == CauseTotals(1, 1, 1)


def test_tally_empty():
    assert tally_causes([]) == CauseTotals(0, 0, 0)


def test_external_overrides_boundary():
    assert categorize(BOUNDARY, "external") == "external"
    assert categorize(BOUNDARY, "other") == "anchor_boundary"


def test_unknown_label():
    with pytest.raises(ValueError):
        categorize(NONE, "weather")


@given(st.lists(st.tuples(st.sampled_from([BOUNDARY, NONE, None]), st.sampled_from([None, "external", "other"]))))
def test_tally_sums_to_rows(items):
    assert tally_causes(items).total == len(items)
