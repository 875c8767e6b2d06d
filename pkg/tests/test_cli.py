import json

import pytest
from click.testing import CliRunner

from anchorlens.assignment import import_assignment
from anchorlens.cli import cli
from anchorlens.config import load_config
from anchorlens.anchors import generate_anchors
from anchorlens.geometry import BBox, iou
from anchorlens.probe import read_manifests
from anchorlens.synthdet import BINARY, score_manifest
from anchorlens.probe import FrameKey, format_profiles

from oracles import count_anchors

ELEVEN = {
    "image": {"width": 100, "height": 100},
    "levels": [
        {"grid_w": 2, "grid_h": 2, "stride_x": 50, "stride_y": 50, "templates": [[40, 40], [56, 28]]},
        {"grid_w": 1, "grid_h": 1, "stride_x": 100, "stride_y": 100, "templates": [[70, 70], [90, 45], [45, 90]]},
    ],
}
GT_HEADER = "video_id,frame_index,object_id,class_id,x_min,y_min,x_max,y_max\n"


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "eleven.json"
    path.write_text(json.dumps(ELEVEN))
    return path


def run(*args, env=None):
    return CliRunner().invoke(cli, [str(a) for a in args], env=env, catch_exceptions=False)


def data_lines(text):
    return [l for l in text.splitlines() if l and not l.startswith("#")][1:]


# -- anchors --------------------------------------------------------------------


def test_anchors_listing(config_file):
    result = run("--config", config_file, "anchors")
    assert result.exit_code == 0
    rows = data_lines(result.stdout)
    assert len(rows) == count_anchors([(2, 2, 2), (1, 1, 3)])
    assert [int(r.split(",")[0]) for r in rows] == list(range(11))
    assert result.stdout.startswith("# anchorlens 0.1.0 anchors config=")


def test_anchors_header_suppressed(config_file):
    out = run("--config", config_file, "--no-header", "anchors").stdout
    assert out.splitlines()[0] == "id,level,cell_i,cell_j,template,x_min,y_min,x_max,y_max"


def test_env_var_config(config_file):
    result = run("--no-header", "anchors", env={"ANCHORLENS_CONFIG": str(config_file)})
    assert len(data_lines(result.stdout)) == 11


def test_default_config_is_ssd_like():
    assert len(data_lines(run("--no-header", "anchors").stdout)) == 8732


def test_stride_zero_reported(tmp_path):
    doc = json.loads(json.dumps(ELEVEN))
    doc["levels"][0]["stride_y"] = 0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    result = run("--config", path, "anchors")
    assert result.exit_code != 0
    assert "levels[0].stride_y" in result.stderr


# -- assign ---------------------------------------------------------------------


def _gt_file(tmp_path, boxes, name="gt.csv"):
    path = tmp_path / name
    path.write_text(GT_HEADER + "".join(f"v,{f},{o},1,{b.x_min},{b.y_min},{b.x_max},{b.y_max}\n" for f, o, b in boxes))
    return path


def test_retinanet_counts_half_as_positive(tmp_path, config_file):
    # anchor 0 spans (5, 5)-(45, 45); this box covers exactly half of it
    gt = _gt_file(tmp_path, [(0, "a", BBox(5, 5, 45, 25))])
    assert iou(BBox(5, 5, 45, 45), BBox(5, 5, 45, 25)) == 0.5
    for strategy, fallback in (("retinanet", "0"), ("ssd", "1")):
        out = tmp_path / f"{strategy}.csv"
        assert run("--config", config_file, "assign", gt, "--strategy", strategy, "-o", out).exit_code == 0
        (table,) = import_assignment(out)
        assert table.weights_by_anchor()[0] == 1.0
        assert table.fallback_flags == [fallback == "1"]


def test_soft_contains_confident_ssd_positives(tmp_path, config_file, rng):
    from conftest import random_box

    boxes = [(f, "a", random_box(rng, min_size=15)) for f in range(40)]
    gt = _gt_file(tmp_path, boxes)
    anchors = generate_anchors(load_config(config_file).pyramid)
    tables = {}
    for strategy in ("ssd", "soft"):
        out = tmp_path / f"{strategy}.csv"
        run("--config", config_file, "assign", gt, "--strategy", strategy, "-o", out)
        tables[strategy] = {t.image_id: t for t in import_assignment(out)}
    for f, _, box in boxes:
        image = f"v/{f}"
        ssd_conf = {a.id for a in anchors if iou(a.box, box) > 0.6}
        assert ssd_conf <= {r.anchor_id for r in tables["ssd"][image].rows}
        soft_ones = {r.anchor_id for r in tables["soft"][image].rows if r.weight == 1.0}
        assert ssd_conf <= soft_ones


def test_empty_gt_gives_header_only(tmp_path, config_file):
    gt = tmp_path / "gt.csv"
    gt.write_text(GT_HEADER)
    out = run("--config", config_file, "--no-header", "assign", gt).stdout
    assert out == "image_id,anchor_id,gt_index,weight\n"


def test_unknown_strategy(tmp_path, config_file):
    gt = _gt_file(tmp_path, [])
    result = run("--config", config_file, "assign", gt, "--strategy", "yolo9000")
    assert result.exit_code == 2 and "unknown strategy" in result.stderr


def test_malformed_gt_line_number(tmp_path, config_file):
    gt = tmp_path / "gt.csv"
    gt.write_text(GT_HEADER + "v,0,a,1,0,0,10,10\nv,1,a,1,0,0,10\n")
    result = run("--config", config_file, "assign", gt)
    assert result.exit_code == 1 and "gt.csv:3:" in result.stderr


# -- mmd ------------------------------------------------------------------------


def _dump(tmp_path, scores, anchor=0):
    path = tmp_path / "dump.csv"
    path.write_text(
        "video_id,frame_index,anchor_id,class_id,score\n"
        + "".join(f"v,{f},{anchor},1,{s}\n" for f, s in enumerate(scores))
    )
    gt = _gt_file(tmp_path, [(f, "a", BBox(5, 5, 45, 45)) for f in range(len(scores))])
    return path, gt


def test_mmd_gamma_max_override(tmp_path, config_file):
    dump, gt = _dump(tmp_path, [0.8, 0.7, 0.8])
    assert data_lines(run("--config", config_file, "mmd", dump, gt).stdout) == []
    flagged = data_lines(run("--config", config_file, "--gamma-max", "1.0", "mmd", dump, gt).stdout)
    assert flagged == ["v,1,a,1,0.800000000,0.700000000,0.800000000"]


def test_mmd_constant_dump(tmp_path, config_file):
    dump, gt = _dump(tmp_path, [0.55] * 6)
    assert data_lines(run("--config", config_file, "mmd", dump, gt).stdout) == []


def test_mmd_missing_frame_is_error(tmp_path, config_file):
    dump, _ = _dump(tmp_path, [0.8, 0.3])
    gt = _gt_file(tmp_path, [(f, "a", BBox(5, 5, 45, 45)) for f in range(3)], "gt3.csv")
    result = run("--config", config_file, "mmd", dump, gt)
    assert result.exit_code == 1
    assert "error,v/2/a,ground truth frame has no detections" in result.stderr


def test_mmd_unknown_anchor(tmp_path, config_file):
    dump, gt = _dump(tmp_path, [0.8], anchor=99)
    result = run("--config", config_file, "mmd", dump, gt)
    assert result.exit_code == 1 and "unknown anchor_id 99" in result.stderr


# -- probe ----------------------------------------------------------------------


def test_manifest_scaling_has_59_rows(config_file):
    out = run("--config", config_file, "probe", "manifest", "--family", "scaling").stdout
    assert len(data_lines(out)) == 59


def test_manifest_default_families(config_file):
    out = run("--config", config_file, "probe", "manifest").stdout
    assert len(data_lines(out)) == 2 * 59


def _flat_profile(tmp_path, value="0.9"):
    path = tmp_path / "flat.csv"
    rows = "".join(f"{n},{a},1,{value}\n" for a in (0, 2) for n in range(-29, 30))
    path.write_text("#frame,v,1,a,1\n#family,shift-x\nn,anchor_id,class_id,score\n" + rows)
    return path


def test_analyze_flat_profile(tmp_path, config_file):
    out = run("--config", config_file, "--no-header", "probe", "analyze", _flat_profile(tmp_path)).stdout
    assert data_lines(out) == ["v,1,a,1,NoBoundaryEvidence,,,,,,,,no valley"]


def test_analyze_bad_row_is_error(tmp_path, config_file):
    path = _flat_profile(tmp_path)
    path.write_text(path.read_text() + "30,0,1,0.5\n")
    result = run("--config", config_file, "probe", "analyze", path)
    assert result.exit_code == 1 and "flat.csv:122:" in result.stderr


def test_manifest_score_analyze_round_trip(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "scale-boundary-binary", "--out-dir", sim).exit_code == 0
    config = sim / "config.json"
    manifest_path = tmp_path / "manifest.csv"
    run("--config", config, "probe", "manifest", "--family", "scaling", "-o", manifest_path)
    manifest = read_manifests(manifest_path)
    from anchorlens.probe import WarpFamily

    cfg = load_config(config)
    anchors = generate_anchors(cfg.pyramid)
    base = BBox.from_center(150, 150, 120, 120)
    run_ = score_manifest(anchors, manifest[WarpFamily.SCALING], base, BINARY, 14)
    prof = tmp_path / "p.csv"
    prof.write_text(format_profiles(run_.profiles, 14, FrameKey("synth", 3, "0", 14), WarpFamily.SCALING))
    out = run("--config", config, "--no-header", "probe", "analyze", prof, "--manifest", manifest_path).stdout
    (row,) = data_lines(out)
    fields = row.split(",")
    assert fields[4:7] == ["AnchorBoundary", "ScaleBoundary", "0"]


def test_analyze_with_mmd_list_reports_missing_profiles(tmp_path, config_file):
    mmd = tmp_path / "mmd.csv"
    mmd.write_text("video_id,frame_index,object_id,class_id,p_prev,p_t,p_next\nv,1,a,1,0.8,0.3,0.8\nv,7,a,1,0.8,0.3,0.8\n")
    result = run("--config", config_file, "probe", "analyze", _flat_profile(tmp_path), "--mmd", mmd)
    assert result.exit_code == 1
    assert "error,v/7/a,MMD frame has no profile file" in result.stderr
    assert len(data_lines(result.stdout)) == 1


def test_analyze_plot_dir(tmp_path, config_file):
    plots = tmp_path / "plots"
    run("--config", config_file, "probe", "analyze", _flat_profile(tmp_path), "--plot-dir", plots)
    assert (plots / "v__1__a.svg").read_text().startswith("<?xml")


# -- tally ----------------------------------------------------------------------

VERDICTS = (
    "video_id,frame_index,object_id,class_id,verdict,kind,switch_n,valley_score,left_peak,right_peak,anchor_a,anchor_b,reason\n"
    "v,1,a,1,AnchorBoundary,ScaleBoundary,0,0.300000000,0.900000000,0.900000000,4,9,\n"
    "v,5,a,1,NoBoundaryEvidence,,,,,,,,no valley\n"
    "v,8,a,1,NoBoundaryEvidence,,,,,,,,no valley\n"
)


def _totals(text):
    return {l.split(",")[0]: int(l.split(",")[1]) for l in data_lines(text)}


def test_tally_with_labels(tmp_path):
    verdicts = tmp_path / "v.csv"
    verdicts.write_text(VERDICTS)
    labels = tmp_path / "l.csv"
    labels.write_text("video_id,frame_index,object_id,label\nv,8,a,external\n")
    out = run("tally", verdicts, "--labels", labels).stdout
    assert _totals(out) == {"external": 1, "anchor_boundary": 1, "others": 1, "total": 3}


def test_tally_without_labels(tmp_path):
    verdicts = tmp_path / "v.csv"
    verdicts.write_text(VERDICTS)
    assert _totals(run("tally", verdicts).stdout)["external"] == 0


def test_tally_unknown_label_frame(tmp_path):
    verdicts = tmp_path / "v.csv"
    verdicts.write_text(VERDICTS)
    labels = tmp_path / "l.csv"
    labels.write_text("video_id,frame_index,object_id,label\nv,99,a,external\n")
    result = run("tally", verdicts, "--labels", labels)
    assert result.exit_code == 1 and "label for unknown frame v/99/a" in result.stderr


def test_tally_rows_and_svg(tmp_path):
    verdicts = tmp_path / "v.csv"
    verdicts.write_text(VERDICTS)
    rows, svg = tmp_path / "rows.csv", tmp_path / "t.svg"
    assert run("--no-header", "tally", verdicts, "--rows", rows, "--svg", svg).exit_code == 0
    assert data_lines(rows.read_text())[0] == "v,1,a,AnchorBoundary,,anchor_boundary"
    text = svg.read_text()
    assert "Anchor boundary" in text and "<dc:date>" not in text


# -- simulate -------------------------------------------------------------------


def test_simulate_emits_files(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "on-anchor", "--out-dir", out).exit_code == 0
    for name in ("config.json", "detections.csv", "gt.csv", "manifest.csv", "profiles/synth__0__0.csv"):
        assert (out / name).is_file()


def test_simulate_unknown_scenario(tmp_path):
    result = run("simulate", "nope", "--out-dir", tmp_path)
    assert result.exit_code == 2


def test_jobs_do_not_change_output(tmp_path):
    sim = tmp_path / "sim"
    run("simulate", "grid-boundary-binary", "--out-dir", sim)
    cfg = sim / "config.json"
    gt = sim / "gt.csv"
    one = run("--config", cfg, "--no-header", "assign", gt).stdout
    four = run("--config", cfg, "--no-header", "--jobs", "4", "assign", gt).stdout
    assert one == four
