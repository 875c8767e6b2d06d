"""Command-line entry point.

    anchorlens [--config PATH] [--jobs N] [--no-header] [threshold overrides] COMMAND

Commands: anchors, assign, mmd, probe manifest, probe analyze, tally, simulate.
Outputs are CSV with an optional single ``#`` metadata line; recoverable
problems are printed to stderr as ``error,<where>,<message>`` rows and make
the exit status 1.
"""

from __future__ import annotations

import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

import click

from anchorlens import __version__
from anchorlens.anchors import AnchorSet, generate_anchors
from anchorlens.assignment import assign, format_assignment, strategy_from_name
from anchorlens.config import ConfigError, RunConfig, default_config, load_config, to_document
from anchorlens.formats import (
    ANCHOR_COLUMNS,
    DETECTION_COLUMNS,
    GT_COLUMNS,
    MMD_COLUMNS,
    VERDICT_COLUMNS,
    FormatError,
    anchor_rows,
    detection_rows,
    gt_rows,
    mmd_rows,
    read_detections,
    read_ground_truth,
    read_labels,
    read_mmd,
    read_verdicts,
    render_csv,
    verdict_row,
)
from anchorlens.mmd import build_tracks, mmd_frames
from anchorlens.probe import (
    CATEGORIES,
    FrameKey,
    WarpFamily,
    analyze_profiles,
    build_manifest,
    categorize,
    format_manifests,
    format_profiles,
    ingest_profile,
    read_frame_key,
    read_manifests,
    read_profile_family,
    tally_causes,
)
from anchorlens.synthdet import SCENARIOS, scenario, simulate

T = TypeVar("T")
R = TypeVar("R")


class State:
    def __init__(self, config_path: Optional[str], jobs: int, header: bool, overrides: dict):
        self.config_path = config_path
        self.jobs = jobs
        self.header = header
        self.overrides = overrides
        self.errors: list[tuple[str, str]] = []
        self._config: Optional[RunConfig] = None
        self._anchors: Optional[AnchorSet] = None

    @property
    def config(self) -> RunConfig:
        if self._config is None:
            try:
                base = load_config(self.config_path) if self.config_path else default_config()
                self._config = base.with_overrides(**self.overrides)
            except ConfigError as exc:
                raise click.ClickException(f"config error: {exc}") from None
        return self._config

    @property
    def anchors(self) -> AnchorSet:
        if self._anchors is None:
            self._anchors = generate_anchors(self.config.pyramid)
        return self._anchors

    def header_line(self, command: str) -> Optional[str]:
        if not self.header:
            return None
        return f"# anchorlens {__version__} {command} config={self.config.digest()}"

    def error(self, where: str, message: str) -> None:
        self.errors.append((where, message))

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        """Ordered parallel map bounded by ``--jobs``."""
        if self.jobs <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))

    def finish(self) -> None:
        for where, message in self.errors:
            click.echo(f"error,{where},{message}", err=True)
        if self.errors:
            raise SystemExit(1)


def emit(text: str, output: Optional[str]) -> None:
    if output is None or output == "-":
        click.echo(text, nl=False)
        return
    try:
        Path(output).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise click.ClickException(f"cannot write {output}: {exc.strerror}") from None


def _guard(fn, *args):
    try:
        return fn(*args)
    except (FormatError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from None


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="anchorlens")
@click.option("--config", "config_path", envvar="ANCHORLENS_CONFIG", type=click.Path(dir_okay=False),
              help="Run configuration (JSON). Falls back to $ANCHORLENS_CONFIG, then the bundled SSD-300-like pyramid.")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1), help="Worker threads.")
@click.option("--no-header", is_flag=True, help="Omit the '#' metadata line from outputs.")
@click.option("--gamma-min", type=float, help="MMD: minimum neighbour score.")
@click.option("--gamma-ratio", type=float, help="MMD: maximum score ratio p_t / p_{t-1}.")
@click.option("--gamma-max", type=float, help="MMD: score must stay below this.")
@click.option("--alpha", type=float, help="Soft threshold band half-width.")
@click.option("--beta", type=float, help="Soft threshold value at the band edge.")
@click.option("--switch-window", type=int, help="Probe: max |n| of the anchor switch.")
@click.pass_context
def cli(ctx, config_path, jobs, no_header, **overrides):
    """Anchor-boundary analysis of momentarily missed detections."""
    ctx.obj = State(config_path, jobs, not no_header, overrides)


@cli.command("anchors")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Output CSV (default stdout).")
@click.pass_obj
def cmd_anchors(state: State, output):
    """List the anchor enumeration of the configured pyramid."""
    emit(render_csv(ANCHOR_COLUMNS, anchor_rows(state.anchors), state.header_line("anchors")), output)
    state.finish()


@cli.command("assign")
@click.argument("gt_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", help="Preset: faster-rcnn, ssd, retinanet, refinedet, m2det, yolov2, soft.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Output CSV (default stdout).")
@click.pass_obj
def cmd_assign(state: State, gt_file, strategy, output):
    """Per-image anchor weights for the boxes in GT_FILE (image id = video_id/frame_index)."""
    name = strategy or state.config.strategy
    try:
        strat = strategy_from_name(name, state.config.soft)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--strategy") from None
    gts = _guard(read_ground_truth, gt_file)
    images: dict[tuple[str, int], list] = defaultdict(list)
    for g in gts:
        images[(g.video_id, g.frame_index)].append(g)
    keys = sorted(images)
    anchors = state.anchors

    def run(key):
        return assign(anchors, [g.box for g in images[key]], strat, image_id=f"{key[0]}/{key[1]}")

    tables = state.map(run, keys)
    for table in tables:
        for g in table.unassignable:
            state.error(f"{table.image_id}#{g}", "ground truth could not be assigned to any anchor")
    emit(format_assignment(tables, state.header_line(f"assign strategy={name}")), output)
    state.finish()


@cli.command("mmd")
@click.argument("dump", type=click.Path(exists=True, dir_okay=False))
@click.argument("gt_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Output CSV (default stdout).")
@click.pass_obj
def cmd_mmd(state: State, dump, gt_file, output):
    """Extract MMD frames from a detection DUMP against GT_FILE."""
    detections = _guard(read_detections, dump)
    gts = _guard(read_ground_truth, gt_file)
    anchors = state.anchors
    for rec in detections:
        if rec.anchor_id not in anchors:
            raise click.ClickException(f"{dump}: unknown anchor_id {rec.anchor_id}")
    dets_by_video, gts_by_video = defaultdict(list), defaultdict(list)
    for d in detections:
        dets_by_video[d.video_id].append(d)
    for g in gts:
        gts_by_video[g.video_id].append(g)
    th = state.config.mmd

    def run(video_id):
        result = build_tracks(dets_by_video.get(video_id, []), gts_by_video[video_id], anchors)
        frames = [f for track in result.tracks for f in mmd_frames(track, th)]
        return result, frames

    videos = sorted(gts_by_video)
    results = state.map(run, videos)
    rows = []
    for result, frames in results:
        for video_id, frame, object_id in result.missing_frames:
            state.error(f"{video_id}/{frame}/{object_id}", "ground truth frame has no detections in the dump")
        rows.extend(frames)
    for video_id in sorted(set(dets_by_video) - set(gts_by_video)):
        state.error(video_id, "video present in the dump but absent from the ground truth")
    rows.sort(key=lambda f: (f.video_id, f.frame_index, f.object_id, f.class_id))
    emit(render_csv(MMD_COLUMNS, mmd_rows(rows), state.header_line("mmd")), output)
    state.finish()


@cli.group("probe")
def probe_group():
    """Warp-probe manifests and boundary verdicts."""


@probe_group.command("manifest")
@click.option("--family", "families", multiple=True, type=click.Choice([f.value for f in WarpFamily]),
              help="Warp family (repeatable; default from config).")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Output CSV (default stdout).")
@click.pass_obj
def cmd_probe_manifest(state: State, families, output):
    """Write the 59-step warp manifest(s) for the configured image extent."""
    fams = [WarpFamily(f) for f in families] if families else list(state.config.families)
    manifests = [build_manifest(f, state.config.pyramid.extent) for f in fams]
    emit(format_manifests(manifests, state.header_line("probe manifest")), output)
    state.finish()


@probe_group.command("analyze")
@click.argument("profile_files", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_file", type=click.Path(exists=True, dir_okay=False),
              help="Manifest the scores refer to (default: built from the config extent).")
@click.option("--family", type=click.Choice([f.value for f in WarpFamily]), default=None,
              help="Family for profile files without a '#family' line (default scaling).")
@click.option("--mmd", "mmd_file", type=click.Path(exists=True, dir_okay=False),
              help="MMD list; every listed frame must have a profile file.")
@click.option("--plot-dir", type=click.Path(file_okay=False), help="Write one profile SVG per frame here.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Output CSV (default stdout).")
@click.pass_obj
def cmd_probe_analyze(state: State, profile_files, manifest_file, family, mmd_file, plot_dir, output):
    """Classify each probed frame from its per-anchor score profiles."""
    cfg, anchors = state.config, state.anchors
    manifests = _guard(read_manifests, manifest_file) if manifest_file else {}
    keyed: dict[FrameKey, str] = {}
    for path in profile_files:
        key = _guard(read_frame_key, path)
        if key is None:
            state.error(path, "profile file lacks a '#frame,video_id,frame_index,object_id,class_id' line")
            continue
        if key in keyed:
            state.error(path, f"duplicate profile for frame {key.video_id}/{key.frame_index}/{key.object_id}")
            continue
        keyed[key] = path
    wanted = sorted(keyed, key=_key_order)
    if mmd_file:
        listed = _guard(read_mmd, mmd_file)
        for key in listed:
            if key not in keyed:
                state.error(f"{key.video_id}/{key.frame_index}/{key.object_id}", "MMD frame has no profile file")
        wanted = sorted((k for k in set(listed) if k in keyed), key=_key_order)
    if plot_dir:
        Path(plot_dir).mkdir(parents=True, exist_ok=True)

    def run(key: FrameKey):
        path = keyed[key]
        try:
            fam = read_profile_family(path) or WarpFamily(family or "scaling")
            if manifests:
                if fam not in manifests:
                    raise ValueError(f"manifest has no {fam.value} entries")
                manifest = manifests[fam]
            else:
                manifest = build_manifest(fam, cfg.pyramid.extent)
            profiles = ingest_profile(path, manifest, anchors)
            verdict = analyze_profiles(profiles.values(), anchors, cfg.mmd, cfg.switch_window)
        except ValueError as exc:
            return key, None, str(exc)
        if plot_dir:
            from anchorlens.plotting import profile_plot

            stem = f"{key.video_id}__{key.frame_index}__{key.object_id}"
            profile_plot(profiles, Path(plot_dir) / f"{stem}.svg", verdict, xlabel=f"{fam.value} index n")
        return key, verdict, None

    rows = []
    for key, verdict, err in state.map(run, wanted):
        if err is not None:
            state.error(keyed[key], err)
        else:
            rows.append(verdict_row(key, verdict))
    emit(render_csv(VERDICT_COLUMNS, rows, state.header_line("probe analyze")), output)
    state.finish()


def _key_order(k: FrameKey):
    return (k.video_id, k.frame_index, k.object_id, k.class_id)


@cli.command("tally")
@click.argument("verdict_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "label_file", type=click.Path(exists=True, dir_okay=False),
              help="Human labels: video_id,frame_index,object_id,label (external|other).")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Totals CSV (default stdout).")
@click.option("--rows", "rows_file", type=click.Path(dir_okay=False), help="Per-frame CSV.")
@click.option("--svg", "svg_file", type=click.Path(dir_okay=False), help="Bar chart of the totals.")
@click.option("--title", default=None, help="Chart title.")
@click.pass_obj
def cmd_tally(state: State, verdict_file, label_file, output, rows_file, svg_file, title):
    """Break MMD frames down into external / anchor boundary / others."""
    verdicts = _guard(read_verdicts, verdict_file)
    labels: dict[tuple[str, int, str], str] = {}
    known = {(k.video_id, k.frame_index, k.object_id) for k, _ in verdicts}
    if label_file:
        for frame, label, lineno in _guard(read_labels, label_file):
            if frame not in known:
                state.error(f"{label_file}:{lineno}", f"label for unknown frame {frame[0]}/{frame[1]}/{frame[2]}")
                continue
            labels[frame] = label
    items, frame_rows = [], []
    for key, verdict in verdicts:
        label = labels.get((key.video_id, key.frame_index, key.object_id))
        items.append((verdict, label))
        frame_rows.append((key.video_id, key.frame_index, key.object_id, verdict.label, label or "", categorize(verdict, label)))
    totals = tally_causes(items)
    header = state.header_line("tally")
    counts = totals.as_dict()
    emit(render_csv(("category", "count"), [(c, counts[c]) for c in CATEGORIES] + [("total", totals.total)], header), output)
    if rows_file:
        emit(render_csv(("video_id", "frame_index", "object_id", "verdict", "label", "category"), frame_rows, header), rows_file)
    if svg_file:
        from anchorlens.plotting import cause_bar_chart

        cause_bar_chart(totals, svg_file, title)
    state.finish()


@cli.command("simulate")
@click.argument("scenario_name", metavar="SCENARIO", type=click.Choice(SCENARIOS))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Directory for the emitted files.")
@click.pass_obj
def cmd_simulate(state: State, scenario_name, out_dir):
    """Emit a synthetic scenario: config, detection dump, ground truth, manifest and probe profiles.

    Files: config.json, detections.csv, gt.csv, manifest.csv and
    profiles/<video>__<frame>__<object>.csv (the unwarped frame's probe).
    """
    sc = scenario(scenario_name)
    out = simulate(sc)
    cfg = state.config
    doc = to_document(RunConfig(sc.config, cfg.mmd, cfg.soft, cfg.switch_window, (sc.family,), cfg.strategy))
    root = Path(out_dir)
    (root / "profiles").mkdir(parents=True, exist_ok=True)
    header = None
    if state.header:
        header = f"# anchorlens {__version__} simulate scenario={scenario_name}"
    (root / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    emit(render_csv(DETECTION_COLUMNS, detection_rows(out.detections), header), str(root / "detections.csv"))
    emit(render_csv(GT_COLUMNS, gt_rows(out.ground_truth), header), str(root / "gt.csv"))
    emit(format_manifests([sc.manifest()], header), str(root / "manifest.csv"))
    key = sc.frame_key()
    text = format_profiles(out.probe.profiles, sc.class_id, key, sc.family, header)
    emit(text, str(root / "profiles" / f"{key.video_id}__{key.frame_index}__{key.object_id}.csv"))
    state.finish()


def main(argv: Optional[Sequence[str]] = None) -> None:
    cli.main(args=argv, prog_name="anchorlens")


if __name__ == "__main__":
    main()
