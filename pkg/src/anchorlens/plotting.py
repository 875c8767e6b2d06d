"""SVG figures: cause breakdown bars and per-anchor score profiles.

Output is byte-stable across runs: the SVG id salt is pinned, text stays as
text rather than glyph paths, and no creation date is embedded.
"""

from __future__ import annotations

from typing import Mapping, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from anchorlens.probe import AnchorBoundary, BoundaryVerdict, CauseTotals, ScoreProfile, upper_envelope  # noqa: E402

STYLE = {
    "svg.hashsalt": "anchorlens",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.0, 3.0),
}

CATEGORY_LABELS = {"external": "External factors", "anchor_boundary": "Anchor boundary", "others": "Others"}
CATEGORY_COLORS = {"external": "#8c8c8c", "anchor_boundary": "#c0392b", "others": "#4a6fa5"}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def cause_bar_chart(totals: CauseTotals, path, title: Optional[str] = None) -> None:
    """Three bars, one per cause category, annotated with their counts."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        counts = totals.as_dict()
        keys = list(counts)
        bars = ax.bar(
            range(len(keys)),
            [counts[k] for k in keys],
            color=[CATEGORY_COLORS[k] for k in keys],
            width=0.6,
        )
        for bar, k in zip(bars, keys):
            ax.annotate(str(counts[k]), (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", xytext=(0, 2), textcoords="offset points")
        ax.set_xticks(range(len(keys)), [CATEGORY_LABELS[k] for k in keys])
        ax.set_ylabel("MMD frames")
        ax.set_ylim(0, max(1, max(counts.values())) * 1.15)
        ax.set_title(title or f"{totals.total} MMD frames")
        fig.tight_layout()
        _save(fig, path)


def profile_plot(
    profiles: Mapping[int, ScoreProfile],
    path,
    verdict: Optional[BoundaryVerdict] = None,
    xlabel: str = "warp index n",
    max_curves: int = 4,
) -> None:
    """Score against warp index for the anchors that own the envelope somewhere."""
    env = upper_envelope(profiles.values())
    owners = sorted(set(env.owners), key=lambda a: (-max(profiles[a].scores.values()), a))[:max_curves]
    markers = ["x", "*", "+", "o"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        for k, a in enumerate(sorted(owners)):
            prof = profiles[a]
            ns = sorted(prof.scores)
            ax.plot(ns, [prof.scores[n] for n in ns], linestyle="none", marker=markers[k % len(markers)],
                    markersize=4, label=f"anchor {a}")
        ax.plot(env.ns, env.values, color="black", linewidth=0.6, alpha=0.5, label="envelope")
        ax.axvline(0, color="0.7", linewidth=0.5)
        if isinstance(verdict, AnchorBoundary):
            ax.set_title(f"{verdict.kind.value} at n={verdict.switch_n} (valley {verdict.valley_score:.3f})")
        elif verdict is not None:
            ax.set_title(f"no boundary evidence: {verdict.reason}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("score")
        ax.set_ylim(0.0, 1.0)
        ax.legend(loc="lower right", fontsize=7, frameon=False)
        fig.tight_layout()
        _save(fig, path)
