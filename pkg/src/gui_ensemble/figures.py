"""Matplotlib figures written next to the tabular reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import UII2E_ELEMENTS, UII2E_PLATFORMS, Counts, Report  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linestyle": ":",
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _pct(c: Counts) -> float:
    return float(c.rate * 100) if c.total else 0.0


def _strata(report: Report) -> list[tuple[str, Counts]]:
    return ([(p, report.platform[p]) for p in UII2E_PLATFORMS]
            + [(e, report.element[e]) for e in UII2E_ELEMENTS]
            + [("Overall", report.overall)])


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_success(report: Report, path: str | Path) -> Path:
    """Bar chart of success rate per platform/element stratum, annotated with n."""
    strata = _strata(report)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3))
        xs = range(len(strata))
        colors = ["#4C72B0"] * len(UII2E_PLATFORMS) + ["#55A868"] * len(UII2E_ELEMENTS) + ["#C44E52"]
        ax.bar(xs, [_pct(c) for _, c in strata], color=colors)
        for x, (_, c) in zip(xs, strata):
            ax.annotate(f"n={c.total}", (x, _pct(c)), ha="center", va="bottom", fontsize=7)
        ax.set_xticks(list(xs), [name for name, _ in strata], rotation=30, ha="right")
        ax.set_ylim(0, 105)
        ax.set_ylabel("success rate (%)")
        ax.set_title(f"Grounding success ({report.mode})")
        return _save(fig, Path(path))


def plot_conditions(report: Report, path: str | Path) -> Path:
    ks = sorted(report.conditions)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar([str(k) for k in ks], [_pct(report.conditions[k].overall) for k in ks], color="#8172B2")
        for i, k in enumerate(ks):
            c = report.conditions[k].overall
            ax.annotate(f"n={c.total}", (i, _pct(c)), ha="center", va="bottom", fontsize=7)
        ax.set_ylim(0, 105)
        ax.set_xlabel("specialists correct in round 0")
        ax.set_ylabel("decision correct rate (%)")
        return _save(fig, Path(path))


def plot_comparison(rows: Sequence[tuple[str, Report]], path: str | Path) -> Path:
    """Grouped bars, one group per stratum and one bar per method."""
    names = [name for name, _ in _strata(rows[0][1])]
    width = 0.8 / len(rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 3))
        for i, (label, rep) in enumerate(rows):
            xs = [j + (i - (len(rows) - 1) / 2) * width for j in range(len(names))]
            ax.bar(xs, [_pct(c) for _, c in _strata(rep)], width=width, label=label)
        ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
        ax.set_ylim(0, 105)
        ax.set_ylabel("success rate (%)")
        ax.legend(frameon=False, fontsize=7, ncol=len(rows))
        return _save(fig, Path(path))
