"""Deterministic SVG rendering of experiment reports.

Output must be byte-identical for identical reports: the SVG hash salt is
pinned and the date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SVG_RC = {
    "svg.hashsalt": "matchope",
    "svg.fonttype": "path",
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
}

METRICS = ("mse", "squared_bias", "variance", "error_rate")
LOG_METRICS = ("mse", "variance")

_COLORS = {
    "dm": "#1f77b4",
    "ips": "#ff7f0e",
    "dr": "#2ca02c",
    "dips": "#d62728",
    "dpr": "#9467bd",
    "switch_dr": "#8c564b",
    "ext_switch_dr": "#e377c2",
    "mips": "#7f7f7f",
    "ext_mips": "#bcbd22",
}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_plots(report, out_dir: str | Path) -> list[Path]:
    """One SVG per metric: a series per estimator over the sweep axis."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    estimators = sorted({row.estimator for row in report.rows})
    written = []
    with matplotlib.rc_context(_SVG_RC):
        for metric in METRICS:
            fig, ax = plt.subplots()
            for est in estimators:
                rows = sorted(
                    (r for r in report.rows if r.estimator == est),
                    key=lambda r: r.axis_value,
                )
                xs = [r.axis_value for r in rows]
                ys = [getattr(r, metric) for r in rows]
                style = "o-" if len(xs) > 1 else "o"
                ax.plot(xs, ys, style, label=est, color=_COLORS.get(est))
            if metric in LOG_METRICS:
                ax.set_yscale("log")
            ax.set_xlabel(report.axis)
            ax.set_ylabel(metric)
            ax.legend(loc="best")
            path = out_dir / f"{metric}.svg"
            _save(fig, path)
            written.append(path)
    return written


def emit_opl_plot(report, out_dir: str | Path) -> Path:
    """Relative true value per learner, with per-seed scatter."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    learners = sorted({row.learner for row in report.rows})
    path = out_dir / "relative_value.svg"
    with matplotlib.rc_context(_SVG_RC):
        fig, ax = plt.subplots()
        for i, learner in enumerate(learners):
            vals = [r.relative_value for r in report.rows if r.learner == learner]
            ax.plot([i] * len(vals), vals, "o", alpha=0.4, color="#1f77b4")
            mean = sum(vals) / len(vals)
            ax.plot([i - 0.2, i + 0.2], [mean, mean], "-", color="#d62728")
        ax.axhline(1.0, color="#7f7f7f", linestyle="--")
        ax.set_xticks(range(len(learners)))
        ax.set_xticklabels(learners)
        ax.set_ylabel("true value relative to logging policy")
        _save(fig, path)
    return path
