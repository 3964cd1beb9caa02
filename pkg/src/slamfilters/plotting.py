"""Figure rendering for sweep results.

The CSV emitted by the bench harness is the canonical output; these helpers
render the same rows to a PNG alongside it for quick inspection.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import ESTIMATOR_LABELS, MetricRow
from .metrics import PERFECT

_AXIS_LABELS = {
    "inv_sigma_v2_db": r"$1/\sigma_v^2$ [dB]",
    "r2_db": r"$r^2$ [dB]",
    "p_switch": "association-error probability",
}

_STYLES = {
    "A1": dict(color="tab:blue", marker="o"),
    "A2": dict(color="tab:orange", marker="s"),
    "A3": dict(color="tab:green", marker="^"),
    "A4": dict(color="tab:red", marker="d"),
}


def render_sweep_figure(rows: list[MetricRow], out_path, title: str | None = None,
                        error_bars: bool = True) -> str:
    """One MSE-vs-sweep figure with a line per estimator; returns the path."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    variable = rows[0].sweep_variable if rows else ""
    by_estimator: dict[str, list[MetricRow]] = {}
    for row in rows:
        by_estimator.setdefault(row.estimator, []).append(row)
    for estimator, cells in by_estimator.items():
        xs = [c.sweep_value for c in cells if c.mu_db is not PERFECT]
        ys = [c.mu_db for c in cells if c.mu_db is not PERFECT]
        if not xs:
            continue
        style = _STYLES.get(estimator, {})
        label = f"{estimator} ({ESTIMATOR_LABELS.get(estimator, '?')})"
        if error_bars:
            errs = [c.sigma_db for c in cells if c.mu_db is not PERFECT]
            ax.errorbar(xs, ys, yerr=errs, capsize=3, label=label, **style)
        else:
            ax.plot(xs, ys, label=label, **style)
    ax.set_xlabel(_AXIS_LABELS.get(variable, variable))
    ax.set_ylabel(r"MSE $\hat\mu$ [dB]")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)
