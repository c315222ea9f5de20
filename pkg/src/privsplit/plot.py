"""Accuracy-versus-privacy plot from ``curve.csv``."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import read_csv  # noqa: E402

_STYLE = {"advanced": "-", "noisy_reduced_simple": "--"}


def plot_curves(curve_csv, out_svg=None) -> Path:
    rows = read_csv(curve_csv)
    if not rows:
        raise ValueError(f"{curve_csv}: no curve rows")
    series = defaultdict(list)
    for r in rows:
        series[(r["variant"], int(r["split"]))].append(
            (float(r["sigma"]), 100 * float(r["privacy_total"]), 100 * float(r["ct1_accuracy"])))
    fig, ax = plt.subplots(figsize=(5, 4))
    for (variant, split), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[1] for p in pts], [p[2] for p in pts], _STYLE.get(variant, ":"),
                marker="o", ms=3, label=f"{variant} (split {split})")
    ax.set_xlabel("identity privacy (%)")
    ax.set_ylabel("approved-task accuracy (%)")
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize="small")
    fig.tight_layout()
    out = Path(out_svg) if out_svg else Path(curve_csv).with_suffix(".svg")
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out
