"""Report figures for the bench and gradient-check commands.

Figures are drawn on an Agg canvas directly, so importing this module never
touches the global pyplot backend.
"""

from collections import defaultdict

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# Software metadata would embed the matplotlib version in every PNG
_PNG_META = {"Software": None}


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)


def plot_loss_curves(curves, path):
    """``curves`` maps ``(variant, seed)`` to a per-epoch loss list."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    colors = {}
    for (variant, seed), losses in sorted(curves.items()):
        color = colors.setdefault(variant, f"C{len(colors)}")
        label = variant if seed == min(s for v, s in curves if v == variant) else None
        ax.plot(np.arange(1, len(losses) + 1), losses, color=color, alpha=0.8, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_fscores(rows, path):
    """Grouped bars of seed-mean F@1px and F@3px per variant, with per-seed dots.

    ``rows`` are dicts with keys ``variant``, ``f1px`` and ``f3px``.
    """
    per = defaultdict(lambda: {"f1px": [], "f3px": []})
    order = []
    for r in rows:
        if r["variant"] not in per:
            order.append(r["variant"])
        for key in ("f1px", "f3px"):
            if r[key] is not None:
                per[r["variant"]][key].append(r[key])
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    x = np.arange(len(order))
    for offset, key, label in ((-0.2, "f1px", "F@1px"), (0.2, "f3px", "F@3px")):
        means = [np.mean(per[v][key]) if per[v][key] else np.nan for v in order]
        ax.bar(x + offset, means, width=0.4, label=label)
        for xi, v in zip(x, order):
            ax.plot([xi + offset] * len(per[v][key]), per[v][key], "k.", ms=4)
    ax.set_xticks(x, order)
    ax.set_ylabel("boundary F-score")
    ax.legend()
    _save(fig, path)


def plot_step_sweep(sweep, path):
    """Log-log relative error against finite-difference step."""
    steps, errs = zip(*sweep)
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot()
    ax.loglog(steps, np.maximum(errs, 1e-18), "o-")
    ax.axhline(1e-6, color="grey", ls="--", lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("max relative error")
    ax.invert_xaxis()
    _save(fig, path)
