"""Deterministic SVG charts for sweeps and short-flow histograms."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (6.4, 4.0)

_RC = {"svg.hashsalt": "flowsplit", "svg.fonttype": "path", "path.simplify": False}


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence, axis: str, path) -> Path:
    """Speedup against the swept value with a speedup = 1 reference line."""
    if not rows:
        raise ValueError("cannot plot an empty sweep table")
    x = [r.value for r in rows]
    nan = float("nan")
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ax.plot(x, [nan if r.speedup is None else r.speedup for r in rows], marker="o",
                label="mean FCT speedup")
        ax.plot(x, [nan if r.speedup_p99 is None else r.speedup_p99 for r in rows],
                marker="s", linestyle="--", label="p99 FCT speedup")
        ax.axhline(1.0, color="grey", linewidth=1, label="speedup = 1")
        ax.set_xlabel(axis)
        ax.set_ylabel("ECMP FCT / splitter FCT (short flows)")
        ax.legend(loc="best")
        ax.grid(True, alpha=0.3)
    return _save(fig, Path(path))


def plot_histograms(hists: Dict[str, Dict[str, list]], title: str, path) -> Path:
    """Overlaid step PDFs, one per label (e.g. splitter vs ECMP)."""
    if not hists:
        raise ValueError("no histograms to plot")
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for label in sorted(hists):
            h = hists[label]
            if not h["density"]:
                continue
            w = h["bin_width"]
            xs = list(h["bin_start"]) + [h["bin_start"][-1] + w]
            ys = list(h["density"]) + [h["density"][-1]]
            ax.step(xs, ys, where="post", label=label)
        ax.set_xlabel(f"{title} (µs)")
        ax.set_ylabel("density")
        ax.legend(loc="best")
        ax.grid(True, alpha=0.3)
    return _save(fig, Path(path))


def emit_plots(tables: Dict[str, Sequence], out_dir) -> List[Path]:
    """Write ``sweep_<axis>.svg`` for every non-empty sweep table.

    Raises before touching the disk if any table is empty.
    """
    if not tables or any(len(rows) == 0 for rows in tables.values()):
        raise ValueError("every table must have at least one row")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [plot_sweep(rows, axis, out / f"sweep_{axis}.svg") for axis, rows in sorted(tables.items())]
