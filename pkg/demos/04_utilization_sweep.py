"""Speedup across background load, written to demos/out/ as CSV and SVG.

Uses the 10x scaled-down preset so it finishes in a few seconds.
"""

from pathlib import Path

from flowsplit import experiment as ex, plots

out = Path(__file__).parent / "out"
cfg = ex.fast_preset(ex.ExperimentConfig())
rows = ex.sweep(cfg, "utilization")
for r in rows:
    print(f"rho={r.value:.1f}  speedup={r.speedup:.2f}  long ratio={r.long_ratio:.3f}  "
          f"pps={r.aggregate_pps:.0f}")
out.mkdir(exist_ok=True)
ex.write_sweep_csv(rows, out / "sweep.csv", "utilization")
print("wrote", plots.emit_plots({"utilization": rows}, out))
