"""One seed-matched run at 40% background load, splitter against per-packet ECMP.

Takes roughly ten seconds at full scale.
"""

import numpy as np

from flowsplit.experiment import ExperimentConfig, build_workload, run_pair

cfg = ExperimentConfig(utilization=0.4, threshold=40, seed=0)
w = build_workload(cfg)
sizes = np.array([f.n_packets for f in w.flows[: w.n_app]])
print(f"{w.n_app} app flows, {len(w)} packets, sizes:",
      {int(k): int(v) for k, v in zip(*np.unique(sizes, return_counts=True))})

pair = run_pair(cfg)
print(pair.treatment.to_text())
print(pair.baseline.to_text())
print("short-flow speedup (mean) %.2f, (p99) %.2f" % (pair.speedup(), pair.speedup("short", "p99")))
print("long-flow FCT ratio splitter/ECMP %.3f" % pair.long_ratio())
