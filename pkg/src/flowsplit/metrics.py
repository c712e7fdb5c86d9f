"""Flow completion times, jitter, distribution summaries and speedups.

FCT runs from the splitter egress of a flow's first packet to the arrival of
its last packet at the destination border router.  Jitter is the absolute
difference between the one-way delays of consecutive packets of one flow.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .netsim import Trace
from .splitter import LONG, SHORT, FlowClass, LONG_MARK
from .workload import FlowKind, FlowSpec

PERCENTILES = (50, 90, 99, 99.9)
MAX_BINS = 10_000_000


class TraceIntegrityError(ValueError):
    """Packets of one flow left a tunnel out of order."""


class SpeedupUndefined(ValueError):
    pass


@dataclass
class FlowStats:
    flow_id: int
    kind: FlowKind
    n_packets: int
    fct: int
    class_at_end: FlowClass
    packet_delays: np.ndarray
    t_first: int = 0

    @property
    def fct_us(self) -> float:
        return self.fct / 1e3


@dataclass
class JitterSample:
    flow_id: int
    values: np.ndarray


@dataclass
class FctResult:
    stats: List[FlowStats]
    incomplete: int = 0
    before_warmup: int = 0


def check_fifo(trace: Trace) -> None:
    """Within one flow and one tunnel, sequence numbers must rise in delivery order."""
    if len(trace) < 2:
        return
    order = np.lexsort((np.arange(len(trace)), trace.tunnel, trace.flow))
    f, tun, s = trace.flow[order], trace.tunnel[order], trace.seq[order]
    same = (f[1:] == f[:-1]) & (tun[1:] == tun[:-1])
    bad = same & (s[1:] <= s[:-1])
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise TraceIntegrityError(
            f"flow {int(f[i])} tunnel {int(tun[i])}: seq {int(s[i + 1])} after {int(s[i])}")


def compute_fct(trace: Trace, flows: Sequence[FlowSpec], warmup: int = 0, *,
                long_mark: int = LONG_MARK) -> FctResult:
    """One :class:`FlowStats` per fully delivered flow starting at/after ``warmup`` ns."""
    check_fifo(trace)
    out = FctResult([])
    if len(trace) == 0:
        return out
    order = np.lexsort((trace.seq, trace.flow))
    f = trace.flow[order]
    cuts = np.flatnonzero(np.diff(f)) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [len(f)]))
    egress = trace.t_egress[order]
    dest = trace.t_dest[order]
    tos = trace.tos[order]
    delays = dest - egress
    for a, b in zip(starts.tolist(), ends.tolist()):
        spec = flows[int(f[a])]
        if b - a != spec.n_packets:
            out.incomplete += 1
            continue
        first = int(egress[a])
        if first < warmup:
            out.before_warmup += 1
            continue
        fct = int(dest[a:b].max()) - first
        cls = LONG if tos[b - 1] == long_mark else SHORT
        out.stats.append(FlowStats(spec.flow_id, spec.kind, spec.n_packets, fct, cls,
                                   delays[a:b].copy(), first))
    return out


def warmup_filter(stats: Sequence[FlowStats], warmup: int) -> List[FlowStats]:
    return [s for s in stats if s.t_first >= warmup]


def compute_jitter(stats: FlowStats) -> JitterSample:
    return JitterSample(stats.flow_id, np.abs(np.diff(stats.packet_delays)))


@dataclass
class Summary:
    count: int
    mean: float
    std: float
    p50: float
    p90: float
    p99: float
    p999: float

    @classmethod
    def of(cls, values_us: np.ndarray) -> "Summary":
        v = np.asarray(values_us, dtype=float)
        if len(v) == 0:
            nan = float("nan")
            return cls(0, nan, nan, nan, nan, nan, nan)
        p = np.percentile(v, PERCENTILES)
        return cls(len(v), float(v.mean()), float(v.std()), *map(float, p))

    def as_dict(self) -> Dict[str, Any]:
        return {k: _clean(v) for k, v in self.__dict__.items()}


def _clean(v):
    if isinstance(v, float):
        if v != v:
            return None
        return round(v, 6)
    return v


def histogram(samples, bin_width: float) -> Tuple[np.ndarray, np.ndarray]:
    """Equal-width bins aligned to multiples of ``bin_width``; densities integrate to 1."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("cannot build a histogram of no samples")
    lo = np.floor(x.min() / bin_width) * bin_width
    nbins = int(np.floor((x.max() - lo) / bin_width)) + 1
    if nbins > MAX_BINS:
        raise ValueError(f"{nbins} bins requested; widen bin_width")
    edges = lo + bin_width * np.arange(nbins + 1)
    idx = np.clip(((x - lo) // bin_width).astype(np.int64), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return edges, counts / (x.size * bin_width)


def write_histogram_csv(edges: np.ndarray, density: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_start", "bin_end", "density"])
        for a, b, d in zip(edges[:-1], edges[1:], density):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(d))])


SELECTORS = ("short", "long", "all")


@dataclass
class RunReport:
    config: Dict[str, Any]
    policy: str
    seed: int
    short_cutoff: int
    fct: Dict[str, Summary] = field(default_factory=dict)
    jitter: Dict[str, Summary] = field(default_factory=dict)
    histograms: Dict[str, Dict[str, list]] = field(default_factory=dict)
    max_queue_depth: List[int] = field(default_factory=list)
    tunnel_pkts: List[int] = field(default_factory=list)
    anomalies: Dict[str, int] = field(default_factory=dict)
    flows: Dict[str, int] = field(default_factory=dict)
    pps: Dict[str, float] = field(default_factory=dict)
    trace_sha256: str = ""

    def as_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "policy": self.policy,
            "seed": self.seed,
            "short_cutoff": self.short_cutoff,
            "fct_us": {k: v.as_dict() for k, v in self.fct.items()},
            "jitter_us": {k: v.as_dict() for k, v in self.jitter.items()},
            "histograms": self.histograms,
            "max_queue_depth": self.max_queue_depth,
            "tunnel_pkts": self.tunnel_pkts,
            "anomalies": self.anomalies,
            "flows": self.flows,
            "pps": {k: _clean(v) for k, v in self.pps.items()},
            "trace_sha256": self.trace_sha256,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"policy {self.policy}  seed {self.seed}  short = n_packets < {self.short_cutoff}",
                 f"{'metric':<14}{'count':>8}{'mean':>12}{'std':>12}{'p50':>12}"
                 f"{'p90':>12}{'p99':>12}{'p99.9':>12}"]
        for name, table in (("fct", self.fct), ("jitter", self.jitter)):
            for sel in SELECTORS:
                s = table.get(sel)
                if s is None:
                    continue
                lines.append(f"{name + '/' + sel:<14}{s.count:>8}" + "".join(
                    f"{x:>12.1f}" for x in (s.mean, s.std, s.p50, s.p90, s.p99, s.p999)))
        lines.append(f"max queue depth {self.max_queue_depth}  tunnel pkts {self.tunnel_pkts}")
        lines.append("pps " + "  ".join(f"{k}={v:.0f}" for k, v in sorted(self.pps.items())))
        return "\n".join(lines) + "\n"


def summarise(stats: Sequence[FlowStats], short_cutoff: int,
              hist_bin_us: float = 50.0) -> Tuple[Dict[str, Summary], Dict[str, Summary],
                                                  Dict[str, Dict[str, list]]]:
    """Per-class FCT and jitter summaries (µs) plus short-flow histograms."""
    groups = {
        "short": [s for s in stats if s.n_packets < short_cutoff],
        "long": [s for s in stats if s.n_packets >= short_cutoff],
        "all": list(stats),
    }
    fct, jit, hists = {}, {}, {}
    for sel, members in groups.items():
        f = np.array([s.fct for s in members], dtype=float) / 1e3
        fct[sel] = Summary.of(f)
        j = [compute_jitter(s).values for s in members if s.n_packets > 1]
        jv = np.concatenate(j).astype(float) / 1e3 if j else np.zeros(0)
        jit[sel] = Summary.of(jv)
        if sel == "short":
            for name, v in (("fct", f), ("jitter", jv)):
                if len(v):
                    edges, dens = histogram(v, hist_bin_us)
                    hists[name] = {"bin_start": [float(x) for x in edges[:-1]],
                                   "bin_width": float(hist_bin_us),
                                   "density": [float(x) for x in dens]}
    return fct, jit, hists


def speedup(baseline: RunReport, treatment: RunReport, selector: str = "short",
            stat: str = "mean") -> float:
    """``stat`` of baseline FCT over ``stat`` of treatment FCT for one flow class."""
    b = baseline.fct.get(selector)
    t = treatment.fct.get(selector)
    if b is None or t is None or b.count == 0 or t.count == 0:
        raise SpeedupUndefined(f"no {selector!r} flows to compare")
    num, den = getattr(b, stat), getattr(t, stat)
    if not den > 0:
        raise SpeedupUndefined(f"treatment {stat} FCT is {den}")
    return float(num / den)


def jitter_delta(baseline: RunReport, treatment: RunReport,
                 selector: str = "short") -> Dict[str, Optional[float]]:
    """Baseline minus treatment jitter mean and std (positive = treatment better)."""
    b, t = baseline.jitter.get(selector), treatment.jitter.get(selector)
    if b is None or t is None or b.count == 0 or t.count == 0:
        return {"mean": None, "std": None}
    return {"mean": b.mean - t.mean, "std": b.std - t.std}
