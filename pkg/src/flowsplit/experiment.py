"""Experiment configuration and seed-matched policy comparisons.

A run builds one workload from ``(config, seed)`` and replays it under the
treatment policy (the splitter) and the baseline (ECMP), so both see the
same flows at the same instants and only the routing differs.
"""

from __future__ import annotations

import dataclasses
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics, netsim, splitter as sp, workload as wl
from .metrics import RunReport
from .netsim import RoutingPolicy
from .workload import NS_PER_S, FlowKind

SWEEP_AXES = ("threshold", "utilization", "flow_rate")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` points into the source file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class ExperimentConfig:
    threshold: int = 40
    treatment: str = "splitter"
    baseline: str = "ecmp-packet"
    capacity_bps: int = 1_000_000_000
    prop_delay_us: int = 1000
    flow_rate: float = 100.0
    mix: List[List[float]] = field(default_factory=lambda: [list(c) for c in wl.DEFAULT_MIX])
    burst_size: int = 4000
    burst_gap_us: int = 480_000
    host_rate_bps: Optional[int] = None
    packet_size: int = 1500
    utilization: float = 0.4
    background_streams: int = 4
    background_mode: str = "splitter"
    horizon_s: float = 120.0
    warmup_s: float = 5.0
    seed: int = 0
    idle_timeout_s: float = 30.0
    evict_period_s: float = 1.0
    short_mark: int = sp.SHORT_MARK
    long_mark: int = sp.LONG_MARK
    splitter_delay_ns: int = 0
    short_cutoff: Optional[int] = None
    hist_bin_us: float = 50.0
    engine: str = "batch"
    thresholds: List[int] = field(default_factory=lambda: [1, 8, 16, 40])
    utilizations: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    flow_rates: List[float] = field(default_factory=lambda: [25.0, 50.0, 100.0])
    out_dir: str = "out"
    trace: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            v = getattr(self, f.name)
            if default is None:
                if v is None or isinstance(v, (int, float)) and not isinstance(v, bool):
                    continue
                raise ConfigError(f"{f.name}: expected a number or null")
            want = type(default)
            ok = isinstance(v, want) and not (isinstance(v, bool) and want is not bool)
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                ok = True
            if not ok:
                raise ConfigError(f"{f.name}: expected {want.__name__}, got {type(v).__name__}")

        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.threshold >= 1, "threshold", "must be >= 1")
        for key in ("treatment", "baseline"):
            v = getattr(self, key)
            need(v in {p.value for p in RoutingPolicy}, key, f"unknown policy {v!r}")
        need(self.capacity_bps > 0, "capacity_bps", "must be positive")
        need(self.prop_delay_us >= 0, "prop_delay_us", "must be >= 0")
        need(self.flow_rate > 0, "flow_rate", "must be positive")
        need(len(self.mix) > 0, "mix", "must not be empty")
        for c in self.mix:
            need(len(c) == 2 and c[0] >= 1 and c[1] > 0, "mix", f"bad category {c!r}")
        need(self.burst_size >= 1, "burst_size", "must be >= 1")
        need(self.burst_gap_us >= 0, "burst_gap_us", "must be >= 0")
        need(self.host_rate_bps is None or self.host_rate_bps > 0, "host_rate_bps",
             "must be positive")
        need(netsim.MIN_PACKET <= self.packet_size <= netsim.MTU, "packet_size",
             f"must be in [{netsim.MIN_PACKET}, {netsim.MTU}]")
        need(0.0 <= self.utilization <= 1.0, "utilization", "must be in [0, 1]")
        need(self.background_streams >= 1, "background_streams", "must be >= 1")
        need(self.background_mode in ("splitter", "bypass"), "background_mode",
             "must be 'splitter' or 'bypass'")
        need(self.horizon_s > 0, "horizon_s", "must be positive")
        need(0 <= self.warmup_s < self.horizon_s, "warmup_s", "must be in [0, horizon_s)")
        need(self.idle_timeout_s > 0, "idle_timeout_s", "must be positive")
        need(0 <= self.short_mark <= 255 and 0 <= self.long_mark <= 255
             and self.short_mark != self.long_mark, "short_mark", "marks must be distinct bytes")
        need(self.splitter_delay_ns >= 0, "splitter_delay_ns", "must be >= 0")
        need(self.short_cutoff is None or self.short_cutoff >= 1, "short_cutoff", "must be >= 1")
        need(self.hist_bin_us > 0, "hist_bin_us", "must be positive")
        need(self.engine in ("batch", "event"), "engine", "must be 'batch' or 'event'")

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, exc.lineno) from None
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object", 1)
        try:
            return cls.from_dict(data)
        except (ConfigError, TypeError) as exc:
            raise ConfigError(str(exc), _line_of(text, exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- derived quantities ----------------------------------------------

    @property
    def horizon(self) -> int:
        return int(round(self.horizon_s * NS_PER_S))

    @property
    def warmup(self) -> int:
        return int(round(self.warmup_s * NS_PER_S))

    @property
    def packet_gap(self) -> int:
        """Spacing of packets inside a burst (ns); no host rate means instantaneous bursts."""
        if self.host_rate_bps is None:
            return 0
        return int(netsim.serialization_ns(self.packet_size, self.host_rate_bps))

    @property
    def cutoff(self) -> int:
        return self.short_cutoff if self.short_cutoff is not None else self.threshold


def _line_of(text: str, exc: Exception) -> Optional[int]:
    """Best-effort line of the key named in ``exc``'s message."""
    msg = str(exc)
    keys = re.findall(r"([a-z_]+)", msg)
    for key in keys:
        m = re.search(rf'"{key}"\s*:', text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return None


def fast_preset(config: ExperimentConfig) -> ExperimentConfig:
    """Desk-scale variant: tunnels, bursts and bulk transfers shrunk 10x."""
    mix = [[n if n < 1000 else max(1, n // 10), w] for n, w in config.mix]
    return config.replace(capacity_bps=config.capacity_bps // 10,
                          burst_size=max(1, config.burst_size // 10), mix=mix)


# -- workload construction ---------------------------------------------------


def build_workload(config: ExperimentConfig, seed: Optional[int] = None) -> wl.Workload:
    seed = config.seed if seed is None else seed
    arrivals, sizes, background = (np.random.default_rng(s)
                                   for s in np.random.SeedSequence(seed).spawn(3))
    horizon = config.horizon
    starts = wl.sample_flow_arrivals(config.flow_rate, horizon, arrivals)
    flows = wl.sample_queries(wl.QueryMix(config.mix), starts, sizes, wl.TupleAllocator(),
                              packet_size_bytes=config.packet_size,
                              burst_size=config.burst_size,
                              burst_gap=config.burst_gap_us * 1000,
                              packet_gap=config.packet_gap)
    load = wl.BackgroundLoad(config.utilization, capacity_bps=2 * config.capacity_bps,
                             n_streams=config.background_streams)
    bg_flows, bg_times, bg_stream = wl.background_stream(load, horizon, background,
                                                         first_id=len(flows))
    return wl.assemble(flows + bg_flows, bg_times, bg_stream, n_app=len(flows), horizon=horizon)


def _bypass(config: ExperimentConfig, w: wl.Workload) -> Dict[int, int]:
    if config.background_mode != "bypass":
        return {}
    bg = [f.flow_id for f in w.flows if f.kind == FlowKind.BACKGROUND]
    return {fid: i % netsim.N_TUNNELS for i, fid in enumerate(bg)}


def simulate(config: ExperimentConfig, w: wl.Workload, policy: RoutingPolicy,
             record_all: bool = False) -> netsim.SimResult:
    kw = dict(
        threshold=config.threshold, capacity_bps=config.capacity_bps,
        prop_delay=config.prop_delay_us * 1000,
        short_mark=config.short_mark, long_mark=config.long_mark,
        idle_timeout_us=int(config.idle_timeout_s * 1_000_000),
        evict_period_us=int(config.evict_period_s * 1_000_000),
        splitter_delay=config.splitter_delay_ns, bypass=_bypass(config, w),
    )
    if config.engine == "event":
        return _simulate_events(config, w, policy, kw)
    record = None
    if not record_all:
        record = np.array([f.kind == FlowKind.APP for f in w.flows], dtype=bool)
    return netsim.simulate(w, policy, config.horizon, record=record, **kw)


def _simulate_events(config, w: wl.Workload, policy: RoutingPolicy, kw) -> netsim.SimResult:
    sim = netsim.Simulator(policy, **kw)
    headers = [sp.build_header(f.tuple, tos=config.short_mark,
                               total_length=f.packet_size_bytes) for f in w.flows]
    for t, fid, seq in zip(w.t_created.tolist(), w.flow.tolist(), w.seq.tolist()):
        f = w.flows[fid]
        sim.inject_packet(netsim.Packet(fid, f.tuple, f.packet_size_bytes, seq, headers[fid]), t)
    sim.run_until(config.horizon)
    trace = sim.trace()
    long_on_short = int(np.count_nonzero((trace.tunnel == 0) & (trace.tos == config.long_mark)))
    return netsim.SimResult(
        trace, injected=sim.injected, delivered=len(sim.delivered),
        tunnel_pkts=[t.pkts_sent for t in sim.tunnels],
        tunnel_bytes=[t.bytes_sent for t in sim.tunnels],
        max_depth=[t.max_depth for t in sim.tunnels],
        route_anomalies=sim.router.anomalies, splitter_anomalies=sim.splitter_anomalies,
        long_pkts_on_short_tunnel=long_on_short)


def report(config: ExperimentConfig, w: wl.Workload, policy: RoutingPolicy,
           result: netsim.SimResult, seed: int) -> RunReport:
    fr = metrics.compute_fct(result.trace, w.flows, config.warmup, long_mark=config.long_mark)
    app = [s for s in fr.stats if s.kind == FlowKind.APP]
    fct, jit, hists = metrics.summarise(app, config.cutoff, config.hist_bin_us)
    agg, app_pps = w.offered_pps(config.horizon)
    return RunReport(
        config=config.to_dict(), policy=policy.value, seed=seed, short_cutoff=config.cutoff,
        fct=fct, jitter=jit, histograms=hists,
        max_queue_depth=list(result.max_depth), tunnel_pkts=list(result.tunnel_pkts),
        anomalies={"route": result.route_anomalies, "splitter": result.splitter_anomalies,
                   "long_on_short_tunnel": result.long_pkts_on_short_tunnel},
        flows={"measured": len(app), "incomplete": fr.incomplete,
               "before_warmup": fr.before_warmup, "app_total": w.n_app},
        pps={"aggregate": agg, "app": app_pps},
        trace_sha256=result.trace.digest(),
    )


@dataclass
class PairResult:
    treatment: RunReport
    baseline: RunReport
    seed: int

    def speedup(self, selector: str = "short", stat: str = "mean") -> float:
        return metrics.speedup(self.baseline, self.treatment, selector, stat)

    def long_ratio(self) -> float:
        """Treatment over baseline mean long-flow FCT."""
        return 1.0 / self.speedup("long")

    def summary(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"seed": self.seed}
        for sel in metrics.SELECTORS:
            for stat in ("mean", "p99"):
                try:
                    out[f"speedup_{sel}_{stat}"] = round(self.speedup(sel, stat), 6)
                except metrics.SpeedupUndefined:
                    out[f"speedup_{sel}_{stat}"] = None
        out["jitter_delta_short"] = {k: None if v is None else round(v, 6) for k, v in
                                     metrics.jitter_delta(self.baseline, self.treatment).items()}
        out["pps"] = self.treatment.pps
        return out


def run_pair(config: ExperimentConfig, seed: Optional[int] = None,
             traces: Optional[Dict[str, netsim.Trace]] = None) -> PairResult:
    """Seed-matched treatment/baseline runs on one shared workload."""
    seed = config.seed if seed is None else seed
    w = build_workload(config, seed)
    reports = {}
    for role in ("treatment", "baseline"):
        policy = RoutingPolicy(getattr(config, role))
        res = simulate(config, w, policy)
        reports[role] = report(config, w, policy, res, seed)
        if traces is not None:
            traces[role] = res.trace
        del res
    return PairResult(reports["treatment"], reports["baseline"], seed)


def run_experiment(config: ExperimentConfig, out_dir=None) -> PairResult:
    """Run one seed-matched pair and write reports (and traces) to ``out_dir``."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces: Dict[str, netsim.Trace] = {}
    pair = run_pair(config, traces=traces)
    for role, rep in (("treatment", pair.treatment), ("baseline", pair.baseline)):
        (out / f"report_{role}.json").write_text(rep.to_json())
        (out / f"report_{role}.txt").write_text(rep.to_text())
        if config.trace:
            traces[role].to_csv(out / f"trace_{role}.csv")
        hist = rep.histograms.get("fct")
        if hist:
            edges = np.array(hist["bin_start"] + [hist["bin_start"][-1] + hist["bin_width"]])
            metrics.write_histogram_csv(edges, np.array(hist["density"]),
                                        out / f"hist_fct_short_{role}.csv")
    summary = {"treatment": pair.treatment.as_dict(), "baseline": pair.baseline.as_dict(),
               "speedup": pair.summary()}
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return pair


# -- sweeps ----------------------------------------------------------------------


@dataclass
class SweepRow:
    value: float
    speedup: Optional[float]
    speedup_p99: Optional[float]
    jitter_mean_delta: Optional[float]
    jitter_std_delta: Optional[float]
    long_ratio: Optional[float]
    aggregate_pps: float
    app_pps: float

    def as_list(self) -> list:
        return [self.value, self.speedup, self.speedup_p99, self.jitter_mean_delta,
                self.jitter_std_delta, self.long_ratio, self.aggregate_pps, self.app_pps]


SWEEP_COLUMNS = ("value", "speedup", "speedup_p99", "jitter_mean_delta", "jitter_std_delta",
                 "long_ratio", "aggregate_pps", "app_pps")


def sweep_points(config: ExperimentConfig, axis: str,
                 values: Optional[Sequence] = None) -> List[Tuple[Any, ExperimentConfig]]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if values is None:
        values = {"threshold": config.thresholds, "utilization": config.utilizations,
                  "flow_rate": config.flow_rates}[axis]
    if not values:
        raise ConfigError(f"sweep over {axis!r} has no values")
    points = []
    for v in values:
        changes = {axis: v}
        if axis == "threshold" and config.short_cutoff is None:
            # keep the measured population fixed across thresholds
            changes["short_cutoff"] = max(values)
        points.append((v, config.replace(**changes)))
    return points


def sweep(config: ExperimentConfig, axis: str, values: Optional[Sequence] = None,
          seed: Optional[int] = None) -> List[SweepRow]:
    rows = []
    for v, cfg in sweep_points(config, axis, values):
        pair = run_pair(cfg, seed)
        jd = metrics.jitter_delta(pair.baseline, pair.treatment)
        rows.append(SweepRow(v, _maybe(pair.speedup), _maybe(pair.speedup, "short", "p99"),
                             jd["mean"], jd["std"], _maybe(pair.long_ratio),
                             pair.treatment.pps["aggregate"], pair.treatment.pps["app"]))
    rows.sort(key=lambda r: r.value)
    return rows


def _maybe(fn, *args) -> Optional[float]:
    try:
        return fn(*args)
    except metrics.SpeedupUndefined:
        return None


def write_sweep_csv(rows: Sequence[SweepRow], path, axis: str) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((axis,) + SWEEP_COLUMNS[1:])
        for r in rows:
            w.writerow([_fmt(x) for x in r.as_list()])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return x


# -- splitter overhead -------------------------------------------------------------


@dataclass
class BenchResult:
    n_packets: int
    flow_cardinality: int
    mean_ns: float
    p99_ns: float
    batch: int

    def as_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def bench_splitter(n_packets: int = 1_000_000, flow_cardinality: int = 10_000,
                   threshold: int = 40, batch: int = 1000, seed: int = 0,
                   impl: str = "native") -> BenchResult:
    """Wall-clock cost per ``process_packet`` call over synthetic TCP headers.

    Calls are timed in batches of ``batch`` including the driving loop; the
    p99 is over per-batch means.
    """
    if flow_cardinality < 1:
        raise ValueError("flow_cardinality must be >= 1")
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    if impl == "native":
        table, fn = sp.FlowTable(threshold), sp.process_packet
    else:
        table, fn = sp.PyFlowTable(threshold), sp.py_process_packet
    # one source address per 60k ports; ports live outside the IP header
    hosts = [sp.build_header(sp.FiveTuple(0x0A000001 + h, 0x0A640001, 0, 443, sp.IPPROTO_TCP))
             for h in range((flow_cardinality - 1) // 60_000 + 1)]
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, flow_cardinality, size=n_packets)
    hs = [hosts[h] for h in (pick // 60_000).tolist()]
    sports = (1024 + pick % 60_000).tolist()
    clock = time.perf_counter_ns
    per_batch = []
    now = 0
    for start in range(0, n_packets, batch):
        stop = min(start + batch, n_packets)
        t0 = clock()
        for i in range(start, stop):
            fn(table, hs[i], now, sports[i], 443)
        per_batch.append((clock() - t0) / (stop - start))
        now += 1
    costs = np.array(per_batch)
    return BenchResult(n_packets, flow_cardinality, float(np.mean(costs)),
                       float(np.percentile(costs, 99)), batch)
