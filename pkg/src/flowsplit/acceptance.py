"""Acceptance criteria as plain functions.

Each ``criterion_N`` returns a :class:`Verdict`.  Simulation runs are cached
per ``(config, seed)`` so criteria sharing a run pay for it once.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import netsim, splitter as sp
from .experiment import ExperimentConfig, PairResult, bench_splitter, run_experiment, run_pair
from .netsim import Packet, RoutingPolicy, Simulator
from .workload import FlowSpec, assemble

SEEDS = (0, 1, 2, 3, 4)
UTILIZATIONS = (0.1, 0.2, 0.3, 0.4)
THRESHOLDS = (1, 8, 16, 40)


@dataclass
class Verdict:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  [{self.number:>2}] {self.title}: {self.detail}"


_cache: Dict[Tuple[str, int], PairResult] = {}


def pair(config: ExperimentConfig, seed: int) -> PairResult:
    key = (config.to_json(), seed)
    if key not in _cache:
        _cache[key] = run_pair(config, seed)
    return _cache[key]


def clear_cache() -> None:
    _cache.clear()


def base_config() -> ExperimentConfig:
    return ExperimentConfig()


# -- splitter ----------------------------------------------------------------


def random_headers(n: int, rng: np.random.Generator) -> List[bytes]:
    """Valid 20-byte IPv4 headers with random field values."""
    out = []
    f = rng.integers(0, 2**32, size=(n, 8), dtype=np.uint64)
    for row in f.tolist():
        out.append(sp.PacketHeader(
            src_addr=row[0], dst_addr=row[1], protocol=row[2] & 0xFF, tos=row[3] & 0xFF,
            total_length=20 + row[4] % 1481, identification=row[5] & 0xFFFF,
            flags_fragment=row[6] & 0xFFFF, ttl=row[7] & 0xFF).to_bytes())
    return out


def criterion_1(n: int = 10_000, seed: int = 0) -> Verdict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    headers = random_headers(n, rng)
    new_tos = rng.integers(0, 256, size=n).tolist()
    agree = 0
    for h, tos in zip(headers, new_tos):
        out = sp.set_tos(h, tos)
        oracle = sp.ipv4_checksum(out)
        if int.from_bytes(out[10:12], "big") == oracle and out[1] == tos \
                and out[:1] + out[2:10] + out[12:] == h[:1] + h[2:10] + h[12:]:
            agree += 1
    elapsed = time.perf_counter() - t0
    ok = agree == n and elapsed < 1.0
    return Verdict(1, "checksum oracle equivalence", ok,
                   f"{agree}/{n} match full recompute in {elapsed:.3f} s (limit 1 s)")


def _flow_header(proto: int = sp.IPPROTO_TCP) -> Tuple[sp.FiveTuple, bytes]:
    t = sp.FiveTuple(0x0A000001, 0x0A000002, 40000, 443, proto)
    return t, sp.build_header(t)


def criterion_2() -> Verdict:
    problems = []
    for name, make, fn in (("native", sp.FlowTable, sp.process_packet),
                           ("python", sp.PyFlowTable, sp.py_process_packet)):
        t, h = _flow_header()
        table = make(40)
        classes = [fn(table, h, i, t.src_port, t.dst_port)[0] for i in range(100)]
        if classes != [sp.SHORT] * 39 + [sp.LONG] * 61:
            problems.append(f"{name} T=40: {classes.count(sp.SHORT)} short")
        table = make(1)
        if any(fn(table, h, i, t.src_port, t.dst_port)[0] != sp.LONG for i in range(100)):
            problems.append(f"{name} T=1: not all long")
        table = make(1)
        for proto in (sp.IPPROTO_UDP, 1, 47, 132):
            u, uh = _flow_header(proto)
            for i in range(50):
                cls, out = fn(table, uh, i, u.src_port, u.dst_port)
                if cls != sp.SHORT or out != uh:
                    problems.append(f"{name} proto {proto}: modified")
                    break
        if len(table) != 0:
            problems.append(f"{name}: non-TCP entered the table")
    detail = "39 short + 61 long at T=40, all long at T=1, non-TCP untouched"
    return Verdict(2, "threshold fidelity", not problems, "; ".join(problems) or detail)


def criterion_3() -> Verdict:
    problems = []
    timeout = 30_000_000
    for name, make, fn, evict in (
            ("native", sp.FlowTable, sp.process_packet, sp.evict_idle),
            ("python", sp.PyFlowTable, sp.py_process_packet, sp.py_evict_idle)):
        t, h = _flow_header()
        for idle, should_evict in ((timeout + 1, True), (timeout, False)):
            table = make(40, timeout)
            for i in range(45):
                fn(table, h, 0, t.src_port, t.dst_port)
            removed = evict(table, idle)
            cls, _ = fn(table, h, idle, t.src_port, t.dst_port)
            rec = table.get(t)
            if should_evict:
                ok = removed == 1 and cls == sp.SHORT and rec.pkt_count == 1
            else:
                ok = removed == 0 and cls == sp.LONG and rec.pkt_count == 46
            if not ok:
                problems.append(f"{name} idle {idle} µs: removed={removed} class={cls.name}")
    return Verdict(3, "idle eviction boundary", not problems, "; ".join(problems) or
                   "idle 30 s + 1 µs evicted then short, idle 30 s kept")


# -- network -----------------------------------------------------------------


def single_flow_fct(n: int, engine: str) -> int:
    """FCT (ns) of one back-to-back flow; per-flow hashing keeps it on one tunnel."""
    tup = sp.FiveTuple(0x0A000001, 0x0A000002, 40000, 443, sp.IPPROTO_TCP)
    flow = FlowSpec(0, tup, n, 0, burst_size=n)
    if engine == "event":
        sim = Simulator(RoutingPolicy.ECMP_PER_FLOW)
        hdr = sp.build_header(tup)
        for k in range(n):
            sim.inject_packet(Packet(0, tup, 1500, k, hdr), 0)
        sim.run_until(10**10)
        tr = sim.trace()
    else:
        w = assemble([flow])
        tr = netsim.simulate(w, RoutingPolicy.ECMP_PER_FLOW, 10**10).trace
    return int(tr.t_dest.max() - tr.t_egress.min())


def criterion_4() -> Verdict:
    got = {}
    for n in (1, 5, 100):
        for engine in ("event", "batch"):
            got[(n, engine)] = single_flow_fct(n, engine)
    bad = {k: v for k, v in got.items() if v != (k[0] * 12 + 1000) * 1000}
    detail = ", ".join(f"n={n}: {got[(n, 'batch')] / 1000:g} µs" for n in (1, 5, 100))
    return Verdict(4, "closed-form FCT", not bad, detail if not bad else f"mismatch {bad}")


# -- experiments -------------------------------------------------------------


def criterion_5(seeds: Sequence[int] = SEEDS) -> Verdict:
    cfg = base_config()
    vals, secs = [], []
    for s in seeds:
        t0 = time.perf_counter()
        vals.append(pair(cfg, s).speedup())
        secs.append(time.perf_counter() - t0)
    in_band = all(1.3 <= v <= 2.2 for v in vals)
    strong = sum(v >= 1.4 for v in vals)
    fast = max(secs) < 300
    need = min(4, len(seeds))
    ok = in_band and strong >= need and fast
    return Verdict(5, "headline speedup at rho=0.4", ok,
                   f"speedups {[round(v, 3) for v in vals]} (band [1.3, 2.2], "
                   f"{strong}/{len(vals)} >= 1.4), slowest pair {max(secs):.0f} s")


def utilization_pairs(seeds: Sequence[int] = SEEDS) -> Dict[Tuple[int, float], PairResult]:
    cfg = base_config()
    return {(s, u): pair(cfg.replace(utilization=u), s) for s in seeds for u in UTILIZATIONS}


def criterion_6(seeds: Sequence[int] = SEEDS) -> Verdict:
    runs = utilization_pairs(seeds)
    gains = [runs[(s, 0.4)].speedup() - runs[(s, 0.1)].speedup() for s in seeds]
    return Verdict(6, "speedup grows with utilization", min(gains) >= 0.15,
                   f"speedup(0.4) - speedup(0.1) per seed {[round(g, 3) for g in gains]} (need >= 0.15)")


def threshold_rows(seed: int = 0) -> Dict[int, float]:
    cfg = base_config()
    cfg = cfg.replace(flow_rate=max(cfg.flow_rates), short_cutoff=max(THRESHOLDS))
    return {t: pair(cfg.replace(threshold=t), seed).speedup() for t in THRESHOLDS}


def criterion_7(seed: int = 0) -> Verdict:
    sp_by_t = threshold_rows(seed)
    trend = sp_by_t[8] >= sp_by_t[40] - 0.1
    floor = all(v >= 1.0 for v in sp_by_t.values())
    detail = ", ".join(f"T={t}: {v:.3f}" for t, v in sp_by_t.items())
    return Verdict(7, "threshold trend", trend and floor,
                   f"{detail} (need T=8 >= T=40 - 0.1 and all >= 1.0)")


def criterion_8(seeds: Sequence[int] = SEEDS) -> Verdict:
    runs = utilization_pairs(seeds)
    worse = {"mean": [], "std": []}
    n = 0
    for (s, u), p in sorted(runs.items()):
        if u < 0.2:
            continue
        n += 1
        t, b = p.treatment.jitter["short"], p.baseline.jitter["short"]
        for stat in worse:
            if getattr(t, stat) > getattr(b, stat):
                worse[stat].append(f"s{s} rho{u}: {getattr(t, stat):.2f} > {getattr(b, stat):.2f}")
    detail = ", ".join(f"{stat} worse in {len(v)}/{n} pairs" for stat, v in worse.items())
    examples = worse["mean"][:2] + worse["std"][:2]
    if examples:
        detail += " (splitter > ECMP, µs: " + "; ".join(examples) + ")"
    return Verdict(8, "short-flow jitter not worse", not (worse["mean"] or worse["std"]), detail)


def criterion_9(seeds: Sequence[int] = SEEDS) -> Verdict:
    runs = utilization_pairs(seeds)
    ratios = {k: p.long_ratio() for k, p in runs.items()}
    worst_key = max(ratios, key=ratios.get)
    return Verdict(9, "long-flow protection", ratios[worst_key] <= 1.10,
                   f"worst splitter/ECMP long FCT {ratios[worst_key]:.3f} at seed "
                   f"{worst_key[0]} rho {worst_key[1]} (limit 1.10)")


def criterion_10(n_packets: int = 1_000_000, flows: int = 10_000) -> Verdict:
    res = bench_splitter(n_packets, flows)
    return Verdict(10, "splitter overhead", res.mean_ns < 1000,
                   f"mean {res.mean_ns:.0f} ns, p99 {res.p99_ns:.0f} ns per call "
                   f"({n_packets} calls, {flows} flows, native={sp.HAVE_NATIVE})")


def criterion_11(seed: int = 0) -> Verdict:
    cfg = base_config().replace(seed=seed)
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            run_experiment(cfg, out)
            blobs.append((out / "report.json").read_bytes())
    same = blobs[0] == blobs[1]
    return Verdict(11, "determinism", same,
                   "report.json (with trace sha256) byte-identical across two runs" if same
                   else "report.json differs between runs")


CRITERIA: Dict[int, Callable[[], Verdict]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
    11: criterion_11,
}


def run_all(only: Optional[Sequence[int]] = None,
            echo: Optional[Callable[[str], None]] = print) -> List[Verdict]:
    out = []
    for n in sorted(only or CRITERIA):
        v = CRITERIA[n]()
        if echo:
            echo(v.line())
        out.append(v)
    return out
