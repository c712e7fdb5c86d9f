"""Open-loop traffic: Poisson application queries plus Poisson background load.

Application flows are paced as a train of bursts.  Inside a burst packets are
back-to-back on the host's access link, ``packet_gap`` ns apart; bursts start
``burst_gap`` ns apart, so packet ``k`` leaves the source host at
``start + (k // burst_size) * burst_gap + (k % burst_size) * packet_gap``.
Background traffic is a Poisson stream of 1472 B messages (1500 B on the
wire) spread over a few long-lived TCP streams.

All times are integer nanoseconds.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .splitter import IPPROTO_TCP, FiveTuple

NS_PER_S = 1_000_000_000

UDP_IP_OVERHEAD = 28
BACKGROUND_MESSAGE = 1472

DEFAULT_MIX = ((5, 0.989), (40, 0.01), (60_000, 0.0007), (120_000, 0.0003))


class FlowKind(enum.IntEnum):
    APP = 0
    BACKGROUND = 1


@dataclass
class FlowSpec:
    flow_id: int
    tuple: FiveTuple
    n_packets: int
    start_time: int
    kind: FlowKind = FlowKind.APP
    packet_size_bytes: int = 1500
    burst_size: int = 64
    burst_gap: int = 0
    packet_gap: int = 0

    def __post_init__(self):
        if self.n_packets < 1:
            raise ValueError("a flow carries at least one packet")
        if self.burst_size < 1:
            raise ValueError("burst_size must be >= 1")
        if self.burst_gap < 0 or self.packet_gap < 0:
            raise ValueError("gaps must be >= 0")

    def packet_times(self) -> np.ndarray:
        k = np.arange(self.n_packets, dtype=np.int64)
        b, i = np.divmod(k, self.burst_size)
        return self.start_time + b * self.burst_gap + i * self.packet_gap

    @property
    def last_send(self) -> int:
        b, i = divmod(self.n_packets - 1, self.burst_size)
        return self.start_time + b * self.burst_gap + i * self.packet_gap


@dataclass
class QueryMix:
    categories: List[Tuple[int, float]] = field(default_factory=lambda: list(DEFAULT_MIX))

    def __post_init__(self):
        self.categories = [(int(n), float(w)) for n, w in self.categories]
        if not self.categories:
            raise ValueError("query mix is empty")
        for n, w in self.categories:
            if n < 1 or not w > 0:
                raise ValueError(f"bad mix category ({n}, {w})")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([n for n, _ in self.categories], dtype=np.int64)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.array([w for _, w in self.categories], dtype=float)
        return w / w.sum()

    def mean_packets(self) -> float:
        return float(self.sizes @ self.probabilities)


@dataclass
class BackgroundLoad:
    utilization: float
    capacity_bps: float = 2e9
    message_size: int = BACKGROUND_MESSAGE
    n_streams: int = 4

    def __post_init__(self):
        if not 0.0 <= self.utilization <= 1.0:
            raise ValueError(f"utilization must be in [0, 1], got {self.utilization}")
        if self.n_streams < 1:
            raise ValueError("need at least one background stream")

    @property
    def wire_bytes(self) -> int:
        return self.message_size + UDP_IP_OVERHEAD

    @property
    def packet_rate(self) -> float:
        """Mean messages per second."""
        return self.utilization * self.capacity_bps / (self.wire_bytes * 8)


class TupleAllocator:
    """Hands out fresh, deterministic 5-tuples from an ephemeral-port counter."""

    def __init__(self, base_addr: int = 0x0A000000, server_addr: int = 0x0A640001,
                 server_port: int = 443, protocol: int = IPPROTO_TCP):
        self.base_addr = base_addr
        self.server_addr = server_addr
        self.server_port = server_port
        self.protocol = protocol
        self._n = 0

    def __iter__(self) -> Iterator[FiveTuple]:
        return self

    def __next__(self) -> FiveTuple:
        host, port = divmod(self._n, 64_512)
        self._n += 1
        return FiveTuple(self.base_addr + 1 + host, self.server_addr, 1024 + port,
                         self.server_port, self.protocol)


def sample_flow_arrivals(rate: float, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Poisson arrival instants in ``[0, horizon)`` ns for ``rate`` flows/s."""
    if not rate > 0:
        raise ValueError(f"arrival rate must be positive, got {rate}")
    if horizon <= 0:
        return np.zeros(0, dtype=np.int64)
    mean_gap = NS_PER_S / rate
    expected = rate * horizon / NS_PER_S
    chunk = int(expected + 6 * np.sqrt(expected) + 16)
    times = []
    t = 0.0
    while True:
        gaps = rng.exponential(mean_gap, size=chunk)
        cum = t + np.cumsum(gaps)
        times.append(cum)
        t = cum[-1]
        if t >= horizon:
            break
    arr = np.concatenate(times)
    arr = arr[arr < horizon]
    return np.floor(arr).astype(np.int64)


def sample_query(mix: QueryMix, rng: np.random.Generator, tuples: TupleAllocator,
                 flow_id: int = 0, start_time: int = 0, **pacing) -> FlowSpec:
    n = int(rng.choice(mix.sizes, p=mix.probabilities))
    return FlowSpec(flow_id, next(tuples), n, start_time, **pacing)


def sample_queries(mix: QueryMix, starts: np.ndarray, rng: np.random.Generator,
                   tuples: TupleAllocator, first_id: int = 0, **pacing) -> List[FlowSpec]:
    """Vectorised :func:`sample_query` for a whole arrival vector."""
    sizes = rng.choice(mix.sizes, size=len(starts), p=mix.probabilities)
    return [FlowSpec(first_id + i, next(tuples), int(n), int(t), **pacing)
            for i, (n, t) in enumerate(zip(sizes, starts))]


def background_stream(load: BackgroundLoad, horizon: int, rng: np.random.Generator,
                      first_id: int = 0) -> Tuple[List[FlowSpec], np.ndarray, np.ndarray]:
    """Poisson background messages grouped into ``load.n_streams`` TCP flows.

    Returns ``(flows, times, stream)`` where ``stream[i]`` is the index into
    ``flows`` that message ``i`` belongs to.
    """
    if load.utilization == 0 or horizon <= 0:
        return [], np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int32)
    times = sample_flow_arrivals(load.packet_rate, horizon, rng)
    stream = rng.integers(0, load.n_streams, size=len(times), dtype=np.int32)
    flows = []
    for s in range(load.n_streams):
        n = int(np.count_nonzero(stream == s))
        if n == 0:
            continue
        tup = FiveTuple(0x0AC80001 + s, 0x0AC90001 + s, 5000 + s, 5000 + s, IPPROTO_TCP)
        first = int(times[stream == s][0])
        flows.append(FlowSpec(first_id + len(flows), tup, n, first, FlowKind.BACKGROUND,
                              packet_size_bytes=load.wire_bytes, burst_size=1))
    # renumber streams densely in case one came out empty
    present = np.unique(stream)
    remap = np.full(load.n_streams, -1, dtype=np.int32)
    remap[present] = np.arange(len(present), dtype=np.int32)
    return flows, times, remap[stream]


@dataclass
class Workload:
    """Flows plus their packets in injection order."""

    flows: List[FlowSpec]
    t_created: np.ndarray
    flow: np.ndarray
    seq: np.ndarray
    size: np.ndarray

    def __len__(self) -> int:
        return len(self.t_created)

    @property
    def n_app(self) -> int:
        return sum(1 for f in self.flows if f.kind == FlowKind.APP)

    def offered_pps(self, horizon: int) -> Tuple[float, float]:
        """(aggregate pps, application-only pps) over the horizon."""
        secs = horizon / NS_PER_S
        kinds = np.array([f.kind for f in self.flows], dtype=np.int8)
        app = int(np.count_nonzero(kinds[self.flow] == FlowKind.APP)) if len(self) else 0
        return len(self) / secs, app / secs


def assemble(flows: Sequence[FlowSpec], bg_times: np.ndarray | None = None,
             bg_stream: np.ndarray | None = None, n_app: int | None = None,
             horizon: int | None = None) -> Workload:
    """Lay out every packet; packets sent at or after ``horizon`` are dropped.

    Application flows are laid out first, then background messages, which
    fixes the injection order used to break timestamp ties.
    """
    flows = list(flows)
    n_app = len(flows) if n_app is None else n_app
    parts_t, parts_f, parts_s, parts_z = [], [], [], []
    for idx, f in enumerate(flows[:n_app]):
        t = f.packet_times()
        parts_t.append(t)
        parts_f.append(np.full(f.n_packets, idx, dtype=np.int32))
        parts_s.append(np.arange(f.n_packets, dtype=np.int32))
        parts_z.append(np.full(f.n_packets, f.packet_size_bytes, dtype=np.int32))
    if bg_times is not None and len(bg_times):
        fidx = (n_app + bg_stream).astype(np.int32)
        seq = np.zeros(len(bg_times), dtype=np.int32)
        for s in range(len(flows) - n_app):
            m = bg_stream == s
            seq[m] = np.arange(int(np.count_nonzero(m)), dtype=np.int32)
        sizes = np.array([f.packet_size_bytes for f in flows], dtype=np.int32)
        parts_t.append(bg_times)
        parts_f.append(fidx)
        parts_s.append(seq)
        parts_z.append(sizes[fidx])
    if parts_t:
        t = np.concatenate(parts_t).astype(np.int64)
        fl = np.concatenate(parts_f)
        sq = np.concatenate(parts_s)
        sz = np.concatenate(parts_z)
    else:
        t = np.zeros(0, np.int64)
        fl = sq = sz = np.zeros(0, np.int32)
    if horizon is not None:
        keep = t < horizon
        if not keep.all():
            t, fl, sq, sz = t[keep], fl[keep], sq[keep], sz[keep]
    return Workload(flows, t, fl, sq, sz)


def dump_workload(flows: Sequence[FlowSpec], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow_id", "kind", "src_addr", "dst_addr", "src_port", "dst_port",
                    "protocol", "n_packets", "packet_size_bytes", "start_time_ns",
                    "burst_size", "burst_gap_ns", "packet_gap_ns"])
        for f in flows:
            w.writerow([f.flow_id, f.kind.name.lower(), *f.tuple, f.n_packets,
                        f.packet_size_bytes, f.start_time, f.burst_size, f.burst_gap,
                        f.packet_gap])
