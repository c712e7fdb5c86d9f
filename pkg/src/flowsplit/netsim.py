"""Two-tunnel store-and-forward network between a pair of border routers.

The source border router runs the splitter, picks a tunnel according to the
routing policy and hands the packet to that tunnel's FIFO.  A tunnel
serialises one packet at a time at ``capacity_bps`` and adds a fixed
propagation delay; queues are unbounded.

Two engines share these semantics:

* :class:`Simulator` is a classic event loop (heap of ``(time, seq, event)``)
  that pushes every packet through the real :func:`~flowsplit.splitter.process_packet`.
* :func:`simulate` is a vectorised engine for full-length runs.  It uses the
  FIFO recursion ``depart_i = max(arrive_i, depart_{i-1}) + service_i`` in its
  closed ``cumsum``/``cummax`` form and :func:`~flowsplit.splitter.classify_batch`
  for the splitter.  The test-suite checks both engines produce identical traces.

All simulator times are integer nanoseconds; the splitter sees microseconds.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import heapq
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import splitter as sp
from .splitter import FiveTuple
from .workload import FlowKind, FlowSpec, Workload

N_TUNNELS = 2
MTU = 1500
MIN_PACKET = 20
DEFAULT_CAPACITY_BPS = 1_000_000_000
DEFAULT_PROP_DELAY_NS = 1_000_000

TRACE_COLUMNS = ("flow_id", "seq", "tunnel", "t_created", "t_splitter_egress",
                 "t_dest_ingress", "tos")


class SchedulingError(ValueError):
    pass


class RoutingPolicy(enum.Enum):
    SPLITTER_TOS = "splitter"
    ECMP_PER_FLOW = "ecmp-flow"
    ECMP_PER_PACKET = "ecmp-packet"


def serialization_ns(size_bytes, capacity_bps: int):
    """Transmission time, rounded up to the next nanosecond."""
    return -((-size_bytes * 8 * 1_000_000_000) // capacity_bps)


def ecmp_hash(tuple_: FiveTuple) -> int:
    return zlib.crc32(tuple_.pack())


@dataclass
class Packet:
    flow_id: int
    tuple: FiveTuple
    size_bytes: int
    seq_in_flow: int
    header: bytes
    t_created: int = 0
    t_splitter_egress: int = -1
    t_dest_ingress: int = -1
    tunnel: int = -1

    def __post_init__(self):
        if not MIN_PACKET <= self.size_bytes <= MTU:
            raise ValueError(f"packet size {self.size_bytes} outside [{MIN_PACKET}, {MTU}]")

    @property
    def tos(self) -> int:
        return self.header[1]


@dataclass
class TunnelState:
    capacity_bps: int = DEFAULT_CAPACITY_BPS
    prop_delay: int = DEFAULT_PROP_DELAY_NS
    queue: Deque[Tuple[Packet, int]] = field(default_factory=deque)
    busy_until: int = 0
    bytes_sent: int = 0
    pkts_sent: int = 0
    max_depth: int = 0


def tunnel_enqueue(tunnel: TunnelState, packet: Packet, now: int) -> int:
    """Queue ``packet`` and return (and stamp) its delivery time."""
    q = tunnel.queue
    while q and q[0][1] <= now:
        q.popleft()
    start = max(now, tunnel.busy_until)
    tunnel.busy_until = start + serialization_ns(packet.size_bytes, tunnel.capacity_bps)
    q.append((packet, tunnel.busy_until))
    if len(q) > tunnel.max_depth:
        tunnel.max_depth = len(q)
    tunnel.bytes_sent += packet.size_bytes
    tunnel.pkts_sent += 1
    packet.t_dest_ingress = tunnel.busy_until + tunnel.prop_delay
    return packet.t_dest_ingress


@dataclass
class RouterState:
    """Mutable routing state: round-robin pointer and anomaly count."""

    short_mark: int = sp.SHORT_MARK
    long_mark: int = sp.LONG_MARK
    rr_next: int = 0
    anomalies: int = 0


def route(policy: RoutingPolicy, packet: Packet, state: RouterState) -> int:
    if policy is RoutingPolicy.SPLITTER_TOS:
        tos = packet.header[1]
        if tos == state.long_mark:
            return 1
        if tos != state.short_mark:
            state.anomalies += 1
        return 0
    if policy is RoutingPolicy.ECMP_PER_PACKET:
        idx = state.rr_next
        state.rr_next = (idx + 1) % N_TUNNELS
        return idx
    return ecmp_hash(packet.tuple) % N_TUNNELS


class EventQueue:
    def __init__(self):
        self._heap: List[Tuple[int, int, Any]] = []
        self._seq = 0
        self.current_time = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, at: int, event: Any) -> int:
        if at < self.current_time:
            raise SchedulingError(f"event at {at} is before current time {self.current_time}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (at, seq, event))
        return seq

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> Tuple[int, Any]:
        at, _, event = heapq.heappop(self._heap)
        self.current_time = at
        return at, event

    def advance(self, to: int) -> None:
        if to < self.current_time:
            raise SchedulingError("time cannot go backwards")
        self.current_time = to


_ARRIVAL = 0
_DELIVERY = 1


class Simulator:
    """Event-driven reference engine.

    ``bypass`` holds flow ids whose packets skip the splitter and router and
    are pinned to a fixed tunnel (background injected straight into a tunnel).
    """

    def __init__(self, policy: RoutingPolicy = RoutingPolicy.SPLITTER_TOS, *,
                 threshold: int = sp.DEFAULT_THRESHOLD,
                 capacity_bps: int = DEFAULT_CAPACITY_BPS,
                 prop_delay: int = DEFAULT_PROP_DELAY_NS,
                 short_mark: int = sp.SHORT_MARK, long_mark: int = sp.LONG_MARK,
                 idle_timeout_us: int = sp.DEFAULT_IDLE_TIMEOUT_US,
                 evict_period_us: int = 1_000_000,
                 splitter_delay: int = 0,
                 bypass: Optional[Dict[int, int]] = None,
                 table: Any = None):
        self.policy = policy
        self.events = EventQueue()
        self.tunnels = [TunnelState(capacity_bps, prop_delay) for _ in range(N_TUNNELS)]
        self.router = RouterState(short_mark, long_mark)
        self.table = table if table is not None else sp.FlowTable(
            threshold, idle_timeout_us, short_mark, long_mark)
        self.evict_period_us = evict_period_us
        self._next_sweep_us = evict_period_us
        self.splitter_delay = splitter_delay
        self.bypass = bypass or {}
        self.injected = 0
        self.delivered: List[Packet] = []
        self.splitter_anomalies = 0

    @property
    def current_time(self) -> int:
        return self.events.current_time

    @property
    def in_flight(self) -> int:
        return self.injected - len(self.delivered)

    def inject_packet(self, packet: Packet, at: int) -> None:
        self.events.push(at, (_ARRIVAL, packet))
        packet.t_created = at
        self.injected += 1

    def _sweep(self, now_us: int) -> None:
        if self.evict_period_us <= 0:
            return
        while self._next_sweep_us <= now_us:
            sp.evict_idle(self.table, self._next_sweep_us)
            self._next_sweep_us += self.evict_period_us

    def _arrive(self, now: int, pkt: Packet) -> None:
        egress = now + self.splitter_delay
        pkt.t_splitter_egress = egress
        pinned = self.bypass.get(pkt.flow_id)
        if pinned is not None:
            idx = pinned
        else:
            if self.policy is RoutingPolicy.SPLITTER_TOS:
                now_us = now // 1000
                self._sweep(now_us)
                try:
                    _, pkt.header = sp.process_packet(self.table, pkt.header, now_us,
                                                      pkt.tuple.src_port, pkt.tuple.dst_port)
                except sp.MalformedHeader:
                    self.splitter_anomalies += 1
            idx = route(self.policy, pkt, self.router)
        pkt.tunnel = idx
        deliver = tunnel_enqueue(self.tunnels[idx], pkt, egress)
        self.events.push(deliver, (_DELIVERY, pkt))

    def run_until(self, t_end: int) -> None:
        if t_end < self.events.current_time:
            raise SchedulingError("t_end is in the past")
        ev = self.events
        while ev._heap and ev._heap[0][0] <= t_end:
            now, (kind, pkt) = ev.pop()
            if kind == _ARRIVAL:
                self._arrive(now, pkt)
            else:
                self.delivered.append(pkt)
        if self.policy is RoutingPolicy.SPLITTER_TOS:
            self._sweep(t_end // 1000)
        ev.advance(t_end)

    def trace(self) -> "Trace":
        d = self.delivered
        return Trace(
            flow=np.array([p.flow_id for p in d], dtype=np.int32),
            seq=np.array([p.seq_in_flow for p in d], dtype=np.int32),
            tunnel=np.array([p.tunnel for p in d], dtype=np.int8),
            t_created=np.array([p.t_created for p in d], dtype=np.int64),
            t_egress=np.array([p.t_splitter_egress for p in d], dtype=np.int64),
            t_dest=np.array([p.t_dest_ingress for p in d], dtype=np.int64),
            tos=np.array([p.tos for p in d], dtype=np.uint8),
        )


@dataclass
class Trace:
    """Delivered-packet records, ordered by delivery time."""

    flow: np.ndarray
    seq: np.ndarray
    tunnel: np.ndarray
    t_created: np.ndarray
    t_egress: np.ndarray
    t_dest: np.ndarray
    tos: np.ndarray

    def __len__(self) -> int:
        return len(self.flow)

    def columns(self) -> Tuple[np.ndarray, ...]:
        return (self.flow, self.seq, self.tunnel, self.t_created, self.t_egress,
                self.t_dest, self.tos)

    def select(self, mask: np.ndarray) -> "Trace":
        return Trace(*(c[mask] for c in self.columns()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for c in self.columns():
            h.update(np.ascontiguousarray(c).astype(c.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            w.writerows(zip(*(c.tolist() for c in self.columns())))


@dataclass
class SimResult:
    trace: Trace
    injected: int
    delivered: int
    tunnel_pkts: List[int]
    tunnel_bytes: List[int]
    max_depth: List[int]
    route_anomalies: int = 0
    splitter_anomalies: int = 0
    long_pkts_on_short_tunnel: int = 0

    @property
    def in_flight(self) -> int:
        return self.injected - self.delivered


def _fifo(arrive: np.ndarray, service: np.ndarray) -> np.ndarray:
    """End of transmission for a FIFO fed ``arrive`` (sorted) with ``service``."""
    if len(arrive) == 0:
        return arrive.copy()
    total = np.cumsum(service)
    before = total - service
    return total + np.maximum.accumulate(arrive - before)


def simulate(workload: Workload, policy: RoutingPolicy, horizon: int, *,
             threshold: int = sp.DEFAULT_THRESHOLD,
             capacity_bps: int = DEFAULT_CAPACITY_BPS,
             prop_delay: int = DEFAULT_PROP_DELAY_NS,
             short_mark: int = sp.SHORT_MARK, long_mark: int = sp.LONG_MARK,
             idle_timeout_us: int = sp.DEFAULT_IDLE_TIMEOUT_US,
             evict_period_us: int = 1_000_000,
             splitter_delay: int = 0,
             bypass: Optional[Dict[int, int]] = None,
             record: Optional[np.ndarray] = None) -> SimResult:
    """Vectorised run of ``workload`` up to ``horizon`` ns.

    Mirrors :class:`Simulator` fed with every packet of ``workload`` in
    injection order.  ``record`` is an optional boolean mask over flows; only
    packets of recorded flows are kept in the returned trace (the rest are
    simulated but not stored).
    """
    flows: Sequence[FlowSpec] = workload.flows
    n_flows = len(flows)
    keep = workload.t_created <= horizon
    order = np.argsort(workload.t_created, kind="stable")
    if not keep.all():
        order = order[keep[order]]
    t_created = workload.t_created[order]
    flow = workload.flow[order]
    egress = t_created + splitter_delay
    n = len(t_created)

    bypass = bypass or {}
    pinned = np.full(n_flows, -1, dtype=np.int8)
    for fid, tun in bypass.items():
        pinned[fid] = tun
    pin = pinned[flow]
    routed = pin < 0

    tos_flow = np.array([sp.SHORT_MARK for _ in flows], dtype=np.uint8)
    tos = np.full(n, short_mark, dtype=np.uint8)
    tunnel = np.zeros(n, dtype=np.int8)
    route_anomalies = 0
    if policy is RoutingPolicy.SPLITTER_TOS:
        is_tcp = np.array([f.tuple.protocol == sp.IPPROTO_TCP for f in flows], dtype=bool)
        r_idx = np.flatnonzero(routed)
        _, is_long = sp.classify_batch(flow[r_idx], t_created[r_idx] // 1000,
                                       is_tcp[flow[r_idx]], threshold,
                                       idle_timeout_us, evict_period_us)
        tcp_pkt = is_tcp[flow[r_idx]]
        marks = np.where(is_long, long_mark, short_mark).astype(np.uint8)
        tos[r_idx] = np.where(tcp_pkt, marks, tos_flow[flow[r_idx]])
        unknown = (tos[r_idx] != short_mark) & (tos[r_idx] != long_mark)
        route_anomalies = int(np.count_nonzero(unknown))
        tunnel[r_idx] = (tos[r_idx] == long_mark).astype(np.int8)
        del is_long, marks, tcp_pkt, unknown
    elif policy is RoutingPolicy.ECMP_PER_PACKET:
        tos[:] = tos_flow[flow]
        r_idx = np.flatnonzero(routed)
        tunnel[r_idx] = (np.arange(len(r_idx)) % N_TUNNELS).astype(np.int8)
    else:
        tos[:] = tos_flow[flow]
        per_flow = np.array([ecmp_hash(f.tuple) % N_TUNNELS for f in flows], dtype=np.int8)
        tunnel[:] = per_flow[flow]
    tunnel[~routed] = pin[~routed]
    tos[~routed] = tos_flow[flow[~routed]]

    sizes = np.array([f.packet_size_bytes for f in flows], dtype=np.int64)
    t_dest = np.empty(n, dtype=np.int64)
    pkts, nbytes, depth = [], [], []
    for k in range(N_TUNNELS):
        idx = np.flatnonzero(tunnel == k)
        a = egress[idx]
        size = sizes[flow[idx]]
        end = _fifo(a, serialization_ns(size, capacity_bps))
        t_dest[idx] = end + prop_delay
        d = np.arange(len(idx)) - np.searchsorted(end, a, side="right") + 1
        depth.append(int(d.max()) if len(d) else 0)
        pkts.append(len(idx))
        nbytes.append(int(size.sum()))
        del a, size, end, d, idx

    long_on_short = int(np.count_nonzero((tunnel == 0) & (tos == long_mark)))
    done = t_dest <= horizon
    if record is not None:
        sel = done & record[flow]
    else:
        sel = done
    sel_idx = np.flatnonzero(sel)
    sel_idx = sel_idx[np.argsort(t_dest[sel_idx], kind="stable")]
    trace = Trace(
        flow=flow[sel_idx], seq=workload.seq[order[sel_idx]], tunnel=tunnel[sel_idx],
        t_created=t_created[sel_idx], t_egress=egress[sel_idx], t_dest=t_dest[sel_idx],
        tos=tos[sel_idx],
    )
    return SimResult(trace, injected=n, delivered=int(np.count_nonzero(done)),
                     tunnel_pkts=pkts, tunnel_bytes=nbytes, max_depth=depth,
                     route_anomalies=route_anomalies, long_pkts_on_short_tunnel=long_on_short)
