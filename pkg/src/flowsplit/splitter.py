"""Per-flow packet counter that splits TCP traffic into short and long flows.

The splitter keeps one counter per unidirectional 5-tuple.  Every TCP packet
increments its flow's counter; once the counter reaches the threshold the
packet's ToS byte is rewritten to the long mark (with an incremental header
checksum update) so that policy routing can steer it onto the long tunnel.
Anything that is not TCP passes through untouched.

Headers are plain 20-byte ``bytes`` objects in network byte order, the same
view an XDP program has of the packet.  Times are integer microseconds.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Dict, NamedTuple, Tuple

import numpy as np

IPPROTO_TCP = 6
IPPROTO_UDP = 17

SHORT_MARK = 0x00
LONG_MARK = 0x08

DEFAULT_THRESHOLD = 40
DEFAULT_IDLE_TIMEOUT_US = 30_000_000

_HEADER = struct.Struct("!BBHHHBBH4s4s")


class MalformedHeader(ValueError):
    """Raised for headers the splitter refuses to classify."""


class FlowClass(enum.IntEnum):
    SHORT = 0
    LONG = 1


SHORT = FlowClass.SHORT
LONG = FlowClass.LONG


class FiveTuple(NamedTuple):
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    protocol: int

    @property
    def is_tcp(self) -> bool:
        return self.protocol == IPPROTO_TCP

    def pack(self) -> bytes:
        """13-byte wire-order encoding, used for hashing."""
        return struct.pack("!IIHHB", *self)


@dataclass
class PacketHeader:
    """Decoded view of a 20-byte IPv4 header (no options)."""

    src_addr: int
    dst_addr: int
    protocol: int = IPPROTO_TCP
    tos: int = SHORT_MARK
    total_length: int = 1500
    identification: int = 0
    flags_fragment: int = 0x4000
    ttl: int = 64
    version_ihl: int = 0x45
    header_checksum: int | None = None

    def to_bytes(self) -> bytes:
        """Encode; a missing checksum is filled in by full recomputation."""
        raw = _HEADER.pack(
            self.version_ihl, self.tos, self.total_length, self.identification,
            self.flags_fragment, self.ttl, self.protocol, 0,
            self.src_addr.to_bytes(4, "big"), self.dst_addr.to_bytes(4, "big"),
        )
        csum = self.header_checksum
        if csum is None:
            csum = ipv4_checksum(raw)
        return raw[:10] + csum.to_bytes(2, "big") + raw[12:]

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PacketHeader":
        if len(raw) != 20:
            raise MalformedHeader(f"expected 20 header bytes, got {len(raw)}")
        (vihl, tos, tlen, ident, frag, ttl, proto, csum, src, dst) = _HEADER.unpack(raw)
        return cls(
            src_addr=int.from_bytes(src, "big"), dst_addr=int.from_bytes(dst, "big"),
            protocol=proto, tos=tos, total_length=tlen, identification=ident,
            flags_fragment=frag, ttl=ttl, version_ihl=vihl, header_checksum=csum,
        )


def build_header(tuple_: FiveTuple, *, tos: int = SHORT_MARK, total_length: int = 1500,
                 identification: int = 0, ttl: int = 64) -> bytes:
    return PacketHeader(
        src_addr=tuple_.src_addr, dst_addr=tuple_.dst_addr, protocol=tuple_.protocol,
        tos=tos, total_length=total_length, identification=identification, ttl=ttl,
    ).to_bytes()


def ones_complement_sum(data: bytes) -> int:
    """Folded 16-bit one's-complement sum of big-endian words."""
    if len(data) % 2:
        data = data + b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def ipv4_checksum(header: bytes) -> int:
    """Full RFC 1071 checksum of ``header`` with its checksum field zeroed."""
    zeroed = header[:10] + b"\x00\x00" + header[12:]
    return ~ones_complement_sum(zeroed) & 0xFFFF


def checksum_ok(header: bytes) -> bool:
    return ones_complement_sum(header) == 0xFFFF


def set_tos(header: bytes, new_tos: int) -> bytes:
    """Rewrite the ToS byte, patching the checksum incrementally (RFC 1624 eq. 3)."""
    old = header[1]
    if old == new_tos:
        return header
    hi = header[0] << 8
    hc = (header[10] << 8) | header[11]
    s = (~hc & 0xFFFF) + (~(hi | old) & 0xFFFF) + (hi | new_tos)
    s = (s & 0xFFFF) + (s >> 16)
    s = (s & 0xFFFF) + (s >> 16)
    out = bytearray(header)
    out[1] = new_tos
    out[10:12] = (~s & 0xFFFF).to_bytes(2, "big")
    return bytes(out)


class FlowRecord:
    __slots__ = ("pkt_count", "last_seen")

    def __init__(self, pkt_count: int = 0, last_seen: int = 0):
        self.pkt_count = pkt_count
        self.last_seen = last_seen

    def __repr__(self) -> str:
        return f"FlowRecord(pkt_count={self.pkt_count}, last_seen={self.last_seen})"


# Only TCP flows ever enter the table, so the protocol is implied by the key.
_Key = Tuple[bytes, int, int]


def _key(tuple_: FiveTuple) -> _Key:
    addrs = tuple_.src_addr.to_bytes(4, "big") + tuple_.dst_addr.to_bytes(4, "big")
    return addrs, tuple_.src_port, tuple_.dst_port


class PyFlowTable:
    """5-tuple -> packet counter map with idle eviction (pure Python).

    Not thread-safe: one table belongs to one border router.
    """

    def __init__(self, threshold: int = DEFAULT_THRESHOLD,
                 idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
                 short_mark: int = SHORT_MARK, long_mark: int = LONG_MARK):
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        if not (0 <= short_mark <= 255 and 0 <= long_mark <= 255):
            raise ValueError("ToS marks must fit in one byte")
        if short_mark == long_mark:
            raise ValueError("short and long marks must differ")
        self.threshold = threshold
        self.idle_timeout_us = idle_timeout_us
        self.short_mark = short_mark
        self.long_mark = long_mark
        self.anomalies = 0
        self.evicted = 0
        self._entries: Dict[_Key, FlowRecord] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        self._entries.clear()

    def __contains__(self, tuple_: FiveTuple) -> bool:
        return tuple_.is_tcp and _key(tuple_) in self._entries

    def get(self, tuple_: FiveTuple) -> FlowRecord | None:
        if not tuple_.is_tcp:
            return None
        return self._entries.get(_key(tuple_))

    @property
    def entries(self) -> Dict[FiveTuple, FlowRecord]:
        """Snapshot keyed by FiveTuple (built on demand, not the live map)."""
        out = {}
        for (addrs, sport, dport), rec in self._entries.items():
            t = FiveTuple(int.from_bytes(addrs[:4], "big"), int.from_bytes(addrs[4:], "big"),
                          sport, dport, IPPROTO_TCP)
            out[t] = rec
        return out


def py_process_packet(table: PyFlowTable, header: bytes, now: int,
                      src_port: int = 0, dst_port: int = 0) -> Tuple[FlowClass, bytes]:
    """Count one packet and return its class with the (re)marked header.

    Ports come from the L4 header, which the caller has already parsed.
    Raises MalformedHeader for a bad length/IHL or an invalid checksum; the
    table is left untouched in that case.
    """
    if len(header) != 20 or header[0] != 0x45 or int.from_bytes(header, "big") % 0xFFFF:
        table.anomalies += 1
        raise MalformedHeader("not a valid 20-byte IPv4 header")
    if header[9] != IPPROTO_TCP:
        return SHORT, header
    key = (header[12:20], src_port, dst_port)
    rec = table._entries.get(key)
    if rec is None:
        rec = table._entries[key] = FlowRecord(0, now)
    rec.pkt_count += 1
    rec.last_seen = now
    if rec.pkt_count >= table.threshold:
        return LONG, set_tos(header, table.long_mark)
    return SHORT, set_tos(header, table.short_mark)


def py_evict_idle(table: PyFlowTable, now: int) -> int:
    """Drop every flow idle for strictly longer than the timeout."""
    limit = now - table.idle_timeout_us
    stale = [k for k, rec in table._entries.items() if rec.last_seen < limit]
    for k in stale:
        del table._entries[k]
    table.evicted += len(stale)
    return len(stale)


def py_classify_only(table: PyFlowTable, tuple_: FiveTuple) -> FlowClass:
    rec = table.get(tuple_)
    if rec is not None and rec.pkt_count >= table.threshold:
        return LONG
    return SHORT


def classify_batch(flow: np.ndarray, now_us: np.ndarray, is_tcp: np.ndarray, threshold: int,
                   idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
                   evict_period_us: int = 1_000_000) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised equivalent of feeding packets through ``process_packet`` in order.

    ``flow`` holds one integer id per distinct 5-tuple, ``now_us`` the
    (non-decreasing) splitter time of each packet.  Eviction follows the
    simulator's periodic sweep: a sweep at time ``k * evict_period_us`` runs
    before any packet at the same instant and removes flows idle for more
    than the timeout.  ``evict_period_us <= 0`` disables eviction.

    Returns ``(pkt_count, is_long)`` per packet; non-TCP packets get count 0.
    """
    n = len(flow)
    counts = np.zeros(n, dtype=np.int64)
    if n == 0:
        return counts, np.zeros(0, dtype=bool)
    idx = np.flatnonzero(is_tcp)
    order = idx[np.argsort(flow[idx], kind="stable")]
    f = flow[order]
    t = now_us[order]
    start = np.ones(len(order), dtype=bool)
    if len(order) > 1:
        same = f[1:] == f[:-1]
        reset = ~same
        if evict_period_us > 0:
            last_sweep = (t[1:] // evict_period_us) * evict_period_us
            reset |= last_sweep - t[:-1] > idle_timeout_us
        start[1:] = reset
    pos = np.arange(len(order))
    seg_start = np.maximum.accumulate(np.where(start, pos, 0))
    counts[order] = pos - seg_start + 1
    return counts, counts >= threshold


try:
    from . import _csplit
except ImportError:  # built without a compiler
    _csplit = None

if _csplit is not None:
    _csplit.bind(MalformedHeader, SHORT, LONG)

    class FlowTable(_csplit.FlowTable):
        """Native flow table; same behaviour as :class:`PyFlowTable`."""

        def __contains__(self, tuple_: FiveTuple) -> bool:
            return self._lookup(tuple_) is not None

        def get(self, tuple_: FiveTuple) -> FlowRecord | None:
            hit = self._lookup(tuple_)
            return None if hit is None else FlowRecord(*hit)

        @property
        def entries(self) -> Dict[FiveTuple, FlowRecord]:
            return {FiveTuple(*k, IPPROTO_TCP): FlowRecord(c, t) for k, c, t in self._raw_items()}

    process_packet = _csplit.process_packet
    evict_idle = _csplit.evict_idle
    classify_only = _csplit.classify_only
    HAVE_NATIVE = True
else:
    FlowTable = PyFlowTable
    process_packet = py_process_packet
    evict_idle = py_evict_idle
    classify_only = py_classify_only
    HAVE_NATIVE = False
