import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsplit import splitter as sp
from flowsplit.splitter import LONG, SHORT, FiveTuple

TCP = FiveTuple(0x0A000001, 0x0A000002, 40000, 443, sp.IPPROTO_TCP)
UDP = FiveTuple(0x0A000001, 0x0A000002, 40000, 53, sp.IPPROTO_UDP)

IMPLS = [
    pytest.param((sp.FlowTable, sp.process_packet, sp.evict_idle, sp.classify_only), id="native"),
    pytest.param((sp.PyFlowTable, sp.py_process_packet, sp.py_evict_idle, sp.py_classify_only),
                 id="python"),
]


def feed(impl, table, tup, n, now=0):
    _, proc, _, _ = impl
    h = sp.build_header(tup)
    return [proc(table, h, now, tup.src_port, tup.dst_port) for _ in range(n)]


headers = st.builds(
    lambda s, d, p, tos, ln, ident, frag, ttl: sp.PacketHeader(
        s, d, p, tos, ln, ident, frag, ttl).to_bytes(),
    st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 255),
    st.integers(0, 255), st.integers(20, 1500), st.integers(0, 0xFFFF),
    st.integers(0, 0xFFFF), st.integers(0, 255))


# -- checksum ----------------------------------------------------------------


def test_ones_complement_oracle_on_textbook_header():
    # widely used worked example: checksum 0xB861
    h = bytes.fromhex("450000730000400040110000c0a80001c0a800c7")
    assert sp.ipv4_checksum(h) == 0xB861
    fixed = h[:10] + b"\xb8\x61" + h[12:]
    assert sp.checksum_ok(fixed)


def test_build_header_validates():
    h = sp.build_header(TCP, tos=0x08, total_length=40)
    assert len(h) == 20 and h[0] == 0x45 and h[1] == 0x08
    assert sp.checksum_ok(h)
    assert sp.PacketHeader.from_bytes(h).header_checksum == sp.ipv4_checksum(h)


def test_header_round_trip():
    h = sp.build_header(TCP, identification=7, ttl=3)
    ph = sp.PacketHeader.from_bytes(h)
    assert (ph.src_addr, ph.dst_addr, ph.protocol, ph.identification, ph.ttl) == (
        TCP.src_addr, TCP.dst_addr, 6, 7, 3)
    assert ph.to_bytes() == h


def test_from_bytes_rejects_wrong_length():
    with pytest.raises(sp.MalformedHeader):
        sp.PacketHeader.from_bytes(b"\x45" * 19)


def test_set_tos_same_value_is_identity():
    h = sp.build_header(TCP, tos=0x08)
    assert sp.set_tos(h, 0x08) is h


def test_set_tos_matches_recompute_example():
    h = sp.build_header(TCP)
    out = sp.set_tos(h, 0x08)
    assert out[1] == 0x08
    assert int.from_bytes(out[10:12], "big") == sp.ipv4_checksum(out)


def test_set_tos_sweep_10k_against_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        f = rng.integers(0, 2**32, size=8).tolist()
        h = sp.PacketHeader(f[0], f[1], f[2] & 0xFF, f[3] & 0xFF, 20 + f[4] % 1481,
                            f[5] & 0xFFFF, f[6] & 0xFFFF, f[7] & 0xFF).to_bytes()
        tos = int(rng.integers(0, 256))
        out = sp.set_tos(h, tos)
        assert int.from_bytes(out[10:12], "big") == sp.ipv4_checksum(out)


@settings(max_examples=60, deadline=None)
@given(headers)
def test_all_256_tos_values_keep_checksum_valid(h):
    for tos in range(256):
        out = sp.set_tos(h, tos)
        assert sp.checksum_ok(out)
        assert out[1] == tos
        assert out[:1] + out[2:10] + out[12:] == h[:1] + h[2:10] + h[12:]


# -- classification ----------------------------------------------------------


@pytest.mark.parametrize("impl", IMPLS)
def test_threshold_40_gives_39_short_then_long(impl):
    table = impl[0](40)
    res = feed(impl, table, TCP, 100)
    assert [c for c, _ in res] == [SHORT] * 39 + [LONG] * 61
    assert res[38][1][1] == sp.SHORT_MARK
    assert res[39][1][1] == sp.LONG_MARK and sp.checksum_ok(res[39][1])


@pytest.mark.parametrize("impl", IMPLS)
def test_threshold_one_marks_first_packet_long(impl):
    table = impl[0](1)
    assert feed(impl, table, TCP, 1)[0][0] == LONG


@pytest.mark.parametrize("impl", IMPLS)
def test_non_tcp_is_transparent(impl):
    table = impl[0](1)
    h = sp.build_header(UDP, tos=0x2E)
    for i in range(10):
        cls, out = impl[1](table, h, i, UDP.src_port, UDP.dst_port)
        assert cls == SHORT and out == h
    assert len(table) == 0


@pytest.mark.parametrize("impl", IMPLS)
def test_directions_are_distinct_flows(impl):
    table = impl[0](3)
    rev = FiveTuple(TCP.dst_addr, TCP.src_addr, TCP.dst_port, TCP.src_port, TCP.protocol)
    feed(impl, table, TCP, 2)
    feed(impl, table, rev, 2)
    assert len(table) == 2
    assert table.get(TCP).pkt_count == 2 and table.get(rev).pkt_count == 2


@pytest.mark.parametrize("impl", IMPLS)
def test_malformed_headers_raise_and_count(impl):
    table = impl[0](40)
    good = sp.build_header(TCP)
    bad_sum = good[:10] + bytes([good[10] ^ 1, good[11]]) + good[12:]
    bad_ihl = b"\x46" + good[1:]
    for h in (bad_sum, bad_ihl, good[:19]):
        with pytest.raises(sp.MalformedHeader):
            impl[1](table, h, 0, 1, 2)
    assert table.anomalies == 3
    assert len(table) == 0


@pytest.mark.parametrize("impl", IMPLS)
def test_classify_only_is_read_only(impl):
    table = impl[0](40)
    classify = impl[3]
    assert classify(table, TCP) == SHORT
    feed(impl, table, TCP, 39)
    assert classify(table, TCP) == SHORT
    feed(impl, table, TCP, 1)
    assert classify(table, TCP) == LONG
    assert table.get(TCP).pkt_count == 40


@pytest.mark.parametrize("impl", IMPLS)
def test_last_seen_updates(impl):
    table = impl[0](40)
    feed(impl, table, TCP, 1, now=5)
    feed(impl, table, TCP, 1, now=9)
    rec = table.get(TCP)
    assert (rec.pkt_count, rec.last_seen) == (2, 9)
    assert TCP in table and UDP not in table


def test_table_rejects_bad_parameters():
    for make in (sp.FlowTable, sp.PyFlowTable):
        with pytest.raises(ValueError):
            make(0)
        with pytest.raises(ValueError):
            make(40, 30_000_000, 8, 8)
        with pytest.raises(ValueError):
            make(40, 30_000_000, 0, 256)


# -- eviction ----------------------------------------------------------------


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("now,evicted", [(30_000_001, 1), (30_000_000, 0)])
def test_eviction_boundary(impl, now, evicted):
    table = impl[0](40)
    feed(impl, table, TCP, 45, now=0)
    assert impl[2](table, now) == evicted
    cls = feed(impl, table, TCP, 1, now=now)[0][0]
    assert cls == (SHORT if evicted else LONG)


@pytest.mark.parametrize("impl", IMPLS)
def test_evict_empty_table(impl):
    assert impl[2](impl[0](40), 10**12) == 0


@pytest.mark.parametrize("impl", IMPLS)
def test_eviction_leaves_fresh_entries(impl):
    table = impl[0](40)
    other = TCP._replace(src_port=1)
    feed(impl, table, TCP, 3, now=0)
    feed(impl, table, other, 3, now=20_000_000)
    assert impl[2](table, 40_000_000) == 1
    assert TCP not in table and table.get(other).pkt_count == 3
    assert table.evicted == 1


# -- properties --------------------------------------------------------------

ops = st.lists(st.tuples(st.sampled_from(["pkt", "evict"]), st.integers(0, 4),
                         st.integers(0, 40_000_000)), max_size=120)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), ops)
def test_native_matches_python_reference(threshold, script):
    tuples = [TCP._replace(src_port=p) for p in range(4)] + [UDP]
    nat, ref = sp.FlowTable(threshold, 30_000_000), sp.PyFlowTable(threshold, 30_000_000)
    now = 0
    for op, k, dt in sorted(script, key=lambda x: x[2]):
        now = max(now, dt)
        if op == "evict":
            assert sp.evict_idle(nat, now) == sp.py_evict_idle(ref, now)
            continue
        t = tuples[k]
        h = sp.build_header(t)
        a = sp.process_packet(nat, h, now, t.src_port, t.dst_port)
        b = sp.py_process_packet(ref, h, now, t.src_port, t.dst_port)
        assert a == b
    assert {k: (v.pkt_count, v.last_seen) for k, v in nat.entries.items()} == \
        {k: (v.pkt_count, v.last_seen) for k, v in ref.entries.items()}


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(1, 200))
def test_classes_are_monotone_and_counts_exact(threshold, n):
    table = sp.FlowTable(threshold)
    classes = [c for c, _ in feed(IMPLS[0].values[0], table, TCP, n)]
    first_long = classes.index(LONG) if LONG in classes else n
    assert all(c == SHORT for c in classes[:first_long])
    assert all(c == LONG for c in classes[first_long:])
    assert table.get(TCP).pkt_count == n


def test_identical_sequences_give_identical_state():
    def run():
        t = sp.FlowTable(5)
        out = []
        for i in range(50):
            tup = TCP._replace(src_port=i % 7)
            out.append(sp.process_packet(t, sp.build_header(tup), i * 1000, tup.src_port, 443))
        return out, t.entries

    a, b = run(), run()
    assert a[0] == b[0]
    assert {k: (v.pkt_count, v.last_seen) for k, v in a[1].items()} == \
        {k: (v.pkt_count, v.last_seen) for k, v in b[1].items()}


def test_native_table_grows_past_initial_capacity():
    table = sp.FlowTable(2)
    h = sp.build_header(TCP)
    for port in range(50_000):
        sp.process_packet(table, h, 0, port, 443)
    assert len(table) == 50_000
    assert sp.process_packet(table, h, 0, 49_999, 443)[0] == LONG


# -- batch classifier ----------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5_000_000)), min_size=1, max_size=80),
       st.integers(1, 6))
def test_classify_batch_matches_sequential(pkts, threshold):
    pkts.sort(key=lambda x: x[1])
    flow = np.array([p[0] for p in pkts])
    now = np.array([p[1] for p in pkts], dtype=np.int64)
    is_tcp = flow != 3
    timeout, period = 1_000_000, 250_000
    counts, is_long = sp.classify_batch(flow, now, is_tcp, threshold, timeout, period)
    table = sp.PyFlowTable(threshold, timeout)
    next_sweep = period
    tuples = [TCP._replace(src_port=k) for k in range(3)] + [UDP]
    for i, (f, t) in enumerate(pkts):
        while next_sweep <= t:
            sp.py_evict_idle(table, next_sweep)
            next_sweep += period
        tup = tuples[f]
        cls, _ = sp.py_process_packet(table, sp.build_header(tup), t, tup.src_port, tup.dst_port)
        assert bool(is_long[i]) == (cls == LONG and is_tcp[i])
        if is_tcp[i]:
            assert counts[i] == table.get(tup).pkt_count
