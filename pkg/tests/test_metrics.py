import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsplit import metrics, netsim, splitter as sp
from flowsplit.metrics import FlowStats, RunReport, Summary
from flowsplit.netsim import RoutingPolicy, Trace
from flowsplit.workload import FlowKind, FlowSpec, assemble

TUP = sp.FiveTuple(1, 2, 3, 4, 6)


def one_flow_trace(n, start=0):
    flows = [FlowSpec(0, TUP, n, start, burst_size=n)]
    return netsim.simulate(assemble(flows), RoutingPolicy.ECMP_PER_FLOW, 10**11).trace, flows


def make_trace(flow, seq, tunnel, egress, dest):
    n = len(flow)
    return Trace(np.array(flow, np.int32), np.array(seq, np.int32), np.array(tunnel, np.int8),
                 np.array(egress, np.int64), np.array(egress, np.int64),
                 np.array(dest, np.int64), np.zeros(n, np.uint8))


@pytest.mark.parametrize("n,fct_us", [(1, 1012), (5, 1060)])
def test_fct_examples(n, fct_us):
    tr, flows = one_flow_trace(n)
    res = metrics.compute_fct(tr, flows)
    assert [s.fct for s in res.stats] == [fct_us * 1000]
    assert len(res.stats[0].packet_delays) == n


def test_fct_respects_lower_bound():
    tr, flows = one_flow_trace(37)
    s = metrics.compute_fct(tr, flows).stats[0]
    assert s.fct >= 37 * 12_000


def test_warmup_excludes_early_flows():
    tr, flows = one_flow_trace(5, start=1000)
    res = metrics.compute_fct(tr, flows, warmup=2000)
    assert res.stats == [] and res.before_warmup == 1
    assert len(metrics.compute_fct(tr, flows, warmup=1000).stats) == 1


def test_incomplete_flows_counted():
    tr, flows = one_flow_trace(5)
    res = metrics.compute_fct(tr.select(np.arange(len(tr)) < 4), flows)
    assert res.stats == [] and res.incomplete == 1


def test_fifo_violation_detected():
    tr = make_trace([0, 0], [1, 0], [0, 0], [0, 0], [10, 20])
    with pytest.raises(metrics.TraceIntegrityError):
        metrics.compute_fct(tr, [FlowSpec(0, TUP, 2, 0)])
    # reordering across tunnels is legal
    ok = make_trace([0, 0], [1, 0], [1, 0], [0, 0], [10, 20])
    assert len(metrics.compute_fct(ok, [FlowSpec(0, TUP, 2, 0)]).stats) == 1


def test_warmup_filter_idempotent():
    stats = [FlowStats(i, FlowKind.APP, 1, 10, sp.SHORT, np.zeros(1), t_first=t)
             for i, t in enumerate([0, 5, 10, 15])]
    once = metrics.warmup_filter(stats, 10)
    assert [s.flow_id for s in once] == [2, 3]
    assert metrics.warmup_filter(once, 10) == once


def test_jitter_examples():
    s = FlowStats(0, FlowKind.APP, 3, 0, sp.SHORT, np.array([1000, 1012, 1000]))
    assert metrics.compute_jitter(s).values.tolist() == [12, 12]
    flat = FlowStats(0, FlowKind.APP, 4, 0, sp.SHORT, np.full(4, 1012))
    assert metrics.compute_jitter(flat).values.tolist() == [0, 0, 0]
    single = FlowStats(0, FlowKind.APP, 1, 0, sp.SHORT, np.array([5]))
    assert len(metrics.compute_jitter(single).values) == 0


def test_histogram_single_sample():
    edges, dens = metrics.histogram([7.0], 2.0)
    assert edges.tolist() == [6.0, 8.0] and dens.tolist() == [0.5]


def test_histogram_errors():
    with pytest.raises(ValueError):
        metrics.histogram([], 1.0)
    with pytest.raises(ValueError):
        metrics.histogram([1.0], 0.0)
    with pytest.raises(ValueError):
        metrics.histogram([0.0, 1e9], 1e-3)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300),
       st.floats(1.0, 1e4))
def test_histogram_normalised(xs, width):
    edges, dens = metrics.histogram(xs, width)
    assert abs(np.sum(dens * np.diff(edges)) - 1.0) <= 1e-9
    assert np.allclose(np.diff(edges), width)


def test_histogram_uniform_is_flat():
    xs = np.random.default_rng(0).uniform(0, 100, 200_000)
    _, dens = metrics.histogram(xs, 10.0)
    assert np.allclose(dens, 0.01, rtol=0.05)


def report_with(mean_short, mean_long=None):
    fct = {"short": Summary(10, mean_short, 0, 0, 0, mean_short, 0),
           "long": Summary(0 if mean_long is None else 3, mean_long or float("nan"),
                           0, 0, 0, 0, 0)}
    return RunReport({}, "x", 0, 40, fct=fct)


def test_speedup_examples():
    assert metrics.speedup(report_with(3000), report_with(2000)) == 1.5
    r = report_with(1234, 99)
    for sel in ("short", "long"):
        assert metrics.speedup(r, r, sel) == 1.0
    assert metrics.speedup(r, r, "short", "p99") == 1.0


def test_speedup_undefined_without_flows():
    with pytest.raises(metrics.SpeedupUndefined):
        metrics.speedup(report_with(1), report_with(1), "long")
    with pytest.raises(metrics.SpeedupUndefined):
        metrics.speedup(report_with(1), report_with(1), "all")


def test_summarise_classes_and_json():
    stats = [FlowStats(i, FlowKind.APP, n, n * 1000, sp.SHORT, np.arange(n) * 1000.0)
             for i, n in enumerate([1, 5, 5, 60])]
    fct, jit, hists = metrics.summarise(stats, 40, 50)
    assert fct["short"].count == 3 and fct["long"].count == 1 and fct["all"].count == 4
    assert jit["short"].count == 8 and jit["short"].mean == 1.0
    assert set(hists) == {"fct", "jitter"}
    rep = RunReport({"a": 1}, "splitter", 0, 40, fct, jit, hists)
    d = json.loads(rep.to_json())
    assert d["fct_us"]["short"]["mean"] == pytest.approx(11 / 3, abs=1e-6)
    assert "fct/short" in rep.to_text()
