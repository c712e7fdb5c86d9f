import numpy as np
import pytest
from scipy import stats

from flowsplit import workload as wl
from flowsplit.experiment import ExperimentConfig, build_workload
from flowsplit.workload import NS_PER_S, BackgroundLoad, FlowKind, FlowSpec, QueryMix

TUP = wl.FiveTuple(1, 2, 3, 4, 6)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_arrival_count_within_three_sigma():
    t = wl.sample_flow_arrivals(1000.0, 120 * NS_PER_S, rng())
    mean = 120_000
    assert abs(len(t) - mean) <= 3 * np.sqrt(mean)
    assert np.all(np.diff(t) >= 0) and t[-1] < 120 * NS_PER_S


def test_arrivals_edge_cases():
    assert len(wl.sample_flow_arrivals(10.0, 0, rng())) == 0
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            wl.sample_flow_arrivals(bad, NS_PER_S, rng())
    a = wl.sample_flow_arrivals(50.0, 10 * NS_PER_S, rng(3))
    b = wl.sample_flow_arrivals(50.0, 10 * NS_PER_S, rng(3))
    assert np.array_equal(a, b)


def test_interarrival_gaps_pass_ks_exponential():
    t = wl.sample_flow_arrivals(1000.0, 30 * NS_PER_S, rng(5))
    gaps = np.diff(t) / NS_PER_S
    assert len(gaps) >= 10_000
    assert stats.kstest(gaps, "expon", args=(0, 1 / 1000.0)).pvalue > 0.01


def test_single_category_mix():
    tuples = wl.TupleAllocator()
    flows = [wl.sample_query(QueryMix([(5, 1.0)]), rng(), tuples, i) for i in range(20)]
    assert {f.n_packets for f in flows} == {5}
    assert len({f.tuple for f in flows}) == 20


def test_default_mix_frequencies_within_one_percent():
    mix = QueryMix()
    flows = wl.sample_queries(mix, np.zeros(100_000, dtype=np.int64), rng(2), wl.TupleAllocator())
    sizes = np.array([f.n_packets for f in flows])
    for (n, _), p in zip(mix.categories, mix.probabilities):
        assert abs(np.mean(sizes == n) - p) <= 0.01


def test_mix_validation():
    with pytest.raises(ValueError):
        QueryMix([])
    with pytest.raises(ValueError):
        QueryMix([(5, 0.0)])
    with pytest.raises(ValueError):
        QueryMix([(0, 1.0)])
    assert np.isclose(QueryMix([(1, 3), (2, 1)]).probabilities.sum(), 1.0)


def test_tuples_unique_across_port_wrap():
    alloc = wl.TupleAllocator()
    got = [next(alloc) for _ in range(130_000)]
    assert len(set(got)) == len(got)


def test_flowspec_pacing():
    f = FlowSpec(0, TUP, 10, 100, burst_size=4, burst_gap=1000, packet_gap=10)
    assert f.packet_times().tolist() == [100, 110, 120, 130, 1100, 1110, 1120, 1130, 2100, 2110]
    assert f.last_send == 2110
    with pytest.raises(ValueError):
        FlowSpec(0, TUP, 0, 0)
    with pytest.raises(ValueError):
        FlowSpec(0, TUP, 1, 0, burst_size=0)


def test_background_rate_at_rho_04():
    load = BackgroundLoad(0.4)
    assert load.wire_bytes == 1500
    assert load.packet_rate == pytest.approx(66_666.67, rel=1e-6)
    horizon = 115 * NS_PER_S
    flows, times, stream = wl.background_stream(load, horizon, rng(1))
    assert abs(len(times) / 115 - load.packet_rate) <= 0.02 * load.packet_rate
    bits = len(times) * load.wire_bytes * 8 / 115
    assert abs(bits - 0.4 * 2e9) <= 0.01 * 0.4 * 2e9
    assert len(flows) == 4 and all(f.kind == FlowKind.BACKGROUND for f in flows)
    assert sum(f.n_packets for f in flows) == len(times)
    assert all(f.tuple.is_tcp for f in flows)


def test_background_scales_linearly():
    horizon = 60 * NS_PER_S
    lo = len(wl.background_stream(BackgroundLoad(0.1), horizon, rng(9))[1])
    hi = len(wl.background_stream(BackgroundLoad(0.4), horizon, rng(9))[1])
    assert abs(hi / lo - 4) <= 0.02 * 4


def test_background_zero_and_invalid():
    flows, times, _ = wl.background_stream(BackgroundLoad(0.0), NS_PER_S, rng())
    assert flows == [] and len(times) == 0
    with pytest.raises(ValueError):
        BackgroundLoad(1.01)


def test_background_long_before_warmup():
    cfg = ExperimentConfig()
    load = BackgroundLoad(0.1)
    # slowest stream still reaches the largest acceptance threshold well inside the warmup
    per_stream = load.packet_rate / load.n_streams * cfg.warmup_s
    assert per_stream > 64 * 100


def test_workload_is_pure_function_of_seed():
    cfg = ExperimentConfig(horizon_s=5.0, warmup_s=1.0)
    a, b, c = build_workload(cfg, 1), build_workload(cfg, 1), build_workload(cfg, 2)
    assert np.array_equal(a.t_created, b.t_created) and np.array_equal(a.flow, b.flow)
    assert [f.n_packets for f in a.flows] == [f.n_packets for f in b.flows]
    assert not np.array_equal(a.t_created[:100], c.t_created[:100])


def test_assembled_packets_carry_flow_identity():
    cfg = ExperimentConfig(horizon_s=5.0, warmup_s=1.0)
    w = build_workload(cfg, 0)
    assert np.all(w.t_created < cfg.horizon)
    for fid in (0, len(w.flows) - 1):
        seq = w.seq[w.flow == fid]
        assert np.array_equal(seq, np.arange(len(seq)))
    agg, app = w.offered_pps(cfg.horizon)
    assert agg > app > 0


def test_dump_workload(tmp_path):
    cfg = ExperimentConfig(horizon_s=2.0, warmup_s=1.0)
    w = build_workload(cfg, 0)
    wl.dump_workload(w.flows, tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0].startswith("flow_id,kind,")
    assert len(lines) == len(w.flows) + 1
