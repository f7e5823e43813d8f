import json

import numpy as np
import pytest

import flowbench.simulate as sim
from flowbench.simulate import (
    AimdWindow,
    CongestionSignal,
    ConstantSource,
    GreedySource,
    NetworkPath,
    ProbeTrainSampler,
    ScenarioError,
    ScenarioSpec,
    StaticWindow,
    TraceSource,
    cwnd_autocorrelation,
    decompose_delays,
    run_scenario,
    stack_buffering_probability,
)
from flowbench.traces import synthetic_vbr_trace

MSS = 12000


def adaptive_spec(**kw):
    base = dict(
        source=ConstantSource(2e7),
        controller=AimdWindow(),
        path=NetworkPath(fwd_delay_s=0.005, rev_delay_s=0.005),
        signal=CongestionSignal(kind="bernoulli", p=1e-3, delivery="mark"),
        mss_bits=MSS,
        duration_s=5.0,
        warmup_s=1.0,
        seed=0,
    )
    base.update(kw)
    return ScenarioSpec(**base)


def static_spec(**kw):
    base = dict(
        source=ConstantSource(4e6),
        controller=StaticWindow(500000.0),
        path=NetworkPath(capacity_bps=1e7, fwd_delay_s=0.05, rev_delay_s=0.05),
        signal=CongestionSignal(kind="none"),
        mss_bits=12500,
        duration_s=10.0,
        warmup_s=2.0,
        seed=0,
    )
    base.update(kw)
    return ScenarioSpec(**base)


# ---------------------------------------------------------------------------
# validation and serialization


def test_spec_validation_errors():
    with pytest.raises(ScenarioError):
        adaptive_spec(duration_s=-1.0).validate()
    with pytest.raises(ScenarioError):
        adaptive_spec(warmup_s=10.0, duration_s=5.0).validate()
    with pytest.raises(ScenarioError):
        adaptive_spec(signal=CongestionSignal(kind="bernoulli", p=2.0)).validate()
    with pytest.raises(ScenarioError):
        adaptive_spec(signal=CongestionSignal(kind="periodic")).validate()
    with pytest.raises(ScenarioError):
        adaptive_spec(mss_bits=0).validate()


def test_json_round_trip_all_variants():
    specs = [
        adaptive_spec(),
        static_spec(),
        adaptive_spec(source=GreedySource(), signal=CongestionSignal(kind="periodic", every_n_packets=100)),
        adaptive_spec(
            source=TraceSource(synthetic_vbr_trace(1e6, 2.0, seed=1)),
            path=NetworkPath(capacity_bps=5e6, fwd_delay_s=0.01, rev_delay_s=0.01, buffer_pkts=40),
            signal=CongestionSignal(kind="buffer_overflow", delivery="drop"),
        ),
    ]
    for spec in specs:
        again = ScenarioSpec.from_json(spec.to_json())
        assert again.to_json() == spec.to_json()
        assert json.loads(spec.to_json())  # well-formed


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_same_output():
    a = run_scenario(adaptive_spec())
    b = run_scenario(adaptive_spec())
    assert np.array_equal(a.t1, b.t1)
    assert np.array_equal(a.t4, b.t4)
    assert np.array_equal(a.signaled, b.signaled)


def test_different_seed_differs():
    a = run_scenario(adaptive_spec())
    b = run_scenario(adaptive_spec(seed=1))
    assert not np.array_equal(a.t4, b.t4)


# ---------------------------------------------------------------------------
# static-window loop physics


def test_static_loop_rate_is_window_over_rtt():
    # window 40 pkts, RTT 100 ms: loop sustains exactly 5 Mbit/s
    out = run_scenario(static_spec(source=ConstantSource(6e6), duration_s=30.0, warmup_s=5.0))
    assert out.delivered_rate_bps() == pytest.approx(500000.0 / 0.1, rel=0.01)


def test_static_loop_below_capacity_constant_delay():
    out = run_scenario(static_spec(source=ConstantSource(4e6)))
    mask = out.steady_state_mask()
    d = (out.t4 - out.t1)[mask]
    assert np.ptp(d) < 1e-9
    assert d[0] == pytest.approx(0.05, abs=1e-9)


def test_bdp_window_passes_capacity():
    out = run_scenario(
        static_spec(controller=StaticWindow(2e6), source=ConstantSource(9e6), duration_s=20.0, warmup_s=5.0)
    )
    assert out.delivered_rate_bps() == pytest.approx(9e6, rel=0.01)


# ---------------------------------------------------------------------------
# invariants


@pytest.mark.parametrize("kind,delivery", [("bernoulli", "mark"), ("bernoulli", "drop"), ("periodic", "mark")])
def test_causality_and_order(kind, delivery):
    signal = CongestionSignal(
        kind=kind, p=5e-3 if kind == "bernoulli" else None,
        every_n_packets=200 if kind == "periodic" else None, delivery=delivery,
    )
    out = run_scenario(adaptive_spec(signal=signal, duration_s=4.0))
    assert np.all(out.t1 <= out.t2 + 1e-12)
    assert np.all(out.t2 <= out.t3 + 1e-12)
    assert np.all(out.t3 <= out.t4 + 1e-12)
    # in-order application delivery
    assert np.all(np.diff(out.t4) >= -1e-12)


def test_finite_buffer_drops_and_occupancy():
    spec = adaptive_spec(
        source=ConstantSource(6e6),
        path=NetworkPath(capacity_bps=4e6, fwd_delay_s=0.01, rev_delay_s=0.01, buffer_pkts=20),
        signal=CongestionSignal(kind="buffer_overflow", delivery="drop"),
        duration_s=4.0,
    )
    out = run_scenario(spec)
    assert out.dropped_count > 0
    assert np.max(out.queue_occupancy) <= 20
    assert np.all(np.diff(out.t4) >= -1e-12)  # retransmissions still in order


def test_mark_mode_never_drops():
    out = run_scenario(adaptive_spec())
    assert out.dropped_count == 0
    assert out.marked_count > 0


# ---------------------------------------------------------------------------
# probe train sampler: compiled and event-driven paths agree exactly


@pytest.mark.parametrize("kind", ["none", "bernoulli", "periodic"])
def test_fast_slow_parity(monkeypatch, kind):
    spec = adaptive_spec(
        source=ConstantSource(3000 * MSS),
        signal=CongestionSignal(
            kind=kind, p=1e-3 if kind == "bernoulli" else None,
            every_n_packets=500 if kind == "periodic" else None, delivery="mark",
        ),
        duration_s=10.0, warmup_s=0.0,
    )
    idx = np.arange(0, 12000, 37)
    fast = ProbeTrainSampler(spec)
    assert fast.fast
    d_fast = fast.delays(idx)
    monkeypatch.setattr(sim, "_HAVE_NUMBA", False)
    slow = ProbeTrainSampler(spec)
    assert not slow.fast
    d_slow = slow.delays(idx)
    np.testing.assert_array_equal(d_fast, d_slow)


def test_sampler_extension_continues_sample_path():
    spec = adaptive_spec(source=ConstantSource(3000 * MSS), duration_s=10.0, warmup_s=0.0)
    idx1 = np.arange(0, 4000, 23)
    idx2 = np.arange(0, 9000, 23)
    one = ProbeTrainSampler(spec)
    staged_first = one.delays(idx1)
    staged_full = one.delays(idx2)
    fresh = ProbeTrainSampler(spec).delays(idx2)
    np.testing.assert_array_equal(staged_full, fresh)
    np.testing.assert_array_equal(staged_first, fresh[: len(idx1)])


def test_sampler_requires_constant_source():
    with pytest.raises(ScenarioError):
        ProbeTrainSampler(adaptive_spec(source=GreedySource()))


# ---------------------------------------------------------------------------
# derived outputs


def test_decompose_delays_adds_up():
    out = run_scenario(adaptive_spec())
    comp = decompose_delays(out)
    total = comp["d_snd"] + comp["d_net"] + comp["d_rcv"]
    np.testing.assert_allclose(total, comp["d_e2e"], atol=1e-12)


def test_stack_buffering_probability_unloaded():
    out = run_scenario(static_spec(source=ConstantSource(2e6)))
    assert stack_buffering_probability(out) == 0.0


def test_cwnd_autocorrelation_basics():
    out = run_scenario(adaptive_spec(source=GreedySource(), duration_s=30.0, warmup_s=5.0))
    acf = cwnd_autocorrelation(out.cwnd_times, out.cwnd_bits, [0.0, 0.01, 0.1], t_start=5.0)
    assert acf[0][1] == pytest.approx(1.0)
    assert -1.0 <= acf[2][1] <= 1.0
    assert acf[1][1] > acf[2][1]  # short-lag correlation dominates


def test_greedy_throughput_tracks_mathis():
    out = run_scenario(adaptive_spec(source=GreedySource(), duration_s=60.0, warmup_s=10.0))
    pkts = out.delivered_rate_bps() / MSS
    assert pkts == pytest.approx(4143.0, rel=0.06)
