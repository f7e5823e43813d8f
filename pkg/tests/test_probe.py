import numpy as np
import pytest

from flowbench.curves import ServiceCurve, UnboundedDelayError
from flowbench.probe import (
    EmptyUsableSetError,
    ProbeConfig,
    ProbeError,
    RateProbeRecord,
    ServiceCurveEstimator,
    assemble_estimate,
    probe_rate,
    sweep,
    validate_delay_bounds,
)
from flowbench.simulate import (
    AimdWindow,
    CongestionSignal,
    ConstantSource,
    NetworkPath,
    ScenarioSpec,
    StaticWindow,
)
from flowbench.traces import synthetic_vbr_trace

MSS = 12500


def static_scenario(window_bits=500000.0, **kw):
    base = dict(
        source=ConstantSource(1.0),
        controller=StaticWindow(window_bits),
        path=NetworkPath(capacity_bps=1e7, fwd_delay_s=0.05, rev_delay_s=0.05),
        signal=CongestionSignal(kind="none"),
        mss_bits=MSS,
        duration_s=20.0,
        warmup_s=5.0,
        seed=0,
    )
    base.update(kw)
    return ScenarioSpec(**base)


def static_config(**kw):
    base = dict(
        r_acc_bps=1e6, xi=1e-4, samples_i=200, packet_bits=MSS,
        sampling_gap_packets=20, max_extensions=8, seed=0,
    )
    base.update(kw)
    return ProbeConfig(**base)


def _record(rate, delay_q, stationary=True, independent=True):
    return RateProbeRecord(
        rate_bps=rate,
        samples=np.full(10, delay_q),
        extensions_used=0,
        stationary=stationary,
        independent=independent,
        delay_quantile_s=delay_q if stationary and independent else None,
        backlog_quantile_bits=rate * delay_q if stationary and independent else None,
    )


# ---------------------------------------------------------------------------
# config validation


def test_config_validation():
    with pytest.raises(ProbeError):
        ProbeConfig(r_acc_bps=0.0)
    with pytest.raises(ProbeError):
        ProbeConfig(r_acc_bps=1e6, xi=0.7)
    with pytest.raises(ProbeError):
        ProbeConfig(r_acc_bps=1e6, samples_i=10)
    cfg = static_config()
    assert ProbeConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# curve assembly from hand-built records


def test_assemble_two_lines_hull():
    # lines: 1e6 t - 1e4 and 2e6 t - 1e5 cross at t = 0.09
    recs = [_record(1e6, 0.01), _record(2e6, 0.05), _record(3e6, 1.0, stationary=False)]
    cfg = static_config(xi=1e-3)
    est = assemble_estimate(recs, cfg)
    assert est.epsilon == pytest.approx(2 * 1e-3)  # terminal rate is excluded
    assert est.long_term_rate() == pytest.approx(2e6)
    # before the zero-crossing of the best line the curve is clamped at 0
    assert est.value_at(0.005) == 0.0
    assert est.value_at(0.05) == pytest.approx(1e6 * 0.05 - 1e4)
    assert est.value_at(0.5) == pytest.approx(2e6 * 0.5 - 1e5)


def test_assemble_dominated_line_dropped():
    # the second line is everywhere below the first; hull keeps only one
    recs = [_record(1e6, 0.01), _record(1e6, 0.02)]
    est = assemble_estimate(recs, static_config())
    assert est.long_term_rate() == pytest.approx(1e6)
    assert est.value_at(1.0) == pytest.approx(1e6 * 1.0 - 1e6 * 0.01)


def test_assemble_requires_usable_record():
    with pytest.raises(EmptyUsableSetError):
        assemble_estimate([_record(1e6, 1.0, stationary=False)], static_config())


def test_assemble_epsilon_must_stay_below_one():
    recs = [_record((j + 1) * 1e6, 0.01) for j in range(5)]
    with pytest.raises(ProbeError):
        assemble_estimate(recs, static_config(xi=0.3))


# ---------------------------------------------------------------------------
# probing a deterministic loop


def test_probe_rate_static_below_capacity():
    rec = probe_rate(static_scenario(), 4e6, static_config())
    assert rec.usable
    assert rec.stationary and rec.independent
    # unloaded constant-rate train sees the bare one-way latency
    assert rec.delay_quantile_s == pytest.approx(0.05, abs=1e-9)
    assert rec.backlog_quantile_bits == pytest.approx(4e6 * 0.05, rel=1e-9)


def test_probe_rate_static_overload_not_stationary():
    rec = probe_rate(static_scenario(), 6e6, static_config())
    assert not rec.usable


def test_sweep_static_window():
    recs = sweep(static_scenario(), static_config())
    usable = [r for r in recs if r.usable]
    assert [r.rate_bps for r in usable] == [1e6, 2e6, 3e6, 4e6, 5e6]
    assert not recs[-1].usable
    est = assemble_estimate(recs, static_config())
    assert est.long_term_rate() == pytest.approx(5e6)
    assert est.epsilon == pytest.approx(5 * 1e-4)


def test_sweep_empty_usable_set():
    # first grid rate already exceeds what the tiny window can carry
    scen = static_scenario(window_bits=2 * MSS)
    with pytest.raises(EmptyUsableSetError):
        sweep(scen, static_config(r_acc_bps=8e6))


def test_sweep_deterministic():
    a = sweep(static_scenario(), static_config())
    b = sweep(static_scenario(), static_config())
    assert [r.rate_bps for r in a] == [r.rate_bps for r in b]
    assert [r.delay_quantile_s for r in a] == [r.delay_quantile_s for r in b]


# ---------------------------------------------------------------------------
# validation preconditions


def test_validate_rejects_overload_trace():
    est = ServiceCurve.latency_rate(1e6, 0.05, epsilon=0.01)
    trace = synthetic_vbr_trace(2e6, 2.0, seed=0)
    with pytest.raises(UnboundedDelayError):
        validate_delay_bounds(est, trace, static_scenario(), repetitions=10)


def test_validate_needs_repetitions():
    est = ServiceCurve.latency_rate(1e7, 0.05, epsilon=0.01)
    trace = synthetic_vbr_trace(1e6, 2.0, seed=0)
    with pytest.raises(ProbeError):
        validate_delay_bounds(est, trace, static_scenario(), repetitions=1)


def test_validate_static_window_bounds_hold():
    scen = static_scenario(controller=StaticWindow(2e6))  # above BDP
    trace = synthetic_vbr_trace(3e6, 2.0, burstiness=1.5, seed=2)
    est = ServiceCurve.latency_rate(1e7, 0.1 + MSS / 1e7, epsilon=0.01)
    rep = validate_delay_bounds(est, trace, scen, repetitions=5, warmup_s=1.0)
    assert rep.violation_fraction == 0.0


# ---------------------------------------------------------------------------
# sklearn-style wrapper


def test_estimator_fit_predict():
    e = ServiceCurveEstimator(
        r_acc_bps=1e6, xi=1e-4, samples_i=200, packet_bits=MSS, sampling_gap_packets=20, seed=0
    )
    e.fit(static_scenario())
    assert e.curve_.long_term_rate() == pytest.approx(5e6)
    assert e.epsilon_ == pytest.approx(5e-4)
    ts = np.array([0.2, 1.0, 2.0])
    vals = e.predict(ts)
    assert np.all(np.diff(vals) > 0)
    assert len(e.records_) == 6
