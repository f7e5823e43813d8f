import json

import numpy as np
import pytest

from flowbench.curves import (
    CumulativeProcess,
    CurveError,
    ServiceCurve,
    TrafficEnvelope,
    UnboundedDelayError,
    attainable_rate,
    backlog_bound,
    convolve,
    curve_from_json,
    delay_bound,
    empirical_envelope,
    mathis_rate,
    per_time_delays,
    periodic_loss_model,
    static_window_curve,
)

from _oracles import (
    brute_convolve,
    brute_horizontal_deviation,
    brute_vertical_deviation,
    envelope_naive,
    eval_pwl_naive,
    max_cell_variation,
    random_pwl,
)


# ---------------------------------------------------------------------------
# construction and evaluation


def test_latency_rate_values():
    s = ServiceCurve.latency_rate(1e7, 0.05)
    assert s.value_at(0.05) == 0.0
    assert s.value_at(0.0) == 0.0
    assert s.value_at(0.15) == pytest.approx(1e6)
    assert s.long_term_rate() == pytest.approx(1e7)


def test_monotone_required():
    with pytest.raises(CurveError):
        CumulativeProcess.from_breakpoints([(0.0, 0.0), (1.0, 5.0), (2.0, 3.0)])


def test_negative_time_rejected():
    with pytest.raises(CurveError):
        CumulativeProcess.from_breakpoints([(-1.0, 0.0), (1.0, 5.0)])


def test_json_round_trip():
    s = ServiceCurve.from_breakpoints([(0.0, 0.0), (0.5, 0.0), (1.0, 3e6)], epsilon=0.01)
    s2 = curve_from_json(s.to_json())
    assert isinstance(s2, ServiceCurve)
    assert s2.epsilon == s.epsilon
    assert s2.breakpoints == s.breakpoints


def test_csv_round_trip(tmp_path):
    from flowbench.traces import read_trace_csv

    p = CumulativeProcess.from_breakpoints([(0.0, 0.0), (1.0, 5e5), (3.0, 5e5)])
    path = tmp_path / "trace.csv"
    p.to_csv(path)
    q = read_trace_csv(path)
    assert np.allclose(q.times, p.times)
    assert np.allclose(q.values, p.values)


def test_token_bucket():
    e = TrafficEnvelope.token_bucket(1e4, 1e6, horizon_s=2.0)
    assert e.value_at(0.0) >= 0.0
    assert e.value_at(1.0) == pytest.approx(1e4 + 1e6)


# ---------------------------------------------------------------------------
# convolution against the dense-grid oracle


def _grid_for(a_t, s_t, horizon, n=400):
    return np.linspace(0.0, horizon, n)


@pytest.mark.parametrize("seed", range(8))
def test_convolve_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a_t, a_v = random_pwl(rng, 6, 1e6, 4.0)
    s_t, s_v = random_pwl(rng, 5, 8e5, 4.0)
    a = CumulativeProcess(a_t, a_v)
    s = ServiceCurve(s_t, s_v)
    d = convolve(a, s)

    grid = _grid_for(a_t, s_t, 4.0)
    brute = brute_convolve(a_t, a_v, s_t, s_v, grid)
    mine = eval_pwl_naive(np.asarray(d.times), np.asarray(d.values), grid)
    # the brute force restricts tau to the grid, so it can only overestimate
    assert np.all(mine <= brute + 1e-6)
    slack = max_cell_variation(a_t, a_v, grid) + max_cell_variation(s_t, s_v, grid)
    assert np.all(brute - mine <= slack + 1e-6)


def test_convolve_identity():
    a = CumulativeProcess.constant_rate(1e6, 3.0)
    d = convolve(a, ServiceCurve.identity())
    grid = np.linspace(0, 3, 50)
    assert np.allclose(d.value_at(grid), a.value_at(grid))


def test_convolve_zero_service():
    a = CumulativeProcess.constant_rate(1e6, 3.0)
    d = convolve(a, ServiceCurve.zero())
    assert d.value_at(3.0) == 0.0


# ---------------------------------------------------------------------------
# delay / backlog bounds


@pytest.mark.parametrize("seed", range(6))
def test_delay_backlog_match_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    # keep all slopes well away from zero so the deviation functions have
    # bounded slope and the uniform-grid scan cannot miss sharp peaks
    a_t, a_v = random_pwl(rng, 5, 1e6, 4.0, rate_lo=2e5)
    s_t, s_v = random_pwl(rng, 4, 3e6, 4.0, rate_lo=2e5)
    s_v = s_v + np.linspace(0, 1.2e6 * 4.0, len(s_v))  # ensure rate dominance
    a = CumulativeProcess(a_t, a_v)
    s = ServiceCurve(s_t, s_v)

    dep = convolve(a, s)
    grid = np.linspace(0.0, 4.0, 800)
    cell_t = grid[1] - grid[0]
    fine_t = (max(grid[-1], dep.times[-1]) * 4 + 1.0) / (4 * len(grid))
    d_mine = delay_bound(a, s).max
    b_mine = backlog_bound(a, s).max
    d_brute = brute_horizontal_deviation(a_t, a_v, np.asarray(dep.times), np.asarray(dep.values), grid)
    b_brute = brute_vertical_deviation(a_t, a_v, np.asarray(dep.times), np.asarray(dep.values), grid)
    # delay slope is bounded by 1 + max arrival rate / min departure rate
    d_slope = 1.0 + 1e6 / 2e5
    assert d_mine >= d_brute - fine_t - 1e-9
    assert d_mine <= d_brute + d_slope * cell_t + fine_t + 1e-9
    cell_v = max_cell_variation(a_t, a_v, grid)
    assert b_mine >= b_brute - 1e-6
    assert b_mine <= b_brute + cell_v + 1e-6


def test_latency_rate_closed_form_delay():
    # token-bucket through latency-rate: delay = T + b / R, backlog = b + r T
    b, r = 5e4, 1e6
    R, T = 2e6, 0.1
    a = TrafficEnvelope.token_bucket(b, r, horizon_s=5.0)
    s = ServiceCurve.latency_rate(R, T)
    assert delay_bound(a, s).max == pytest.approx(T + b / R, rel=1e-9)
    assert backlog_bound(a, s).max == pytest.approx(b + r * T, rel=1e-9)


def test_unbounded_delay_raises():
    a = CumulativeProcess.constant_rate(2e6, 5.0)
    s = ServiceCurve.latency_rate(1e6, 0.0)
    with pytest.raises(UnboundedDelayError):
        delay_bound(a, s)


def test_per_time_delays_monotone_levels():
    a = CumulativeProcess.constant_rate(1e6, 5.0)
    s = ServiceCurve.latency_rate(2e6, 0.1)
    ts = np.linspace(0.1, 4.0, 40)
    d = per_time_delays(a, s, ts)
    assert np.all(d >= 0.0)
    assert d.max() <= 0.1 + 1e-9


# ---------------------------------------------------------------------------
# analytic curves


def test_static_window_curve_collapses_at_bdp():
    cap, lat = 1e7, 0.05
    w = cap * 2 * lat * 2.0  # twice the bandwidth-delay product
    s = static_window_curve(cap, lat, w, horizon_s=3.0)
    ref = ServiceCurve.latency_rate(cap, lat)
    grid = np.linspace(0, 3, 300)
    assert np.allclose(s.value_at(grid), ref.value_at(grid))


def test_static_window_curve_long_term_rate():
    cap, lat, w = 1e7, 0.05, 500000.0
    s = static_window_curve(cap, lat, w, horizon_s=10.0)
    # the staircase averages one window per round trip over long horizons
    assert s.value_at(10.0) / 10.0 == pytest.approx(w / (2 * lat), rel=2e-2)
    grid = np.linspace(0, 10, 500)
    ref = ServiceCurve.latency_rate(cap, lat)
    assert np.all(s.value_at(grid) <= ref.value_at(grid) + 1e-6)


def test_static_window_curve_staircase_values():
    # after n full round trips exactly n windows have been released
    cap, lat, w = 1e7, 0.05, 500000.0
    s = static_window_curve(cap, lat, w, horizon_s=2.0)
    for n in (1, 2, 3):
        t = (2 * n + 1) * lat
        assert s.value_at(t) == pytest.approx(n * w, rel=1e-9)


def test_attainable_rate_converges():
    s = ServiceCurve.latency_rate(5e6, 0.05)
    ts, rates = attainable_rate(s, t_min=0.01, t_max=1000.0, num=100)
    assert rates[-1] == pytest.approx(5e6, rel=1e-2)
    assert np.all(np.diff(rates) >= -1e-6)  # latency-rate alpha is nondecreasing


def test_mathis_rate_value():
    # MSS * L / (sqrt(p) * RTT) with the paper's constant
    assert mathis_rate(12000.0, 1e-3, 0.01, L=1.31) == pytest.approx(
        12000.0 * 1.31 / (np.sqrt(1e-3) * 0.01)
    )
    # expressed in packets/s for the benchmark configuration
    assert mathis_rate(1.0, 1e-3, 0.01, L=1.31) == pytest.approx(4143.0, rel=2e-3)


def test_periodic_loss_model():
    m = periodic_loss_model(1e-3, 0.01, mss_bits=1.0)
    assert m.w_max_bits == pytest.approx(np.sqrt(8 / (3 * 1e-3)))
    assert m.w_min_bits == pytest.approx(m.w_max_bits / 2)
    assert m.min_instantaneous_rate_bps == pytest.approx(2 / 3 * m.mean_rate_bps)


# ---------------------------------------------------------------------------
# empirical envelope


@pytest.mark.parametrize("seed", range(4))
def test_empirical_envelope_matches_naive(seed):
    rng = np.random.default_rng(200 + seed)
    t, v = random_pwl(rng, 8, 1e6, 5.0)
    trace = CumulativeProcess(t, v)
    durations = np.linspace(0.1, 3.0, 15)
    env = empirical_envelope(trace, durations)
    naive = envelope_naive(t, v, durations, step=0.002)
    got = env.value_at(durations)
    assert np.all(got >= naive - 1e-6)  # naive scan can only miss maxima
    assert np.allclose(got, naive, rtol=0, atol=1e6 * 0.002 + 1e-6)


def test_empirical_envelope_subadditive_grid():
    trace = CumulativeProcess.from_breakpoints([(0, 0), (1, 1e6), (2, 1e6), (3, 2e6)])
    env = empirical_envelope(trace, [0.5, 1.0, 1.5, 2.0])
    assert env.value_at(2.0) >= env.value_at(1.0)


def test_empirical_envelope_truncation_warns():
    trace = CumulativeProcess.constant_rate(1e6, 2.0)
    with pytest.warns(UserWarning):
        empirical_envelope(trace, [1.0, 5.0])
