"""Min-plus calculus over piecewise-linear cumulative processes and service curves.

Everything in this module is exact piecewise-linear arithmetic: curves are
breakpoint lists in bits over seconds, infima are taken on the union of
breakpoint grids plus induced crossing points, and results are again
piecewise linear.  All functions are pure; instances are safe to share
between threads.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CurveError",
    "UnboundedDelayError",
    "CumulativeProcess",
    "ServiceCurve",
    "TrafficEnvelope",
    "convolve",
    "delay_bound",
    "backlog_bound",
    "per_time_delays",
    "static_window_curve",
    "attainable_rate",
    "empirical_envelope",
    "mathis_rate",
    "periodic_loss_model",
    "curve_from_json",
]

# Big-but-finite slope used for the min-plus identity element.  Large enough
# to dominate any realistic arrival process without overflowing doubles.
_IDENTITY_SLOPE = 1e30


class CurveError(ValueError):
    """Invalid curve or process input."""


class UnboundedDelayError(CurveError):
    """The arrival rate exceeds what the service curve can sustain."""


def _as_arrays(breakpoints) -> tuple[np.ndarray, np.ndarray]:
    bp = np.asarray(breakpoints, dtype=float)
    if bp.size == 0:
        raise CurveError("empty breakpoint list")
    if bp.ndim != 2 or bp.shape[1] != 2:
        raise CurveError("breakpoints must be a sequence of (t, value) pairs")
    return np.ascontiguousarray(bp[:, 0]), np.ascontiguousarray(bp[:, 1])


def _eval_pwl(times: np.ndarray, values: np.ndarray, t, left_value: float = 0.0):
    """Evaluate a piecewise-linear function at ``t``.

    Linear interpolation between breakpoints, extrapolation with the final
    segment's slope beyond the last breakpoint, ``left_value`` before the
    first one.
    """
    t = np.asarray(t, dtype=float)
    out = np.interp(t, times, values)
    if len(times) >= 2:
        slope = (values[-1] - values[-2]) / (times[-1] - times[-2])
    else:
        slope = 0.0
    after = t > times[-1]
    if np.any(after):
        out = np.where(after, values[-1] + slope * (t - times[-1]), out)
    before = t < times[0]
    if np.any(before):
        out = np.where(before, left_value, out)
    return out


def _final_slope(times: np.ndarray, values: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    return (values[-1] - values[-2]) / (times[-1] - times[-2])


def _compact_pwl(times: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop breakpoints that lie on the segment through their neighbours."""
    if len(times) <= 2:
        return times, values
    keep = np.ones(len(times), dtype=bool)
    dt = np.diff(times)
    dv = np.diff(values)
    slopes = dv / dt
    # interior point is redundant when the slopes on both sides agree
    same = np.isclose(slopes[:-1], slopes[1:], rtol=1e-12, atol=1e-9)
    keep[1:-1] = ~same
    return times[keep], values[keep]


class _PwlBase:
    """Shared behaviour of breakpoint-encoded curves."""

    times: np.ndarray
    values: np.ndarray
    kind: str = ""

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))

    def value_at(self, t):
        return _eval_pwl(self.times, self.values, t, left_value=float(self.values[0]))

    def long_term_rate(self) -> float:
        return _final_slope(self.times, self.values)

    def to_json(self) -> str:
        doc = {"kind": self.kind, "breakpoints": [[float(t), float(v)] for t, v in self.breakpoints]}
        eps = getattr(self, "epsilon", None)
        if eps is not None:
            doc["epsilon"] = eps
        grid = getattr(self, "rate_grid", None)
        if grid is not None:
            doc["rate_grid"] = [float(r) for r in grid]
        return json.dumps(doc)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_seconds", "value_bits"])
            for t, v in self.breakpoints:
                w.writerow([repr(t), repr(v)])


@dataclass(frozen=True)
class CumulativeProcess(_PwlBase):
    """Non-decreasing cumulative arrivals or departures, bits over seconds.

    Starts at (0, 0), piecewise linear between breakpoints, extrapolated
    with the last segment's slope beyond the final breakpoint.
    """

    times: np.ndarray
    values: np.ndarray
    kind = "cumulative_process"

    def __post_init__(self):
        t, v = np.asarray(self.times, float), np.asarray(self.values, float)
        if t.size == 0:
            raise CurveError("empty breakpoint list")
        if t[0] != 0.0 or v[0] != 0.0:
            raise CurveError("cumulative process must start at (0, 0)")
        if np.any(np.diff(t) <= 0):
            raise CurveError("breakpoint times must be strictly increasing")
        if np.any(np.diff(v) < -1e-9):
            raise CurveError("cumulative values must be non-decreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", np.maximum.accumulate(v))

    @classmethod
    def from_breakpoints(cls, breakpoints) -> "CumulativeProcess":
        return cls(*_as_arrays(breakpoints))

    @classmethod
    def constant_rate(cls, rate_bps: float, duration_s: float) -> "CumulativeProcess":
        return cls(np.array([0.0, duration_s]), np.array([0.0, rate_bps * duration_s]))

    def time_at_level(self, level) -> np.ndarray:
        """Earliest time at which the process reaches ``level`` bits."""
        return _pwl_inverse(self.times, self.values, np.asarray(level, float))


@dataclass(frozen=True)
class ServiceCurve(_PwlBase):
    """Univariate lower service bound S(t) with violation probability epsilon.

    Values are clamped at zero; the curve is non-decreasing in duration.
    """

    times: np.ndarray  # durations, seconds
    values: np.ndarray  # bits
    epsilon: float = 0.0
    rate_grid: tuple | None = None

    kind = "service_curve"

    def __post_init__(self):
        t, v = np.asarray(self.times, float), np.asarray(self.values, float)
        if t.size == 0:
            raise CurveError("empty breakpoint list")
        if np.any(np.diff(t) <= 0):
            raise CurveError("durations must be strictly increasing")
        if not 0.0 <= self.epsilon < 1.0:
            raise CurveError("epsilon must lie in [0, 1)")
        v = np.maximum(v, 0.0)
        if np.any(np.diff(v) < -1e-9):
            raise CurveError("service curve must be non-decreasing")
        if t[0] > 0.0:
            t = np.concatenate([[0.0], t])
            v = np.concatenate([[0.0], v])
        v[0] = 0.0
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", np.maximum.accumulate(v))
        if self.rate_grid is not None:
            object.__setattr__(self, "rate_grid", tuple(float(r) for r in self.rate_grid))

    @classmethod
    def from_breakpoints(cls, breakpoints, epsilon: float = 0.0, rate_grid=None) -> "ServiceCurve":
        t, v = _as_arrays(breakpoints)
        return cls(t, v, epsilon=epsilon, rate_grid=rate_grid)

    @classmethod
    def latency_rate(cls, rate_bps: float, latency_s: float, epsilon: float = 0.0) -> "ServiceCurve":
        """C[t - T]^+ for a constant-rate link with fixed latency."""
        if rate_bps < 0 or latency_s < 0:
            raise CurveError("rate and latency must be non-negative")
        if latency_s == 0.0:
            return cls(np.array([0.0, 1.0]), np.array([0.0, rate_bps]), epsilon=epsilon)
        return cls(
            np.array([0.0, latency_s, latency_s + 1.0]),
            np.array([0.0, 0.0, rate_bps]),
            epsilon=epsilon,
        )

    @classmethod
    def zero(cls) -> "ServiceCurve":
        return cls(np.array([0.0, 1.0]), np.array([0.0, 0.0]))

    @classmethod
    def identity(cls) -> "ServiceCurve":
        """Min-plus identity: 0 at duration 0, effectively infinite after."""
        return cls(np.array([0.0, 1e-12]), np.array([0.0, _IDENTITY_SLOPE * 1e-12]))

    def value_at(self, t):
        return _eval_pwl(self.times, self.values, t, left_value=0.0)


@dataclass(frozen=True)
class TrafficEnvelope(_PwlBase):
    """Upper envelope E(d) of traffic sent in any window of length d."""

    times: np.ndarray  # durations, seconds
    values: np.ndarray  # bits
    truncated: bool = field(default=False, compare=False)

    kind = "traffic_envelope"

    def __post_init__(self):
        t, v = np.asarray(self.times, float), np.asarray(self.values, float)
        if t.size == 0:
            raise CurveError("empty breakpoint list")
        if np.any(np.diff(t) <= 0):
            raise CurveError("durations must be strictly increasing")
        if v[0] < 0:
            raise CurveError("envelope must be non-negative")
        if np.any(np.diff(v) < -1e-9):
            raise CurveError("envelope must be non-decreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", np.maximum.accumulate(v))

    @classmethod
    def token_bucket(cls, burst_bits: float, rate_bps: float, horizon_s: float = 1.0) -> "TrafficEnvelope":
        return cls(np.array([0.0, horizon_s]), np.array([burst_bits, burst_bits + rate_bps * horizon_s]))

    def value_at(self, t):
        return _eval_pwl(self.times, self.values, t, left_value=float(self.values[0]))


def curve_from_json(doc: str):
    """Rebuild a curve/process/envelope from its JSON document."""
    data = json.loads(doc)
    bp = data["breakpoints"]
    kind = data.get("kind")
    if kind == "cumulative_process":
        return CumulativeProcess.from_breakpoints(bp)
    if kind == "service_curve":
        return ServiceCurve.from_breakpoints(
            bp, epsilon=data.get("epsilon", 0.0), rate_grid=data.get("rate_grid")
        )
    if kind == "traffic_envelope":
        t, v = _as_arrays(bp)
        return TrafficEnvelope(t, v)
    raise CurveError(f"unknown curve kind: {kind!r}")


def _arrival_arrays(arrivals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(arrivals, (CumulativeProcess, TrafficEnvelope)):
        return arrivals.times, arrivals.values
    raise CurveError("arrivals must be a CumulativeProcess or TrafficEnvelope")


def _require_process(arrivals) -> CumulativeProcess:
    if not isinstance(arrivals, CumulativeProcess):
        raise CurveError("convolve expects a CumulativeProcess")
    return arrivals


def _pwl_inverse(times: np.ndarray, values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Earliest t with f(t) >= level, extrapolating with the final slope.

    Returns +inf where the level is never reached.
    """
    levels = np.atleast_1d(np.asarray(levels, float))
    out = np.empty_like(levels)
    slope = _final_slope(times, values)
    idx = np.searchsorted(values, levels, side="left")
    for k, (lv, i) in enumerate(zip(levels, idx)):
        if lv <= values[0]:
            out[k] = times[0]
        elif i >= len(values):
            if slope > 0:
                out[k] = times[-1] + (lv - values[-1]) / slope
            else:
                out[k] = np.inf
        else:
            v0, v1 = values[i - 1], values[i]
            t0, t1 = times[i - 1], times[i]
            # v0 < lv <= v1 and v1 > v0 by searchsorted semantics
            out[k] = t0 + (lv - v0) * (t1 - t0) / (v1 - v0)
    return out


# Grids larger than this are thinned before the exact min-plus scan; only
# reachable with adversarially dense inputs, never with probing output.
_MAX_GRID = 2_000_000


def _branch_min(at, av, st, sv, ts) -> np.ndarray:
    """Exact D(ts) = min over tau of A(tau) + S(ts - tau) at given points.

    For piecewise-linear inputs the minimizing tau is a breakpoint of A or
    leaves ts - tau at a breakpoint of S, so scanning those candidates is
    exact pointwise.
    """
    best = np.full(np.shape(ts), np.inf)
    a_left = float(av[0])
    for ai, avi in zip(at, av):
        mask = ts >= ai
        if not mask.any():
            continue
        cand = avi + _eval_pwl(st, sv, ts[mask] - ai, left_value=0.0)
        best[mask] = np.minimum(best[mask], cand)
    for sj, svj in zip(st, sv):
        mask = ts >= sj
        if not mask.any():
            continue
        cand = svj + _eval_pwl(at, av, ts[mask] - sj, left_value=a_left)
        best[mask] = np.minimum(best[mask], cand)
    best = np.minimum(best, _eval_pwl(at, av, ts, left_value=a_left))  # tau = t, S(0) = 0
    return np.maximum(best, 0.0)


def convolve(arrivals, curve: ServiceCurve) -> CumulativeProcess:
    """Min-plus convolution lower bound on departures.

    D(t) = inf over tau in [0, t] of A(tau) + S(t - tau), evaluated exactly:
    for piecewise-linear inputs the infimum is attained where either tau or
    t - tau is a breakpoint.  The output grid holds all pairwise breakpoint
    sums plus bisection-refined points at branch crossings between them.
    """
    at, av = _arrival_arrays(_require_process(arrivals))
    st, sv = curve.times, curve.values
    horizon = at[-1]

    sums = (at[:, None] + st[None, :]).ravel()
    grid = np.unique(np.concatenate([at, st, sums]))
    grid = grid[(grid >= 0.0) & (grid <= horizon + 1e-15)]
    if grid.size > _MAX_GRID:
        step = int(np.ceil(grid.size / _MAX_GRID))
        grid = np.unique(np.concatenate([grid[::step], at, st[st <= horizon]]))
    if grid.size == 0 or grid[0] > 0.0:
        grid = np.concatenate([[0.0], grid])

    best = _branch_min(at, av, st, sv, grid)

    # between pairwise sums the true infimum is a minimum of straight-line
    # branches (concave), so linear interpolation of the grid values can dip
    # below it at branch crossings; bisect such intervals until negligible
    tol = 1e-9 * (abs(av[-1]) + abs(sv[-1]) + 1.0)
    for _ in range(64):
        mids = 0.5 * (grid[:-1] + grid[1:])
        dm = _branch_min(at, av, st, sv, mids)
        bad = dm > 0.5 * (best[:-1] + best[1:]) + tol
        if not bad.any():
            break
        grid = np.concatenate([grid, mids[bad]])
        best = np.concatenate([best, dm[bad]])
        order = np.argsort(grid)
        grid, best = grid[order], best[order]

    gt, gv = _compact_pwl(grid, np.maximum.accumulate(best))
    # for processes this starts at (0, 0); an envelope's instantaneous burst
    # carries through as D(0) = A(0)
    return _RawDepartures(gt, gv)


class _RawDepartures(CumulativeProcess):
    """Departure bound; may start above zero when fed an envelope burst."""

    def __post_init__(self):
        t, v = np.asarray(self.times, float), np.asarray(self.values, float)
        if np.any(np.diff(t) <= 0):
            raise CurveError("breakpoint times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", np.maximum.accumulate(v))


@dataclass(frozen=True)
class DeviationResult:
    """Per-time deviation series plus its maximum."""

    times: np.ndarray
    deviations: np.ndarray
    max: float

    @property
    def per_time(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.deviations.tolist()))


def _check_delay_feasible(arrivals, curve: ServiceCurve) -> None:
    at, av = _arrival_arrays(arrivals)
    r_a = _final_slope(at, av)
    r_s = curve.long_term_rate()
    if r_s < r_a * (1.0 - 1e-9):
        raise UnboundedDelayError(
            f"arrival rate {r_a:.6g} bit/s exceeds service curve rate {r_s:.6g} bit/s"
        )


def _departure_reference(arrivals, curve: ServiceCurve):
    """Lower bound on departures used for deviation computations.

    For a concrete arrival process this is its min-plus convolution with the
    curve.  For a traffic envelope the worst conforming arrival is the
    envelope itself, so the service curve alone bounds the departures.
    """
    if isinstance(arrivals, TrafficEnvelope):
        return curve.times, curve.values
    d = convolve(arrivals, curve)
    return d.times, d.values


def per_time_delays(arrivals, curve: ServiceCurve, at_times, departures=None) -> np.ndarray:
    """Smallest tau with A(t) <= D_lb(t + tau) for each requested t."""
    _check_delay_feasible(arrivals, curve)
    dt, dv = departures if departures is not None else _departure_reference(arrivals, curve)
    at, av = _arrival_arrays(arrivals)
    ts = np.asarray(at_times, float)
    levels = _eval_pwl(at, av, ts, left_value=float(av[0]))
    reach = _pwl_inverse(dt, dv, levels)
    if np.any(np.isinf(reach)):
        raise UnboundedDelayError("departure bound never reaches the arrival level")
    return np.maximum(reach - ts, 0.0)


def delay_bound(arrivals, curve: ServiceCurve) -> DeviationResult:
    """Horizontal deviation between arrivals and their guaranteed departures.

    The reported bound holds with violation probability at most
    ``curve.epsilon``.
    """
    _check_delay_feasible(arrivals, curve)
    dt, dv = _departure_reference(arrivals, curve)
    at, av = _arrival_arrays(arrivals)
    # the deviation can peak where A bends or where A crosses a departure
    # breakpoint level, so both families enter the evaluation grid
    cross = _pwl_inverse(at, av, dv)
    cross = cross[np.isfinite(cross)]
    ts = np.unique(np.concatenate([at, cross]))
    ts = ts[ts <= at[-1] + 1e-15]
    delays = per_time_delays(arrivals, curve, ts, departures=(dt, dv))
    return DeviationResult(ts, delays, float(delays.max()))


def backlog_bound(arrivals, curve: ServiceCurve) -> DeviationResult:
    """Vertical deviation between arrivals and their guaranteed departures."""
    _check_delay_feasible(arrivals, curve)
    dt, dv = _departure_reference(arrivals, curve)
    at, av = _arrival_arrays(arrivals)
    ts = np.unique(np.concatenate([at, dt[dt <= at[-1] + 1e-15]]))
    backlog = _eval_pwl(at, av, ts, left_value=float(av[0])) - _eval_pwl(
        dt, dv, ts, left_value=float(dv[0])
    )
    backlog = np.maximum(backlog, 0.0)
    return DeviationResult(ts, backlog, float(backlog.max()))


def static_window_curve(
    capacity_bps: float, latency_s: float, window_bits: float, horizon_s: float
) -> ServiceCurve:
    """End-to-end service of static window flow control over a latency-rate path.

    Pointwise minimum over n >= 0 of the segments that rise at the network
    rate from n * window at time (2n + 1) * latency: each round trip releases
    one window worth of data.  For window >= capacity * RTT this collapses to
    the plain latency-rate curve.
    """
    if capacity_bps <= 0 or latency_s < 0 or window_bits <= 0:
        raise CurveError("capacity, latency and window must be positive")
    if not np.isfinite(horizon_s) or horizon_s <= 0:
        raise CurveError("horizon must be finite and positive")
    if latency_s == 0.0:
        return ServiceCurve(np.array([0.0, horizon_s]), np.array([0.0, capacity_bps * horizon_s]))

    rtt = 2.0 * latency_s
    rate = min(window_bits / rtt, capacity_bps)
    n_max = int(np.ceil(horizon_s * rate / window_bits)) + int(np.ceil(horizon_s / rtt)) + 2

    ns = np.arange(n_max + 1, dtype=float)
    starts = (2.0 * ns + 1.0) * latency_s
    # candidate bend points: segment starts and plateau-reach times
    cand = np.unique(np.concatenate([[0.0], starts, starts + window_bits / capacity_bps, [horizon_s]]))
    cand = cand[cand <= horizon_s + 1e-15]
    if cand[-1] < horizon_s:
        cand = np.concatenate([cand, [horizon_s]])

    seg = capacity_bps * np.maximum(cand[None, :] - starts[:, None], 0.0) + ns[:, None] * window_bits
    vals = seg.min(axis=0)
    t, v = _compact_pwl(cand, vals)
    return ServiceCurve(t, v)


def attainable_rate(curve: ServiceCurve, t_min: float | None = None, t_max: float | None = None, num: int = 200):
    """Sample alpha(t) = S(t) / t on a log-spaced duration grid.

    Returns (durations, rates) arrays; alpha converges to the curve's
    long-term slope for large t.
    """
    last = float(curve.times[-1]) if curve.times[-1] > 0 else 1.0
    if t_min is None:
        pos = curve.times[curve.times > 0]
        t_min = float(pos[0]) / 10.0 if pos.size else last / 1000.0
    if t_max is None:
        t_max = last * 100.0
    if t_min <= 0 or t_max <= t_min:
        raise CurveError("need 0 < t_min < t_max")
    grid = np.logspace(np.log10(t_min), np.log10(t_max), num)
    rates = curve.value_at(grid) / grid
    return grid, rates


def empirical_envelope(trace: CumulativeProcess, durations) -> TrafficEnvelope:
    """E(d) = max over window starts tau of A(tau + d) - A(tau)."""
    durations = np.unique(np.asarray(durations, float))
    if np.any(durations < 0):
        raise CurveError("durations must be non-negative")
    length = float(trace.times[-1])
    truncated = bool(np.any(durations > length))
    if truncated:
        warnings.warn("requested durations exceed trace length; truncating", stacklevel=2)
        durations = np.unique(np.minimum(durations, length))
    at, av = trace.times, trace.values
    out = np.empty_like(durations)
    for k, d in enumerate(durations):
        taus = np.concatenate([at, at - d])
        taus = taus[(taus >= 0.0) & (taus <= length - d + 1e-15)]
        if taus.size == 0:
            taus = np.array([0.0])
        gains = _eval_pwl(at, av, taus + d) - _eval_pwl(at, av, taus)
        out[k] = gains.max()
    if durations[0] > 0.0:
        durations = np.concatenate([[0.0], durations])
        out = np.concatenate([[0.0], out])
    return TrafficEnvelope(durations, np.maximum(out, 0.0), truncated=truncated)


def mathis_rate(mss_bits: float, loss_prob: float, rtt_s: float, L: float = 1.31) -> float:
    """Long-term AIMD rate MSS * L / (sqrt(p) * RTT)."""
    if not 0.0 < loss_prob <= 1.0:
        raise CurveError("loss probability must lie in (0, 1]")
    if rtt_s <= 0:
        raise CurveError("RTT must be positive")
    return mss_bits * L / (np.sqrt(loss_prob) * rtt_s)


@dataclass(frozen=True)
class PeriodicLossModel:
    """Sawtooth window statistics under a fixed loss period."""

    w_max_bits: float
    w_min_bits: float
    mean_rate_bps: float
    min_instantaneous_rate_bps: float


def periodic_loss_model(loss_prob: float, rtt_s: float, mss_bits: float = 1.0) -> PeriodicLossModel:
    """AIMD sawtooth between w_max = mss * sqrt(8 / (3 p)) and w_max / 2.

    The minimum instantaneous rate is exactly 2/3 of the mean rate.
    """
    if not 0.0 < loss_prob < 1.0:
        raise CurveError("loss probability must lie in (0, 1)")
    if rtt_s <= 0:
        raise CurveError("RTT must be positive")
    w_max = mss_bits * np.sqrt(8.0 / (3.0 * loss_prob))
    return PeriodicLossModel(
        w_max_bits=w_max,
        w_min_bits=w_max / 2.0,
        mean_rate_bps=3.0 * w_max / (4.0 * rtt_s),
        min_instantaneous_rate_bps=w_max / (2.0 * rtt_s),
    )
