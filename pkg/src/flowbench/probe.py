"""Service-curve estimation by constant-rate probing.

A rate sweep sends constant-rate packet trains through a simulated
flow-control scenario.  For each rate, sampled end-to-end delays are tested
for stationarity (DF-GLS) and independence (runs test); trains failing
independence alone are extended and decimated until both hold or a budget
is spent.  Each admissible rate r contributes a line r*t - B(r) with
B(r) = r * delay-quantile, and the upper envelope of these lines (zero
clamped) is the estimated effective service curve with violation
probability epsilon = |R| * xi.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .curves import (
    CumulativeProcess,
    ServiceCurve,
    UnboundedDelayError,
    delay_bound,
)
from .simulate import ConstantSource, ProbeTrainSampler, ScenarioSpec, run_scenario
from .stats import (
    DegenerateSeriesError,
    TestOutcome,
    dfgls_test,
    empirical_quantile,
    is_degenerate,
    runs_test,
)

__all__ = [
    "ProbeError",
    "EmptyUsableSetError",
    "ProbeConfig",
    "RateProbeRecord",
    "probe_rate",
    "sweep",
    "assemble_estimate",
    "validate_delay_bounds",
    "ValidationReport",
    "ServiceCurveEstimator",
]


class ProbeError(ValueError):
    """Invalid probing configuration or unusable result."""


class EmptyUsableSetError(ProbeError):
    """No probing rate observed a usable steady state."""


@dataclass(frozen=True)
class ProbeConfig:
    """Parameters of the rate-sweep estimation procedure.

    xi is the per-rate quantile violation probability; the assembled curve
    carries epsilon = |R| * xi by the union bound.
    """

    r_acc_bps: float
    xi: float = 1e-4
    samples_i: int = 750
    max_extensions: int = 8
    packet_bits: float = 12000.0
    sampling_gap_packets: int = 100
    seed: int = 0
    max_rates: int = 10_000

    def __post_init__(self):
        if self.r_acc_bps <= 0:
            raise ProbeError("probing accuracy r_acc must be positive")
        if not 0.0 < self.xi < 0.5:
            raise ProbeError("xi must lie in (0, 0.5)")
        if self.samples_i < 50:
            raise ProbeError("need at least 50 samples per rate")
        if self.max_extensions < 0:
            raise ProbeError("max_extensions must be non-negative")
        if self.packet_bits <= 0 or self.sampling_gap_packets < 1:
            raise ProbeError("packet size and sampling gap must be positive")

    def to_dict(self) -> dict:
        return {
            "r_acc_bps": self.r_acc_bps,
            "xi": self.xi,
            "samples_i": self.samples_i,
            "max_extensions": self.max_extensions,
            "packet_bits": self.packet_bits,
            "sampling_gap_packets": self.sampling_gap_packets,
            "seed": self.seed,
            "max_rates": self.max_rates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeConfig":
        return cls(
            r_acc_bps=float(d["r_acc_bps"]),
            xi=float(d.get("xi", 1e-4)),
            samples_i=int(d.get("samples_i", 750)),
            max_extensions=int(d.get("max_extensions", 8)),
            packet_bits=float(d.get("packet_bits", 12000.0)),
            sampling_gap_packets=int(d.get("sampling_gap_packets", 100)),
            seed=int(d.get("seed", 0)),
            max_rates=int(d.get("max_rates", 10_000)),
        )


@dataclass(frozen=True)
class RateProbeRecord:
    """Outcome of probing one constant rate.

    delay_quantile_s (and backlog_quantile_bits = rate * delay_quantile_s)
    are present only when both admissibility flags hold.
    """

    rate_bps: float
    samples: np.ndarray
    extensions_used: int
    stationary: bool
    independent: bool
    delay_quantile_s: float | None = None
    backlog_quantile_bits: float | None = None
    stationarity_outcome: TestOutcome | None = None
    independence_outcome: TestOutcome | None = None

    @property
    def usable(self) -> bool:
        return self.stationary and self.independent

    def to_dict(self) -> dict:
        def outcome(o):
            if o is None:
                return None
            return {"statistic": o.statistic, "critical_value": o.critical_value,
                    "level": o.level, "passed": o.passed}

        return {
            "rate_bps": self.rate_bps,
            "extensions_used": self.extensions_used,
            "stationary": self.stationary,
            "independent": self.independent,
            "delay_quantile_s": self.delay_quantile_s,
            "backlog_quantile_bits": self.backlog_quantile_bits,
            "stationarity_test": outcome(self.stationarity_outcome),
            "independence_test": outcome(self.independence_outcome),
            "n_samples": int(len(self.samples)),
        }


def _sample_indices(n_samples: int, gap: int, first: int, rng: np.random.Generator) -> np.ndarray:
    """Packet indices of the sampled delays: spacing ``gap`` with mild jitter."""
    jitter_span = max(1, gap // 8)
    jitter = rng.integers(0, jitter_span, size=n_samples)
    return first + np.arange(n_samples, dtype=np.int64) * gap + jitter


def _probe_scenario(scenario: ScenarioSpec, rate_bps: float, config: ProbeConfig) -> ScenarioSpec:
    # the sampler drives the horizon by packet count; the duration here is
    # only a validity placeholder
    return scenario.replace(
        source=ConstantSource(rate_bps),
        mss_bits=config.packet_bits,
        duration_s=scenario.warmup_s + 1.0,
        seed=scenario.seed,
    )


def probe_rate(scenario: ScenarioSpec, rate_bps: float, config: ProbeConfig) -> RateProbeRecord:
    """Probe one constant rate through the scenario's flow-control loop.

    Collects the end-to-end delay of every sampling_gap_packets-th packet
    after warmup until samples_i values exist, then applies the DF-GLS and
    runs tests.  A train that is stationary but fails independence is
    extended: after the e-th extension (e+1)*samples_i samples exist, of
    which every (e+1)-th forms the decimated test subset, and both tests
    are re-applied.  A rate whose flags never both pass within the
    extension budget is a normal result (it terminates a sweep), not an
    error.
    """
    if rate_bps <= 0:
        raise ProbeError("probing rate must be positive")
    j = int(round(rate_bps / config.r_acc_bps))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 0x9A, j)))

    pkt_interval = config.packet_bits / rate_bps
    warmup_pkts = int(np.ceil(scenario.warmup_s / pkt_interval))
    gap = config.sampling_gap_packets
    i_target = config.samples_i

    sampler = ProbeTrainSampler(_probe_scenario(scenario, rate_bps, config))

    idx = _sample_indices(i_target, gap, warmup_pkts, rng)
    extensions = 0
    stationary = independent = False
    st_out = ind_out = None
    subset = None

    while True:
        delays = sampler.delays(idx)
        # decimated subset: every (extensions+1)-th of the full series; the
        # rotating offset keeps any single sample from anchoring every round
        subset = delays[extensions :: extensions + 1][:i_target]

        if is_degenerate(subset):
            # constant delays: trivially stationary and independent
            stationary = independent = True
            st_out = ind_out = None
            break
        try:
            st_out = dfgls_test(subset)
        except DegenerateSeriesError:
            stationary = independent = True
            break
        stationary = st_out.passed
        if stationary:
            try:
                ind_out = runs_test(subset)
                independent = ind_out.passed
            except DegenerateSeriesError:
                # dominated by a repeated value; dependence is untestable
                independent = True
        else:
            independent = False
            ind_out = None
        # an extension lengthens the train and widens the decimated
        # spacing, so both a dependence verdict and a spurious
        # non-stationarity verdict get another chance on better data
        if (stationary and independent) or extensions >= config.max_extensions:
            break
        extensions += 1
        more = _sample_indices(i_target * (extensions + 1), gap, warmup_pkts, rng)
        # keep already-used indices stable; only append new ones
        idx = np.concatenate([idx, more[len(idx):]])

    record = RateProbeRecord(
        rate_bps=rate_bps,
        samples=subset,
        extensions_used=extensions,
        stationary=stationary,
        independent=independent,
        stationarity_outcome=st_out,
        independence_outcome=ind_out,
    )
    if record.usable:
        dq = empirical_quantile(subset, 1.0 - config.xi)
        record = RateProbeRecord(
            rate_bps=rate_bps,
            samples=subset,
            extensions_used=extensions,
            stationary=True,
            independent=True,
            delay_quantile_s=dq,
            backlog_quantile_bits=rate_bps * dq,
            stationarity_outcome=st_out,
            independence_outcome=ind_out,
        )
    return record


def sweep(scenario: ScenarioSpec, config: ProbeConfig) -> list[RateProbeRecord]:
    """Probe rates j*r_acc for j=1,2,... until the first unusable rate.

    Returns all records in rate order, including the terminal failing one.
    Raises EmptyUsableSetError if the very first rate is already unusable.
    """
    records: list[RateProbeRecord] = []
    for j in range(1, config.max_rates + 1):
        rate = j * config.r_acc_bps
        rec = probe_rate(scenario.replace(seed=_rate_seed(config.seed, j)), rate, config)
        records.append(rec)
        if not rec.usable:
            break
    else:
        raise ProbeError("rate sweep did not terminate within max_rates")
    if not records[0].usable:
        raise EmptyUsableSetError(
            f"first probing rate {records[0].rate_bps:g} bit/s observed no steady state"
        )
    return records


def _rate_seed(seed: int, j: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, 0x5EED, j)).generate_state(1)[0])


def assemble_estimate(records: list[RateProbeRecord], config: ProbeConfig) -> ServiceCurve:
    """Assemble the effective service curve from the usable probe records.

    S(t) = [max over usable rates r of r*t - B(r)]^+, the exact upper
    envelope of the lines, with epsilon = |R| * xi.
    """
    usable = [r for r in records if r.usable]
    if not usable:
        raise EmptyUsableSetError("no probing rate passed both admissibility tests")
    lines: dict[float, float] = {}
    for r in usable:
        s = float(r.rate_bps)
        b = -float(r.backlog_quantile_bits)
        lines[s] = max(lines.get(s, -np.inf), b)
    slopes = np.array(sorted(lines))
    intercepts = np.array([lines[s] for s in slopes])

    # upper envelope of lines by slope-ordered intersection (convex hull)
    hull: list[int] = []
    for i in range(len(slopes)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if the (a, i) crossing lies left of the (a, b) crossing
            x_ab = (intercepts[a] - intercepts[b]) / (slopes[b] - slopes[a])
            x_ai = (intercepts[a] - intercepts[i]) / (slopes[i] - slopes[a])
            if x_ai <= x_ab:
                hull.pop()
            else:
                break
        if len(hull) == 1 and intercepts[i] >= intercepts[hull[0]]:
            # steeper line everywhere above the first one
            if slopes[i] > slopes[hull[0]]:
                hull.pop()
        hull.append(i)

    # breakpoints: consecutive line intersections, then clamp at zero
    xs = []
    for a, b in zip(hull[:-1], hull[1:]):
        xs.append((intercepts[a] - intercepts[b]) / (slopes[b] - slopes[a]))
    pts: list[tuple[float, float]] = []
    prev_x = 0.0
    for seg, line in enumerate(hull):
        x0 = prev_x if seg == 0 else xs[seg - 1]
        x1 = xs[seg] if seg < len(xs) else None
        pts.append((x0, slopes[line] * x0 + intercepts[line]))
        if x1 is not None:
            prev_x = x1
    # final point far enough right to pin the terminal slope
    last = hull[-1]
    x_end = max((p[0] for p in pts), default=0.0) + 1.0
    pts.append((x_end, slopes[last] * x_end + intercepts[last]))

    times = np.array([p[0] for p in pts])
    values = np.array([p[1] for p in pts])
    # zero clamp: insert the crossing of the envelope with zero
    if values[0] < 0:
        cross = np.nonzero(values > 0)[0]
        if len(cross):
            k = cross[0]
            t0 = times[k - 1] + (0.0 - values[k - 1]) * (times[k] - times[k - 1]) / (values[k] - values[k - 1])
            times = np.concatenate([[0.0, t0], times[k:]])
            values = np.concatenate([[0.0, 0.0], values[k:]])
        else:
            times, values = np.array([0.0]), np.array([0.0])
    epsilon = len(usable) * config.xi
    if epsilon >= 1.0:
        raise ProbeError(f"epsilon = |R|*xi = {epsilon:g} is not a probability; decrease xi")
    return ServiceCurve.from_breakpoints(
        list(zip(times, values)), epsilon=epsilon, rate_grid=[float(s) for s in slopes]
    )


@dataclass(frozen=True)
class ValidationReport:
    """Per-packet analytic bounds vs empirical delay quantiles."""

    packet_ids: np.ndarray
    analytic_bound_s: np.ndarray
    empirical_quantile_s: np.ndarray
    epsilon: float
    repetitions: int
    violation_fraction: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "repetitions": self.repetitions,
            "n_packets": int(len(self.packet_ids)),
            "violation_fraction": self.violation_fraction,
            "max_bound_s": float(self.analytic_bound_s.max()),
            "max_quantile_s": float(self.empirical_quantile_s.max()),
        }


def validate_delay_bounds(
    estimate: ServiceCurve,
    trace: CumulativeProcess,
    scenario: ScenarioSpec,
    repetitions: int,
    epsilon_target: float | None = None,
    warmup_s: float = 5.0,
) -> ValidationReport:
    """Check analytic delay bounds against empirical quantiles.

    The analytic per-packet bound comes from the min-plus delay bound of
    the trace against the estimate.  The empirical side replays the trace
    through the scenario ``repetitions`` times with independent seeds and
    takes per-packet (1 - epsilon) delay quantiles.

    The bound describes the loop in steady state, so each repetition
    prepends ``warmup_s`` seconds of constant-rate traffic at the trace's
    mean rate; only the trace packets themselves are scored.
    """
    from .simulate import TraceSource

    if repetitions < 2:
        raise ProbeError("need at least two repetitions")
    eps = estimate.epsilon if epsilon_target is None else epsilon_target
    if not 0.0 < eps < 1.0:
        raise ProbeError("epsilon target must lie in (0, 1)")
    trace_mean = float(trace.values[-1]) / float(trace.times[-1])
    if max(trace_mean, trace.long_term_rate()) >= estimate.long_term_rate():
        raise UnboundedDelayError(
            "trace long-term rate reaches the service estimate's long-term slope"
        )
    if warmup_s < 0:
        raise ProbeError("warmup must be non-negative")

    mss = scenario.mss_bits
    mean_rate = trace.long_term_rate()
    # warmup volume rounded to whole packets so scored packets align 1:1
    n_warm = int(np.ceil(mean_rate * warmup_s / mss)) if warmup_s > 0 else 0
    warm_bits = n_warm * mss
    warm_dur = warm_bits / mean_rate if n_warm else 0.0
    tt = np.asarray(trace.times)
    tv = np.asarray(trace.values)
    pts = [(0.0, 0.0)] + [(warm_dur + float(t), warm_bits + float(v)) for t, v in zip(tt, tv)]
    driven = CumulativeProcess.from_breakpoints(pts)

    base = scenario.replace(
        source=TraceSource(driven),
        duration_s=warm_dur + float(tt[-1]) + 1.0,
        warmup_s=warm_dur,
    )
    delays = None
    n_pkts = None
    for rep in range(repetitions):
        out = run_scenario(base.replace(seed=_rate_seed(scenario.seed, 1_000_000 + rep)))
        d = (out.t4 - out.t1)[n_warm:]
        if delays is None:
            n_pkts = len(d)
            delays = np.empty((repetitions, n_pkts))
        if len(d) != n_pkts:
            raise ProbeError("repetitions produced differing packet counts")
        delays[rep] = d

    q = 1.0 - eps
    k = int(np.ceil(q * repetitions))
    emp = np.partition(delays, k - 1, axis=0)[k - 1]

    # analytic bound at each packet's arrival instant
    pkt_times = trace.time_at_level((np.arange(n_pkts) + 1) * base.mss_bits)
    from .curves import convolve, _eval_pwl, _pwl_inverse

    dep = convolve(trace, estimate)
    dt = np.asarray(dep.times)
    dv = np.asarray(dep.values)
    levels = (np.arange(n_pkts) + 1) * base.mss_bits
    t_served = _pwl_inverse(dt, dv, levels.astype(float))
    bounds = t_served - pkt_times
    if not np.isfinite(bounds).all():
        raise UnboundedDelayError("analytic bound diverges within the trace horizon")

    viol = float(np.mean(emp > bounds + 1e-12))
    return ValidationReport(
        packet_ids=np.arange(n_pkts),
        analytic_bound_s=bounds,
        empirical_quantile_s=emp,
        epsilon=eps,
        repetitions=repetitions,
        violation_fraction=viol,
    )


class ServiceCurveEstimator(BaseEstimator):
    """Estimator-style wrapper around sweep + assemble_estimate.

    Parameters mirror ProbeConfig; ``fit(scenario)`` runs the sweep and
    exposes ``curve_``, ``records_`` and ``epsilon_``.
    """

    def __init__(self, r_acc_bps=1e6, xi=1e-4, samples_i=750, max_extensions=8,
                 packet_bits=12000.0, sampling_gap_packets=100, seed=0):
        self.r_acc_bps = r_acc_bps
        self.xi = xi
        self.samples_i = samples_i
        self.max_extensions = max_extensions
        self.packet_bits = packet_bits
        self.sampling_gap_packets = sampling_gap_packets
        self.seed = seed

    def _config(self) -> ProbeConfig:
        return ProbeConfig(
            r_acc_bps=self.r_acc_bps,
            xi=self.xi,
            samples_i=self.samples_i,
            max_extensions=self.max_extensions,
            packet_bits=self.packet_bits,
            sampling_gap_packets=self.sampling_gap_packets,
            seed=self.seed,
        )

    def fit(self, scenario: ScenarioSpec, y=None):
        config = self._config()
        self.records_ = sweep(scenario, config)
        self.curve_ = assemble_estimate(self.records_, config)
        self.epsilon_ = self.curve_.epsilon
        return self

    def predict(self, t):
        """Evaluate the fitted service-curve estimate at times t (seconds)."""
        if not hasattr(self, "curve_"):
            raise ProbeError("estimator is not fitted")
        return self.curve_.value_at(np.asarray(t, dtype=float))

    def report(self) -> dict:
        if not hasattr(self, "curve_"):
            raise ProbeError("estimator is not fitted")
        return {
            "config": self._config().to_dict(),
            "records": [r.to_dict() for r in self.records_],
            "epsilon": self.epsilon_,
            "curve": json.loads(self.curve_.to_json()),
        }
