"""flowbench: service-curve estimation and delay-bound analysis for
closed-loop window flow control.

The package has four layers:

- :mod:`flowbench.curves` — min-plus calculus on piecewise-linear curves
  (convolution, delay/backlog bounds, analytic reference curves).
- :mod:`flowbench.simulate` — deterministic discrete-event simulator of a
  window flow-control loop over a time-varying path.
- :mod:`flowbench.stats` — stationarity (DF-GLS), independence (runs test),
  quantile, and autocorrelation machinery.
- :mod:`flowbench.probe` — the probing estimator: rate sweep, per-rate
  records, curve assembly, and delay-bound validation.
"""

from .curves import (
    CumulativeProcess,
    CurveError,
    DeviationResult,
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
from .probe import (
    EmptyUsableSetError,
    ProbeConfig,
    ProbeError,
    RateProbeRecord,
    ServiceCurveEstimator,
    ValidationReport,
    assemble_estimate,
    probe_rate,
    sweep,
    validate_delay_bounds,
)
from .simulate import (
    AimdWindow,
    CongestionSignal,
    ConstantSource,
    FlowLoopSim,
    GreedySource,
    NetworkPath,
    ProbeTrainSampler,
    ScenarioError,
    ScenarioSpec,
    SimOutput,
    StaticWindow,
    TraceSource,
    cwnd_autocorrelation,
    decompose_delays,
    run_scenario,
    stack_buffering_probability,
)
from .stats import (
    DegenerateSeriesError,
    InsufficientSamplesError,
    StatsError,
    TestOutcome,
    autocorrelation,
    dfgls_test,
    empirical_quantile,
    runs_test,
)
from .traces import TraceError, read_trace_csv, synthetic_vbr_trace, write_trace_csv

__version__ = "0.1.0"
