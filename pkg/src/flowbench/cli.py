"""Command-line front end.

Commands: ``simulate``, ``estimate``, ``validate``, ``autocorr``,
``figures``.  Each reads a JSON config, runs the corresponding library
pipeline, and writes CSV/JSON artifacts suitable for plotting.

Exit codes: 0 success, 2 configuration error, 3 method-level failure
(unbounded delay, empty usable rate set), 4 internal invariant violation.
"""

from __future__ import annotations

import csv
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import click
import numpy as np

from .curves import (
    ServiceCurve,
    UnboundedDelayError,
    attainable_rate,
    curve_from_json,
    static_window_curve,
)
from .probe import (
    EmptyUsableSetError,
    ProbeConfig,
    ProbeError,
    assemble_estimate,
    sweep,
    validate_delay_bounds,
)
from .simulate import (
    ScenarioError,
    ScenarioSpec,
    cwnd_autocorrelation,
    decompose_delays,
    run_scenario,
    stack_buffering_probability,
)
from .traces import TraceError, read_trace_csv, synthetic_vbr_trace

EXIT_CONFIG = 2
EXIT_METHOD = 3
EXIT_INTERNAL = 4

_CONFIG_ERRORS = (ScenarioError, ProbeError, TraceError, KeyError, TypeError)
_METHOD_ERRORS = (UnboundedDelayError, EmptyUsableSetError)


# ---------------------------------------------------------------------------
# atomic artifact writers


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_rows(path: Path, header: list[str], rows) -> None:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    _atomic_text(path, buf.getvalue())


def _atomic_json(path: Path, obj) -> None:
    _atomic_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# config loading


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise click.ClickException(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"malformed JSON in {path} (line {exc.lineno}, col {exc.colno}): {exc.msg}")


def _scenario_from(cfg: dict, seed_override: int | None) -> ScenarioSpec:
    if "scenario" not in cfg:
        raise click.ClickException("config is missing the 'scenario' section")
    spec = ScenarioSpec.from_json(cfg["scenario"])
    if seed_override is not None:
        spec = spec.replace(seed=seed_override)
    return spec


def _trace_from(cfg: dict, base_dir: Path, seed_override: int | None):
    tr = cfg.get("trace")
    if tr is None:
        raise click.ClickException("config is missing the 'trace' section")
    if "csv" in tr:
        return read_trace_csv(base_dir / tr["csv"] if not os.path.isabs(tr["csv"]) else tr["csv"])
    if "synthetic" in tr:
        params = dict(tr["synthetic"])
        if seed_override is not None:
            params["seed"] = seed_override
        return synthetic_vbr_trace(**params)
    raise click.ClickException("trace section needs either a 'csv' path or 'synthetic' parameters")


def _jobs_value(jobs: int | None) -> int:
    if jobs is not None:
        return max(1, jobs)
    env = os.environ.get("FLOWBENCH_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise click.ClickException(f"FLOWBENCH_JOBS is not an integer: {env!r}")
    return 1


# ---------------------------------------------------------------------------
# command bodies (shared with the figures driver)


def _do_simulate(cfg: dict, out_dir: Path, seed_override: int | None) -> dict:
    spec = _scenario_from(cfg, seed_override)
    out = run_scenario(spec)
    comp = decompose_delays(out)

    _atomic_rows(
        out_dir / "packets.csv",
        ["id", "t1", "t2", "t3", "t4", "signaled", "retx"],
        (
            [i, repr(out.t1[i]), repr(out.t2[i]), repr(out.t3[i]), repr(out.t4[i]),
             int(out.signaled[i]), int(out.retx[i])]
            for i in range(len(out.t1))
        ),
    )
    _atomic_rows(
        out_dir / "cwnd.csv",
        ["t_seconds", "w_bits"],
        ([repr(float(t)), repr(float(v))] for t, v in zip(out.cwnd_times, out.cwnd_bits)),
    )
    _atomic_rows(
        out_dir / "delay_components.csv",
        ["id", "d_snd", "d_net", "d_rcv", "d_e2e"],
        (
            [i, repr(comp["d_snd"][i]), repr(comp["d_net"][i]), repr(comp["d_rcv"][i]), repr(comp["d_e2e"][i])]
            for i in range(len(out.t1))
        ),
    )

    mask = out.steady_state_mask()
    comps = {k: v[mask] for k, v in comp.items()}
    grid = np.unique(np.concatenate([np.asarray(v, float) for v in comps.values()]))
    n = max(1, int(mask.sum()))
    ccdf_cols = {k: (np.searchsorted(np.sort(v), grid, side="right") * (-1.0 / n) + 1.0) for k, v in comps.items()}
    _atomic_rows(
        out_dir / "ccdf.csv",
        ["delay_s", "p_snd", "p_net", "p_rcv", "p_e2e"],
        (
            [repr(float(g)), repr(float(ccdf_cols["d_snd"][i])), repr(float(ccdf_cols["d_net"][i])),
             repr(float(ccdf_cols["d_rcv"][i])), repr(float(ccdf_cols["d_e2e"][i]))]
            for i, g in enumerate(grid)
        ),
    )
    return {
        "packets": int(len(out.t1)),
        "delivered_rate_bps": out.delivered_rate_bps(),
        "stack_buffering_probability": stack_buffering_probability(out) if mask.any() else None,
    }


def _do_estimate(cfg: dict, out_dir: Path, seed_override: int | None) -> dict:
    spec = _scenario_from(cfg, seed_override)
    if "probe" not in cfg:
        raise click.ClickException("config is missing the 'probe' section")
    probe_cfg = ProbeConfig.from_dict(cfg["probe"])
    if seed_override is not None:
        d = probe_cfg.to_dict()
        d["seed"] = seed_override
        probe_cfg = ProbeConfig.from_dict(d)

    records = sweep(spec, probe_cfg)
    estimate = assemble_estimate(records, probe_cfg)

    report = {
        "probe_config": probe_cfg.to_dict(),
        "scenario": json.loads(spec.to_json()),
        "records": [r.to_dict() for r in records],
        "epsilon": estimate.epsilon,
        "long_term_rate_bps": estimate.long_term_rate(),
        "curve": json.loads(estimate.to_json()),
    }
    _atomic_json(out_dir / "report.json", report)
    _atomic_rows(
        out_dir / "curve.csv",
        ["t_seconds", "s_bits"],
        ([repr(float(t)), repr(float(v))] for t, v in estimate.breakpoints),
    )
    _atomic_rows(
        out_dir / "quantiles.csv",
        ["rate_bps", "delay_q_s", "backlog_q_bits", "stationary", "independent"],
        (
            [repr(float(r.rate_bps)),
             "" if r.delay_quantile_s is None else repr(float(r.delay_quantile_s)),
             "" if r.backlog_quantile_bits is None else repr(float(r.backlog_quantile_bits)),
             int(r.stationary), int(r.independent)]
            for r in records
        ),
    )
    alpha_t, alpha_r = attainable_rate(estimate, t_min=1e-3, t_max=100.0, num=400)
    _atomic_rows(
        out_dir / "alpha.csv",
        ["t_seconds", "rate_bps"],
        ([repr(float(t)), repr(float(a))] for t, a in zip(alpha_t, alpha_r)),
    )
    return report


def _do_validate(cfg: dict, out_dir: Path, seed_override: int | None, base_dir: Path) -> dict:
    spec = _scenario_from(cfg, seed_override)
    if "estimate_report" in cfg:
        rp = cfg["estimate_report"]
        report = _load_config(rp if os.path.isabs(rp) else str(base_dir / rp))
        estimate = curve_from_json(json.dumps(report["curve"]))
        if not isinstance(estimate, ServiceCurve):
            raise click.ClickException("estimate report does not contain a service curve")
    elif "probe" in cfg:
        probe_cfg = ProbeConfig.from_dict(cfg["probe"])
        estimate = assemble_estimate(sweep(spec, probe_cfg), probe_cfg)
    else:
        raise click.ClickException("config needs 'estimate_report' or a 'probe' section")

    trace = _trace_from(cfg, base_dir, None)
    repetitions = int(cfg.get("repetitions", 300))
    result = validate_delay_bounds(
        estimate, trace, spec, repetitions, warmup_s=float(cfg.get("warmup_s", 5.0))
    )
    _atomic_rows(
        out_dir / "bounds_vs_quantiles.csv",
        ["pkt", "analytic_bound_s", "empirical_q_s"],
        (
            [int(p), repr(float(b)), repr(float(q))]
            for p, b, q in zip(result.packet_ids, result.analytic_bound_s, result.empirical_quantile_s)
        ),
    )
    summary = result.to_dict()
    _atomic_json(out_dir / "summary.json", summary)
    return summary


def _do_autocorr(cfg: dict, out_dir: Path, seed_override: int | None) -> dict:
    spec = _scenario_from(cfg, seed_override)
    out = run_scenario(spec)
    max_lag = float(cfg.get("max_lag_s", 2.0))
    step = float(cfg.get("lag_step_s", 0.005))
    tick = float(cfg.get("tick_s", 1e-3))
    lags = np.arange(0.0, max_lag + step / 2, step)
    acf = cwnd_autocorrelation(out.cwnd_times, out.cwnd_bits, lags, tick_s=tick, t_start=spec.warmup_s)
    _atomic_rows(
        out_dir / "acf.csv",
        ["lag_s", "correlation"],
        ([repr(float(l)), repr(float(c))] for l, c in acf),
    )
    return {"n_lags": len(acf)}


# ---------------------------------------------------------------------------
# figures driver

_FIGURES = ("4a", "4b", "5a", "5b", "7", "9-qualitative", "12d-qualitative")


def _check_4a(cfg: dict, out_dir: Path, seed: int | None) -> dict:
    report = _do_estimate(cfg, out_dir, seed)
    est = curve_from_json(json.dumps(report["curve"]))
    scen = ScenarioSpec.from_json(cfg["scenario"])
    cap = scen.path.capacity_bps
    one_way = scen.path.fwd_delay_s
    rtt = scen.path.fwd_delay_s + scen.path.rev_delay_s
    w = scen.controller.window_bits
    pkt_time = scen.mss_bits / cap
    expected_rate = min(w / rtt, cap)
    analytic = static_window_curve(cap, one_way, w, horizon_s=3.0)
    ts = np.linspace(1e-3, 3.0, 400)
    below = bool(np.all([est.value_at(t) <= analytic.value_at(t) + 1e-6 for t in ts]))
    slope = est.long_term_rate()
    # latency of the final ray: t-intercept of the line through the last breakpoint
    t_last, v_last = est.breakpoints[-1]
    latency = t_last - v_last / slope
    return {
        "long_term_rate_bps": slope,
        "expected_rate_bps": expected_rate,
        "latency_s": latency,
        "one_way_s": one_way,
        "below_analytic": below,
        "passed": bool(
            abs(slope - expected_rate) <= 1e-6 * expected_rate
            and abs(latency - one_way) <= pkt_time + 1e-9
            and below
        ),
    }


def _check_4b(cfg: dict, out_dir: Path, seed: int | None) -> dict:
    report = _do_estimate(cfg, out_dir, seed)
    est = curve_from_json(json.dumps(report["curve"]))
    scen = ScenarioSpec.from_json(cfg["scenario"])
    cap = scen.path.capacity_bps
    one_way = scen.path.fwd_delay_s
    pkt_time = scen.mss_bits / cap
    ts = np.linspace(0.0, 3.0, 600)
    ref = np.maximum(0.0, (ts - one_way)) * cap
    got = np.array([est.value_at(t) for t in ts])
    tol_bits = cap * (pkt_time + ts[1] - ts[0])
    err = float(np.max(np.abs(got - ref)))
    return {"max_error_bits": err, "tolerance_bits": tol_bits, "passed": bool(err <= tol_bits)}


def _check_5(cfg: dict, out_dir: Path, seed: int | None, allowed_pkts: tuple) -> dict:
    report = _do_estimate(cfg, out_dir, seed)
    mss = ScenarioSpec.from_json(cfg["scenario"]).mss_bits
    usable = [r for r in report["records"] if r["stationary"] and r["independent"]]
    last = usable[-1]["rate_bps"] / mss if usable else None
    return {"last_stationary_pkts": last, "allowed": list(allowed_pkts),
            "passed": bool(last in allowed_pkts)}


def _check_7(cfg: dict, out_dir: Path, seed: int | None, base_dir: Path) -> dict:
    summary = _do_validate(cfg, out_dir, seed, base_dir)
    return {**summary, "passed": bool(summary["violation_fraction"] <= summary["epsilon"])}


def _check_9(cfg: dict, out_dir: Path, seed: int | None) -> dict:
    res = {}
    for name in ("periodic", "bernoulli"):
        sub = dict(cfg[name])
        spec = _scenario_from(sub, seed)
        out = run_scenario(spec)
        res[name] = stack_buffering_probability(out)
        _atomic_json(out_dir / f"stack_buffering_{name}.json", {"probability": res[name]})
    return {
        **res,
        "passed": bool(res["periodic"] < 0.02 and res["bernoulli"] > 0.0 and res["bernoulli"] > res["periodic"]),
    }


def _check_12d(cfg: dict, out_dir: Path, seed: int | None) -> dict:
    outs = {}
    for name in ("periodic", "bernoulli"):
        spec = _scenario_from(cfg[name], seed)
        outs[name] = (spec, run_scenario(spec))
    spec_p, out_p = outs["periodic"]
    period = spec_p.signal.every_n_packets * spec_p.mss_bits / out_p.delivered_rate_bps()
    step = 0.005
    lags = np.arange(0.0, min(2.5 * period, out_p.duration_s / 4), step)
    acf = {}
    for name, (spec, out) in outs.items():
        acf[name] = cwnd_autocorrelation(out.cwnd_times, out.cwnd_bits, lags, t_start=spec.warmup_s)
        _atomic_rows(
            out_dir / f"acf_{name}.csv",
            ["lag_s", "correlation"],
            ([repr(float(l)), repr(float(c))] for l, c in acf[name]),
        )
    vp = np.array([c for _, c in acf["periodic"]])
    vb = np.array([c for _, c in acf["bernoulli"]])
    lo = np.searchsorted(lags, 0.5 * period)
    hi = np.searchsorted(lags, 1.5 * period)
    i_peak = lo + int(np.argmax(vp[lo:hi]))
    is_local_max = 0 < i_peak < len(vp) - 1 and vp[i_peak] >= vp[i_peak - 1] and vp[i_peak] >= vp[i_peak + 1]
    lag_peak = float(lags[i_peak])
    return {
        "loss_period_s": float(period),
        "peak_lag_s": lag_peak,
        "acf_periodic_at_peak": float(vp[i_peak]),
        "acf_bernoulli_at_peak": float(vb[i_peak]),
        "passed": bool(
            is_local_max
            and abs(lag_peak - period) <= 0.1 * period
            and vb[i_peak] < vp[i_peak]
        ),
    }


def run_figure(name: str, config_dir: str, out_root: str, seed: int | None) -> dict:
    """Run one bundled figure reproduction; returns its check record."""
    cfg_path = Path(config_dir) / f"fig{name}.json"
    if not cfg_path.exists():
        raise click.ClickException(f"missing figure config: {cfg_path}")
    cfg = _load_config(str(cfg_path))
    out_dir = Path(out_root) / name
    out_dir.mkdir(parents=True, exist_ok=True)
    if name == "4a":
        check = _check_4a(cfg, out_dir, seed)
    elif name == "4b":
        check = _check_4b(cfg, out_dir, seed)
    elif name == "5a":
        check = _check_5(cfg, out_dir, seed, (4000.0, 4100.0, 4200.0))
    elif name == "5b":
        check = _check_5(cfg, out_dir, seed, (4000.0,))
    elif name == "7":
        check = _check_7(cfg, out_dir, seed, Path(config_dir))
    elif name == "9-qualitative":
        check = _check_9(cfg, out_dir, seed)
    elif name == "12d-qualitative":
        check = _check_12d(cfg, out_dir, seed)
    else:
        raise click.ClickException(f"unknown figure: {name}")
    check = {"figure": name, **check}
    _atomic_json(out_dir / "check.json", check)
    return check


def default_config_dir() -> str:
    return str(resources.files("flowbench") / "configs")


# ---------------------------------------------------------------------------
# click wiring


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except click.ClickException:
        raise
    except _METHOD_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_METHOD)
    except _CONFIG_ERRORS as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except Exception as exc:  # invariant breakage inside the pipelines
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="JSON config file")(fn)
    fn = click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="output directory")(fn)
    fn = click.option("--seed", "seed", type=int, default=None, help="override the config seed")(fn)
    return fn


@click.group()
def main() -> None:
    """Closed-loop flow-control benchmark: simulate, probe, and validate."""


@main.command()
@_common_options
def simulate(config_path, out_dir, seed):
    """Run one scenario; write packet, window, delay and CCDF tables."""
    cfg = _load_config(config_path)
    res = _guarded(_do_simulate, cfg, Path(out_dir), seed)
    click.echo(json.dumps(res))


@main.command()
@_common_options
def estimate(config_path, out_dir, seed):
    """Run a probing sweep and write the service-curve estimate."""
    cfg = _load_config(config_path)
    res = _guarded(_do_estimate, cfg, Path(out_dir), seed)
    click.echo(json.dumps({"epsilon": res["epsilon"], "long_term_rate_bps": res["long_term_rate_bps"]}))


@main.command()
@_common_options
def validate(config_path, out_dir, seed):
    """Check analytic delay bounds against empirical quantiles."""
    cfg = _load_config(config_path)
    res = _guarded(_do_validate, cfg, Path(out_dir), seed, Path(config_path).parent)
    click.echo(json.dumps(res))


@main.command()
@_common_options
def autocorr(config_path, out_dir, seed):
    """Write the congestion-window autocorrelation of a scenario."""
    cfg = _load_config(config_path)
    res = _guarded(_do_autocorr, cfg, Path(out_dir), seed)
    click.echo(json.dumps(res))


@main.command()
@click.option("--config", "config_dir", type=click.Path(), default=None,
              help="directory of figure configs (defaults to the bundled set)")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="override config seeds")
@click.option("--jobs", type=int, default=None, help="parallel sub-runs (or FLOWBENCH_JOBS)")
@click.option("--only", multiple=True, type=click.Choice(_FIGURES), help="run a subset of figures")
def figures(config_dir, out_dir, seed, jobs, only):
    """Reproduce the benchmark figure set and write pass/fail checks."""
    config_dir = config_dir or default_config_dir()
    if not os.path.isdir(config_dir):
        click.echo(f"configuration error: config directory not found: {config_dir}", err=True)
        sys.exit(EXIT_CONFIG)
    names = list(only) if only else list(_FIGURES)
    n_jobs = _jobs_value(jobs)

    checks = []
    failed = False
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futs = {pool.submit(run_figure, n, config_dir, out_dir, seed): n for n in names}
            for fut, n in futs.items():
                try:
                    checks.append(fut.result())
                except Exception as exc:
                    failed = True
                    checks.append({"figure": n, "passed": False, "error": str(exc)})
    else:
        for n in names:
            try:
                checks.append(_guarded(run_figure, n, config_dir, out_dir, seed))
            except SystemExit:
                raise
    checks.sort(key=lambda c: names.index(c["figure"]))
    _atomic_json(Path(out_dir) / "checks.json", checks)
    for c in checks:
        click.echo(f"{c['figure']}: {'PASS' if c.get('passed') else 'FAIL'}")
    if failed or not all(c.get("passed") for c in checks):
        sys.exit(1)


if __name__ == "__main__":
    main()
