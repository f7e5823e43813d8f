"""Synthetic variable-bit-rate traces and trace file I/O.

The generator produces a seeded on-off/multi-state VBR arrival process
(semi-Markov over a small set of rate levels with exponential sojourns),
rescaled so the long-term mean rate is met exactly.  External traces are
accepted as two-column CSV (t_seconds, cum_bits).
"""

from __future__ import annotations

import csv

import numpy as np

from .curves import CumulativeProcess

__all__ = ["TraceError", "synthetic_vbr_trace", "read_trace_csv", "write_trace_csv"]


class TraceError(ValueError):
    """Invalid trace data or generator parameters."""


def synthetic_vbr_trace(
    mean_rate_bps: float,
    duration_s: float,
    burstiness: float = 3.0,
    mean_sojourn_s: float = 0.5,
    n_levels: int = 4,
    seed: int = 0,
) -> CumulativeProcess:
    """Seeded VBR trace with the requested long-term mean rate (exact).

    The instantaneous rate jumps between ``n_levels`` levels spread from
    near zero up to ``burstiness`` times the mean, with exponential
    sojourn times; the draw is rescaled so the cumulative volume equals
    mean_rate_bps * duration_s exactly.
    """
    if mean_rate_bps <= 0 or duration_s <= 0:
        raise TraceError("mean rate and duration must be positive")
    if burstiness <= 1.0:
        raise TraceError("burstiness must exceed 1 (peak above mean)")
    if n_levels < 2 or mean_sojourn_s <= 0:
        raise TraceError("need n_levels >= 2 and a positive mean sojourn")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x7BC)))
    levels = np.linspace(burstiness / (2.0 * n_levels), burstiness, n_levels) * mean_rate_bps

    times = [0.0]
    volume = [0.0]
    t = 0.0
    state = int(rng.integers(n_levels))
    while t < duration_s:
        dwell = float(rng.exponential(mean_sojourn_s))
        t_next = min(t + dwell, duration_s)
        times.append(t_next)
        volume.append(volume[-1] + levels[state] * (t_next - t))
        t = t_next
        nxt = int(rng.integers(n_levels - 1))
        state = nxt if nxt < state else nxt + 1  # jump to a different level

    total = volume[-1]
    if total <= 0:
        raise TraceError("degenerate trace draw")
    scale = mean_rate_bps * duration_s / total
    values = np.asarray(volume) * scale
    return CumulativeProcess.from_breakpoints(list(zip(times, values)))


def read_trace_csv(path) -> CumulativeProcess:
    """Read a cumulative trace from two-column CSV (t_seconds, cum_bits)."""
    pts = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except ValueError:
                if not pts:  # header line
                    continue
                raise TraceError(f"malformed trace row: {row!r}") from None
    if len(pts) < 2:
        raise TraceError("trace needs at least two rows")
    if pts[0] != (0.0, 0.0):
        pts.insert(0, (0.0, 0.0))
    return CumulativeProcess.from_breakpoints(pts)


def write_trace_csv(trace: CumulativeProcess, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "cum_bits"])
        for t, v in trace.breakpoints:
            w.writerow([repr(float(t)), repr(float(v))])
