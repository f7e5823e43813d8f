"""Statistical tests and quantile helpers for probe measurement series.

The probing procedure needs two admissibility checks on a sampled delay
series -- weak stationarity and mutual independence -- plus a conservative
empirical quantile.  Stationarity is judged with the DF-GLS unit-root test
(Elliott, Rothenberg & Stock), independence with the Wald-Wolfowitz runs
test about the median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

__all__ = [
    "StatsError",
    "DegenerateSeriesError",
    "InsufficientSamplesError",
    "TestOutcome",
    "runs_test",
    "dfgls_test",
    "empirical_quantile",
    "autocorrelation",
]


class StatsError(ValueError):
    """Invalid input to a statistical routine."""


class DegenerateSeriesError(StatsError):
    """Series is (numerically) constant, so the test is undefined."""


class InsufficientSamplesError(StatsError):
    """Too few samples for the requested procedure."""


@dataclass(frozen=True)
class TestOutcome:
    """Result of a hypothesis test at a fixed significance level."""

    __test__ = False  # not a pytest class despite the name

    statistic: float
    critical_value: float
    level: float
    passed: bool


_DFGLS_CRITICAL = {0.01: -2.58, 0.05: -1.95, 0.10: -1.62}

# numerically-constant threshold relative to the series magnitude
_DEGENERATE_RTOL = 1e-9


def _as_series(x, min_n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise StatsError("series contains non-finite values")
    if len(x) < min_n:
        raise InsufficientSamplesError(f"need at least {min_n} samples, got {len(x)}")
    return x


def is_degenerate(x) -> bool:
    """True if the series is constant up to floating-point noise."""
    x = np.asarray(x, dtype=float).ravel()
    scale = max(abs(float(x.max())), abs(float(x.min())), 1e-300)
    return float(np.ptp(x)) <= _DEGENERATE_RTOL * scale


def runs_test(x, level: float = 0.05) -> TestOutcome:
    """Wald-Wolfowitz runs test about the median (two-sided, normal approx).

    Passing means the run count is consistent with an independent series.
    Values equal to the median are discarded.
    """
    x = _as_series(x, 20)
    if is_degenerate(x):
        raise DegenerateSeriesError("runs test undefined for a constant series")
    med = float(np.median(x))
    scale = max(abs(float(x.max())), abs(float(x.min())), 1e-300)
    keep = np.abs(x - med) > _DEGENERATE_RTOL * scale
    signs = x[keep] > med
    n1 = int(signs.sum())
    n2 = len(signs) - n1
    if n1 == 0 or n2 == 0:
        raise DegenerateSeriesError("series never crosses its median")
    n = n1 + n2
    runs = 1 + int(np.count_nonzero(signs[1:] != signs[:-1]))
    mu = 2.0 * n1 * n2 / n + 1.0
    var = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n * n * (n - 1.0))
    if var <= 0:
        raise DegenerateSeriesError("runs test variance is zero")
    z = (runs - mu) / math.sqrt(var)
    crit = float(sps.norm.ppf(1.0 - level / 2.0))
    return TestOutcome(statistic=z, critical_value=crit, level=level, passed=bool(abs(z) <= crit))


def _schwert_lags(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def _adf_regression(y: np.ndarray, k: int, start: int) -> tuple[float, float, int]:
    """ADF regression dy_t = rho*y_{t-1} + sum_i g_i*dy_{t-i} on a fixed sample.

    ``start`` is the first usable index into diff(y) (common across lag
    orders when comparing them).  Returns (t_rho, rss, rows).
    """
    dy = np.diff(y)
    rows = len(dy) - start
    X = np.empty((rows, k + 1))
    X[:, 0] = y[start:-1]
    for i in range(1, k + 1):
        X[:, i] = dy[start - i : len(dy) - i]
    target = dy[start:]
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    dof = rows - (k + 1)
    if dof <= 0:
        raise InsufficientSamplesError("no degrees of freedom left in the ADF regression")
    sigma2 = float(resid @ resid) / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    t_rho = float(beta[0] / math.sqrt(sigma2 * xtx_inv[0, 0]))
    return t_rho, float(resid @ resid), rows


def dfgls_test(x, level: float = 0.05, max_lags: int | None = None) -> TestOutcome:
    """DF-GLS unit-root test, demeaned variant.

    The series is GLS-demeaned with quasi-differencing parameter
    a = 1 - 7/n, then an augmented Dickey-Fuller regression (no constant)
    is run on the detrended series.  The lag order is chosen by BIC over
    0..max_lags (Schwert bound by default) on a common estimation sample,
    a deterministic function of the data.  Passing means the unit root is
    rejected, i.e. the series is judged stationary at the given level.
    """
    x = _as_series(x, 30)
    if is_degenerate(x):
        raise DegenerateSeriesError("unit-root test undefined for a constant series")
    if level not in _DFGLS_CRITICAL:
        raise StatsError(f"level must be one of {sorted(_DFGLS_CRITICAL)}")
    n = len(x)
    if max_lags is None:
        max_lags = _schwert_lags(n)
    if n - max_lags - 1 < 10:
        raise InsufficientSamplesError("series too short for the chosen lag order")

    # GLS demeaning: regress quasi-differenced x on quasi-differenced 1
    a = 1.0 - 7.0 / n
    xq = np.empty(n)
    zq = np.empty(n)
    xq[0], zq[0] = x[0], 1.0
    xq[1:] = x[1:] - a * x[:-1]
    zq[1:] = 1.0 - a
    mu = float(np.dot(zq, xq) / np.dot(zq, zq))
    y = x - mu

    crit_fail = _DFGLS_CRITICAL[level]
    try:
        best_k, best_bic = 0, math.inf
        for k in range(max_lags + 1):
            _, rss, rows = _adf_regression(y, k, max_lags)
            if rss <= 0.0:
                raise np.linalg.LinAlgError("perfect fit")
            bic = rows * math.log(rss / rows) + (k + 1) * math.log(rows)
            if bic < best_bic:
                best_k, best_bic = k, bic
        t_rho, _, _ = _adf_regression(y, best_k, best_k)
    except np.linalg.LinAlgError:
        # a singular design arises only for (near-)deterministic trends,
        # which are certainly not stationary
        return TestOutcome(statistic=math.inf, critical_value=crit_fail, level=level, passed=False)
    crit = _DFGLS_CRITICAL[level]
    return TestOutcome(statistic=t_rho, critical_value=crit, level=level, passed=bool(t_rho < crit))


def empirical_quantile(x, q: float) -> float:
    """Conservative empirical quantile: the ceil(q*n)-th order statistic.

    With q -> 1 this returns the sample maximum.
    """
    x = _as_series(x, 1)
    if not 0.0 < q <= 1.0:
        raise StatsError("quantile level must lie in (0, 1]")
    k = int(math.ceil(q * len(x)))
    return float(np.partition(x, k - 1)[k - 1])


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags 0..max_lag (FFT based)."""
    x = _as_series(x, 2)
    if is_degenerate(x):
        raise DegenerateSeriesError("autocorrelation undefined for a constant series")
    if not 0 <= max_lag < len(x):
        raise StatsError("max_lag must lie in [0, len(x))")
    xc = x - x.mean()
    nfft = 1 << (2 * len(xc) - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / acov[0]
