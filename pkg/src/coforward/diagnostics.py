"""Unit-root and cointegration tests, and the rank structure of Pi.

The residual-based cointegration test is Engle-Granger (ADF on the
residuals of the cointegrating regression). Critical values come from the
response surfaces of MacKinnon (2010), "Critical Values for Cointegration
Tests", Queen's Economics Department Working Paper 1227, Table 2:
c(n) = b_inf + b1/n + b2/n^2 + b3/n^3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, DimensionError, InsufficientDataError
from .numerics import ols

# MacKinnon (2010) Table 2, constant term, rows = number of I(1) variables
# N = 1..4, entries (b_inf, b1, b2, b3) at the 1%, 5%, 10% levels.
_MACKINNON_C = {
    1: ((-3.43035, -6.5393, -16.786, -79.433), (-2.86154, -2.8903, -4.234, -40.040), (-2.56677, -1.5384, -2.809, 0.0)),
    2: ((-3.89644, -10.9519, -33.527, 0.0), (-3.33613, -6.1101, -6.823, 0.0), (-3.04445, -4.2412, -2.720, 0.0)),
    3: ((-4.29374, -14.4354, -33.195, 47.433), (-3.74066, -8.5632, -10.852, 27.982), (-3.45218, -6.2143, -3.718, 0.0)),
    4: ((-4.64332, -18.1031, -37.972, 0.0), (-4.09600, -11.2349, -11.175, 0.0), (-3.81020, -8.3931, -4.137, 0.0)),
}
LEVELS = ("1%", "5%", "10%")


def critical_values(n_vars: int, nobs: int) -> dict:
    try:
        table = _MACKINNON_C[n_vars]
    except KeyError:
        raise DimensionError(f"critical values tabulated for 1..4 variables, got {n_vars}") from None
    return {lvl: b[0] + b[1] / nobs + b[2] / nobs**2 + b[3] / nobs**3 for lvl, b in zip(LEVELS, table)}


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    lag: int
    nobs: int
    critical_values: dict
    reject: bool  # at 5%
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "lag": self.lag,
            "nobs": self.nobs,
            "critical_values": dict(self.critical_values),
            "reject_at_5pct": self.reject,
            **self.extra,
        }


def _adf_design(y, lag, constant):
    dy = np.diff(y)
    n = dy.size - lag
    cols = [y[lag:-1]]
    if constant:
        cols.append(np.ones(n))
    for i in range(1, lag + 1):
        cols.append(dy[lag - i : dy.size - i])
    return np.column_stack(cols), dy[lag:]


def _adf_stat(y, lag, constant, start):
    """t-statistic of the lagged level; ``start`` trims to a common sample."""
    x, target = _adf_design(y[start:], lag, constant)
    res = ols(x, target)
    n, k = x.shape
    s2 = res.rss / (n - k)
    cov = s2 * np.linalg.inv(x.T @ x)
    return res.coefficients[0] / np.sqrt(cov[0, 0]), res.rss, n


def _adf(y, max_lag, constant, n_vars, name):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionError("series must be one-dimensional")
    if max_lag is None:
        max_lag = int(np.ceil(12.0 * (y.size / 100.0) ** 0.25))
    if y.size <= 10 * (max_lag + 2):
        raise InsufficientDataError(f"series of length {y.size} too short for max_lag={max_lag}")
    if not np.all(np.isfinite(y)):
        raise DimensionError("series contains NaN or Inf")
    if np.ptp(y) == 0 or np.std(np.diff(y)) == 0:
        raise DegenerateDataError("series has zero variance")
    # lag order by BIC on the sample common to every candidate
    best = None
    for lag in range(max_lag + 1):
        _, rss, n = _adf_stat(y, lag, constant, max_lag - lag)
        k = 1 + int(constant) + lag
        bic = n * np.log(rss / n) + k * np.log(n)
        if best is None or bic < best[0]:
            best = (bic, lag)
    lag = best[1]
    stat, _, n = _adf_stat(y, lag, constant, max_lag - lag)
    cv = critical_values(n_vars, n)
    return TestResult(name, float(stat), lag, n, cv, bool(stat < cv["5%"]))


def adf_test(series, max_lag: int | None = None) -> TestResult:
    """Augmented Dickey-Fuller test with intercept; H0 is a unit root."""
    return _adf(series, max_lag, True, 1, "ADF (constant)")


def engle_granger_test(y, x, max_lag: int | None = None):
    """Engle-Granger test; H0 is no cointegration between y and the x series.

    Returns the test result and the cointegrating vector normalised on y,
    i.e. ``(1, -b_1, ..., -b_k)`` from ``y = c + b . x + u``.
    """
    y = np.asarray(y, dtype=float)
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    elif xs.shape[0] != y.size and xs.shape[1] == y.size:
        xs = xs.T
    if xs.shape[0] != y.size:
        raise DimensionError("all series must have the same length")
    if y.size <= 50:
        raise InsufficientDataError("Engle-Granger needs more than 50 observations")
    if np.std(y) == 0 or np.any(np.std(xs, axis=0) == 0):
        raise DegenerateDataError("constant series")
    design = np.column_stack([np.ones(y.size), xs])
    fit = ols(design, y)
    resid = fit.residuals
    res = _adf(resid, max_lag, False, 1 + xs.shape[1], "Engle-Granger (ADF on residuals)")
    vector = np.concatenate([[1.0], -fit.coefficients[1:]])
    res = TestResult(
        res.test,
        res.statistic,
        res.lag,
        res.nobs,
        res.critical_values,
        res.reject,
        {"cointegrating_vector": vector.tolist(), "intercept": float(fit.coefficients[0])},
    )
    return res, vector


@dataclass(frozen=True)
class PiRank:
    rank: int
    case: str  # FULL | ZERO | PARTIAL
    alpha: np.ndarray | None
    beta: np.ndarray | None
    singular_values: np.ndarray


def classify_pi_rank(pi, tol: float = 1e-3) -> PiRank:
    """Numerical rank of Pi with threshold ``tol * sigma_max``.

    For 0 < r < n the factorisation is alpha = U_r S_r, beta = V_r from the
    truncated SVD, so Pi ~ alpha beta^T.
    """
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
        raise DimensionError("Pi must be square")
    n = pi.shape[0]
    u, s, vt = np.linalg.svd(pi)
    rank = 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > tol * s[0]))
    if rank == 0:
        return PiRank(0, "ZERO", None, None, s)
    if rank == n:
        return PiRank(n, "FULL", None, None, s)
    return PiRank(rank, "PARTIAL", u[:, :rank] * s[:rank], vt[:rank].T, s)
