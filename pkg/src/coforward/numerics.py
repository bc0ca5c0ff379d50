"""Small dense numerical kernels shared by the rest of the package.

Everything here works on problems of at most ~20 dimensions, so the
implementations favour accuracy and determinism over speed.
"""

from __future__ import annotations

import datetime as _dt
import itertools
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    ConvergenceError,
    DimensionError,
    InsufficientDataError,
    NotPSDError,
    ParameterError,
    SingularMatrixError,
)

DAYS_PER_YEAR = 365.0


def year_fraction(start: _dt.date, end: _dt.date) -> float:
    """ACT/365 fixed."""
    return (end - start).days / DAYS_PER_YEAR


def _check_finite(a, name="input"):
    if not np.all(np.isfinite(a)):
        raise ParameterError(f"{name} contains NaN or Inf")


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ParameterError("time grid must be a non-empty 1-d array")
        _check_finite(t, "time grid")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ParameterError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon: float, dt: float, start: float = 0.0) -> "TimeGrid":
        if dt <= 0 or horizon < dt:
            raise ParameterError(f"need dt > 0 and horizon >= dt (got {dt=}, {horizon=})")
        n = int(np.ceil(horizon / dt - 1e-9))
        t = start + dt * np.arange(n + 1)
        t[-1] = start + horizon
        return cls(t)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def __len__(self):
        return self.times.size


# --------------------------------------------------------------------------
# Matrix exponential: scaling and squaring with a degree-13 Pade approximant
# (Higham, SIAM J. Matrix Anal. Appl. 26(4), 2005).

_PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
_THETA13 = 5.371920351148152


def expm(a) -> np.ndarray:
    """Matrix exponential of a square matrix or of a stack of them.

    The trailing two axes hold the matrices, so ``expm(stack)`` with
    ``stack.shape == (k, n, n)`` evaluates all ``k`` exponentials in one
    vectorised pass.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expm needs square matrices, got shape {a.shape}")
    _check_finite(a, "matrix")
    n = a.shape[-1]
    batch = a.reshape(-1, n, n)
    norm1 = np.abs(batch).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.where(norm1 > _THETA13, np.ceil(np.log2(norm1 / _THETA13)), 0.0).astype(int)
    x = batch / np.ldexp(1.0, s)[:, None, None]
    b = _PADE13
    eye = np.broadcast_to(np.eye(n), x.shape)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    u = x @ (x6 @ (b[13] * x6 + b[11] * x4 + b[9] * x2) + b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * eye)
    v = x6 @ (b[12] * x6 + b[10] * x4 + b[8] * x2) + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * eye
    r = np.linalg.solve(v - u, v + u)
    for k in range(int(s.max(initial=0))):
        idx = s > k
        r[idx] = r[idx] @ r[idx]
    r[norm1 == 0] = np.eye(n)  # exact identity, free of Pade rounding
    return r.reshape(a.shape)


# --------------------------------------------------------------------------
# Quadrature


def simpson_rule(a: float, b: float, n: int):
    """Nodes and weights of composite Simpson with ``n`` panels on [a, b]."""
    if n < 1:
        raise ParameterError(f"panel count must be >= 1, got {n}")
    x = np.linspace(a, b, 2 * n + 1)
    w = np.ones(2 * n + 1)
    w[1::2] = 4.0
    w[2:-1:2] = 2.0
    w *= (b - a) / (6.0 * n)
    return x, w


def quad_fixed(f: Callable, a: float, b: float, n: int = 64):
    """Composite Simpson integral of ``f`` over [a, b] with ``n`` panels.

    ``f`` is called once with the array of nodes; if it is not vectorised it
    is evaluated node by node. Vector-valued integrands are fine as long as
    the node axis comes first.
    """
    if a > b:
        raise ParameterError("quad_fixed needs a <= b")
    x, w = simpson_rule(a, b, n)
    if a == b:
        return 0.0 * np.asarray(f(np.array([a])))[0]
    try:
        y = np.asarray(f(x), dtype=float)
        if y.shape[:1] != x.shape:
            raise ValueError
    except (TypeError, ValueError):
        y = np.array([f(xi) for xi in x], dtype=float)
    return np.tensordot(w, y, axes=(0, 0))


# --------------------------------------------------------------------------
# PCA


class PCAResult(NamedTuple):
    eigenvalues: np.ndarray
    loadings: np.ndarray
    scores: np.ndarray
    mean: np.ndarray

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total


def pca(data) -> PCAResult:
    """Eigen-decomposition of the sample covariance of ``data`` (obs x vars).

    Loadings are the eigenvectors (columns), sorted by descending eigenvalue,
    with the sign fixed so that each loading has a non-negative sum.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"pca expects a 2-d array, got shape {x.shape}")
    if x.shape[0] < 2:
        raise InsufficientDataError("pca needs at least 2 observations")
    _check_finite(x, "pca data")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    v = v[:, order]
    for j in range(v.shape[1]):
        col = v[:, j]
        s = col.sum()
        if abs(s) < 1e-12:
            s = col[np.argmax(np.abs(col))]
        if s < 0:
            v[:, j] = -col
    return PCAResult(w, v, xc @ v, mean)


# --------------------------------------------------------------------------
# Least squares


class OLSResult(NamedTuple):
    coefficients: np.ndarray
    residuals: np.ndarray
    rss: float


def ols(x, y, rank_tol: float = 1e-10) -> OLSResult:
    """Least squares through a reduced QR factorisation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"incompatible shapes X{x.shape}, y{y.shape}")
    if x.shape[0] <= x.shape[1]:
        raise InsufficientDataError(
            f"need more rows than columns, got {x.shape[0]} x {x.shape[1]}"
        )
    _check_finite(x, "design matrix")
    _check_finite(y, "response")
    q, r = np.linalg.qr(x)
    d = np.abs(np.diag(r))
    if d.size and (d.max() == 0 or d.min() <= rank_tol * d.max()):
        raise SingularMatrixError("design matrix is rank deficient")
    coef = solve_triangular(r, q.T @ y)
    resid = y - x @ coef
    return OLSResult(coef, resid, float(resid @ resid))


class NLSResult(NamedTuple):
    params: np.ndarray
    rss: float
    iterations: int


def _fd_jacobian(model, p, inputs, f0, rel_step):
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = rel_step * (abs(p[j]) if p[j] != 0 else 1.0)
        pj = p.copy()
        pj[j] += h
        h = pj[j] - p[j]
        jac[:, j] = (np.asarray(model(pj, inputs), dtype=float).ravel() - f0) / h
    return jac


def nls(
    model: Callable,
    params0,
    inputs,
    targets,
    *,
    rel_step: float = 1e-7,
    xtol: float = 1e-10,
    ftol: float = 1e-12,
    max_iter: int = 500,
) -> NLSResult:
    """Levenberg-Marquardt fit of ``model(params, inputs)`` to ``targets``.

    Jacobians come from forward differences. Damping follows Nielsen's
    update rule with Marquardt's diagonal scaling.
    """
    p = np.asarray(params0, dtype=float).copy()
    _check_finite(p, "initial parameters")
    y = np.asarray(targets, dtype=float).ravel()

    def resid(q):
        return y - np.asarray(model(q, inputs), dtype=float).ravel()

    r = resid(p)
    rss = float(r @ r)
    if not np.isfinite(rss):
        raise ConvergenceError("model is not finite at the initial parameters", best=p)
    mu = None
    nu = 2.0
    for it in range(1, max_iter + 1):
        if rss == 0.0:
            return NLSResult(p, rss, it - 1)
        f0 = y - r
        jac = _fd_jacobian(model, p, inputs, f0, rel_step)
        g = jac.T @ r
        a = jac.T @ jac
        diag = np.maximum(np.diag(a), 1e-300)
        if mu is None:
            mu = 1e-3
        while True:
            try:
                step = np.linalg.solve(a + mu * np.diag(diag), g)
            except np.linalg.LinAlgError:
                step = np.full_like(p, np.nan)
            if np.all(np.isfinite(step)) and np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
                return NLSResult(p, rss, it)
            p_new = p + step
            r_new = resid(p_new) if np.all(np.isfinite(step)) else None
            rss_new = float(r_new @ r_new) if r_new is not None else np.inf
            if np.isfinite(rss_new) and rss_new < rss:
                predicted = float(step @ (mu * diag * step + g))
                rho = (rss - rss_new) / predicted if predicted > 0 else 1.0
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                small_change = (rss - rss_new) <= ftol * rss
                p, r, rss = p_new, r_new, rss_new
                if small_change:
                    return NLSResult(p, rss, it)
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e20:
                # no descent direction left at working precision
                return NLSResult(p, rss, it)
    raise ConvergenceError(
        f"Levenberg-Marquardt did not converge in {max_iter} iterations",
        best=p,
        diagnostics={"rss": rss},
    )


class BICResult(NamedTuple):
    support: tuple
    coefficients: np.ndarray
    bic: float


def bic_subset_select(x, y, max_size: int | None = None) -> BICResult:
    """Exhaustive best-subset regression under BIC = n ln(RSS/n) + k ln n.

    Ties go to the smaller subset, then to the lexicographically first one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"incompatible shapes X{x.shape}, y{y.shape}")
    n, p = x.shape
    if p > 15:
        raise ParameterError(f"exhaustive search limited to 15 columns, got {p}")
    if n <= p:
        raise InsufficientDataError(f"need more rows than columns, got {n} x {p}")
    _check_finite(x, "design matrix")
    _check_finite(y, "response")
    kmax = p if max_size is None else min(p, max_size)
    yy = float(y @ y)
    # exact fits would otherwise compare rounding noise through log(RSS)
    floor = max(yy, np.finfo(float).tiny) * 1e-24
    best = None
    for k in range(kmax + 1):
        for sub in itertools.combinations(range(p), k):
            if k == 0:
                rss, coef = yy, np.empty(0)
            else:
                try:
                    res = ols(x[:, sub], y)
                except SingularMatrixError:
                    continue
                rss, coef = res.rss, res.coefficients
            bic = n * np.log(max(rss, floor) / n) + k * np.log(n)
            if best is None or bic < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (bic, sub, coef)
    return BICResult(best[1], best[2], float(best[0]))


# --------------------------------------------------------------------------
# PSD factorisation


class PSDFactor(NamedTuple):
    factor: np.ndarray
    repair: float


def _cholesky_semidefinite(s):
    n = s.shape[0]
    low = np.zeros_like(s)
    scale = max(np.abs(np.diag(s)).max(initial=0.0), np.finfo(float).tiny)
    for j in range(n):
        d = s[j, j] - low[j, :j] @ low[j, :j]
        if d <= 1e-14 * scale:
            continue
        low[j, j] = np.sqrt(d)
        low[j + 1 :, j] = (s[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


def chol_psd(s, neg_tol: float = 1e-8) -> PSDFactor:
    """Lower-triangular ``L`` with ``L @ L.T == S`` for symmetric PSD ``S``.

    Eigenvalues in ``[-neg_tol, 0)`` are clipped to zero first; the Frobenius
    size of that repair is returned alongside the factor.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"chol_psd needs a square matrix, got {s.shape}")
    _check_finite(s, "matrix")
    if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max(initial=0.0))):
        raise ParameterError("chol_psd needs a symmetric matrix")
    s = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(s)
    if w.size and w.min() < -neg_tol:
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3e} < -{neg_tol:g}")
    repair = 0.0
    if w.size and w.min() < 0:
        fixed = (v * np.clip(w, 0.0, None)) @ v.T
        fixed = 0.5 * (fixed + fixed.T)
        repair = float(np.linalg.norm(fixed - s))
        s = fixed
    return PSDFactor(_cholesky_semidefinite(s), repair)


def solve_lower(low, b):
    """Triangular solve that refuses (near-)singular factors."""
    d = np.abs(np.diag(low))
    if d.size == 0 or d.min() <= 1e-12:
        raise SingularMatrixError("triangular factor is degenerate")
    return solve_triangular(low, b, lower=True)


def as_matrix(values: Sequence, n: int | None = None) -> np.ndarray:
    m = np.asarray(values, dtype=float)
    if n is not None and m.size == n * n and m.ndim == 1:
        m = m.reshape(n, n)
    return m
