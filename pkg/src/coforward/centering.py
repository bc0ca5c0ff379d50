"""Expected forward ratios under the historical measure, and centering.

With the centred motion ``X~`` (an Ornstein-Uhlenbeck process started at 0)
the log-ratio ``ln F(t,T)/F(0,T)`` is a Gaussian Wiener integral plus the
drift contribution of theta'. Its expectation with theta' = 0 has the
closed form

    exp( int_0^t [ 1/2 |a(s) Sigma|^2 + sigma(T-s) Sigma Sigma* a(s)^T ] ds ),
    a(s) = int_s^t sigma(T-u) Pi e^{(u-s) Pi} du,

which is evaluated here by nested composite Simpson rules. theta' is then
fitted so that the expected ratio stays at 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, SingularMatrixError
from .model import ModelParams, ThetaPrime, check_energy, stacked_vol
from .numerics import expm, simpson_rule

DEFAULT_PANELS = 96
DEFAULT_FANS = {"g": (1.0 / 12.0, 9.0 / 12.0), "c": (1.0 / 12.0, 15.0 / 12.0)}


def _check_times(t, maturity):
    if t < 0:
        raise ParameterError(f"t must be non-negative, got {t}")
    if t > maturity + 1e-12:
        raise ParameterError(f"t={t} is after maturity T={maturity}")


def _lagged_exponentials(span, n_nodes, pi):
    """e^{k h_i Pi} for k = 0..n_nodes-1 with h_i = span_i / (n_nodes - 1).

    One exponential per outer node, then repeated products; the inner nodes
    are equally spaced so every factor is a power of the first step.
    """
    step = expm((span / (n_nodes - 1))[:, None, None] * pi)
    out = np.empty((span.size, n_nodes) + pi.shape)
    out[:, 0] = np.eye(pi.shape[0])
    for k in range(1, n_nodes):
        out[:, k] = out[:, k - 1] @ step
    return out


def _kernel(e, t, maturity, params: ModelParams, n_inner, n_outer):
    """Outer nodes/weights, a(s) and sigma(T - s) at the outer nodes."""
    s, ws = simpson_rule(0.0, t, n_outer)
    frac, wf = simpson_rule(0.0, 1.0, n_inner)
    span = t - s
    lag = span[:, None] * frac[None, :]  # u - s
    u = s[:, None] + lag
    sig_u = stacked_vol(e, np.maximum(maturity - u, 0.0), params.vol)
    if np.any(params.pi):
        e_lag = _lagged_exponentials(span, frac.size, params.pi)
        integrand = np.einsum("sun,sunk->suk", sig_u @ params.pi, e_lag)
        a = np.einsum("u,suk->sk", wf, integrand) * span[:, None]
    else:
        a = np.zeros((s.size, params.n))
    b = stacked_vol(e, np.maximum(maturity - s, 0.0), params.vol)
    return s, ws, a, b


def log_moment(e, t, maturity, params: ModelParams, n_inner=DEFAULT_PANELS, n_outer=DEFAULT_PANELS) -> float:
    check_energy(e)
    _check_times(t, maturity)
    if t == 0 or not np.any(params.pi):
        return 0.0
    _, ws, a, b = _kernel(e, t, maturity, params, n_inner, n_outer)
    ss = params.sigma_sigma_t
    aS = a @ ss
    integrand = 0.5 * np.einsum("sk,sk->s", aS, a) + np.einsum("sk,sk->s", b, aS)
    return float(ws @ integrand)


def closed_form_moment(e, t, maturity, params: ModelParams, n_inner=DEFAULT_PANELS, n_outer=DEFAULT_PANELS) -> float:
    """E[F(t,T) / F(0,T)] under the historical measure with theta' = 0."""
    return float(np.exp(log_moment(e, t, maturity, params, n_inner, n_outer)))


def wiener_variance(e, t, maturity, params: ModelParams, n_inner=DEFAULT_PANELS, n_outer=DEFAULT_PANELS) -> float:
    """Variance of int_0^t sigma(T - s) dX~_s."""
    check_energy(e)
    _check_times(t, maturity)
    if t == 0:
        return 0.0
    _, ws, a, b = _kernel(e, t, maturity, params, n_inner, n_outer)
    k = (a + b) @ params.sigma
    return float(ws @ np.einsum("sk,sk->s", k, k))


def quadratic_variation(e, t, maturity, params: ModelParams, n=DEFAULT_PANELS) -> float:
    """int_0^t |sigma(T - s) Sigma|^2 ds."""
    check_energy(e)
    _check_times(t, maturity)
    if t == 0:
        return 0.0
    s, ws = simpson_rule(0.0, t, n)
    k = stacked_vol(e, np.maximum(maturity - s, 0.0), params.vol) @ params.sigma
    return float(ws @ np.einsum("sk,sk->s", k, k))


def centered_expectation(e, t, maturity, params: ModelParams, n_inner=DEFAULT_PANELS, n_outer=DEFAULT_PANELS) -> float:
    """E[F(t,T) / F(0,T)] including the theta' drift (factorised form)."""
    drift = params.theta_prime.sigma_integral(e, t, maturity, params.vol)
    return float(np.exp(drift + log_moment(e, t, maturity, params, n_inner, n_outer)))


def tenor_fan(e, curve=None, n_tenors: int = 12, extend: float = 0.0) -> np.ndarray:
    """Equally spaced tenors from the shortest to the longest quoted tenor.

    ``extend`` lengthens the long end; centering up to a horizon ``t`` needs
    tenors up to ``t`` beyond the quoted range because the drift integral
    visits sigma(T - s) for every s in [0, t].
    """
    if curve is not None:
        lo, hi = float(curve.maturities[0]), float(curve.maturities[-1])
        lo = max(lo, 1.0 / 365.0)
        if hi <= lo:
            hi = lo + 1.0 / 12.0
    else:
        lo, hi = DEFAULT_FANS[check_energy(e)]
    return np.linspace(lo, hi + extend, n_tenors)


class ThetaFit(NamedTuple):
    theta_prime: ThetaPrime
    residual_max: float
    residual_rms: float
    fans: dict


def fit_theta_prime(
    params: ModelParams,
    curves: dict | None = None,
    *,
    horizon: float = 3.0,
    step: float = 1.0 / 12.0,
    n_tenors: int = 12,
    fd_step: float = 1.0 / 365.0,
    panels: int = DEFAULT_PANELS,
) -> ThetaFit:
    """Least-squares theta' on a piecewise-constant grid.

    On each piece the stacked system sigma_e(x_j) theta' = -d/dt ln m_e(t, t + x_j)
    (both energies, ``n_tenors`` tenors each, spanning the quoted tenors plus
    the horizon) is solved at the piece midpoint, with the time derivative
    taken by central differences.
    """
    curves = curves or {}
    n_pieces = int(np.ceil(horizon / step - 1e-9))
    knots = np.minimum(step * np.arange(n_pieces + 1), horizon)
    knots[-1] = horizon
    fans = {e: tenor_fan(e, curves.get(e), n_tenors, extend=horizon) for e in ("g", "c")}
    rows = np.vstack([stacked_vol(e, fans[e], params.vol) for e in ("g", "c")])
    if np.linalg.matrix_rank(rows) < params.n:
        raise SingularMatrixError("theta' system is rank deficient; use a larger maturity fan")
    base = params.replace(theta_prime=None)
    values = np.zeros((n_pieces, params.n))
    residuals = []
    if np.any(params.pi):
        for k in range(n_pieces):
            mid = 0.5 * (knots[k] + knots[k + 1])
            h = min(fd_step, mid)
            rhs = []
            for e in ("g", "c"):
                for x in fans[e]:
                    maturity = mid + x
                    up = log_moment(e, mid + h, maturity, base, panels, panels)
                    down = log_moment(e, mid - h, maturity, base, panels, panels)
                    rhs.append(-(up - down) / (2 * h))
            rhs = np.array(rhs)
            sol, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
            values[k] = sol
            residuals.append(rows @ sol - rhs)
    res = np.concatenate(residuals) if residuals else np.zeros(1)
    return ThetaFit(
        ThetaPrime(knots, values),
        float(np.abs(res).max()),
        float(np.sqrt(np.mean(res**2))),
        fans,
    )


@dataclass(frozen=True)
class MomentSurface:
    energy: str
    t: np.ndarray
    maturity: np.ndarray
    values: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.abs(self.values - 1.0).max())

    def to_csv(self, path, label: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write_surface_rows(csv.writer(fh, lineterminator="\n"), [self], header=True, label=label)


def write_surface_rows(writer, surfaces, header=True, label=None):
    if header:
        writer.writerow(["energy", "t", "T", "value"] + (["case"] if label is not None else []))
    for srf in surfaces:
        for t, m, v in zip(srf.t, srf.maturity, srf.values):
            writer.writerow([srf.energy, f"{t:.10g}", f"{m:.10g}", f"{v:.12g}"] + ([label] if label is not None else []))


def moment_surface(e, params: ModelParams, times, tenors, centred=True, panels=DEFAULT_PANELS) -> MomentSurface:
    """Expected ratio on the grid (t_i, t_i + x_j)."""
    tt, xx = np.meshgrid(np.asarray(times, float), np.asarray(tenors, float), indexing="ij")
    fn = centered_expectation if centred else closed_form_moment
    vals = np.array([fn(e, t, t + x, params, panels, panels) for t, x in zip(tt.ravel(), xx.ravel())])
    return MomentSurface(e, tt.ravel(), (tt + xx).ravel(), vals)


def write_theta_prime(theta: ThetaPrime, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_start", "t_end"] + [f"theta_prime_{i + 1}" for i in range(theta.values.shape[1])])
        for k in range(theta.values.shape[0]):
            w.writerow([f"{theta.grid[k]:.10g}", f"{theta.grid[k + 1]:.10g}"] + [f"{v:.12g}" for v in theta.values[k]])
