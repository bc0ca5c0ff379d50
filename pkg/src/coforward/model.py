"""Model parameters and the deterministic pieces of the two-energy model.

Forward returns of energy ``e`` are driven by ``sigma_e(T - t) . dX_t`` where
``sigma_e`` is the level/slope/curvature basis of that energy padded with
zeros to the full motion dimension. Under the historical measure the motion
follows ``dX = Pi X dt + Sigma dW + eta dt``; under the risk-neutral measure
``dX = Sigma dB``.

Time is in years (ACT/365) throughout.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, ParameterError, SingularMatrixError
from .numerics import chol_psd, simpson_rule, solve_lower

ENERGIES = ("g", "c")
ENERGY_NAMES = {"g": "gas", "c": "crude"}
SCHEMA_VERSION = 1


def check_energy(e: str) -> str:
    if e not in ENERGIES:
        raise ParameterError(f"energy must be one of {ENERGIES}, got {e!r}")
    return e


class Measure(str, enum.Enum):
    HISTORICAL_P = "P"
    RISK_NEUTRAL_Q = "Q"

    @classmethod
    def parse(cls, value) -> "Measure":
        if isinstance(value, cls):
            return value
        v = str(value).strip().upper()
        for m in cls:
            if v in (m.value, m.name):
                return m
        raise ParameterError(f"unknown measure {value!r}")


@dataclass(frozen=True)
class EnergyVol:
    n_factors: int = 3
    tau1: float = 1.0
    tau2: float = 0.1

    def __post_init__(self):
        if self.n_factors not in (1, 2, 3):
            raise ParameterError(f"factor count must be 1, 2 or 3, got {self.n_factors}")
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ParameterError("time constants must be positive")


@dataclass(frozen=True)
class VolParams:
    gas: EnergyVol = field(default_factory=EnergyVol)
    crude: EnergyVol = field(default_factory=EnergyVol)

    def of(self, e: str) -> EnergyVol:
        return self.gas if check_energy(e) == "g" else self.crude

    @property
    def n_total(self) -> int:
        return self.gas.n_factors + self.crude.n_factors

    def block(self, e: str) -> slice:
        """Slice of the motion vector owned by energy ``e``."""
        ng = self.gas.n_factors
        return slice(0, ng) if check_energy(e) == "g" else slice(ng, self.n_total)


def vol_basis(e: str, tenor, vol: VolParams) -> np.ndarray:
    """Normalised volatility functions (1, slope, curvature) at ``tenor``.

    ``tenor`` may be a scalar or an array; the basis is on the last axis,
    truncated to the energy's factor count.
    """
    ev = vol.of(e)
    x = np.asarray(tenor, dtype=float)
    if np.any(x < 0):
        raise ParameterError("tenor T - t must be non-negative")
    out = np.empty(x.shape + (ev.n_factors,))
    out[..., 0] = 1.0
    if ev.n_factors > 1:
        out[..., 1] = np.exp(-x / ev.tau1)
    if ev.n_factors > 2:
        r = x / ev.tau2
        out[..., 2] = r * np.exp(-r)
    return out


def stacked_vol(e: str, tenor, vol: VolParams) -> np.ndarray:
    """Energy basis padded with zeros to the full motion dimension."""
    b = vol_basis(e, tenor, vol)
    out = np.zeros(b.shape[:-1] + (vol.n_total,))
    out[..., vol.block(e)] = b
    return out


@dataclass(frozen=True)
class ThetaPrime:
    """Piecewise-constant derivative of the centering drift.

    ``values[k]`` holds on ``[grid[k], grid[k + 1])``; the last value is
    carried flat beyond ``grid[-1]``.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if g.ndim != 1 or g.size != v.shape[0] + 1:
            raise DimensionError("theta' grid must have one more knot than values")
        if np.any(np.diff(g) <= 0) or g[0] != 0.0:
            raise ParameterError("theta' grid must start at 0 and increase")
        if not np.all(np.isfinite(v)):
            raise ParameterError("theta' values must be finite")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, n: int, horizon: float = 1.0) -> "ThetaPrime":
        return cls(np.array([0.0, horizon]), np.zeros((1, n)))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def _piece(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.values.shape[0] - 1)

    def __call__(self, t) -> np.ndarray:
        return self.values[self._piece(t)]

    def theta(self, t) -> np.ndarray:
        """Integral of theta' from 0 to ``t`` (the drift level itself)."""
        t = np.asarray(t, dtype=float)
        widths = np.diff(self.grid)
        cum = np.vstack([np.zeros(self.values.shape[1]), np.cumsum(widths[:, None] * self.values, axis=0)])
        k = self._piece(t)
        return cum[k] + (t - self.grid[k])[..., None] * self.values[k]

    def sigma_integral(self, e: str, t: float, maturity: float, vol: VolParams, n: int = 16) -> float:
        """Integral of sigma_e(T - s) . theta'_s over s in [0, t]."""
        if t <= 0 or self.is_zero:
            return 0.0
        knots = np.concatenate([[0.0], self.grid[(self.grid > 0) & (self.grid < t)], [t]])
        total = 0.0
        for a, b in zip(knots[:-1], knots[1:]):
            s, w = simpson_rule(a, b, n)
            sig = stacked_vol(e, maturity - s, vol)
            total += float(w @ (sig @ self.values[self._piece(a)]))
        return total


@dataclass(frozen=True)
class ModelParams:
    vol: VolParams
    pi: np.ndarray
    sigma_sigma_t: np.ndarray
    theta_prime: ThetaPrime | None = None
    sigma: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.vol.n_total
        pi = np.asarray(self.pi, dtype=float)
        ss = np.asarray(self.sigma_sigma_t, dtype=float)
        if pi.shape != (n, n) or ss.shape != (n, n):
            raise DimensionError(f"Pi and Sigma Sigma* must be {n}x{n}, got {pi.shape} and {ss.shape}")
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(ss))):
            raise ParameterError("Pi and Sigma Sigma* must be finite")
        ss = 0.5 * (ss + ss.T)
        sigma = self.sigma
        if sigma is None:
            sigma = chol_psd(ss).factor
        else:
            sigma = np.asarray(sigma, dtype=float)
            if not np.allclose(sigma @ sigma.T, ss, rtol=0, atol=1e-10):
                raise ParameterError("Sigma Sigma^T does not reproduce Sigma Sigma*")
        tp = self.theta_prime if self.theta_prime is not None else ThetaPrime.zero(n)
        if tp.values.shape[1] != n:
            raise DimensionError("theta' dimension does not match the motion dimension")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "sigma_sigma_t", ss)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "theta_prime", tp)

    @property
    def n(self) -> int:
        return self.vol.n_total

    @property
    def is_degenerate(self) -> bool:
        return np.abs(np.diag(self.sigma)).min() <= 1e-12

    def replace(self, **changes) -> "ModelParams":
        data = dict(vol=self.vol, pi=self.pi, sigma_sigma_t=self.sigma_sigma_t, theta_prime=self.theta_prime)
        data.update(changes)
        return ModelParams(**data)

    def eta(self, t) -> np.ndarray:
        """Drift term recovered from theta' (eta_t = theta'_t - Pi theta_t)."""
        tp = self.theta_prime
        return tp(t) - tp.theta(t) @ self.pi.T

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        n = self.n
        return {
            "version": SCHEMA_VERSION,
            "vol": {
                ENERGY_NAMES[e]: {"N": ev.n_factors, "tau1": ev.tau1, "tau2": ev.tau2}
                for e, ev in (("g", self.vol.gas), ("c", self.vol.crude))
            },
            "n": n,
            "Pi": self.pi.ravel().tolist(),
            "SigmaSigmaT": self.sigma_sigma_t.ravel().tolist(),
            "theta_prime": {
                "grid": self.theta_prime.grid.tolist(),
                "values": self.theta_prime.values.ravel().tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        try:
            if d.get("version") != SCHEMA_VERSION:
                raise FormatError(f"unsupported params schema version {d.get('version')!r}")
            vol = VolParams(
                gas=EnergyVol(int(d["vol"]["gas"]["N"]), float(d["vol"]["gas"]["tau1"]), float(d["vol"]["gas"]["tau2"])),
                crude=EnergyVol(int(d["vol"]["crude"]["N"]), float(d["vol"]["crude"]["tau1"]), float(d["vol"]["crude"]["tau2"])),
            )
            n = vol.n_total
            pi = np.asarray(d["Pi"], dtype=float).reshape(n, n)
            ss = np.asarray(d["SigmaSigmaT"], dtype=float).reshape(n, n)
            tp = d.get("theta_prime")
            theta = None
            if tp is not None:
                grid = np.asarray(tp["grid"], dtype=float)
                theta = ThetaPrime(grid, np.asarray(tp["values"], dtype=float).reshape(grid.size - 1, n))
            return cls(vol, pi, ss, theta)
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed params document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"params file is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise FormatError("params document must be a JSON object")
        return cls.from_dict(d)


def market_price_of_risk(x, t: float, params: ModelParams) -> np.ndarray:
    """lambda with Sigma lambda = Pi X + eta_t (triangular solve)."""
    x = np.asarray(x, dtype=float)
    rhs = params.pi @ x + params.eta(t)
    try:
        return solve_lower(params.sigma, rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError("Sigma is degenerate; market price of risk undefined") from exc


def forward_price(
    e: str,
    maturity: float,
    curve,
    times,
    increments,
    params: ModelParams,
) -> float:
    """Exponential-form forward price at ``times[-1]``.

    ``increments`` are the centred motion increments (shape ``(len(times)-1, N)``)
    over the grid ``times`` which starts at 0. The quadratic-variation
    compensator is the left-point sum on the same grid, which is the exact
    compensator of the discrete stochastic sum.
    """
    check_energy(e)
    times = np.asarray(times, dtype=float)
    t = float(times[-1])
    if t > maturity + 1e-12:
        raise ParameterError(f"t={t} is after maturity T={maturity}")
    f0 = float(curve.price(maturity)) if hasattr(curve, "price") else float(curve)
    if times.size == 1:
        return f0
    dx = np.asarray(increments, dtype=float).reshape(times.size - 1, params.n)
    sig = stacked_vol(e, maturity - times[:-1], params.vol)
    stoch = float(np.sum(sig * dx))
    qv = float(np.sum(np.sum((sig @ params.sigma) ** 2, axis=1) * np.diff(times)))
    drift = params.theta_prime.sigma_integral(e, t, maturity, params.vol)
    return f0 * np.exp(drift + stoch - 0.5 * qv)


# Reference parameter set: three factors per energy, daily-observation covariance.
PUBLISHED_TAU = {"g": (0.736, 0.086), "c": (3.761, 0.138)}
PUBLISHED_PI = np.array(
    [
        [-0.017, 0.0, 0.0, 0.019, 0.0, 0.0],
        [0.0, -0.005, 0.009, -0.027, 0.0, -0.162],
        [0.0, 0.0, -0.012, 0.0, 0.0, 0.174],
        [0.0, 0.0, 0.0, -0.009, 0.0, -0.030],
        [0.0, 0.0, 0.0, 0.015, 0.008, 0.046],
        [0.0, 0.0, 0.0, -0.017, 0.019, -0.052],
    ]
)
PUBLISHED_SIGMA_SIGMA_T_DAILY = np.array(
    [
        [0.00158, -0.00323, 0.00386, -0.00001, 0.00006, 0.00003],
        [-0.00323, 0.00812, -0.00958, -0.00007, 0.00007, -0.00007],
        [0.00386, -0.00958, 0.01740, 0.00006, -0.00003, 0.00011],
        [-0.00001, -0.00007, 0.00006, 0.00045, -0.00052, 0.00010],
        [0.00006, 0.00007, -0.00003, -0.00052, 0.00096, -0.00011],
        [0.00003, -0.00007, 0.00011, 0.00010, -0.00011, 0.00015],
    ]
)


def published_vol() -> VolParams:
    return VolParams(
        gas=EnergyVol(3, *PUBLISHED_TAU["g"]),
        crude=EnergyVol(3, *PUBLISHED_TAU["c"]),
    )


def published_params(covariance_scale: float = 365.0) -> ModelParams:
    """Published parameter set in toolkit units.

    ``Pi`` is taken as a per-year matrix. The published covariance is a
    per-observation (daily) residual covariance, annualised by
    ``covariance_scale`` days.
    """
    return ModelParams(published_vol(), PUBLISHED_PI.copy(), PUBLISHED_SIGMA_SIGMA_T_DAILY * covariance_scale)
