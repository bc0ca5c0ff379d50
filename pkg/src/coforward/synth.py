"""Synthetic quote panels generated from known model parameters.

The motion is simulated daily under the historical measure; every listed
contract is priced with the exponential form, so the returns seen by the
calibration are exactly what the model produces. Used for round-trip tests
and by the ``synth`` command.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .market_data import QuotePanel, delivery_date
from .model import ENERGIES, ModelParams, stacked_vol
from .numerics import DAYS_PER_YEAR
from .simulation import path_normals


@dataclass(frozen=True)
class SynthConfig:
    start_date: str = "2003-01-02"
    years: float = 5.0
    n_contracts_gas: int = 9
    n_contracts_crude: int = 15
    price_gas: float = 50.0
    price_crude: float = 60.0
    slope_gas: float = 0.02  # relative contango per year of maturity
    slope_crude: float = -0.01
    business_days: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.years <= 0:
            raise ParameterError("years must be positive")
        if min(self.n_contracts_gas, self.n_contracts_crude) < 1:
            raise ParameterError("need at least one listed contract per energy")
        if min(self.price_gas, self.price_crude) <= 0:
            raise ParameterError("initial prices must be positive")
        np.datetime64(self.start_date, "D")

    def n_contracts(self, e: str) -> int:
        return self.n_contracts_gas if e == "g" else self.n_contracts_crude

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthData:
    gas: QuotePanel
    crude: QuotePanel
    dates: np.ndarray  # simulation calendar, datetime64[D]
    motion: np.ndarray  # (len(dates), N), X_0 = 0

    def panel(self, e: str) -> QuotePanel:
        return self.gas if e == "g" else self.crude


def simulate_motion_path(params: ModelParams, n_steps: int, dt: float, seed: int) -> np.ndarray:
    """One Euler path of dX = (Pi X + eta) dt + Sigma dW from X_0 = 0."""
    z = path_normals(seed, 0, 1, n_steps, params.n)[0]
    noise = (z @ params.sigma.T) * np.sqrt(dt)
    times = dt * np.arange(n_steps)
    eta = params.eta(times)
    x = np.zeros((n_steps + 1, params.n))
    for k in range(n_steps):
        x[k + 1] = x[k] + (params.pi @ x[k] + eta[k]) * dt + noise[k]
    return x


def generate(params: ModelParams, config: SynthConfig = SynthConfig()) -> SynthData:
    start = np.datetime64(config.start_date, "D")
    n_days = int(round(config.years * DAYS_PER_YEAR))
    dates = start + np.arange(n_days + 1)
    dt = 1.0 / DAYS_PER_YEAR
    t = np.arange(n_days + 1) * dt
    x = simulate_motion_path(params, n_days, dt, config.seed)
    dx = np.diff(x, axis=0)

    if config.business_days:
        weekday = (dates.astype(int) + 3) % 7  # 0 = Monday
        quoted = weekday < 5
    else:
        quoted = np.ones(dates.size, dtype=bool)

    first_month = dates[0].astype("datetime64[M]")
    last_month = dates[-1].astype("datetime64[M]")
    panels = {}
    for e in ENERGIES:
        k = config.n_contracts(e)
        months = np.arange(first_month + 1, last_month + k + 1)
        mat = (delivery_date(months) - start).astype(int) * dt  # years from start
        p0, slope = (config.price_gas, config.slope_gas) if e == "g" else (config.price_crude, config.slope_crude)
        f0 = p0 * (1.0 + slope * mat)
        if np.any(f0 <= 0):
            raise ParameterError("initial curve slope makes prices non-positive")
        # log F(t_k, T) = log F0 + sum_{j<k} sigma(T - t_j) dX_j - compensator
        tenor = mat[:, None] - t[None, :-1]
        sig = stacked_vol(e, np.maximum(tenor, 0.0), params.vol)  # (C, K, N)
        inc = np.einsum("ckn,kn->ck", sig, dx)
        comp = 0.5 * np.sum((sig @ params.sigma) ** 2, axis=-1) * dt
        drift = np.array([[params.theta_prime.sigma_integral(e, min(tk, T), T, params.vol) for tk in t] for T in mat]) if not params.theta_prime.is_zero else 0.0
        logp = np.log(f0)[:, None] + np.concatenate([np.zeros((mat.size, 1)), np.cumsum(inc - comp, axis=1)], axis=1) + drift

        qd, qm, qp = [], [], []
        date_month = dates.astype("datetime64[M]")
        for c, m in enumerate(months):
            live = quoted & (dates < delivery_date(m)) & (m - date_month >= 1) & (m - date_month <= k)
            idx = np.flatnonzero(live)
            qd.append(dates[idx])
            qm.append(np.full(idx.size, m))
            qp.append(np.exp(logp[c, idx]))
        panels[e] = QuotePanel(
            e,
            np.concatenate(qd),
            np.concatenate(qm).astype("datetime64[M]"),
            np.concatenate(qp),
            unit="p/th" if e == "g" else "$/bbl",
        )
    return SynthData(panels["g"], panels["c"], dates, x)
