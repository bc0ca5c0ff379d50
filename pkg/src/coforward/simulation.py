"""Monte Carlo scenarios for the motions and the forward curves.

Noise is counter-based: path ``p`` draws from a Philox stream keyed by
``(seed, p)`` and step ``k`` reads the ``k``-th block of that stream, so a
path's scenario never depends on how paths are batched.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FormatError, ParameterError
from .model import ENERGIES, Measure, ModelParams, stacked_vol
from .numerics import TimeGrid

_MAX_SEED = 2**64 - 1


class Scheme(str, enum.Enum):
    EULER = "EULER"
    EXPONENTIAL = "EXPONENTIAL"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError as exc:
            raise ParameterError(f"unknown scheme {value!r}") from exc


@dataclass(frozen=True)
class SimConfig:
    measure: Measure = Measure.HISTORICAL_P
    horizon: float = 3.0
    dt: float = 1.0 / 365.0
    n_paths: int = 1
    seed: int = 0
    scheme: Scheme = Scheme.EXPONENTIAL
    maturities: tuple | None = (0.25, 0.5, 1.0, 2.0, 3.0)
    tenors: tuple | None = None
    record_times: tuple | None = None
    first_path: int = 0
    chunk_size: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "measure", Measure.parse(self.measure))
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if not (self.dt > 0):
            raise ParameterError("dt must be positive")
        if not (self.horizon >= self.dt):
            raise ParameterError("horizon must be at least one step")
        if self.n_paths < 1:
            raise ParameterError("need at least one path")
        if not (0 <= self.seed <= _MAX_SEED) or self.first_path < 0:
            raise ParameterError("seed and first_path must be non-negative 64-bit integers")
        if self.tenors is not None:
            object.__setattr__(self, "tenors", tuple(float(x) for x in self.tenors))
            object.__setattr__(self, "maturities", None)
            if any(x < 0 for x in self.tenors):
                raise ParameterError("tenors must be non-negative")
        elif self.maturities is not None:
            object.__setattr__(self, "maturities", tuple(float(x) for x in self.maturities))
            if any(x <= 0 for x in self.maturities):
                raise ParameterError("maturities must be positive")
        else:
            raise ParameterError("give maturities or tenors")
        if self.record_times is not None:
            object.__setattr__(self, "record_times", tuple(float(x) for x in self.record_times))

    @property
    def fixed_tenor(self) -> bool:
        return self.tenors is not None

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.horizon, self.dt)

    def record_index(self, grid: TimeGrid) -> np.ndarray:
        if self.record_times is None:
            return np.arange(len(grid))
        t = np.asarray(self.record_times)
        if np.any(t < 0) or np.any(t > self.horizon + 1e-12):
            raise ParameterError("record times must lie in [0, horizon]")
        idx = np.abs(grid.times[None, :] - t[:, None]).argmin(axis=1)
        return np.unique(idx)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measure"] = self.measure.value
        d["scheme"] = self.scheme.value
        return d


def _rows(a, m):
    """a @ m.T row by row; unlike BLAS matmul the result does not depend on
    how many rows are batched together."""
    return np.einsum("pn,kn->pk", a, m)


def path_normals(seed: int, first_path: int, n_paths: int, n_steps: int, dim: int) -> np.ndarray:
    """Standard normals of shape (paths, steps, dim) keyed by (seed, path)."""
    out = np.empty((n_paths, n_steps, dim))
    for i in range(n_paths):
        key = np.array([seed, first_path + i], dtype=np.uint64)
        np.random.Generator(np.random.Philox(key=key)).standard_normal((n_steps, dim), out=out[i])
    return out


@dataclass
class MotionBatch:
    times: np.ndarray
    x: np.ndarray  # (paths, len(times), N)
    measure: Measure


def _noise_chunks(config: SimConfig, n_steps: int, dim: int, noise):
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (config.n_paths, n_steps, dim):
            raise ParameterError(f"noise must have shape {(config.n_paths, n_steps, dim)}, got {noise.shape}")
    for lo in range(0, config.n_paths, config.chunk_size):
        hi = min(lo + config.chunk_size, config.n_paths)
        if noise is not None:
            yield lo, hi, noise[lo:hi]
        else:
            yield lo, hi, path_normals(config.seed, config.first_path + lo, hi - lo, n_steps, dim)


def simulate_motions(params: ModelParams, config: SimConfig, noise=None) -> MotionBatch:
    """Euler scheme for X; under P the drift is Pi X + eta_t, under Q it is zero."""
    grid = config.grid()
    dts = grid.dt
    rec = config.record_index(grid)
    n = params.n
    hist = config.measure is Measure.HISTORICAL_P
    eta = params.eta(grid.times[:-1]) if hist else None
    out = np.empty((config.n_paths, rec.size, n))
    for lo, hi, z in _noise_chunks(config, grid.n_steps, n, noise):
        x = np.zeros((hi - lo, n))
        r = 0
        if rec[0] == 0:
            out[lo:hi, 0] = x
            r = 1
        for k in range(grid.n_steps):
            dx = _rows(z[:, k], params.sigma) * np.sqrt(dts[k])
            if hist:
                dx = dx + (_rows(x, params.pi) + eta[k]) * dts[k]
            x = x + dx
            if r < rec.size and rec[r] == k + 1:
                out[lo:hi, r] = x
                r += 1
    return MotionBatch(grid.times[rec], out, config.measure)


@dataclass
class ScenarioSet:
    """Simulated forward prices, indexed [path, time, maturity, energy].

    In fixed-tenor mode the maturity axis holds tenors and the delivery date
    is ``t + tenor``. A contract whose delivery falls inside the horizon keeps
    its last simulated price afterwards (``expired`` marks those cells).
    """

    times: np.ndarray
    maturity_axis: np.ndarray
    fixed_tenor: bool
    prices: np.ndarray
    initial: np.ndarray  # F(0, T) on the same (time, maturity, energy) layout
    config: dict
    params_digest: str
    motions: np.ndarray | None = None
    euler_breaches: int = 0
    energies: tuple = ENERGIES

    @property
    def maturity_grid(self) -> np.ndarray:
        if self.fixed_tenor:
            return self.times[:, None] + self.maturity_axis[None, :]
        return np.broadcast_to(self.maturity_axis, (self.times.size, self.maturity_axis.size))

    @property
    def expired(self) -> np.ndarray:
        return self.maturity_grid < self.times[:, None] - 1e-12

    @property
    def ratios(self) -> np.ndarray:
        return self.prices / self.initial[None]

    def to_csv(self, path) -> None:
        tg = self.maturity_grid
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("path,t,T,energy,price\n")
            for p in range(self.prices.shape[0]):
                for i, t in enumerate(self.times):
                    for j in range(tg.shape[1]):
                        for k, e in enumerate(self.energies):
                            fh.write(f"{self.config.get('first_path', 0) + p},{t:.10g},{tg[i, j]:.10g},{e},{self.prices[p, i, j, k]!r}\n")

    # Binary layout (little endian):
    #   8s  magic  b"COFWDSC\0"
    #   I   version (1)
    #   I   ndim (4)
    #   4Q  dims (paths, times, maturities, energies)
    #   then float64 times[times], float64 maturities[times * maturities]
    #   (absolute delivery dates), float64 prices row-major.
    MAGIC = b"COFWDSC\x00"
    VERSION = 1

    def to_binary(self, path) -> None:
        dims = self.prices.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sII4Q", self.MAGIC, self.VERSION, 4, *dims))
            fh.write(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.maturity_grid, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.prices, dtype="<f8").tobytes())


def read_scenario_binary(path):
    """Returns (times, maturity_grid, prices) from a binary scenario file."""
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<8sII4Q"))
        try:
            magic, version, ndim, *dims = struct.unpack("<8sII4Q", head)
        except struct.error as exc:
            raise FormatError(f"{path}: truncated header") from exc
        if magic != ScenarioSet.MAGIC or version != ScenarioSet.VERSION or ndim != 4:
            raise FormatError(f"{path}: not a scenario file")
        p, r, m, e = dims
        times = np.frombuffer(fh.read(8 * r), dtype="<f8")
        mats = np.frombuffer(fh.read(8 * r * m), dtype="<f8").reshape(r, m)
        prices = np.frombuffer(fh.read(8 * p * r * m * e), dtype="<f8").reshape(p, r, m, e)
    return times, mats, prices


def simulate_forwards(
    params: ModelParams,
    curves: dict,
    config: SimConfig,
    noise=None,
    keep_motions: bool = False,
) -> ScenarioSet:
    """Forward prices F_e(t, T) for both energies.

    EULER multiplies prices by ``1 + sigma_e(T - t_k) dX_k`` with X from the
    Euler motion scheme. EXPONENTIAL exponentiates the sum of
    ``sigma_e dX~`` less the discrete compensator, times the deterministic
    centering factor ``exp(int sigma_e theta')`` under P.
    """
    grid = config.grid()
    times = grid.times
    dts = grid.dt
    rec = config.record_index(grid)
    rec_t = times[rec]
    n = params.n
    hist = config.measure is Measure.HISTORICAL_P
    axis = np.asarray(config.tenors if config.fixed_tenor else config.maturities, dtype=float)
    if config.fixed_tenor:
        wanted = rec_t[:, None] + axis[None, :]
    else:
        wanted = np.broadcast_to(axis, (rec.size, axis.size))
    uniq, inv = np.unique(wanted, return_inverse=True)
    inv = inv.reshape(wanted.shape)
    f0 = np.stack([np.asarray(curves[e].price(uniq), dtype=float) for e in ENERGIES], axis=0)  # (2, U)

    alive = uniq[None, :] > times[:-1, None] + 1e-12  # (steps, U)
    corr = np.zeros((2, rec.size, uniq.size))
    if hist and config.scheme is Scheme.EXPONENTIAL and not params.theta_prime.is_zero:
        for k, e in enumerate(ENERGIES):
            for r, t in enumerate(rec_t):
                for u, T in enumerate(uniq):
                    corr[k, r, u] = params.theta_prime.sigma_integral(e, min(t, T), T, params.vol)
    eta = params.eta(times[:-1]) if hist and config.scheme is Scheme.EULER else None

    n_rec = rec.size
    out = np.empty((config.n_paths, n_rec, axis.size, 2))
    motions = np.empty((config.n_paths, n_rec, n)) if keep_motions else None
    breaches = 0
    sig_cache = [None] * grid.n_steps

    def sigmas(k):
        if sig_cache[k] is None:
            tenor = np.maximum(uniq - times[k], 0.0)
            s = np.stack([stacked_vol(e, tenor, params.vol) for e in ENERGIES])  # (2, U, N)
            s = s * alive[k][None, :, None]
            comp = 0.5 * np.sum((s @ params.sigma) ** 2, axis=-1) * dts[k]  # (2, U)
            sig_cache[k] = (s, comp)
        return sig_cache[k]

    for lo, hi, z in _noise_chunks(config, grid.n_steps, n, noise):
        m = hi - lo
        x = np.zeros((m, n))
        if config.scheme is Scheme.EXPONENTIAL:
            state = np.zeros((m, 2, uniq.size))  # log accumulator
        else:
            state = np.broadcast_to(f0, (m, 2, uniq.size)).copy()
        r = 0

        def record(r):
            if config.scheme is Scheme.EXPONENTIAL:
                vals = f0[None] * np.exp(state + corr[None, :, r])
            else:
                vals = state
            sel = vals[:, :, inv[r]]  # (m, 2, M)
            out[lo:hi, r] = np.moveaxis(sel, 1, 2)
            if keep_motions:
                motions[lo:hi, r] = x

        if rec[0] == 0:
            record(0)
            r = 1
        for k in range(grid.n_steps):
            dx = _rows(z[:, k], params.sigma) * np.sqrt(dts[k])
            if hist:
                if config.scheme is Scheme.EXPONENTIAL:
                    dx = dx + _rows(x, params.pi) * dts[k]
                else:
                    dx = dx + (_rows(x, params.pi) + eta[k]) * dts[k]
            x = x + dx
            s, comp = sigmas(k)
            inc = np.einsum("mn,eun->meu", dx, s)
            if config.scheme is Scheme.EXPONENTIAL:
                state += inc - comp[None]
            else:
                breaches += int(np.count_nonzero(np.abs(inc) >= 1.0))
                state *= 1.0 + inc
            if r < n_rec and rec[r] == k + 1:
                record(r)
                r += 1

    initial = np.moveaxis(f0[:, inv], 0, -1)  # (R, M, 2)
    return ScenarioSet(
        times=rec_t,
        maturity_axis=axis,
        fixed_tenor=config.fixed_tenor,
        prices=out,
        initial=initial,
        config=config.to_dict(),
        params_digest=params.digest(),
        motions=motions,
        euler_breaches=breaches,
    )


def simulate_hamilton(n_steps: int, seed: int = 0):
    """Two cointegrated series: a random walk y1 and y2 = 2 y1 + lagged noise."""
    if n_steps < 2:
        raise ParameterError("need at least 2 steps")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    w = rng.standard_normal((n_steps, 2))
    y1 = np.concatenate([[0.0], np.cumsum(w[:, 0])])
    y2 = np.zeros(n_steps + 1)
    y2[1:] = 2.0 * y1[1:] + w[:, 1]
    return y1, y2


def independent_walks(n_steps: int, seed: int = 0, count: int = 2):
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
    w = rng.standard_normal((n_steps, count))
    return tuple(np.concatenate([[0.0], np.cumsum(w[:, i])]) for i in range(count))


def diagnostics(scenarios: ScenarioSet, params: ModelParams | None = None) -> dict:
    """Summary statistics of a scenario batch.

    Martingale deviation is |mean(F/F0) - 1| per (t, T, energy), reported with
    its Monte Carlo standard error.
    """
    ratio = scenarios.ratios
    n_paths = ratio.shape[0]
    mean = ratio.mean(axis=0)
    std = ratio.std(axis=0, ddof=1) if n_paths > 1 else np.zeros_like(mean)
    se = std / np.sqrt(n_paths)
    dev = np.abs(mean - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    live = ~scenarios.expired
    dev_live = np.where(live[..., None], dev, 0.0)
    z_live = np.where(live[..., None], z, 0.0)
    worst = np.unravel_index(np.argmax(z_live), z_live.shape)
    q = np.quantile(ratio[:, -1], [0.05, 0.25, 0.5, 0.75, 0.95], axis=0) if n_paths > 1 else np.repeat(ratio[:, -1], 5, axis=0)
    report = {
        "n_paths": int(n_paths),
        "measure": scenarios.config.get("measure"),
        "scheme": scenarios.config.get("scheme"),
        "times": scenarios.times.tolist(),
        "maturity_axis": scenarios.maturity_axis.tolist(),
        "fixed_tenor": bool(scenarios.fixed_tenor),
        "mean_ratio": mean.tolist(),
        "std_ratio": std.tolist(),
        "mc_standard_error": se.tolist(),
        "max_martingale_deviation": float(dev_live.max()),
        "max_deviation_in_standard_errors": float(z_live.max()),
        "worst_cell": {"t": float(scenarios.times[worst[0]]), "maturity_index": int(worst[1]), "energy": ENERGIES[worst[2]]},
        "terminal_quantiles": {"levels": [0.05, 0.25, 0.5, 0.75, 0.95], "values": q.tolist()},
        "euler_breaches": int(scenarios.euler_breaches),
    }
    if n_paths > 1 and scenarios.times.size > 1:
        ratio_end = scenarios.prices[:, -1] / scenarios.prices[:, 0]  # (paths, M, 2)
        corr = []
        for j in range(ratio_end.shape[1]):
            ok = np.all(ratio_end[:, j] > 0, axis=1)  # Euler paths may cross zero
            lg = np.log(ratio_end[ok, j])
            good = ok.sum() > 1 and np.std(lg[:, 0]) > 0 and np.std(lg[:, 1]) > 0
            corr.append(float(np.corrcoef(lg[:, 0], lg[:, 1])[0, 1]) if good else 0.0)
        report["gas_crude_log_change_correlation"] = corr
    if params is not None and scenarios.motions is not None and scenarios.times.size > 2:
        from .diagnostics import classify_pi_rank

        rk = classify_pi_rank(params.pi)
        x = scenarios.motions
        comp_var = float(np.mean(x[:, -1].var(axis=0))) if n_paths > 1 else float(np.mean(x[0].var(axis=0)))
        report["pi_rank"] = {"rank": rk.rank, "case": rk.case}
        if rk.beta is not None:
            rel = x @ rk.beta  # (paths, R, r)
            report["long_term_relation_variance"] = rel.var(axis=1).mean(axis=0).tolist()
            report["motion_component_variance"] = x.var(axis=1).mean(axis=0).tolist()
            report["terminal_component_variance"] = comp_var
    return report
