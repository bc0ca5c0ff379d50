"""Estimation of the volatility time constants, the motions and the VECM.

Pipeline per energy: returns -> PCA -> tau fit; then per-date regression of
the returns on the volatility basis gives the motion increments, and a
row-wise BIC-selected regression of the increments on the lagged motion
gives Pi and Sigma Sigma*.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DataError,
    DegenerateDataError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
    StageError,
)
from .market_data import QuotePanel, ReturnPanel, compute_returns
from .model import ENERGIES, ENERGY_NAMES, EnergyVol, ModelParams, VolParams, vol_basis
from .numerics import PCAResult, bic_subset_select, chol_psd, nls, pca

TAU_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True)
class CalibConfig:
    n_factors_gas: int = 3
    n_factors_crude: int = 3
    tau_starts: tuple = (0.1, 0.5, 1.0, 3.0)
    bic_max_subset: int | None = None
    outlier_threshold: float = 1.0

    def __post_init__(self):
        for n in (self.n_factors_gas, self.n_factors_crude):
            if n not in (1, 2, 3):
                raise ParameterError(f"factor count must be 1, 2 or 3, got {n}")
        if not self.tau_starts or any(t <= 0 for t in self.tau_starts):
            raise ParameterError("tau starts must be positive")
        if self.outlier_threshold <= 0:
            raise ParameterError("outlier threshold must be positive")
        object.__setattr__(self, "tau_starts", tuple(float(t) for t in self.tau_starts))

    def n_factors(self, e: str) -> int:
        return self.n_factors_gas if e == "g" else self.n_factors_crude

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# step 1-2: PCA and tau


def _clean(returns: ReturnPanel, threshold: float) -> ReturnPanel:
    keep = np.abs(returns.returns) < threshold
    if keep.all():
        return returns
    return ReturnPanel(
        returns.energy,
        returns.start[keep],
        returns.end[keep],
        returns.delivery_months[keep],
        returns.returns[keep],
        returns.bucket[keep],
        returns.tenor[keep],
        returns.obs[keep],
        returns.obs_start,
        returns.obs_end,
        returns.violations,
    )


def complete_block(returns: ReturnPanel):
    """Rows of the bucket matrix with every bucket quoted.

    Each return is divided by the square root of its elapsed time so that
    multi-day observations enter the covariance on a per-year footing.
    Returns (matrix, mean tenor per bucket, buckets).
    """
    buckets = returns.buckets
    mat, ten = returns.matrix(buckets)
    rows = np.all(np.isfinite(mat), axis=1)
    if rows.sum() < 2:
        raise InsufficientDataError(f"fewer than 2 dates quote every tenor bucket of {ENERGY_NAMES[returns.energy]}")
    scaled = mat[rows] / np.sqrt(returns.dt[rows])[:, None]
    return scaled, ten[rows].mean(axis=0), buckets


@dataclass(frozen=True)
class TauFit:
    vol: EnergyVol
    rss: float
    loading_tau: tuple  # stage-one estimate from the PCA loadings
    loading_rss: float
    starts: list  # (start, end tau, rss) per refinement start
    tenors: np.ndarray
    loadings: np.ndarray  # sign- and norm-fixed loadings that were matched


def normalized_loadings(result: PCAResult, n: int) -> np.ndarray:
    v = result.loadings[:, :n].copy()
    for j in range(v.shape[1]):
        if v[:, j].mean() < 0:
            v[:, j] = -v[:, j]
        v[:, j] /= np.linalg.norm(v[:, j])
    return v


def cross_sections(returns: ReturnPanel, min_size: int = 1):
    """Returns grouped by observation as padded (obs, width) arrays.

    Gives (obs index, tenors, returns, mask); padded cells have tenor 0,
    return 0 and mask False. Observations with fewer than ``min_size``
    quotes are left out.
    """
    counts = np.bincount(returns.obs, minlength=returns.n_obs)
    keep = np.flatnonzero(counts >= min_size)
    width = int(counts.max(initial=0))
    pos = np.full(returns.n_obs, -1)
    pos[keep] = np.arange(keep.size)
    ten = np.zeros((keep.size, width))
    ret = np.zeros((keep.size, width))
    mask = np.zeros((keep.size, width), dtype=bool)
    order = np.argsort(returns.obs, kind="stable")
    obs_sorted = returns.obs[order]
    first = np.searchsorted(obs_sorted, obs_sorted, side="left")
    slot = np.arange(order.size) - first
    row = pos[obs_sorted]
    sel = row >= 0
    ten[row[sel], slot[sel]] = returns.tenor[order][sel]
    ret[row[sel], slot[sel]] = returns.returns[order][sel]
    mask[row[sel], slot[sel]] = True
    return keep, ten, ret, mask


def _batched_ls(b, y, mask):
    """Per-row least squares of y on b over the masked cells.

    Returns coefficients (rows, n) and a flag for rows whose design is
    numerically rank deficient.
    """
    bm = b * mask[..., None]
    bt = np.swapaxes(bm, 1, 2)
    g = bt @ bm
    rhs = (bt @ y[..., None])[..., 0]
    # Hadamard ratio det(G) / prod(diag G) is 1 for orthogonal columns, 0 when singular
    diag = np.einsum("onn->on", g)
    ok = np.all(diag > 0, axis=1)
    ok[ok] = np.linalg.det(g[ok]) > 1e-12 * np.prod(diag[ok], axis=1)
    g = np.where(ok[:, None, None], g, np.eye(g.shape[-1]))
    coef = np.linalg.solve(g, rhs[..., None])[..., 0]
    coef[~ok] = np.nan
    return coef, ok


def _full_tau(log_tau, n):
    tau = np.exp(np.clip(log_tau, *np.log(TAU_BOUNDS)))
    return (float(tau[0]), float(tau[1]) if n == 3 else 0.1)


def _projection_model(n):
    def model(log_tau, inputs):
        tenors, target = inputs
        b = vol_basis("g", tenors, VolParams(EnergyVol(n, *_full_tau(log_tau, n)), EnergyVol(1)))
        coef, *_ = np.linalg.lstsq(b, target, rcond=None)
        return (b @ coef).ravel()

    return model


def _cross_section_model(n):
    def model(log_tau, inputs):
        ten, ret, mask = inputs
        b = vol_basis("g", ten, VolParams(EnergyVol(n, *_full_tau(log_tau, n)), EnergyVol(1)))
        coef, ok = _batched_ls(b, ret, mask)
        coef[~ok] = 0.0
        return ((b @ coef[..., None])[..., 0])[mask]

    return model


def _multi_start(model, inputs, target, starts, n_tau):
    trials = []
    best = None
    for start in starts:
        p0 = np.log(np.asarray(start, dtype=float)[:n_tau])
        try:
            res = nls(model, p0, inputs, target)
            p, rss = res.params, res.rss
        except ConvergenceError as exc:
            if exc.best is None:
                trials.append((list(start), None, None))
                continue
            p = exc.best
            rss = float(np.sum((target - model(p, inputs)) ** 2))
        trials.append((list(start), list(_full_tau(p, n_tau + 1)[:n_tau]), rss))
        if np.isfinite(rss) and (best is None or rss < best[0] - 1e-15 * max(best[0], 1e-300)):
            best = (rss, p)
    return best, trials


def fit_tau(returns: ReturnPanel, pca_result: PCAResult | None = None, n_factors: int = 3, starts=(0.1, 0.5, 1.0, 3.0)) -> TauFit:
    """Time constants of the volatility basis.

    Stage one matches the basis, evaluated at the mean tenor of each bucket,
    to the leading ``n_factors`` normalised PCA loadings: tau minimises the
    distance between the loadings and their projection on the basis span.
    Stage two refines tau on the exact tenors: it minimises the total
    residual of the per-date regressions of returns on the basis (the motion
    increments are profiled out). Stage two starts from the stage-one
    estimate and from the grid pair with the smallest stage-two objective;
    best RSS wins.
    """
    block, tenors, buckets = complete_block(returns)
    if pca_result is None:
        pca_result = pca(block)
    if buckets.size < n_factors or pca_result.loadings.shape[1] < n_factors:
        raise InsufficientDataError(f"need at least {n_factors} tenor buckets, got {buckets.size}")
    target = normalized_loadings(pca_result, n_factors)
    if n_factors == 1:
        return TauFit(EnergyVol(1), 0.0, (), 0.0, [], tenors, target)
    n_tau = 1 if n_factors == 2 else 2
    grid = [tuple(s) + (0.1,) * (2 - n_tau) for s in itertools.product(starts, repeat=n_tau)]
    stage1, _ = _multi_start(_projection_model(n_factors), (tenors, target), target.ravel(), grid, n_tau)
    if stage1 is None:
        raise ConvergenceError("tau fit to the PCA loadings failed from every start")
    loading_tau = _full_tau(stage1[1], n_factors)[:n_tau]

    _, ten, ret, mask = cross_sections(returns, n_factors)
    if ten.shape[0] < 1:
        raise InsufficientDataError(f"no date quotes {n_factors} or more tenors")
    inputs = (ten, ret, mask)
    y = ret[mask]
    model = _cross_section_model(n_factors)
    # the full grid is screened by one objective evaluation each; LM runs
    # from the stage-one estimate and from the best screened start
    screen = [float(np.sum((y - model(np.log(np.asarray(g[:n_tau])), inputs)) ** 2)) for g in grid]
    refine_starts = [tuple(loading_tau) + (0.1,) * (2 - n_tau), grid[int(np.argmin(screen))]]
    best, trials = _multi_start(model, inputs, y, refine_starts, n_tau)
    if best is None:
        raise ConvergenceError("tau refinement failed from every start", diagnostics={"starts": trials})
    tau = _full_tau(best[1], n_factors)
    return TauFit(EnergyVol(n_factors, *tau), float(best[0]), tuple(loading_tau), float(stage1[0]), trials, tenors, target)


# --------------------------------------------------------------------------
# step 3: motions


@dataclass(frozen=True)
class MotionPath:
    dates: np.ndarray  # observation end dates, preceded by the first start date
    increments: np.ndarray  # (obs, N)
    x: np.ndarray  # (obs + 1, N), x[0] = 0
    dt: np.ndarray  # (obs,)
    skipped: tuple = ()  # (start, end, energy, reason)
    residual_rms: float = 0.0

    @property
    def n_obs(self) -> int:
        return self.increments.shape[0]


def _energy_increments(returns: ReturnPanel, ev: EnergyVol):
    """Per-observation least squares of returns on sigma_e(tenor)."""
    out = np.full((returns.n_obs, ev.n_factors), np.nan)
    keep, ten, ret, mask = cross_sections(returns, ev.n_factors)
    if keep.size == 0:
        return out, 0.0, 0
    b = vol_basis("g", ten, VolParams(ev, EnergyVol(1)))
    coef, ok = _batched_ls(b, ret, mask)
    out[keep[ok]] = coef[ok]
    r = (ret - np.einsum("okn,on->ok", b, np.where(ok[:, None], coef, 0.0))) * mask
    r = r[ok]
    return out, float(np.sum(r**2)), int(mask[ok].sum())


def reconstruct_motions(returns: dict, vol: VolParams) -> MotionPath:
    """Motion increments from the per-date cross sections of both energies.

    ``returns`` maps energy tags to return panels. Only observations
    (start, end) present and solvable for both energies are kept; the rest
    are listed in ``skipped``.
    """
    per = {}
    skipped = []
    rss, count = 0.0, 0
    for e in ENERGIES:
        r = returns[e]
        inc, s, c = _energy_increments(r, vol.of(e))
        rss += s
        count += c
        keys = list(zip(r.obs_start.astype(int), r.obs_end.astype(int)))
        per[e] = {}
        for key, row in zip(keys, inc):
            if np.all(np.isfinite(row)):
                per[e][key] = row
            else:
                skipped.append((str(np.datetime64(key[0], "D")), str(np.datetime64(key[1], "D")), e, "fewer buckets than factors"))
    common = sorted(set(per["g"]) & set(per["c"]))
    for e, other in (("g", "c"), ("c", "g")):
        for key in sorted(set(per[e]) - set(per[other])):
            skipped.append((str(np.datetime64(key[0], "D")), str(np.datetime64(key[1], "D")), other, "no solvable cross section"))
    if not common:
        raise InsufficientDataError("no observation date is solvable for both energies")
    inc = np.array([np.concatenate([per["g"][k], per["c"][k]]) for k in common])
    starts = np.array([k[0] for k in common]).astype("datetime64[D]")
    ends = np.array([k[1] for k in common]).astype("datetime64[D]")
    dt = (ends - starts).astype(int) / 365.0
    x = np.vstack([np.zeros(inc.shape[1]), np.cumsum(inc, axis=0)])
    dates = np.concatenate([starts[:1], ends])
    return MotionPath(dates, inc, x, dt, tuple(sorted(skipped)), float(np.sqrt(rss / max(count, 1))))


# --------------------------------------------------------------------------
# step 4: VECM


@dataclass(frozen=True)
class VECMFit:
    pi: np.ndarray
    sigma_sigma_t: np.ndarray
    supports: tuple
    bic: tuple
    repair: float
    residual_std: np.ndarray
    n_obs: int


def fit_vecm(motion: MotionPath, max_subset: int | None = None) -> VECMFit:
    """Pi by per-row BIC subset regression, Sigma Sigma* from the residuals.

    Rows regress dX_i / sqrt(dt) on X_lagged * sqrt(dt) without intercept;
    for a regular calendar this is the regression of dX/dt on X with every
    observation weighted by dt. The residual covariance is then directly the
    per-year Sigma Sigma*.
    """
    inc = np.asarray(motion.increments, dtype=float)
    n_obs, n = inc.shape
    if n_obs < 10 * n:
        raise InsufficientDataError(f"VECM needs at least {10 * n} observations, got {n_obs}")
    w = np.sqrt(motion.dt)
    design = motion.x[:-1] * w[:, None]
    target = inc / w[:, None]
    pi = np.zeros((n, n))
    resid = np.empty_like(target)
    supports, bics = [], []
    for i in range(n):
        res = bic_subset_select(design, target[:, i], max_subset)
        pi[i, list(res.support)] = res.coefficients
        resid[:, i] = target[:, i] - design @ pi[i]
        supports.append(tuple(int(j) for j in res.support))
        bics.append(res.bic)
    ss = resid.T @ resid / n_obs
    ss = 0.5 * (ss + ss.T)
    fac = chol_psd(ss)
    return VECMFit(pi, ss, tuple(supports), tuple(bics), fac.repair, resid.std(axis=0), n_obs)


# --------------------------------------------------------------------------
# orchestration


@dataclass
class CalibrationReport:
    eigenvalues: dict
    explained_variance: dict
    tau: dict
    tau_rss: dict
    tau_starts: dict
    bucket_tenors: dict
    motion: MotionPath
    supports: tuple
    pi: np.ndarray
    sigma_sigma_t: np.ndarray
    repair: float
    residual_std: np.ndarray
    motion_residual_rms: float
    return_violations: dict
    rejections: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "pca": {
                ENERGY_NAMES[e]: {
                    "eigenvalues": self.eigenvalues[e],
                    "explained_variance": self.explained_variance[e],
                    "bucket_tenors": self.bucket_tenors[e],
                }
                for e in ENERGIES
            },
            "tau": {
                ENERGY_NAMES[e]: {"tau1": self.tau[e][0], "tau2": self.tau[e][1], "rss": self.tau_rss[e], "starts": self.tau_starts[e]}
                for e in ENERGIES
            },
            "motion": {
                "n_obs": self.motion.n_obs,
                "first_date": str(self.motion.dates[0]),
                "last_date": str(self.motion.dates[-1]),
                "skipped": [list(s) for s in self.motion.skipped],
                "cross_section_residual_rms": self.motion_residual_rms,
            },
            "vecm": {
                "supports": [list(s) for s in self.supports],
                "Pi": self.pi.tolist(),
                "SigmaSigmaT": self.sigma_sigma_t.tolist(),
                "psd_repair": self.repair,
                "residual_std": self.residual_std.tolist(),
            },
            "return_violations": {ENERGY_NAMES[e]: [list(v) for v in self.return_violations[e]] for e in ENERGIES},
            "rejected_rows": {ENERGY_NAMES[e]: [list(r) for r in self.rejections[e]] for e in ENERGIES},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_matrices(self, directory) -> None:
        for name, mat in (("Pi.csv", self.pi), ("SigmaSigmaT.csv", self.sigma_sigma_t)):
            with open(f"{directory}/{name}", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for row in mat:
                    w.writerow([f"{v:.12g}" for v in row])

    def write_motion(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n = self.motion.x.shape[1]
            w.writerow(["date"] + [f"X{i + 1}" for i in range(n)])
            for d, row in zip(self.motion.dates, self.motion.x):
                w.writerow([str(d)] + [f"{v:.12g}" for v in row])


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (DataError, NumericalError, ParameterError) as exc:
        raise StageError(name, exc) from exc


def calibrate(gas: QuotePanel | None, crude: QuotePanel | None, config: CalibConfig = CalibConfig()):
    """Steps 1-4 of the calibration; returns (ModelParams without theta', report)."""
    panels = {"g": gas, "c": crude}
    for e in ENERGIES:
        if panels[e] is None:
            raise StageError("input", InsufficientDataError(f"missing {ENERGY_NAMES[e]} quote panel"))
        if panels[e].energy != e:
            raise StageError("input", ParameterError(f"{ENERGY_NAMES[e]} slot holds a {ENERGY_NAMES[panels[e].energy]} panel"))
    returns, eig, share, taus, tau_rss, tau_starts, tenors, violations = {}, {}, {}, {}, {}, {}, {}, {}
    evs = {}
    for e in ENERGIES:
        raw = _stage(f"returns[{ENERGY_NAMES[e]}]", compute_returns, panels[e], config.outlier_threshold)
        violations[e] = raw.violations
        r = _clean(raw, config.outlier_threshold)
        if not np.any(r.returns):
            raise StageError(f"returns[{ENERGY_NAMES[e]}]", DegenerateDataError(f"all {ENERGY_NAMES[e]} returns are zero (constant prices)"))
        returns[e] = r
        block, _, _ = _stage(f"pca[{ENERGY_NAMES[e]}]", complete_block, r)
        res = _stage(f"pca[{ENERGY_NAMES[e]}]", pca, block)
        if res.eigenvalues[0] <= 0:
            raise StageError(f"pca[{ENERGY_NAMES[e]}]", DegenerateDataError("return covariance is zero"))
        eig[e] = res.eigenvalues.tolist()
        share[e] = res.explained_variance_ratio.tolist()
        fit = _stage(f"tau[{ENERGY_NAMES[e]}]", fit_tau, r, res, config.n_factors(e), config.tau_starts)
        evs[e] = fit.vol
        taus[e] = (fit.vol.tau1, fit.vol.tau2)
        tau_rss[e] = fit.rss
        tau_starts[e] = {"loading_match": list(fit.loading_tau), "loading_rss": fit.loading_rss, "refinement": fit.starts}
        tenors[e] = fit.tenors.tolist()
    vol = VolParams(evs["g"], evs["c"])
    motion = _stage("motions", reconstruct_motions, returns, vol)
    vecm = _stage("vecm", fit_vecm, motion, config.bic_max_subset)
    params = _stage("params", ModelParams, vol, vecm.pi, vecm.sigma_sigma_t)
    report = CalibrationReport(
        eigenvalues=eig,
        explained_variance=share,
        tau=taus,
        tau_rss=tau_rss,
        tau_starts=tau_starts,
        bucket_tenors=tenors,
        motion=motion,
        supports=vecm.supports,
        pi=vecm.pi,
        sigma_sigma_t=vecm.sigma_sigma_t,
        repair=vecm.repair,
        residual_std=vecm.residual_std,
        motion_residual_rms=motion.residual_rms,
        return_violations=violations,
        rejections={e: tuple(tuple(r) for r in panels[e].rejections) for e in ENERGIES},
        config=config.to_dict(),
    )
    return params, report
