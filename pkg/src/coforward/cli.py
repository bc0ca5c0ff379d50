"""Command-line front end: ``coforward {synth,calibrate,simulate,validate}``.

Every command takes ``--config`` (TOML), ``--out`` and ``--seed``. Settings
resolve as flags > config file > defaults and the effective configuration
is written to ``config.json`` in the output directory. Outputs are staged
in a sibling temporary directory and renamed into place only on success.

Exit codes: 0 success, 1 IO error, 2 invalid data or parameters,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import shutil
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .calibration import CalibConfig, calibrate
from .centering import (
    DEFAULT_PANELS,
    MomentSurface,
    closed_form_moment,
    fit_theta_prime,
    log_moment,
    quadratic_variation,
    wiener_variance,
    write_surface_rows,
    write_theta_prime,
)
from .diagnostics import adf_test, classify_pi_rank, engle_granger_test
from .errors import CoforwardError, FormatError, ParameterError
from .market_data import ForwardCurve, initial_curve, load_quotes, write_quotes, write_rejections
from .model import ENERGIES, ENERGY_NAMES, ModelParams, published_params
from .simulation import SimConfig, diagnostics, independent_walks, simulate_forwards, simulate_hamilton
from .synth import SynthConfig, generate

DEFAULTS = {
    "synth": {
        "preset": "published",
        "params": None,
        "hamilton_steps": 2000,
        **{f.name: f.default for f in fields(SynthConfig) if f.name != "seed"},
    },
    "calibrate": {
        "gas": None,
        "crude": None,
        "unit_gas": "",
        "unit_crude": "",
        "valuation_date": None,
        **{f.name: f.default for f in fields(CalibConfig)},
        "horizon": 3.0,
        "theta_step": 1.0 / 12.0,
        "n_tenors": 12,
        "panels": DEFAULT_PANELS,
        "surface_time_step": 0.25,
        "surface_tenors": 6,
    },
    "simulate": {
        "params": None,
        "curves": None,
        "price_gas": 50.0,
        "price_crude": 60.0,
        "measure": "P",
        "scheme": "EXPONENTIAL",
        "horizon": 3.0,
        "dt": 1.0 / 365.0,
        "n_paths": 100,
        "maturities": [0.25, 0.5, 1.0, 2.0, 3.0],
        "tenors": None,
        "record_times": None,
        "write_csv": True,
    },
    "validate": {
        "params": None,
        "motion": None,
        "hamilton_steps": 2000,
        "identity_points": [[0.5, 1.0], [1.0, 2.0], [2.0, 3.0]],
        "identity_tol": 1e-9,
        "pi_rank_tol": 1e-3,
    },
}

PATH_KEYS = {"params", "gas", "crude", "curves", "motion"}


# --------------------------------------------------------------------------
# configuration


def load_config_file(path) -> dict:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise FormatError(f"{path}: invalid TOML ({exc})") from exc
    # relative input paths are taken relative to the config file
    base = path.resolve().parent
    for section in data.values():
        if isinstance(section, dict):
            for key in PATH_KEYS & section.keys():
                if isinstance(section[key], str) and not os.path.isabs(section[key]):
                    section[key] = str(base / section[key])
    return data


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    section = file_cfg.get(command, {})
    unknown = set(section) - set(cfg)
    if unknown:
        raise ParameterError(f"unknown [{command}] setting(s): {sorted(unknown)}")
    cfg.update(section)
    cfg["seed"] = int(file_cfg.get("seed", 0))
    for key, value in flags.items():
        if value is not None:
            cfg[key] = value
    if not 0 <= cfg["seed"] < 2**64:
        raise ParameterError("seed must be an unsigned 64-bit integer")
    return cfg


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _json_dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


@contextlib.contextmanager
def staged_output(out):
    """Yield a temporary directory that replaces ``out`` on success."""
    out = Path(out).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    backup = None
    if out.exists():
        backup = Path(tempfile.mkdtemp(prefix=f".{out.name}.old.", dir=out.parent))
        os.rmdir(backup)
        os.rename(out, backup)
    os.rename(stage, out)
    if backup is not None:
        shutil.rmtree(backup, ignore_errors=True)


def _read_params(path) -> ModelParams:
    if path is None:
        raise ParameterError("no params file given")
    return ModelParams.from_json(Path(path).read_text(encoding="utf-8"))


def _write_curves(curves: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["energy", "valuation_date", "T", "price"])
        for e in ENERGIES:
            c = curves[e]
            for t, p in zip(c.maturities, c.prices):
                w.writerow([e, str(c.valuation_date), f"{t:.12g}", repr(float(p))])


def read_curves(path) -> dict:
    rows = {e: [] for e in ENERGIES}
    dates = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"energy", "T", "price"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns energy,T,price")
        for row in reader:
            try:
                e = row["energy"].strip()
                rows[e].append((float(row["T"]), float(row["price"])))
                dates[e] = row.get("valuation_date") or "1970-01-01"
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}: bad curve row {row}") from exc
    curves = {}
    for e in ENERGIES:
        if not rows[e]:
            raise FormatError(f"{path}: no {ENERGY_NAMES[e]} curve points")
        pts = sorted(rows[e])
        curves[e] = ForwardCurve(e, np.datetime64(dates[e], "D"), np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    return curves


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict, out) -> str:
    if cfg["params"]:
        params = _read_params(cfg["params"])
    elif cfg["preset"] == "published":
        params = published_params()
    else:
        raise ParameterError(f"unknown preset {cfg['preset']!r}")
    sc = SynthConfig(**{f.name: cfg[f.name] for f in fields(SynthConfig)})
    data = generate(params, sc)
    y1, y2 = simulate_hamilton(int(cfg["hamilton_steps"]), cfg["seed"])
    w1, w2 = independent_walks(int(cfg["hamilton_steps"]), cfg["seed"])
    with staged_output(out) as stage:
        write_quotes(data.gas, stage / "gas.csv")
        write_quotes(data.crude, stage / "crude.csv")
        (stage / "truth.json").write_text(params.to_json() + "\n", encoding="utf-8")
        with open(stage / "fixtures.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "hamilton_y1", "hamilton_y2", "walk_1", "walk_2"])
            for k, row in enumerate(zip(y1, y2, w1, w2)):
                w.writerow([k] + [repr(float(v)) for v in row])
        _json_dump(cfg, stage / "config.json")
    return f"synth: {len(data.gas)} gas and {len(data.crude)} crude quotes written to {out}"


def cmd_calibrate(cfg: dict, out) -> str:
    panels = {}
    for e in ENERGIES:
        name = ENERGY_NAMES[e]
        if not cfg[name]:
            raise FileNotFoundError(f"no {name} quote file given (set [calibrate] {name} or --{name})")
        panels[e] = load_quotes(cfg[name], e, cfg[f"unit_{name}"])
    cc = CalibConfig(**{f.name: (tuple(cfg[f.name]) if f.name == "tau_starts" else cfg[f.name]) for f in fields(CalibConfig)})
    params, report = calibrate(panels["g"], panels["c"], cc)

    if cfg["valuation_date"]:
        vd = np.datetime64(cfg["valuation_date"], "D")
    else:
        common = np.intersect1d(panels["g"].dates, panels["c"].dates)
        if common.size == 0:
            raise ParameterError("gas and crude panels share no quote date; set valuation_date")
        vd = common[-1]
    curves = {e: initial_curve(panels[e], vd) for e in ENERGIES}
    fit = fit_theta_prime(params, curves, horizon=float(cfg["horizon"]), step=float(cfg["theta_step"]), n_tenors=int(cfg["n_tenors"]), panels=int(cfg["panels"]))
    centred = params.replace(theta_prime=fit.theta_prime)

    times = np.arange(0.0, float(cfg["horizon"]) + 1e-9, float(cfg["surface_time_step"]))
    surfaces = {"theta_zero": [], "fitted": []}
    for e in ENERGIES:
        fan = fit.fans[e]
        tenors = fan[np.unique(np.linspace(0, fan.size - 1, int(cfg["surface_tenors"])).round().astype(int))]
        lm = np.array([[log_moment(e, t, t + x, params, cfg["panels"], cfg["panels"]) for x in tenors] for t in times])
        drift = np.array([[fit.theta_prime.sigma_integral(e, t, t + x, params.vol) for x in tenors] for t in times])
        tt = np.repeat(times, tenors.size)
        mm = (times[:, None] + tenors[None, :]).ravel()
        surfaces["theta_zero"].append(MomentSurface(e, tt, mm, np.exp(lm).ravel()))
        surfaces["fitted"].append(MomentSurface(e, tt, mm, np.exp(lm + drift).ravel()))
    dev = {case: {ENERGY_NAMES[s.energy]: s.max_deviation for s in srf} for case, srf in surfaces.items()}

    doc = report.to_dict()
    doc["centering"] = {
        "valuation_date": str(vd),
        "horizon": float(cfg["horizon"]),
        "residual_max": fit.residual_max,
        "residual_rms": fit.residual_rms,
        "fans": {ENERGY_NAMES[e]: fit.fans[e].tolist() for e in ENERGIES},
        "max_deviation": dev,
    }
    with staged_output(out) as stage:
        (stage / "params.json").write_text(centred.to_json() + "\n", encoding="utf-8")
        _json_dump(doc, stage / "report.json")
        report.write_matrices(stage)
        report.write_motion(stage / "motion.csv")
        write_theta_prime(fit.theta_prime, stage / "theta_prime.csv")
        with open(stage / "centering_surface.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            first = True
            for case, srf in surfaces.items():
                write_surface_rows(w, srf, header=first, label=case)
                first = False
        _write_curves(curves, stage / "initial_curves.csv")
        for e in ENERGIES:
            write_rejections(panels[e], stage / f"rejections_{ENERGY_NAMES[e]}.csv")
        _json_dump(cfg, stage / "config.json")
    lines = [
        f"calibrate: {report.motion.n_obs} observations, valuation date {vd}",
        *(f"  {ENERGY_NAMES[e]}: tau1={report.tau[e][0]:.4f} tau2={report.tau[e][1]:.4f}" for e in ENERGIES),
        f"  Pi non-zero entries: {int(np.count_nonzero(report.pi))}",
        f"  centering max deviation: theta'=0 {dev['theta_zero']}, fitted {dev['fitted']}",
    ]
    return "\n".join(lines)


def cmd_simulate(cfg: dict, out) -> str:
    params = _read_params(cfg["params"])
    if cfg["curves"]:
        curves = read_curves(cfg["curves"])
    else:
        curves = {e: ForwardCurve.flat(e, float(cfg[f"price_{ENERGY_NAMES[e]}"])) for e in ENERGIES}
    sc = SimConfig(
        measure=cfg["measure"],
        horizon=float(cfg["horizon"]),
        dt=float(cfg["dt"]),
        n_paths=int(cfg["n_paths"]),
        seed=int(cfg["seed"]),
        scheme=cfg["scheme"],
        maturities=tuple(cfg["maturities"]) if cfg["maturities"] is not None else None,
        tenors=tuple(cfg["tenors"]) if cfg["tenors"] is not None else None,
        record_times=tuple(cfg["record_times"]) if cfg["record_times"] is not None else None,
    )
    scen = simulate_forwards(params, curves, sc, keep_motions=True)
    diag = diagnostics(scen, params)
    diag["params_digest"] = scen.params_digest
    with staged_output(out) as stage:
        if cfg["write_csv"]:
            scen.to_csv(stage / "scenarios.csv")
        scen.to_binary(stage / "scenarios.bin")
        _json_dump(diag, stage / "diagnostics.json")
        _json_dump(cfg, stage / "config.json")
    return (
        f"simulate: {sc.n_paths} paths x {scen.times.size} times under {sc.measure.value} ({sc.scheme.value}); "
        f"max |mean F/F0 - 1| = {diag['max_martingale_deviation']:.3e} "
        f"({diag['max_deviation_in_standard_errors']:.2f} s.e.)"
    )


def _read_motion(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "date":
            raise FormatError(f"{path}: expected a motion CSV with a date column")
        try:
            rows = [[float(v) for v in r[1:]] for r in reader if r]
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric motion value") from exc
    return np.array(rows)


def cmd_validate(cfg: dict, out) -> str:
    checks = []
    n = int(cfg["hamilton_steps"])
    y1, y2 = simulate_hamilton(n, cfg["seed"])
    res, vec = engle_granger_test(y2, y1)
    checks.append({"name": "hamilton_cointegration", "expect": "reject", "passed": res.reject, "result": res.to_dict()})
    w1, w2 = independent_walks(n, cfg["seed"])
    res, _ = engle_granger_test(w1, w2)
    checks.append({"name": "independent_walks", "expect": "not reject", "passed": not res.reject, "result": res.to_dict()})

    if cfg["params"]:
        params = _read_params(cfg["params"])
        rank = classify_pi_rank(params.pi, float(cfg["pi_rank_tol"]))
        entry = {"rank": rank.rank, "case": rank.case, "singular_values": rank.singular_values.tolist()}
        passed = True
        if rank.case == "PARTIAL":
            err = float(np.linalg.norm(params.pi - rank.alpha @ rank.beta.T))
            entry["reconstruction_error"] = err
            passed = err <= float(cfg["pi_rank_tol"]) * max(float(np.linalg.norm(params.pi)), 1e-300) + 1e-15
        checks.append({"name": "pi_rank", "expect": "alpha beta^T reproduces Pi", "passed": bool(passed), "result": entry})
        worst = 0.0
        rows = []
        for e in ENERGIES:
            for t, T in cfg["identity_points"]:
                m = closed_form_moment(e, t, T, params)
                alt = np.exp(0.5 * wiener_variance(e, t, T, params) - 0.5 * quadratic_variation(e, t, T, params))
                worst = max(worst, abs(m - alt))
                rows.append({"energy": e, "t": t, "T": T, "closed_form": m, "gaussian_identity": float(alt)})
        checks.append({"name": "moment_identity", "expect": f"|difference| <= {cfg['identity_tol']}", "passed": bool(worst <= float(cfg["identity_tol"])), "result": {"max_difference": worst, "points": rows}})

    if cfg["motion"]:
        x = _read_motion(cfg["motion"])
        comps = []
        for i in range(x.shape[1]):
            try:
                comps.append({"component": i + 1, **adf_test(x[:, i]).to_dict()})
            except CoforwardError as exc:
                comps.append({"component": i + 1, "error": str(exc)})
        info = {"adf": comps}
        if x.shape[1] >= 4:
            try:
                res, vec = engle_granger_test(x[:, 0], x[:, 3])
                info["X1_on_X4"] = res.to_dict()
            except CoforwardError as exc:
                info["X1_on_X4"] = {"error": str(exc)}
        checks.append({"name": "motion_diagnostics", "expect": "informational", "passed": True, "result": info})

    ok = all(c["passed"] for c in checks)
    text = "\n".join(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  (expect {c['expect']})" for c in checks)
    with staged_output(out) as stage:
        _json_dump({"passed": ok, "checks": checks}, stage / "validation.json")
        (stage / "validation.txt").write_text(text + "\n", encoding="utf-8")
        _json_dump(cfg, stage / "config.json")
    return "validate:\n" + text


COMMANDS = {"synth": cmd_synth, "calibrate": cmd_calibrate, "simulate": cmd_simulate, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coforward", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "synth": ("generate synthetic quote panels and test fixtures", []),
        "calibrate": ("estimate model parameters and centering drift", [("--gas", str), ("--crude", str), ("--horizon", float), ("--panels", int)]),
        "simulate": ("simulate forward-curve scenarios", [("--params", str), ("--curves", str), ("--measure", str), ("--scheme", str), ("--n-paths", int), ("--horizon", float), ("--dt", float)]),
        "validate": ("run the diagnostics suite", [("--params", str), ("--motion", str)]),
    }
    for name, (help_text, extra) in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="TOML configuration file")
        p.add_argument("--out", type=str, required=True, help="output directory (replaced atomically)")
        p.add_argument("--seed", type=int, default=None, help="top-level random seed (u64)")
        for flag, typ in extra:
            p.add_argument(flag, type=typ, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    try:
        file_cfg = load_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_cfg, flags)
        message = COMMANDS[args.command](cfg, args.out)
    except CoforwardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
