import csv
import json

import numpy as np
import pytest

from coforward.cli import DEFAULTS, main, resolve_config
from coforward.errors import ParameterError
from coforward.model import published_params


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.toml"
    cfg.write_text("seed = 5\n[synth]\nyears = 1.5\nhamilton_steps = 300\n", encoding="utf-8")
    assert main(["synth", "--config", str(cfg), "--out", str(root / "synth")]) == 0
    return root / "synth"


def test_synth_outputs(synth_dir):
    names = {p.name for p in synth_dir.iterdir()}
    assert {"gas.csv", "crude.csv", "truth.json", "config.json"} <= names
    cfg = json.loads((synth_dir / "config.json").read_text())
    assert cfg["seed"] == 5 and cfg["years"] == 1.5


def test_precedence_flags_over_file_over_defaults():
    file_cfg = {"seed": 3, "simulate": {"n_paths": 7, "horizon": 1.0}}
    cfg = resolve_config("simulate", file_cfg, {"n_paths": 9, "seed": None, "horizon": None})
    assert cfg["n_paths"] == 9
    assert cfg["horizon"] == 1.0
    assert cfg["dt"] == DEFAULTS["simulate"]["dt"]
    assert cfg["seed"] == 3
    with pytest.raises(ParameterError):
        resolve_config("simulate", {"simulate": {"n_pths": 1}}, {})
    with pytest.raises(ParameterError):
        resolve_config("simulate", {"seed": -1}, {})


def test_missing_input_is_io_error(tmp_path, synth_dir):
    code = main(["calibrate", "--gas", str(synth_dir / "gas.csv"), "--crude", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert not (tmp_path / "o").exists()


def test_constant_panel_is_data_error(tmp_path, synth_dir):
    rows = list(csv.reader((synth_dir / "gas.csv").open(encoding="utf-8")))
    with (tmp_path / "flat.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(rows[0])
        for r in rows[1:]:
            w.writerow([r[0], r[1], "30.0"])
    code = main(["calibrate", "--gas", str(tmp_path / "flat.csv"), "--crude", str(synth_dir / "crude.csv"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_corrupt_params_is_data_error(tmp_path):
    (tmp_path / "p.json").write_text("{broken", encoding="utf-8")
    assert main(["simulate", "--params", str(tmp_path / "p.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--params", str(tmp_path / "p.json"), "--measure", "X", "--out", str(tmp_path / "o")]) == 2


def _params_file(tmp_path):
    path = tmp_path / "params.json"
    path.write_text(published_params().to_json(), encoding="utf-8")
    return path


def test_simulate_three_paths(tmp_path):
    out = tmp_path / "sim"
    args = ["simulate", "--params", str(_params_file(tmp_path)), "--n-paths", "3", "--horizon", "0.1", "--out", str(out)]
    assert main(args + ["--seed", "1"]) == 0
    with (out / "scenarios.csv").open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["path"] for r in rows} == {"0", "1", "2"}
    assert {r["energy"] for r in rows} == {"g", "c"}
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["n_paths"] == 3
    first = (out / "scenarios.bin").read_bytes()
    assert main(args + ["--seed", "1"]) == 0
    assert (out / "scenarios.bin").read_bytes() == first
    assert main(args + ["--seed", "2"]) == 0
    assert (out / "scenarios.bin").read_bytes() != first


def test_failed_run_keeps_previous_output(tmp_path):
    out = tmp_path / "sim"
    params = _params_file(tmp_path)
    assert main(["simulate", "--params", str(params), "--n-paths", "2", "--horizon", "0.05", "--out", str(out)]) == 0
    before = sorted(p.name for p in out.iterdir())
    assert main(["simulate", "--params", str(params), "--dt", "-1", "--out", str(out)]) == 2
    assert sorted(p.name for p in out.iterdir()) == before
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".sim")]


def test_calibrate_and_validate(tmp_path, synth_dir):
    cfg = tmp_path / "cal.toml"
    cfg.write_text(
        f'[calibrate]\ngas = "{synth_dir / "gas.csv"}"\ncrude = "{synth_dir / "crude.csv"}"\n'
        "horizon = 0.25\npanels = 8\nn_tenors = 6\nsurface_tenors = 2\n"
        "[validate]\nhamilton_steps = 300\n",
        encoding="utf-8",
    )
    assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path / "cal")]) == 0
    names = {p.name for p in (tmp_path / "cal").iterdir()}
    assert {"params.json", "report.json", "Pi.csv", "SigmaSigmaT.csv", "motion.csv", "theta_prime.csv"} <= names
    pi = np.loadtxt(tmp_path / "cal" / "Pi.csv", delimiter=",")
    assert pi.shape == (6, 6)
    code = main(["validate", "--config", str(cfg), "--params", str(tmp_path / "cal" / "params.json"),
                 "--motion", str(tmp_path / "cal" / "motion.csv"), "--out", str(tmp_path / "val")])
    assert code == 0
    report = json.loads((tmp_path / "val" / "validation.json").read_text())
    assert report


def test_bad_toml(tmp_path):
    (tmp_path / "bad.toml").write_text("[synth\n", encoding="utf-8")
    assert main(["synth", "--config", str(tmp_path / "bad.toml"), "--out", str(tmp_path / "o")]) == 2
