import json

import numpy as np
import pytest

from tailchains.cli import main
from tailchains.config import bundled_config_names, bundled_config_path, load_config, validate_config, validate_dict

AR1 = {"type": "ar1", "d": 1, "alpha": 1.0, "A": 0.5,
       "innovation": {"name": "pareto-symmetric", "spectral": "uniform"}, "burn_in": 100}
KESTEN = {"type": "kesten", "d": 2, "alpha": 1.0, "radial": {"name": "lognormal", "sigma": 0.5},
          "additive": {"name": "normal"}, "burn_in": 100}


def small_config(tmp_path, model, seed=11, name="small"):
    cfg = {"name": name, "seed": seed, "model": model, "simulation": {"n": 100_000},
           "thresholds": [99.0, 99.5], "horizons": {"s": 1, "t": 1}, "bftc": {"n": 2000},
           "windows_per_threshold": 200, "n_perm": 199}
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


def test_bundled_configs_valid():
    assert set(bundled_config_names()) >= {"ar1_d1", "kesten_lognormal"}
    for name in bundled_config_names():
        assert validate_config(bundled_config_path(name)) == []


def test_validate_messages(tmp_path, capsys):
    cfg = json.loads(bundled_config_path("ar1_d1").read_text())
    cfg["model"]["alpha"] = -1
    assert any(m.startswith("/model/alpha") for m in validate_dict(cfg))
    cfg["model"]["alpha"] = 1
    cfg["model"]["type"] = "garch"
    assert any(m.startswith("/model/type") for m in validate_dict(cfg))
    del cfg["seed"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert main(["validate", str(p)]) == 1
    assert "'seed' is a required property" in capsys.readouterr().out


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2
    assert "error [io]" in capsys.readouterr().err


def test_load_config_rejects_invalid(tmp_path):
    from tailchains.errors import ConfigError

    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": AR1}))
    with pytest.raises(ConfigError):
        load_config(p)


def test_simulate_and_windows(tmp_path):
    spec = tmp_path / "m.json"
    spec.write_text(json.dumps(AR1))
    out = tmp_path / "sim.bin"
    assert main(["simulate", "--spec-file", str(spec), "--n", "5000", "--seed", "1", "--out", str(out)]) == 0
    meta = json.loads((tmp_path / "sim.bin.json").read_text())
    assert meta["n"] == 5000 and meta["d"] == 1 and meta["seed"] == 1
    assert out.stat().st_size == 5000 * 8
    csv = tmp_path / "w.csv"
    assert main(["windows", "--input", str(out), "--threshold-percentile", "99", "-s", "1", "-t", "2",
                 "--out", str(csv)]) == 0
    header = csv.read_text().splitlines()[0]
    assert header == "y,x-1_0,x+0_0,x+1_0,x+2_0"
    rows = np.loadtxt(csv, delimiter=",", skiprows=1, ndmin=2)
    assert np.all(rows[:, 0] > 1) and np.allclose(np.abs(rows[:, 2]), 1)


def test_adjoint_hand_example(tmp_path, capsys):
    p = tmp_path / "P.json"
    p.write_text(json.dumps({"d": 1, "atoms": [{"s": [1], "m": [0.5], "w": 0.5}, {"s": [1], "m": [0], "w": 0.5}]}))
    assert main(["adjoint", str(p), "--alpha", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    atoms = {(a["m"][0], a["w"]) for a in doc["adjoint"]["atoms"]}
    assert atoms == {(0.0, 0.75), (2.0, 0.25)}


def test_adjoint_inadmissible(tmp_path, capsys):
    p = tmp_path / "P.json"
    p.write_text(json.dumps({"d": 1, "atoms": [{"s": [1], "m": [-3], "w": 1.0}]}))
    assert main(["adjoint", str(p), "--alpha", "1"]) == 1
    assert json.loads(capsys.readouterr().out)["adjoint"] is None


def test_bftc_paths_and_timechange(tmp_path, capsys):
    spec = tmp_path / "m.json"
    spec.write_text(json.dumps(AR1))
    out = tmp_path / "p.csv"
    assert main(["bftc", "--spec-file", str(spec), "-s", "1", "-t", "1", "-n", "500", "--seed", "3",
                 "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (500, 3) and np.allclose(np.abs(rows[:, 1]), 1)
    assert main(["bftc", "--spec-file", str(spec), "-s", "2", "-t", "1", "-n", "5000", "--seed", "3",
                 "--check-timechange", "--functional", "clipped_start"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "i,estimate,ci" and len(lines) == 4


def test_compare(tmp_path, capsys):
    rng = np.random.default_rng(0)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    np.savetxt(a, rng.normal(size=(300, 2)), delimiter=",", header="u,v", comments="")
    np.savetxt(b, rng.normal(size=(300, 2)) + [0, 4], delimiter=",", header="u,v", comments="")
    assert main(["compare", str(a), str(b), "--seed", "5", "--n-perm", "199"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["test"] == "energy" and rec["p_value"] == pytest.approx(1 / 200) and rec["seed"] == 5
    assert main(["compare", str(a), str(b), "--seed", "5", "--test", "ks", "--columns", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["p_value"] > 0.001


def test_module_error_reported(tmp_path, capsys):
    spec = tmp_path / "m.json"
    spec.write_text(json.dumps({**AR1, "A": 1.5}))
    assert main(["simulate", "--spec-file", str(spec), "--n", "10", "--seed", "1", "--out",
                 str(tmp_path / "x.bin")]) == 2
    assert capsys.readouterr().err.startswith("error [models]")


def _data_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "summary.txt"}


@pytest.mark.parametrize("model", [AR1, KESTEN], ids=["ar1", "kesten"])
def test_run_deterministic(tmp_path, model, capsys):
    cfg = small_config(tmp_path, model)
    main(["run", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["run", str(cfg), "--out-dir", str(tmp_path / "b")])
    out = capsys.readouterr().out
    assert "overall:" in out
    a, b = _data_files(tmp_path / "a"), _data_files(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    assert {"simulation.bin", "simulation.bin.json", "bftc_paths.csv", "diagnostics.json",
            "windows_p99.csv", "windows_p99.5.csv"} <= a.keys()
    diag = json.loads(a["diagnostics.json"])
    names = {c["name"] for c in diag["checks"]}
    assert ("backward_extinction" in names) if model is AR1 else ("rstar_ks" in names)


def test_run_seed_changes_output(tmp_path):
    main(["run", str(small_config(tmp_path, AR1, seed=1, name="s1")), "--out-dir", str(tmp_path / "a")])
    main(["run", str(small_config(tmp_path, AR1, seed=2, name="s2")), "--out-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "simulation.bin").read_bytes() != (tmp_path / "b" / "simulation.bin").read_bytes()
