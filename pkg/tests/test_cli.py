import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mhfree import cli
from mhfree.config import ConfigError, load_config, parse_config

D_STAR = 1.5936242600400401

BASE = {
    "distribution": {"kind": "exponential", "params": {"mean": 1.0}},
    "distortion": {"kind": "identity"},
    "market": {"pi": 1.5, "theta0": 1.0},
    "grid": {"n_nodes": 600, "ode_nodes": 1200},
    "solver": {"route": "qp"},
    "simulate": {"x": 1.0, "T": 5.0, "dt": 0.01, "n_paths": 500, "seed": 2},
}


def _config(tmp_path, **changes):
    data = json.loads(json.dumps(BASE))
    for key, val in changes.items():
        data[key] = val
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return path


def _contract(tmp_path, d, name="c.csv"):
    path = tmp_path / name
    # the kink sits on a node; a kink inside a cell blurs Phi over that cell
    z = np.union1d(np.linspace(0, 30, 3001), [d])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z", "value"])
        w.writerows(zip(z, np.maximum(z - d, 0.0)))
    return path


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config([])
    with pytest.raises(ConfigError, match="missing"):
        parse_config({"distribution": {}})
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({**BASE, "extras": {}})
    with pytest.raises(ConfigError):
        parse_config({**BASE, "solver": {"route": "bisect"}})
    with pytest.raises(ConfigError):
        parse_config({**BASE, "market": {"pi": "high"}}).market_params()
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_csv_paths_are_relative_to_the_config(tmp_path):
    (tmp_path / "claims.csv").write_text("claim\n1\n2\n3\n")
    cfg = load_config(_config(tmp_path, distribution={"kind": "empirical", "params": {"csv": "claims.csv"}}))
    assert cfg.loss().mean == pytest.approx(2.0)
    assert cfg.route == "qp" and cfg.grid_spec().n_nodes == 600


def test_solve_writes_summary_and_curve(tmp_path, capsys):
    code, out, _ = _run(capsys, "solve", "--config", _config(tmp_path), "--out", tmp_path / "o")
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["a_star"] == pytest.approx(1 / D_STAR, rel=1e-6)
    assert json.loads(out)["a_star"] == summary["a_star"]
    rows = list(csv.reader((tmp_path / "o" / "contract.csv").open()))
    assert rows[0] == ["z", "H", "I", "Phi"]


def test_verify_optimal_and_wrong_deductible(tmp_path, capsys):
    cfg = _config(tmp_path)
    code, out, _ = _run(capsys, "verify", "--config", cfg, "--contract", _contract(tmp_path, D_STAR), "--out", tmp_path)
    assert code == 0, out
    assert json.loads(out)["passed"]
    code, out, _ = _run(capsys, "verify", "--config", cfg, "--contract", _contract(tmp_path, 1.0, "w.csv"),
                        "--out", tmp_path)
    assert code == 1
    assert not json.loads(out)["passed"]


def test_exit_codes(tmp_path, capsys):
    cfg = _config(tmp_path)
    bad = tmp_path / "dec.csv"
    bad.write_text("z,value\n0,0\n1,1\n2,0.5\n")
    assert _run(capsys, "verify", "--config", cfg, "--contract", bad)[0] == 4
    header = tmp_path / "hdr.csv"
    header.write_text("x,I\n0,0\n")
    assert _run(capsys, "price", "--config", cfg, "--contract", header)[0] == 4
    cheap = _config(tmp_path, market={"pi": 0.9, "theta0": 1.0})
    code, _, err = _run(capsys, "solve", "--config", cheap, "--out", tmp_path)
    assert code == 2 and "below expected loss" in err
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert _run(capsys, "solve", "--config", broken)[0] == 5
    assert _run(capsys, "solve")[0] == 5


def test_price_of_stop_loss(tmp_path, capsys):
    code, out, _ = _run(capsys, "price", "--config", _config(tmp_path), "--contract", _contract(tmp_path, 1.0),
                        "--out", tmp_path)
    assert code == 0
    # (1 + theta0) e^{-d} for exponential(1)
    assert json.loads(out)["premium"] == pytest.approx(2 * np.exp(-1.0), rel=1e-6)


def test_simulate_writes_paths(tmp_path, capsys):
    code, out, _ = _run(capsys, "simulate", "--config", _config(tmp_path), "--out", tmp_path / "s", "--paths")
    assert code == 0
    res = json.loads(out)
    assert res["n_paths"] == 500
    assert (tmp_path / "s" / "paths.csv").exists()


def test_reproduce_stoploss(tmp_path, capsys):
    code, out, _ = _run(capsys, "reproduce", "stoploss", "--out", tmp_path)
    assert code == 0
    assert json.loads(out)["d_star"] == pytest.approx(D_STAR, abs=1e-8)


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "mhfree.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "reproduce" in res.stdout
