import json
import math

import numpy as np
import pytest

from kernel_ope import cli
from kernel_ope.envs import Dataset
from kernel_ope.experiments import read_csv

ENV = {"kind": "tabular", "n_states": 3, "n_actions": 2, "gamma": 0.5, "seed": 2}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def cfg(tmp_path):
    return write(tmp_path / "cfg.json", {"env": ENV, "behavior": {"alphas": [0.5], "traj_len": 10}, "n": 120,
                                         "bound": {"q_radius_factor": 10, "delta": 0.1}, "baseline": {"delta": 0.1}})


@pytest.fixture
def data(tmp_path, cfg):
    out = str(tmp_path / "d.json")
    assert cli.main(["simulate", "--config", cfg, "--seed", "3", "--out", out]) == 0
    return out


def test_simulate_writes_dataset(data):
    d = Dataset.load(data)
    assert len(d) == 120
    assert d.next_actions.shape[1] == 5
    assert math.isfinite(d.meta["j_true"])


def test_simulate_deterministic(tmp_path, cfg, data):
    other = str(tmp_path / "e.json")
    cli.main(["simulate", "--config", cfg, "--seed", "3", "--out", other])
    assert open(data).read() == open(other).read()


def test_bound_and_baseline(tmp_path, cfg, data):
    out = tmp_path / "ci.json"
    assert cli.main(["bound", "--config", cfg, "--data", data, "--out", str(out)]) == 0
    ci = json.loads(out.read_text())
    assert ci["lower"] <= ci["upper"] and ci["n"] == 120 and ci["delta"] == 0.1
    assert ci["lower"] <= Dataset.load(data).meta["j_true"] <= ci["upper"]
    bl = tmp_path / "is.json"
    assert cli.main(["baseline", "--config", cfg, "--data", data, "--out", str(bl)]) == 0
    iv = json.loads(bl.read_text())
    assert iv["lower"] <= iv["estimate"] <= iv["upper"]


def test_test_q(tmp_path, cfg, data):
    out = tmp_path / "t.json"
    assert cli.main(["test-q", "--config", cfg, "--data", data, "--out", str(out)]) == 0
    assert json.loads(out.read_text())["decision"] in ("accept", "reject")


def test_config_errors(tmp_path, cfg, data, capsys):
    assert cli.main(["bound", "--config", cfg]) == 2
    assert cli.main(["bound", "--config", cfg, "--data", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["bound", "--config", str(tmp_path / "nope.json"), "--data", data]) == 2
    bad = write(tmp_path / "bad.json", {"env": {"kind": "gym"}})
    assert cli.main(["simulate", "--config", bad, "--out", str(tmp_path / "x.json")]) == 2
    unknown = write(tmp_path / "u.json", {"env": ENV, "bound": {"stepsize": 1}})
    assert cli.main(["bound", "--config", unknown, "--data", data]) == 2
    noradius = write(tmp_path / "r.json", {"env": ENV})
    assert cli.main(["test-q", "--config", noradius, "--data", data]) == 2
    assert "config error" in capsys.readouterr().err


def test_inconclusive_exit(tmp_path, data):
    d = Dataset.load(data)
    d.rewards[:] = 0.0
    zero = str(tmp_path / "z.json")
    d.save(zero)
    c = write(tmp_path / "c.json", {"env": ENV, "behavior": {"alphas": [0.5], "traj_len": 10}})
    assert cli.main(["bound", "--config", c, "--data", zero]) == 3


def test_numeric_exit(monkeypatch, cfg, data):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(cli, "confidence_interval", boom)
    assert cli.main(["bound", "--config", cfg, "--data", data]) == 4


def test_experiment(tmp_path):
    exp = {"name": "cli", "kind": "coverage", "env": ENV, "behavior": {"alphas": [0.5], "traj_len": 10},
           "n_grid": [40], "trials": 3, "bound": {"q_radius_factor": 10}}
    path = write(tmp_path / "exp.json", exp)
    out = str(tmp_path / "rows.csv")
    assert cli.main(["experiment", "--config", path, "--out", out, "--seed", "9"]) == 0
    rows = read_csv(out)
    assert len(rows) == 3
    summary = json.loads(open(out + ".summary.json").read())
    assert summary["failure_rate"]["kernel|40|0.1"] == 1.0 - np.mean([r.covered for r in rows])
    first = open(out, "rb").read()
    assert cli.main(["experiment", "--config", path, "--out", out, "--seed", "9", "--threads", "2"]) == 0
    assert open(out, "rb").read() == first
    bad = write(tmp_path / "bad.json", {**exp, "trials": 0})
    assert cli.main(["experiment", "--config", bad, "--out", out]) == 2
