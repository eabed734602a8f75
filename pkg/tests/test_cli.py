import json
import subprocess
import sys

import numpy as np
import pytest

from maxstable import __version__
from maxstable.cli import main


def _write(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


GAUSS = {"kind": "gaussian", "sites": [[0.0, 0.0], [0.6, 0.3], [0.2, 0.9]], "matern": {"c": 1.0, "nu": 1.0}}


@pytest.fixture
def simulated(tmp_path):
    cfg = {"schema": 1, "model": GAUSS, "simulate": {"n": 400, "seed": 1}, "io": {"data_csv": "y.csv"}}
    path = _write(tmp_path / "sim.json", cfg)
    assert main(["simulate", "--config", path]) == 0
    return tmp_path


def test_simulate_writes_csv_and_sidecar(simulated):
    Y = np.loadtxt(simulated / "y.csv", delimiter=",", skiprows=1)
    assert Y.shape == (400, 3)
    side = json.loads((simulated / "y.csv.json").read_text())
    assert side["seed"] == 1 and side["generator"] == "mda" and side["version"] == __version__


def test_simulate_is_deterministic(simulated):
    first = (simulated / "y.csv").read_bytes()
    assert main(["simulate", "--config", str(simulated / "sim.json")]) == 0
    assert (simulated / "y.csv").read_bytes() == first


def test_simulate_max_stable_records_truncation(tmp_path):
    cfg = {"schema": 1, "model": GAUSS, "simulate": {"n": 40, "generator": "max_stable", "truncation": 200},
           "io": {"data_csv": "z.csv"}}
    assert main(["simulate", "--config", _write(tmp_path / "c.json", cfg)]) == 0
    side = json.loads((tmp_path / "z.csv.json").read_text())
    assert side["truncation"] == 200 and 0 <= side["truncation_bound"] <= 1


def test_config_rejections(tmp_path, capsys):
    bad = {"schema": 1, "model": GAUSS, "simulate": {"n": 0}, "io": {"data_csv": "y.csv"}}
    assert main(["simulate", "--config", _write(tmp_path / "a.json", bad)]) == 1
    assert "simulate/n" in capsys.readouterr().err
    unknown = {"schema": 1, "model": GAUSS, "io": {"data_csv": "y.csv"}, "extra": 1}
    assert main(["fit", "--config", _write(tmp_path / "b.json", unknown)]) == 1
    assert main(["fit", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "broken.json").write_text("{")
    assert main(["fit", "--config", str(tmp_path / "broken.json")]) == 1


def test_fit_missing_data_exit_1(tmp_path):
    cfg = {"schema": 1, "model": GAUSS, "io": {"data_csv": "nothing.csv"}}
    assert main(["fit", "--config", _write(tmp_path / "f.json", cfg)]) == 1


def test_censored_fit_report(simulated):
    cfg = {"schema": 1, "model": GAUSS, "transform": {"kind": "rank"},
           "likelihood": {"kind": "censored", "k": 40},
           "fit": {"init": [1.0, 1.0], "qmc_points": 256, "optimizer": {"restarts": 0, "xtol": 1e-4}},
           "io": {"data_csv": "y.csv", "out_json": "fit.json"}}
    code = main(["fit", "--config", _write(simulated / "fit_cfg.json", cfg)])
    rep = json.loads((simulated / "fit.json").read_text())
    assert code == (0 if rep["converged"] else 2)
    assert set(rep["theta_hat"]) == {"c", "nu"}
    assert rep["cov_method"] == "CensoredInfo" and rep["k_effective"] > 0
    assert rep["config"] == cfg and rep["version"] == __version__
    diag = dict(cfg, diagnose={"max_block": 2})
    assert main(["diagnose", "--config", _write(simulated / "diag_cfg.json", diag)]) == 0
    assert json.loads((simulated / "fit.json").read_text()) == rep
    assert "kendall_tau" in json.loads((simulated / "y.diagnose.json").read_text())


def test_init_length_checked(simulated):
    cfg = {"schema": 1, "model": GAUSS, "likelihood": {"kind": "pairwise"}, "io": {"data_csv": "y.csv"}}
    assert main(["fit", "--config", _write(simulated / "g.json", cfg), "--init", "1,2,3"]) == 1


def test_pairwise_equals_full_at_m2(tmp_path):
    model = {"kind": "clustered", "clusters": [
        {"members": [0, 1], "copula": "gumbel", "theta": 1.5, "margin": "frechet", "alpha": 2.0}]}
    sim = {"schema": 1, "model": model, "simulate": {"n": 60, "generator": "max_stable", "truncation": 200},
           "io": {"data_csv": "z.csv"}}
    assert main(["simulate", "--config", _write(tmp_path / "s.json", sim)]) == 0
    out = {}
    for kind in ("full", "pairwise"):
        cfg = {"schema": 1, "model": model, "likelihood": {"kind": kind},
               "fit": {"free": ["theta_0"], "covariance": False},
               "io": {"data_csv": "z.csv", "out_json": f"{kind}.json"}}
        main(["fit", "--config", _write(tmp_path / f"{kind}_cfg.json", cfg)])
        out[kind] = json.loads((tmp_path / f"{kind}.json").read_text())
    assert out["pairwise"]["loglik"] == pytest.approx(out["full"]["loglik"], abs=1e-9)


def test_diagnose(tmp_path):
    rng = np.random.default_rng(0)
    np.savetxt(tmp_path / "y.csv", 1 / rng.uniform(size=(500, 4)), delimiter=",")
    cfg = {"schema": 1, "model": {"kind": "gaussian", "cov": np.eye(4).tolist()},
           "diagnose": {"max_block": 2, "norm_threshold": 1.0}, "io": {"data_csv": "y.csv"}}
    assert main(["diagnose", "--config", _write(tmp_path / "d.json", cfg)]) == 0
    rep = json.loads((tmp_path / "y.diagnose.json").read_text())
    tau = np.array(rep["kendall_tau"])
    assert tau.shape == (4, 4) and np.max(np.abs(tau - np.diag(np.diag(tau)))) < 0.6
    assert max(len(b) for b in rep["clustering"]) <= 2
    assert sum(e["frequency"] for e in rep["exceedance_frequencies"]) == pytest.approx(1.0)
    assert len(rep["hill"]["alpha_hat"]) == 4


def test_diagnose_single_component(tmp_path):
    np.savetxt(tmp_path / "y.csv", np.arange(1.0, 31.0)[:, None], delimiter=",")
    cfg = {"schema": 1, "model": {"kind": "gaussian", "cov": [[1.0]]}, "io": {"data_csv": "y.csv"}}
    assert main(["diagnose", "--config", _write(tmp_path / "d.json", cfg)]) == 0
    rep = json.loads((tmp_path / "y.diagnose.json").read_text())
    assert rep["clustering"] == [[0]] and rep["kendall_tau"] == [[1.0]]


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "maxstable.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
    bad = subprocess.run([sys.executable, "-m", "maxstable.cli", "fit", "--config", "x.json", "--threads", "0"],
                         capture_output=True, text=True)
    assert bad.returncode == 1
