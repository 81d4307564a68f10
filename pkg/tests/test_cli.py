import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from corrkal import cli
from corrkal.config import ExperimentConfig
from corrkal.simulate import load_dataset


def _small_config(tmp_path, **run):
    body = {"preset": "ex1", "L": "300", "rho_list": "[0.0, 0.5]", "seed_list": "[1, 2]"}
    body.update(run)
    p = tmp_path / "small.ini"
    p.write_text("[run]\n" + "".join(f"{k} = {v}\n" for k, v in body.items()))
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_preset(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert cli.main(["simulate", "--preset", "ex1", "--seed", "1", "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.L == 5000 and ds.n == 2
    header = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")][0]
    assert len(header.split(",")) == 9
    printed = capsys.readouterr().out
    assert "configured U" in printed and "empirical  U" in printed


def test_simulate_ex2_into_directory(tmp_path):
    assert cli.main(["simulate", "--preset", "ex2", "--rho", "-0.5", "--seed", "4", "--out", str(tmp_path)]) == 0
    ds = load_dataset(tmp_path / "ex2_rhom0.5_seed4.csv")
    assert ds.n == 2 and ds.meta["rho"] == -0.5
    np.testing.assert_array_equal(ds.theta_true, [-0.11, -0.15, 1.9, 1.6, 1.9, 0.1069, -0.0143])


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CORRKAL_SEED", "7")
    cfg = _small_config(tmp_path)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "ex1_rho0.5_seed7.csv").exists()
    monkeypatch.setenv("CORRKAL_SEED", "x")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_config_rejections(tmp_path, capsys):
    bad = _small_config(tmp_path, L="0")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "L must be >= 1" in capsys.readouterr().err
    assert cli.main(["simulate", "--preset", "ex1", "--rho", "-0.6", "--out", str(tmp_path)]) == 2
    assert "admissible" in capsys.readouterr().err
    ok = _small_config(tmp_path)
    assert cli.main(["simulate", "--config", str(ok), "--preset", "ex1"]) == 2


@pytest.fixture
def dataset(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "data.csv"
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    return cfg, out


def test_identify_writes_run(tmp_path, dataset, capsys):
    cfg, data = dataset
    runs = tmp_path / "runs"
    assert cli.main(["identify", str(data), "--config", str(cfg), "--out", str(runs)]) == 0
    run = runs / "ex1_kf-cn-rgels_rho0.5_seed3"
    trace = _rows(run / "theta_trace.csv")
    assert trace[0] == ["t"] + [f"theta_{i}" for i in range(1, 8)] + ["delta_theta"]
    assert len(trace) == 301
    summary = _rows(run / "summary.csv")
    assert summary[0] == ["algorithm", "rho", "seed", "u_mode", "t", "f1", "f2", "g1", "g2", "d", "J1", "J2", "delta_pct"]
    assert summary[1][:4] == ["kf-cn-rgels", "0.5", "3", "equicorrelated"]
    assert all(len(v.split(".")[1]) == 4 for v in summary[1][5:])
    info = json.loads((run / "run_info.json").read_text())
    assert info["delta_pct"] == pytest.approx(float(summary[1][-1]), abs=1e-4)
    assert len(_rows(run / "states.csv")) == 301


def test_identify_without_truth_omits_delta(tmp_path):
    r = np.random.default_rng(0)
    p = tmp_path / "plain.csv"
    lines = ["t,u,y,x1,x2,w1,w2,v,vstar"]
    lines += [f"{t},{r.choice([-0.8, 1.0])},{r.normal()},0,0,0,0,0,0" for t in range(200)]
    p.write_text("\n".join(lines) + "\n")
    cfg = _small_config(tmp_path)
    assert cli.main(["identify", str(p), "--config", str(cfg), "--rho", "0.0", "--out", str(tmp_path / "r")]) == 0
    run = tmp_path / "r" / "ex1_kf-cn-rgels_rho0.0_seedna"
    assert "delta_theta" not in _rows(run / "theta_trace.csv")[0]
    assert "delta_pct" not in _rows(run / "summary.csv")[0]


def test_identify_dimension_mismatch(tmp_path, dataset, capsys):
    _, data = dataset
    p = tmp_path / "n1.ini"
    p.write_text("[model]\nf = [0.1]\ng = [1.0]\nd = 0.0\n[noise]\nq_diag = [0.01]\nr = 1.0\n")
    assert cli.main(["identify", str(data), "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "n=2 states" in capsys.readouterr().err


def test_identify_missing_dataset(tmp_path, capsys):
    assert cli.main(["identify", str(tmp_path / "none.csv"), "--preset", "ex1"]) == 2
    assert "none.csv" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, dataset, monkeypatch, capsys):
    cfg, data = dataset
    original = ExperimentConfig.options

    def tight(self, *a, **k):
        opt = original(self, *a, **k)
        opt.divergence_limit = 1.0
        return opt

    monkeypatch.setattr(ExperimentConfig, "options", tight)
    assert cli.main(["identify", str(data), "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "diverged at t=" in capsys.readouterr().err


def test_compare_runs_all_algorithms(tmp_path, dataset):
    cfg, data = dataset
    out = tmp_path / "cmp"
    assert cli.main(["compare", str(data), "--config", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out / "compare.csv")
    assert [r[0] for r in rows[1:]] == ["kf-cn-rgels", "skf", "aug-kf"]


def test_sweep_outputs_and_order(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(cfg), "--algo", "all", "--out", str(out)]) == 0
    runs = _rows(out / "runs.csv")[1:]
    keys = [(r[0], float(r[1]), int(r[2])) for r in runs]
    assert len(keys) == 12
    order = {"kf-cn-rgels": 0, "skf": 1, "aug-kf": 2}
    assert keys == sorted(keys, key=lambda k: (order[k[0]], k[1], k[2]))
    agg = _rows(out / "aggregate.csv")
    assert agg[0] == ["algorithm", "rho", "u_mode", "n_seeds", "mean_delta_pct", "std_delta_pct"]
    assert len(agg) == 7 and all(r[3] == "2" for r in agg[1:])
    assert len(list(out.glob("ex1_*_rho*_seed*"))) == 12
    traces = _rows(out / "delta_traces.csv")
    assert len(traces) == 1 + 6 * 300


def test_sweep_deterministic_across_workers(tmp_path):
    cfg = _small_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(b), "--jobs", "2"]) == 0
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_sweep_rejects_bad_rho_before_running(tmp_path, capsys):
    cfg = _small_config(tmp_path, rho_list="[0.0, -0.6]")
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 2
    assert "-0.6" in capsys.readouterr().err
    assert not out.exists()
    assert cli.main(["sweep", "--config", str(_small_config(tmp_path)), "--jobs", "0", "--out", str(out)]) == 2


def test_analyze(tmp_path):
    cfg = _small_config(tmp_path, rho_list="[-0.3, 0.0, 0.3]", seed_list="[1]")
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["analyze", str(out)]) == 0
    rows = _rows(out / "cross_cov_trace.csv")
    assert rows[0] == ["algorithm", "seed", "u_mode", "rho", "trace"]
    by_rho = {float(r[3]): float(r[4]) for r in rows[1:]}
    assert by_rho[0.0] == 0.0 and by_rho[0.3] < 0 < by_rho[-0.3]
    assert _rows(out / "measurement_cov.csv")[0][-3:] == ["S", "P", "P0"]
    assert len(_rows(out / "state_rmse.csv")) == 4


def test_analyze_without_runs(tmp_path, capsys):
    assert cli.main(["analyze", str(tmp_path)]) == 2
    assert "no runs found" in capsys.readouterr().err
    assert cli.main(["analyze", str(tmp_path / "missing")]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "corrkal.cli", "simulate", "--preset", "ex1", "--out", str(tmp_path / "x.csv")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "x.csv").exists()
