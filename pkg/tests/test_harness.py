import csv
import json

import numpy as np
import pytest

from bisimetric.cli import main
from bisimetric.harness import ConfigError, ExperimentConfig, ExperimentReport, emit_plot_data, run_experiment
from bisimetric.mdp import load_mdp, make_gridworld, random_mdp, save_mdp
from bisimetric.metrics import load_distance


def grid_config(**kw):
    base = {"mdp": {"builtin": "gridworld", "n": 3}, "methods": ["tv"], "c_values": [0.5]}
    base.update(kw)
    return ExperimentConfig.from_json(base)


class TestConfig:
    def test_defaults(self):
        cfg = grid_config()
        assert cfg.tol == 1e-4 and cfg.samples == 10 and cfg.runs == 30 and cfg.time_budget == 600.0

    @pytest.mark.parametrize("patch", [
        {"methods": []},
        {"methods": ["exact"]},
        {"c_values": [1.0]},
        {"gamma": 0.0},
        {"mdp": {"name": "x"}},
        {"colour": "red"},
        {"epsilon_values": [-1]},
    ])
    def test_invalid(self, patch):
        with pytest.raises(ConfigError):
            grid_config(**patch)

    def test_unknown_builtin(self):
        with pytest.raises(ConfigError):
            run_experiment(grid_config(mdp={"builtin": "maze"}))

    def test_load_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "missing.json")


class TestRunExperiment:
    def test_singleton_aggregation(self):
        cfg = grid_config(k_values=[36], vi_tol=1e-8)
        report = run_experiment(cfg)
        (cell,) = report.k_sweep
        assert cell["status"] == "ok" and cell["n_blocks"] == 36
        assert cell["linf"] <= 2 * cfg.vi_tol

    def test_ordering_flag(self):
        cfg = grid_config(methods=["fix", "tv"], c_values=[0.5, 0.9], tol=1e-3)
        report = run_experiment(cfg)
        checks = [c for c in report.checks if (c["lower"], c["upper"]) == ("fix", "tv")]
        assert len(checks) == 2 and all(c["holds"] for c in checks)

    def test_zero_budget_fails_every_method(self):
        cfg = grid_config(methods=["fix", "sample", "tv", "bisim"], c_values=[0.5, 0.9], k_values=[4],
                          epsilon_values=[0.1], time_budget=0.0)
        report = run_experiment(cfg)
        assert len(report.metrics) == 8
        assert all(r["status"] == "failed" and "time budget" in r["reason"] for r in report.metrics)
        assert all(r["status"] == "failed" for r in report.k_sweep + report.epsilon_sweep)
        assert report.checks == []

    def test_every_cell_present(self):
        cfg = grid_config(methods=["tv", "bisim"], c_values=[0.1, 0.9], k_values=[1, 10, 99], epsilon_values=[0.0, 1.0])
        report = run_experiment(cfg)
        assert len(report.metrics) == 4
        assert len(report.k_sweep) == 12 and len(report.epsilon_sweep) == 8
        bad = [r for r in report.k_sweep if r["k"] == 99]
        assert all(r["status"] == "failed" and r["reason"] for r in bad)

    def test_deterministic(self):
        cfg = grid_config(methods=["sample", "fix"], c_values=[0.5], samples=3, runs=2, seed=7, tol=1e-3,
                          k_values=[4, 9], epsilon_values=[0.5])
        a, b = run_experiment(cfg), run_experiment(cfg)
        assert a.without_timings() == b.without_timings()
        assert "seconds" in a.metrics[0]

    def test_fixed_gamma(self):
        cfg = grid_config(c_values=[0.1, 0.9], gamma=0.5, k_values=[9])
        assert {r["gamma"] for r in run_experiment(cfg).k_sweep} == {0.5}

    def test_mdp_from_path(self, tmp_path):
        save_mdp(random_mdp(4, 2, np.random.default_rng(0)), tmp_path / "m.json")
        cfg = grid_config(mdp={"path": "m.json"}, k_values=[2])
        report = run_experiment(cfg, base=tmp_path)
        assert report.mdp == {"name": "m", "n_states": 4, "n_actions": 2}


class TestPlotData:
    def test_row_counts(self, tmp_path):
        report = run_experiment(grid_config(k_values=[4, 9, 16], epsilon_values=[0.2]))
        k_path, eps_path = emit_plot_data(report, tmp_path)
        k_rows = list(csv.reader(k_path.open()))
        assert k_rows[0] == ["method", "c", "gamma", "k", "n_blocks", "linf"]
        assert len(k_rows) == 4
        eps_rows = list(csv.reader(eps_path.open()))
        assert eps_rows[0] == ["method", "c", "gamma", "epsilon", "linf", "n_blocks"]
        assert len(eps_rows) == 2

    def test_empty_sweep_header_only(self, tmp_path):
        k_path, eps_path = emit_plot_data(ExperimentReport(mdp={}), tmp_path)
        assert k_path.read_text().strip() == "method,c,gamma,k,n_blocks,linf"
        assert eps_path.read_text().strip() == "method,c,gamma,epsilon,linf,n_blocks"

    def test_round_trip_bit_exact(self, tmp_path):
        report = run_experiment(grid_config(methods=["tv", "bisim"], c_values=[0.1, 0.9], k_values=[5, 12],
                                            epsilon_values=[0.05, 0.3]))
        k_path, eps_path = emit_plot_data(report, tmp_path)
        for path, rows in ((k_path, report.k_sweep), (eps_path, report.epsilon_sweep)):
            parsed = list(csv.DictReader(path.open()))
            assert len(parsed) == len(rows)
            for got, want in zip(parsed, rows):
                assert float(got["linf"]) == want["linf"]
                assert float(got["c"]) == want["c"] and float(got["gamma"]) == want["gamma"]
                assert int(got["n_blocks"]) == want["n_blocks"]


class TestCli:
    def test_gen(self, tmp_path):
        assert main(["gen", "gridworld", "--n", "5", "--out", str(tmp_path / "g.json")]) == 0
        assert load_mdp(tmp_path / "g.json").n_states == 100
        assert main(["gen", "coffee", "--out", str(tmp_path / "c.json")]) == 0
        assert load_mdp(tmp_path / "c.json").n_actions == 4

    def test_pipeline(self, tmp_path):
        mdp_path = tmp_path / "g.json"
        save_mdp(make_gridworld(3), mdp_path)
        assert main(["compute", "--mdp", str(mdp_path), "--method", "fix", "--c", "0.9", "--tol", "1e-3",
                     "--out", str(tmp_path / "d")]) == 0
        dm = load_distance(tmp_path / "d.csv")
        meta = json.loads((tmp_path / "d.json").read_text())
        assert {"method", "c", "tol", "iterations", "certified_bound", "seed"} <= set(meta)
        assert dm.d.shape == (36, 36)

        assert main(["aggregate", "--dist", str(tmp_path / "d.csv"), "--k", "9", "--out", str(tmp_path / "p.json")]) == 0
        part = json.loads((tmp_path / "p.json").read_text())
        assert part["method"] == "to_k" and len(part["blocks"]) == 9

        assert main(["aggregate", "--dist", str(tmp_path / "d.csv"), "--epsilon", "0.002",
                     "--out", str(tmp_path / "e.json")]) == 0
        assert len(json.loads((tmp_path / "e.json").read_text())["blocks"]) == 9

        assert main(["eval", "--mdp", str(mdp_path), "--partition", str(tmp_path / "p.json"), "--gamma", "0.9",
                     "--out", str(tmp_path / "v.json")]) == 0
        result = json.loads((tmp_path / "v.json").read_text())
        assert result["n_blocks"] == 9 and result["linf"] <= 2e-8

    def test_experiment(self, tmp_path):
        cfg = {"mdp": {"builtin": "gridworld", "n": 3}, "methods": ["tv", "bisim"], "c_values": [0.5],
               "k_values": [4, 36], "epsilon_values": [0.1]}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert main(["experiment", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "out")]) == 0
        names = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert names == ["epsilon_sweep.csv", "k_sweep.csv", "report.json"]

    def test_config_errors_exit_1(self, tmp_path, capsys):
        assert main(["compute", "--mdp", str(tmp_path / "none.json"), "--method", "fix", "--c", "0.5",
                     "--out", str(tmp_path / "d")]) == 1
        (tmp_path / "cfg.json").write_text(json.dumps({"mdp": {"builtin": "gridworld"}, "methods": []}))
        assert main(["experiment", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "o")]) == 1
        save_mdp(make_gridworld(1), tmp_path / "g.json")
        assert main(["compute", "--mdp", str(tmp_path / "g.json"), "--method", "fix", "--c", "1.5",
                     "--out", str(tmp_path / "d")]) == 1
        with pytest.raises(SystemExit) as exc:
            main(["compute", "--method", "nope"])
        assert exc.value.code == 1
        assert "bisimetric" in capsys.readouterr().err

    def test_compute_failure_exit_2(self, tmp_path, monkeypatch):
        save_mdp(make_gridworld(1), tmp_path / "g.json")

        def boom(*args, **kwargs):
            raise FloatingPointError("solver diverged")

        monkeypatch.setattr("bisimetric.cli.compute_metric", boom)
        assert main(["compute", "--mdp", str(tmp_path / "g.json"), "--method", "fix", "--c", "0.5",
                     "--out", str(tmp_path / "d")]) == 2
