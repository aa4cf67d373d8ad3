import csv
import json

import numpy as np
import pytest

from boxdyn.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main, parse_gain, parse_init, read_flat_config
from boxdyn.core import ArgumentError
from boxdyn.problems import example1, genwood_optimum

COARSE_CFG = """\
seed = 0
nodes = linspace:600,1000,5
[material]
rho = 1000
cp = 1000
length = 0.01
[grid]
nx = 11
dt = 1.0
t_end = 100
[noise]
sigma = {sigma}
"""


def run(tmp_path, *argv):
    return main([*argv, "--out-dir", str(tmp_path)])


def read_csv(path):
    with open(path) as fh:
        schema = fh.readline().strip()
        rows = list(csv.reader(fh))
    return schema, rows[0], rows[1:]


class TestParsers:
    def test_gain(self):
        assert parse_gain("2", 3).diagonal_entries().tolist() == [2, 2, 2]
        assert parse_gain("diag:0.5,1", 2).diagonal_entries().tolist() == [0.5, 1]
        K = parse_gain("dense:0.5,0.2;0.2,1", 2)
        np.testing.assert_array_equal(K.as_matrix(), [[0.5, 0.2], [0.2, 1]])

    @pytest.mark.parametrize("text", ["x", "diag:1", "dense:1,0;0", "chol:1", "dense:1,2;2,1", "0"])
    def test_gain_errors(self, text):
        with pytest.raises(ArgumentError):
            parse_gain(text, 2)

    def test_init(self):
        p = example1()
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(parse_init("default", p, [5, 5], rng), [5, 5])
        np.testing.assert_array_equal(parse_init("const:1.5", p, [5, 5], rng), [1.5, 1.5])
        np.testing.assert_array_equal(parse_init("3,4", p, [5, 5], rng), [3, 4])
        u = parse_init("uniform:2,3", p, [5, 5], rng)
        assert np.all((u >= 2) & (u <= 3))
        with pytest.raises(ArgumentError):
            parse_init("1,2,3", p, [5, 5], rng)

    def test_config_keys(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(COARSE_CFG.format(sigma=6))
        flat = read_flat_config(path)
        assert flat["material.rho"] == "1000" and flat["seed"] == "0"
        path.write_text(COARSE_CFG.format(sigma=6) + "typo = 1\n")
        with pytest.raises(ArgumentError, match="typo"):
            read_flat_config(path)


class TestSolve:
    def test_example1(self, tmp_path):
        code = run(tmp_path, "solve", "--problem", "example1", "--method", "unconstrained-like", "--gain", "diag:0.5,1", "--init", "5,5", "--horizon", "100")
        assert code == EXIT_OK
        schema, header, rows = read_csv(tmp_path / "trajectory.csv")
        assert schema == "# boxdyn-trajectory v1"
        assert header == ["tau", "theta_1", "theta_2", "f", "residual"]
        np.testing.assert_allclose([float(v) for v in rows[-1][1:3]], [0, 2], atol=1e-3)
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["converged"] and rep["kkt"]["multipliers"]["lower"][0] == pytest.approx(2, abs=1e-3)

    def test_example2_shifted(self, tmp_path):
        assert run(tmp_path, "solve", "--problem", "example2:0.1", "--init", "0.5,0.5", "--horizon", "50") == EXIT_OK
        rep = json.loads((tmp_path / "report.json").read_text())
        np.testing.assert_allclose(rep["final_theta"], [0.1, 0.1], atol=1e-3)

    def test_genwood(self, tmp_path):
        assert run(tmp_path, "solve", "--problem", "genwood:100", "--integrator", "stiff", "--horizon", "10", "--init", "const:1.1") == EXIT_OK
        rep = json.loads((tmp_path / "report.json").read_text())
        np.testing.assert_allclose(rep["final_theta"], genwood_optimum(100), atol=1e-3)

    def test_json_format(self, tmp_path):
        assert run(tmp_path, "solve", "--format", "json", "--gain", "diag:0.5,1", "--init", "5,5") == EXIT_OK
        traj = json.loads((tmp_path / "trajectory.json").read_text())
        assert traj["schema"] == "boxdyn-trajectory v1" and traj["columns"][0] == "tau"

    def test_dense_gain_contract_is_config_error(self, tmp_path):
        assert run(tmp_path, "solve", "--gain", "dense:0.5,0.2;0.2,1", "--init", "5,5") == EXIT_CONFIG

    def test_dense_gain_failure_not_converged(self, tmp_path):
        code = run(tmp_path, "solve", "--gain", "dense:0.5,0.2;0.2,1", "--init", "5,5", "--allow-dense")
        assert code == EXIT_SOLVER
        rep = json.loads((tmp_path / "report.json").read_text())
        np.testing.assert_allclose(rep["final_theta"], [0, 1.8], atol=1e-2)

    @pytest.mark.parametrize(
        "argv",
        [
            ["solve", "--problem", "nope"],
            ["solve", "--method", "newton"],
            ["solve", "--init", "1,2,3"],
            ["solve", "--rtol", "-1"],
            ["solve", "--integrator", "euler"],
        ],
    )
    def test_config_errors(self, tmp_path, argv):
        assert run(tmp_path, *argv) == EXIT_CONFIG

    def test_budget_failure_writes_partial(self, tmp_path, monkeypatch):
        import boxdyn.cli as cli

        real = cli.build_options

        def tiny(args, method=None):
            from dataclasses import replace

            return replace(real(args, method), max_steps=3)

        monkeypatch.setattr(cli, "build_options", tiny)
        assert run(tmp_path, "solve", "--init", "5,5") == EXIT_SOLVER
        assert (tmp_path / "trajectory.csv").exists()


class TestBench:
    def test_table_and_counters(self, tmp_path):
        code = run(tmp_path, "bench", "--problem", "genwood:8", "--integrator", "stiff", "--horizon", "10", "--runs", "3", "--seed", "1")
        assert code == EXIT_OK
        schema, header, rows = read_csv(tmp_path / "bench.csv")
        assert schema == "# boxdyn-bench v1"
        assert header == ["method", "runs", "successes", "mean_time", "median_time", "mean_rhs_evals", "mean_qp_solves"]
        by = {r[0]: r for r in rows}
        assert set(by) == {"unconstrained-like", "general-dynamic", "pgd"}
        assert by["unconstrained-like"][2] == "3" and by["general-dynamic"][2] == "3"
        assert float(by["unconstrained-like"][6]) == 0.0 and float(by["general-dynamic"][6]) > 0.0

    def test_deterministic(self, tmp_path):
        cols = []
        for sub in ("a", "b"):
            run(tmp_path / sub, "bench", "--problem", "example1", "--runs", "1", "--seed", "4", "--method", "unconstrained-like")
            _, _, rows = read_csv(tmp_path / sub / "bench.csv")
            # wall times differ between runs; the rest must not
            cols.append([r[:3] + r[5:] for r in rows])
        assert cols[0] == cols[1]

    def test_bad_runs(self, tmp_path):
        assert run(tmp_path, "bench", "--runs", "0") == EXIT_CONFIG


class TestCompare:
    def test_equivalence(self, tmp_path):
        assert run(tmp_path, "compare", "--problem", "example1", "--gain", "diag:0.5,1", "--init", "5,5") == EXIT_OK
        rep = json.loads((tmp_path / "compare.json").read_text())
        assert rep["max_trajectory_diff"] <= 1e-2 and rep["common_times"] > 10

    def test_dense_gain(self, tmp_path):
        argv = ["compare", "--gain", "dense:0.5,0.2;0.2,1", "--init", "5,5", "--allow-dense", "--limiter", "soft"]
        assert run(tmp_path, *argv) == EXIT_OK
        rep = json.loads((tmp_path / "compare.json").read_text())
        assert rep["final_diff"] == pytest.approx(0.2, abs=1e-2)

    def test_self(self, tmp_path):
        assert run(tmp_path, "compare", "--method", "general-dynamic,general-dynamic", "--init", "5,5") == EXIT_OK
        rep = json.loads((tmp_path / "compare.json").read_text())
        assert rep["max_trajectory_diff"] == 0.0

    def test_needs_two(self, tmp_path):
        assert run(tmp_path, "compare", "--method", "pgd") == EXIT_CONFIG


class TestPdeIdent:
    def test_noiseless_single(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(COARSE_CFG.format(sigma=0))
        assert run(tmp_path, "pde-ident", "--config", str(cfg)) == EXIT_OK
        schema, header, rows = read_csv(tmp_path / "conductivity.csv")
        assert schema == "# boxdyn-conductivity v1"
        assert header == ["temperature", "k_recovered", "k_true", "is_node"] and len(rows) == 41
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["max_node_error"] <= 0.05

    def test_batch(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(COARSE_CFG.format(sigma=1))
        assert run(tmp_path, "pde-ident", "--config", str(cfg), "--runs", "2") == EXIT_OK
        summary = json.loads((tmp_path / "pde_batch_summary.json").read_text())
        assert summary["runs"] == 2 and summary["failures"] == 0
        schema, header, rows = read_csv(tmp_path / "pde_batch.csv")
        assert schema == "# boxdyn-pde-batch v1" and len(rows) == 2

    def test_missing_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(COARSE_CFG.format(sigma=0).replace("seed = 0\n", ""))
        assert run(tmp_path, "pde-ident", "--config", str(cfg)) == EXIT_CONFIG
        assert "seed" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "pde-ident", "--config", str(tmp_path / "none.cfg")) == EXIT_CONFIG

    def test_shipped_config_parses(self):
        from pathlib import Path

        flat = read_flat_config(Path(__file__).resolve().parents[1] / "configs" / "example4.cfg")
        assert flat["noise.sigma"] == "6"
