import csv
import json

import numpy as np
import pytest

from helpers import run_cli
from robust_trajopt import cli, solver
from robust_trajopt.artifacts import FLOAT_FORMAT, read_csv, read_solution, write_csv
from robust_trajopt.config import OUTPUT_DIR_ENV, RunConfig, load_config, shipped_config_path
from robust_trajopt.errors import ConfigError, NumericFailure


def write_config(tmp_path, name="double_integrator", out="out", **problem):
    raw = json.loads(shipped_config_path(name).read_text())
    raw["problem"].update(problem)
    raw["output_dir"] = str(tmp_path / out)
    path = tmp_path / f"{out}.json"
    path.write_text(json.dumps(raw))
    return path, tmp_path / out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def di_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("di")
    cfg, out = write_config(tmp)
    codes = [run_cli("optimize", cfg),
             run_cli("simulate", cfg, out, "--feedback=on"),
             run_cli("simulate", cfg, out, "--feedback=off", "--wrap-angles"),
             run_cli("compare", cfg, out)]
    return cfg, out, codes


class TestValidation:
    def test_zero_horizon(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path, T=0)
        assert run_cli("optimize", cfg) == cli.EXIT_CONFIG
        assert "horizon T" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        raw = json.loads(shipped_config_path("pendulum").read_text())
        raw["problem"]["alhpa"] = 1.0
        path = tmp_path / "typo.json"
        path.write_text(json.dumps(raw))
        assert run_cli("optimize", path) == cli.EXIT_CONFIG
        assert "alhpa" in capsys.readouterr().err

    def test_unknown_nested_keys_each_level(self):
        base = json.loads(shipped_config_path("pendulum").read_text())
        for section in ("model", "solver", "simulation"):
            raw = json.loads(json.dumps(base))
            raw.setdefault(section, {})["bogus"] = 1
            with pytest.raises(ConfigError):
                RunConfig.from_dict(raw)
        with pytest.raises(ConfigError):
            RunConfig.from_dict({**base, "extra": 1})

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert run_cli("optimize", path) == cli.EXIT_CONFIG

    def test_missing_gain_with_feedback(self, tmp_path, di_run):
        cfg, out, _ = di_run
        partial = tmp_path / "partial"
        partial.mkdir()
        (partial / "solution.csv").write_bytes((out / "solution.csv").read_bytes())
        assert run_cli("simulate", cfg, partial, "--feedback=on") == cli.EXIT_CONFIG
        assert run_cli("simulate", cfg, partial, "--feedback=off") == cli.EXIT_OK

    def test_horizon_mismatch(self, tmp_path, di_run):
        _, out, _ = di_run
        other, _ = write_config(tmp_path, T=10)
        assert run_cli("simulate", other, out) == cli.EXIT_CONFIG

    def test_feedback_flag_values(self, di_run):
        cfg, out, _ = di_run
        with pytest.raises(SystemExit):
            run_cli("simulate", cfg, out, "--feedback=maybe")


class TestOptimize:
    def test_artifacts(self, di_run):
        _, out, codes = di_run
        assert codes == [0, 0, 0, 0]
        for name in ("solution.csv", "gain.csv", "history.csv", "summary.json", "config.json"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == solver.CONVERGED
        assert summary["feasibility"] <= 1e-6
        assert "wall_time_s" in summary
        X, U, W = read_solution(out, 2, 1, need_gain=True)
        assert X.shape == (51, 2) and U.shape == (50, 1) and W.shape == (1, 2)
        header = read_rows(out / "history.csv")[0].keys()
        assert list(header) == ["iter", "objective", "feasibility", "penalty_weight", "grad_norm"]

    def test_config_round_trip(self, di_run):
        cfg, out, _ = di_run
        original = load_config(cfg)
        written = load_config(out / "config.json")
        assert written.dumps() == original.dumps()
        a, b = original.problem_spec(), written.problem_spec()
        for field in ("T", "dt", "alpha"):
            assert getattr(a, field) == getattr(b, field)
        for field in ("x0", "x_goal", "Q", "R", "Q_terminal", "S", "P"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_rerun_byte_identical(self, tmp_path, di_run):
        cfg, out, _ = di_run
        rerun = tmp_path / "rerun"
        env = {OUTPUT_DIR_ENV: str(rerun)}
        assert run_cli("optimize", cfg, env=env) == 0
        assert run_cli("simulate", cfg, rerun, "--feedback=on", env=env) == 0
        assert run_cli("simulate", cfg, rerun, "--feedback=off", "--wrap-angles", env=env) == 0
        assert run_cli("compare", cfg, rerun, env=env) == 0
        names = sorted(p.name for p in out.glob("*.csv"))
        assert names == sorted(p.name for p in rerun.glob("*.csv"))
        for name in names:
            assert (out / name).read_bytes() == (rerun / name).read_bytes(), name
        for name in ("trajectories_closed.svg", "errors_open.svg", "gains.svg"):
            assert (out / name).read_bytes() == (rerun / name).read_bytes(), name

    def test_env_override(self, tmp_path, monkeypatch):
        cfg, default_out = write_config(tmp_path, T=10)
        target = tmp_path / "elsewhere"
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(target))
        assert run_cli("optimize", cfg) == 0
        assert (target / "solution.csv").exists()
        assert not default_out.exists()

    def test_iteration_cap_exit(self, tmp_path):
        raw = json.loads(shipped_config_path("pendulum").read_text())
        raw["solver"] = {"max_outer_iterations": 1, "max_inner_iterations": 2}
        raw["output_dir"] = str(tmp_path / "cap")
        path = tmp_path / "cap.json"
        path.write_text(json.dumps(raw))
        assert run_cli("optimize", path) == cli.EXIT_NOT_CONVERGED

    def test_exit_code_mapping(self):
        assert cli.STATUS_EXIT == {solver.CONVERGED: 0, solver.FEASIBLE_NOT_STATIONARY: 2,
                                   solver.ITERATION_CAP: 2, solver.NUMERIC_FAILURE: 3}

    def test_numeric_failure_exit(self, monkeypatch, tmp_path):
        def boom(*a, **k):
            raise NumericFailure("synthetic", knot=4)
        monkeypatch.setattr(cli, "cmd_compare", boom)
        assert run_cli("compare", "x", tmp_path) == cli.EXIT_NUMERIC


class TestSimulate:
    def test_default_runs_and_columns(self, di_run):
        _, out, _ = di_run
        rows = read_rows(out / "rollouts_closed.csv")
        assert sorted({int(r["run"]) for r in rows}) == list(range(12))
        assert list(rows[0].keys()) == ["run", "k", "x0", "x1", "u0", "saturated", "error"]
        stats = read_rows(out / "stats_closed.csv")
        assert len(stats) == 51
        assert all(float(s["std"]) >= 0 for s in stats)
        for name in ("trajectories_closed.svg", "errors_closed.svg", "trajectories_open.svg",
                     "errors_open.svg"):
            assert (out / name).read_text().lstrip().startswith("<?xml")

    def test_runs_flag(self, tmp_path, di_run):
        cfg, out, _ = di_run
        target = tmp_path / "three"
        assert run_cli("simulate", cfg, out, "--runs=3", env={OUTPUT_DIR_ENV: str(target)}) == 0
        assert {r["run"] for r in read_rows(target / "rollouts_closed.csv")} == {"0", "1", "2"}
        assert run_cli("simulate", cfg, out, "--runs=0") == cli.EXIT_CONFIG


class TestCompare:
    def test_gain_table(self, di_run):
        _, out, _ = di_run
        header, data = read_csv(out / "gains_comparison.csv")
        assert data.shape[0] == 50
        static = data[:, [header.index("static_0_0"), header.index("static_0_1")]]
        assert np.all(static == static[0])
        lqr = data[:, [header.index("lqr_0_0"), header.index("lqr_0_1")]]
        assert len(np.unique(lqr, axis=0)) > 1

    def test_dmax_profile(self, di_run):
        _, out, _ = di_run
        header, data = read_csv(out / "dmax_profile.csv")
        assert header == ["k", "d_max", "d_max_open", "eigengap"]
        np.testing.assert_array_equal(data[:, 0], np.arange(50))
        assert np.all(data[:, 1] >= 0) and data[:, 1].sum() <= data[:, 2].sum()


class TestCheckGradients:
    def test_double_integrator_passes(self, capsys):
        assert run_cli("check-gradients", shipped_config_path("double_integrator")) == 0
        assert "PASS" in capsys.readouterr().out

    def test_pendulum_passes(self):
        assert run_cli("check-gradients", shipped_config_path("pendulum"), "--samples=1") == 0

    def test_corrupted_gradient_fails(self, capsys):
        code = run_cli("check-gradients", shipped_config_path("double_integrator"),
                       "--samples=1", "--corrupt-gradient")
        assert code != 0
        assert "FAIL" in capsys.readouterr().out


class TestArtifacts:
    def test_csv_precision_and_round_trip(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a", "b"], [[1, np.pi], [2, None]])
        assert path.read_text().splitlines()[1] == "1," + FLOAT_FORMAT % np.pi
        header, data = read_csv(path)
        assert header == ["a", "b"]
        assert data[0, 1] == float(FLOAT_FORMAT % np.pi)
        assert np.isnan(data[1, 1])

    def test_missing_artifact(self, tmp_path):
        with pytest.raises(ConfigError):
            read_csv(tmp_path / "nope.csv")
