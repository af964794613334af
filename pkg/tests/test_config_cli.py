"""Config resolution, hashing, and the five CLI subcommands end to end."""

import csv
import json
import os

import numpy as np
import pytest

from fortetbridge.cli import _apply_thread_env, _THREAD_VARS, main
from fortetbridge.config import (build_problem, load_problem, problem_hash,
                                 resolve_config)
from fortetbridge.errors import ConfigError

BENCH_RAW = {
    "kernel": {"type": "gaussian", "sigma": 0.5},
    "marginals": [{"type": "gaussian", "sigma": 1.0},
                  {"type": "gaussian", "sigma": 0.8}],
    "grid": {"dim": 1, "radius": 8.0, "points": 201, "rule": "trapezoid"},
}

SWAP_RAW = {
    "kernel": {"type": "gaussian", "sigma": 0.1},
    "marginals": [{"type": "gaussian", "sigma": 0.5},
                  {"type": "gaussian", "sigma": 1.0}],
    "grid": {"dim": 1, "radius": "auto", "points": 201},
}


def write_config(tmp_path, raw, name="problem.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_auto_radius_uses_largest_scale(self):
        resolved = resolve_config(SWAP_RAW)
        assert resolved["grid"]["radius"] == 6.5  # 6.5 x sigma1 = 6.5 x 1.0
        assert resolved["grid"]["rule"] == "trapezoid"
        assert resolved["solver"]["tol"] == 1e-10
        assert resolved["swap"] is False

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            resolve_config(dict(BENCH_RAW, tolerance=1e-8))
        with pytest.raises(ConfigError, match="unknown solver keys"):
            resolve_config(dict(BENCH_RAW, solver={"tolerance": 1e-8}))

    def test_missing_required_key_rejected(self):
        raw = {k: v for k, v in BENCH_RAW.items() if k != "marginals"}
        with pytest.raises(ConfigError, match="marginals"):
            resolve_config(raw)

    def test_hash_is_stable_and_sensitive(self):
        h1 = problem_hash(resolve_config(BENCH_RAW))
        h2 = problem_hash(resolve_config(json.loads(json.dumps(BENCH_RAW))))
        assert h1 == h2
        bumped = json.loads(json.dumps(BENCH_RAW))
        bumped["kernel"]["sigma"] = 0.51
        assert problem_hash(resolve_config(bumped)) != h1
        swapped = dict(BENCH_RAW, swap=True)
        assert problem_hash(resolve_config(swapped)) != h1

    def test_build_problem_materializes_benchmark(self):
        problem = build_problem(resolve_config(BENCH_RAW))
        assert problem.grid.n_nodes == 201
        assert problem.kernel.values.shape == (201, 201)
        assert abs(problem.marginals.omega1.mass() - 1.0) < 1e-12
        assert problem.options.tol == 1e-10

    def test_swap_flag_swaps_marginals(self):
        plain = build_problem(resolve_config(BENCH_RAW))
        flipped = build_problem(resolve_config(dict(BENCH_RAW, swap=True)))
        assert np.array_equal(flipped.marginals.omega1.values,
                              plain.marginals.omega2.values)

    def test_table_kernel_and_marginal_from_csv(self, tmp_path):
        n = 5
        rng = np.random.default_rng(3)
        np.savetxt(tmp_path / "kernel.csv", rng.uniform(0.2, 1.0, (n, n)),
                   delimiter=",")
        np.savetxt(tmp_path / "m2.csv", rng.uniform(0.1, 1.0, n), delimiter=",")
        raw = {
            "kernel": {"type": "table", "path": "kernel.csv"},
            "marginals": [{"type": "gaussian", "sigma": 0.4},
                          {"type": "table", "path": "m2.csv"}],
            "grid": {"dim": 1, "radius": 1.0, "points": n},
        }
        problem = load_problem(write_config(tmp_path, raw))
        assert problem.kernel.provenance == "table"
        assert abs(problem.marginals.omega2.mass() - 1.0) < 1e-12

    def test_wrong_table_shape_rejected(self, tmp_path):
        np.savetxt(tmp_path / "kernel.csv", np.ones((3, 3)), delimiter=",")
        raw = dict(BENCH_RAW, kernel={"type": "table", "path": "kernel.csv"})
        with pytest.raises(ConfigError, match="kernel table"):
            load_problem(write_config(tmp_path, raw))


class TestThreadEnv:
    def test_sets_all_blas_vars(self, monkeypatch):
        for var in _THREAD_VARS:
            monkeypatch.delenv(var, raising=False)
        monkeypatch.setenv("FORTET_THREADS", "2")
        _apply_thread_env()
        for var in _THREAD_VARS:
            assert os.environ[var] == "2"

    def test_does_not_override_explicit_settings(self, monkeypatch):
        monkeypatch.setenv("OMP_NUM_THREADS", "7")
        monkeypatch.setenv("FORTET_THREADS", "2")
        _apply_thread_env()
        assert os.environ["OMP_NUM_THREADS"] == "7"


class TestCli:
    def test_check_benchmark_is_admissible(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BENCH_RAW)
        code = main(["check", "--config", str(cfg), "--output", str(tmp_path)])
        assert code == 0
        payload = json.loads((tmp_path / "feasibility.json").read_text())
        assert payload["solver_admissible"] is True
        assert payload["swap_recommended"] is False
        assert payload["condition_star"]["verdict"] == "finite"
        assert "solver_admissible: True" in capsys.readouterr().out

    def test_check_flags_swap_candidate(self, tmp_path):
        cfg = write_config(tmp_path, SWAP_RAW)
        code = main(["check", "--config", str(cfg), "--output", str(tmp_path)])
        assert code == 2
        payload = json.loads((tmp_path / "feasibility.json").read_text())
        assert payload["condition_star"]["verdict"] == "suspected-divergent"
        assert payload["swap_recommended"] is True

    def test_solve_writes_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BENCH_RAW)
        out = tmp_path / "run"
        code = main(["solve", "--config", str(cfg), "--output", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["case_tag"] == "case2"
        assert summary["iterations"] == summary["trigger_iteration"]
        assert summary["residuals"]["s1_resid"] < 1e-12
        assert 0.0 < summary["h_min"] <= summary["h_max"] <= 1.0
        assert summary["coupling"]["mass"] == pytest.approx(1.0, abs=1e-12)
        assert summary["kl_objective"] > 0.0
        assert summary["problem_hash"] == problem_hash(resolve_config(BENCH_RAW))

        trace = read_csv(out / "trace.csv")
        assert trace[0] == list(("n", "sup_change", "normalization_residual",
                                 "hilbert_step", "case1_candidate"))
        assert len(trace) == 1 + summary["iterations"] + summary["refine_steps"]
        assert trace[1][1] == ""  # no previous iterate on the first row
        assert trace[1][3] == ""
        assert float(trace[2][1]) > 0.0

        potentials = read_csv(out / "potentials.csv")
        assert potentials[0] == ["x", "phi", "psi", "h"]
        assert len(potentials) == 1 + 201
        h_col = np.array([float(r[3]) for r in potentials[1:]])
        assert np.all((h_col > 0.0) & (h_col <= 1.0))
        assert "case_tag=case2" in capsys.readouterr().out

    def test_solve_refuses_suspected_divergent_without_swap(self, tmp_path):
        cfg = write_config(tmp_path, SWAP_RAW)
        code = main(["solve", "--config", str(cfg), "--output", str(tmp_path)])
        assert code == 2

    def test_solve_succeeds_after_swap(self, tmp_path):
        cfg = write_config(tmp_path, dict(SWAP_RAW, swap=True))
        out = tmp_path / "run"
        code = main(["solve", "--config", str(cfg), "--output", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["case_tag"] == "case2"
        assert summary["config"]["swap"] is True

    def test_solve_bad_config_exits_1(self, tmp_path):
        cfg = write_config(tmp_path, dict(BENCH_RAW, nonsense=1))
        assert main(["solve", "--config", str(cfg), "--output", str(tmp_path)]) == 1
        missing = tmp_path / "missing.json"
        assert main(["solve", "--config", str(missing), "--output", str(tmp_path)]) == 1

    def test_solve_iteration_cap_exits_3_with_trace(self, tmp_path):
        raw = dict(BENCH_RAW, solver={"max_iter": 3})
        cfg = write_config(tmp_path, raw)
        out = tmp_path / "run"
        code = main(["solve", "--config", str(cfg), "--output", str(out)])
        assert code == 3
        trace = read_csv(out / "trace.csv")
        assert len(trace) == 1 + 3
        assert not (out / "summary.json").exists()

    def test_interpolate_writes_time_slices(self, tmp_path):
        cfg = write_config(tmp_path, BENCH_RAW)
        out = tmp_path / "run"
        code = main(["interpolate", "--config", str(cfg), "--output", str(out),
                     "--times", "0,0.5,1"])
        assert code == 0
        rows = read_csv(out / "interpolation.csv")
        assert rows[0] == ["t", "x", "density"]
        assert len(rows) == 1 + 3 * 201
        summary = json.loads((out / "summary.json").read_text())
        assert summary["interpolation_times"] == [0.0, 0.5, 1.0]
        for mass in summary["interpolation_masses"]:
            assert mass == pytest.approx(1.0, abs=1e-10)

    def test_interpolate_rejects_unparseable_times(self, tmp_path):
        cfg = write_config(tmp_path, BENCH_RAW)
        code = main(["interpolate", "--config", str(cfg),
                     "--output", str(tmp_path), "--times", "0,half,1"])
        assert code == 1

    def test_diagnose_reports_contraction_data(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BENCH_RAW)
        out = tmp_path / "run"
        code = main(["diagnose", "--config", str(cfg), "--output", str(out)])
        assert code == 0
        payload = json.loads((out / "diagnose.json").read_text())
        for key in ("projective_diameter_columns", "contraction_bound",
                    "contraction_guaranteed", "sinkhorn_iterations",
                    "hilbert_distances", "contraction_ratios",
                    "max_observed_ratio", "ratios_within_bound"):
            assert key in payload
        assert payload["ratios_within_bound"] is True
        # successive distances: one fewer than the number of iterates
        assert len(payload["hilbert_distances"]) == payload["sinkhorn_iterations"] - 1
        assert "contraction_bound=" in capsys.readouterr().out

    def test_compare_consistent_at_default_tol(self, tmp_path):
        cfg = write_config(tmp_path, BENCH_RAW)
        out = tmp_path / "run"
        code = main(["compare", "--config", str(cfg), "--output", str(out)])
        assert code == 0
        payload = json.loads((out / "compare.json").read_text())
        assert payload["consistent"] is True
        assert payload["ratio_spread_phi"] < 1e-8
        assert (out / "potentials_fortet.csv").exists()
        assert (out / "potentials_sinkhorn.csv").exists()

    def test_compare_strict_tol_flags_spread(self, tmp_path):
        # the two solvers agree to ~1e-10; a 1e-12 gate must report a mismatch
        cfg = write_config(tmp_path, BENCH_RAW)
        out = tmp_path / "run"
        code = main(["compare", "--config", str(cfg), "--output", str(out),
                     "--tol", "1e-12"])
        assert code == 2
        payload = json.loads((out / "compare.json").read_text())
        assert payload["consistent"] is False
