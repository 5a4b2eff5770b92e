"""Driver behavior: exit codes, output files, determinism, round trips."""

import json

import numpy as np
import pytest

from catchup.cli import main
from catchup.scheme import read_run_csv, verify_run_invariants


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def onedim_config(**overrides):
    cfg = {
        "model": {"model": "onedim", "a": 1, "b": 2},
        "x0": [0.0],
        "T": 2.0,
        "schedule": {"kind": "uniform", "mu0": 0.01},
    }
    cfg.update(overrides)
    return cfg


class TestRunCommand:
    def test_reaches_equilibrium(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(T=10.0))
        assert main(["run", cfg, "--out", str(tmp_path / "out")]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        final = manifest["run"]["measured"]["final_state"]
        assert abs(final[0] - 1.0) <= 1e-2
        assert manifest["exit_code"] == 0
        assert manifest["hard_failures"] == []

    def test_outputs_reload_and_reverify(self, tmp_path):
        cfg = write_config(tmp_path / "c.json",
                           onedim_config(model={"model": "onedim", "a": 1, "b": -1},
                                         x0=[0.5]))
        out = tmp_path / "out"
        assert main(["run", cfg, "--out", str(out)]) == 0
        data = read_run_csv(str(out / "trajectory.csv"))
        report = verify_run_invariants(data)
        assert report["ok"]
        assert data["X"].shape[0] == 201

    def test_infeasible_start_is_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", onedim_config(x0=[-0.5]))
        assert main(["run", cfg, "--out", str(tmp_path / "out")]) == 2
        err = capsys.readouterr().err
        assert "x0" in err and "not in the set" in err

    def test_flat_error_list_warns_but_runs(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            model={"model": "onedim", "a": 1, "b": -1},
            x0=[0.5],
            T=0.1,
            schedule={"kind": "explicit", "values": [0.01] * 10},
            errors={"kind": "explicit", "values": [1e-4] * 10},
        ))
        out = tmp_path / "out"
        assert main(["run", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert any("decay" in w for w in manifest["run"]["warnings"])

    def test_all_diagnostics_include_slow_tags(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(T=1.0))
        out = tmp_path / "out"
        assert main(["run", cfg, "--out", str(out), "--diagnostics", "all"]) == 0
        diag = json.loads((out / "diagnostics.json").read_text())
        assert {"energy", "beta_bound", "defect_sum", "feas_L2", "feas_cesaro",
                "feas_measure", "truncation"} == set(diag)
        assert all(rec["pass"] for rec in diag.values())

    def test_unknown_tag_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", onedim_config())
        assert main(["run", cfg, "--out", str(tmp_path / "o"),
                     "--diagnostics", "energy,nonsense"]) == 2
        assert "nonsense" in capsys.readouterr().err

    def test_projection_budget_failure_writes_partial(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {
            "model": {
                "f": {"type": "affine", "A": [[0, 0], [0, 0]], "b": [8.0, 4.0]},
                "G": {"type": "zero", "dim": 2},
                "C": {"type": "intersection", "budget": 1, "members": [
                    {"type": "ball", "center": [0, 0], "radius": 1.0},
                    {"type": "halfspace", "normal": [1, 0], "offset": 0.5},
                ]},
                "constants": {"a": 9.0, "b": 0.0, "r_star": 0.5, "M": 10.0, "gamma": 1.0},
            },
            "x0": [0.0, 0.0],
            "T": 1.0,
            "schedule": {"kind": "uniform", "mu0": 0.25},
            "projection": {"kind": "iterative"},
        })
        out = tmp_path / "out"
        assert main(["run", cfg, "--out", str(out)]) == 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["failed"] == "certificate"
        assert "partial" in manifest
        assert (out / "trajectory.csv").exists()

    def test_bit_identical_reruns(self, tmp_path):
        cfg_payload = onedim_config(
            model={"model": "onedim", "a": 1, "b": -1},
            x0=[0.5],
            errors={"kind": "power_of_step", "eps0": 0.1, "beta": 1.0},
            projection={"kind": "perturbed"},
        )
        cfg = write_config(tmp_path / "c.json", cfg_payload)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", cfg, "--out", str(a), "--seed", "42"]) == 0
        assert main(["run", cfg, "--out", str(b), "--seed", "42"]) == 0
        for name in ("trajectory.csv", "diagnostics.json", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_perturbed_trajectory(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            model={"model": "onedim", "a": 1, "b": -1},
            x0=[0.5],
            errors={"kind": "power_of_step", "eps0": 0.1, "beta": 1.0},
            projection={"kind": "perturbed"},
        ))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", cfg, "--out", str(a), "--seed", "1"]) == 0
        assert main(["run", cfg, "--out", str(b), "--seed", "2"]) == 0
        assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()


class TestStudyCommand:
    def test_scalar_first_order(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            study={"levels": [0.04, 0.02, 0.01, 0.005]},
        ))
        out = tmp_path / "out"
        assert main(["study", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["checks"]["sup_errors_decreasing"]
        assert manifest["checks"]["feas_L2_bounded"]
        assert 0.8 <= manifest["empirical_order"] <= 1.2
        lines = (out / "study.csv").read_text().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("level,mu,n_steps,sup_error")

    def test_dry_friction_errors_decrease(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "model": {"model": "dry_friction", "K": [[1, 0], [0, 1]],
                      "tau": [2.0, 0.0], "weights": [1.0, 1.0],
                      "lower": [-1, -1], "upper": [1, 1]},
            "x0": [0.0, 0.0],
            "T": 2.0,
            "study": {"levels": [0.04, 0.02, 0.01]},
        })
        out = tmp_path / "out"
        assert main(["study", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        errs = [lvl["sup_error"] for lvl in manifest["levels"]]
        assert errs[1] <= 1.1 * errs[0] and errs[2] <= 1.1 * errs[1]

    def test_too_few_levels_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            study={"levels": [0.02, 0.01]},
        ))
        assert main(["study", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "3 refinement levels" in capsys.readouterr().err

    def test_non_refining_levels_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            study={"levels": [0.01, 0.02, 0.005]},
        ))
        assert main(["study", cfg, "--out", str(tmp_path / "o")]) == 2


class TestStabilityCommand:
    def test_fine_mesh_contracts(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            x0=[[0.0], [1.0]],
            schedule={"kind": "uniform", "mu0": 0.005},
        ))
        out = tmp_path / "out"
        assert main(["stability", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["max_ratio"] <= 1.05
        assert manifest["informational"] is False
        rows = (out / "stability.csv").read_text().splitlines()
        assert rows[0] == "t,gap,envelope,ratio"
        assert len(rows) == 402

    def test_identical_points_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", onedim_config(x0=[[0.3], [0.3]]))
        assert main(["stability", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "differ" in capsys.readouterr().err

    def test_single_point_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(x0=[0.3]))
        assert main(["stability", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_understated_rate_is_informational(self, tmp_path):
        # declared ell -3 while the true decay is e^{-2t}: the ratio
        # drifts above 1.05 yet stays inside the mesh tolerance
        payload = {
            "model": {
                "f": {"type": "affine", "A": [[-1.0]], "b": [2.0]},
                "G": {"type": "linear", "matrix": [[1.0]]},
                "C": {"type": "halfline"},
                "constants": {"a": 2.0, "b": 2.0, "r_star": 1.0,
                              "M": 1.0, "gamma": 1.0, "ell": -3.0},
            },
            "x0": [[0.0], [1.0]],
            "T": 1.0,
            "schedule": {"kind": "uniform", "mu0": 0.2},
        }
        cfg = write_config(tmp_path / "c.json", payload)
        out = tmp_path / "out"
        assert main(["stability", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["informational"] is True
        assert manifest["max_ratio"] > 1.05
        # --strict upgrades the advisory pass to a failure
        assert main(["stability", cfg, "--out", str(tmp_path / "strict"),
                     "--strict"]) == 1

    def test_profile_matches_runs(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", onedim_config(
            x0=[[0.0], [1.0]],
            T=1.0,
            schedule={"kind": "uniform", "mu0": 0.01},
        ))
        out = tmp_path / "out"
        assert main(["stability", cfg, "--out", str(out)]) == 0
        rows = np.loadtxt(out / "stability.csv", delimiter=",", skiprows=1)
        t, gap, env, ratio = rows.T
        np.testing.assert_allclose(ratio, gap / env, rtol=1e-12)
        assert gap[0] == 1.0
        assert np.all(np.diff(gap) <= 1e-12)


class TestModelsCommand:
    def test_list_names_both_models(self, capsys):
        assert main(["models", "list"]) == 0
        out = capsys.readouterr().out
        assert "onedim" in out
        assert "dry_friction" in out
