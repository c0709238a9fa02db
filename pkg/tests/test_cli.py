"""End-to-end tests of the command-line interface (in-process)."""

import json
import math

import numpy as np
import pytest

from spheresde.cli import main
from spheresde.exact import constant_control_state
from spheresde.geometry import BundleState


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [[float(c) for c in line.split(",")] for line in lines[1:]]
    return header, rows


class TestSimulate:
    def test_default_run_outputs(self, tmp_path):
        rc = main(["simulate", "--T", "0.05", "--out", str(tmp_path)])
        assert rc == 0
        header, rows = read_csv(tmp_path / "trajectory.csv")
        assert header[:7] == ["t", "u_x", "u_y", "u_z", "v_x", "v_y", "v_z"]
        assert len(rows) == 51
        report = json.loads((tmp_path / "invariants.json").read_text())
        assert report["max_constraint_violation"] < 1e-12
        assert report["max_energy_drift"] < 1e-10
        assert report["max_fp_iterations"] <= 100

    def test_zero_noise_matches_geodesic(self, tmp_path):
        rc = main(["simulate", "--T", "0.5", "--dW", "zero",
                   "--out", str(tmp_path)])
        assert rc == 0
        _, rows = read_csv(tmp_path / "trajectory.csv")
        t, ux, uy, uz = rows[-1][0], rows[-1][1], rows[-1][2], rows[-1][3]
        z0 = BundleState([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
        exact = constant_control_state(z0, 0.0, t)
        assert np.linalg.norm(np.array([ux, uy, uz]) - exact.u) < 1e-5

    def test_em_scheme_runs(self, tmp_path):
        rc = main(["simulate", "--T", "0.05", "--scheme", "em",
                   "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "invariants.json").read_text())
        assert report["scheme"] == "em"
        # explicit scheme drifts off the bundle but only slightly over 0.05
        assert 0.0 < report["max_constraint_violation"] < 1e-3

    def test_deterministic_replay(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["simulate", "--T", "0.05", "--seed", "3",
                         "--out", str(out)]) == 0
        assert (a / "trajectory.csv").read_text() == \
            (b / "trajectory.csv").read_text()

    def test_bad_scheme_from_config_exits_2(self, tmp_path):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("scheme = nonsense\n")
        rc = main(["simulate", "--T", "0.01", "--config", str(cfgfile),
                   "--out", str(tmp_path)])
        assert rc == 2

    def test_flag_overrides_config_file(self, tmp_path):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("k = 0.01  # comment\nT = 0.2\n")
        rc = main(["simulate", "--k", "0.005", "--config", str(cfgfile),
                   "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "invariants.json").read_text())
        assert report["k"] == 0.005   # flag wins
        assert report["T"] == 0.2     # config value used


class TestEnsemble:
    def test_outputs_and_summary(self, tmp_path):
        rc = main(["ensemble", "--N", "50", "--T", "0.1", "--grid", "6x12",
                   "--snapshots", "0,0.05,0.1", "--out", str(tmp_path)])
        assert rc == 0
        for t in ("0.0", "0.05", "0.1"):
            assert (tmp_path / f"histogram_t{t}.csv").exists()
        _, emax_rows = read_csv(tmp_path / "emax.csv")
        assert len(emax_rows) == 3
        _, mt_rows = read_csv(tmp_path / "mean_trajectory.csv")
        assert mt_rows[0][1:4] == [0.0, 1.0, 0.0]  # E[u](0) = u0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config"]["N"] == 50
        assert summary["emax_floor_uniform"] > 0.0
        assert "rate_fit" in summary
        # speeds stay at 1, so the bundle occupancy is reported
        assert (tmp_path / "bundle_counts.csv").exists()
        assert sum(summary["bundle_counts"]["segment_totals"]) == 50

    def test_histogram_counts_sum_to_n(self, tmp_path):
        rc = main(["ensemble", "--N", "30", "--T", "0.05", "--grid", "6x12",
                   "--out", str(tmp_path)])
        assert rc == 0
        _, rows = read_csv(tmp_path / "histogram_t0.05.csv")
        assert sum(int(r[2]) for r in rows) == 30

    def test_worker_flag_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        base = ["ensemble", "--N", "24", "--T", "0.05", "--grid", "6x12"]
        assert main(base + ["--workers", "1", "--out", str(a)]) == 0
        assert main(base + ["--workers", "2", "--out", str(b)]) == 0
        for name in ("emax.csv", "mean_trajectory.csv", "histogram_t0.05.csv"):
            assert (a / name).read_text() == (b / name).read_text()


class TestPlan:
    def test_identity_query(self, tmp_path):
        T = repr(2.0 * math.pi)
        rc = main(["plan", "--u0", "0,1,0", "--v0", "1,0,0",
                   "--u1", "0,1,0", "--v1", "1,0,0", "--T", T,
                   "--out", str(tmp_path)])
        assert rc == 0
        doc = json.loads((tmp_path / "plan.json").read_text())
        assert len(doc["segments"]) == 1
        assert doc["segments"][0]["a"] == 0.0
        assert doc["endpoint_error"] < 1e-10

    def test_generic_query(self, tmp_path):
        rc = main(["plan", "--u0", "0,1,0", "--v0", "1,0,0",
                   "--u1", "0,0,1", "--v1", "0,1,0", "--T", "7.0",
                   "--out", str(tmp_path)])
        assert rc == 0
        doc = json.loads((tmp_path / "plan.json").read_text())
        assert len(doc["segments"]) <= 4
        assert doc["endpoint_error"] < 1e-8
        _, rows = read_csv(tmp_path / "plan_trajectory.csv")
        assert rows[-1][0] == pytest.approx(7.0, abs=1e-12)

    def test_infeasible_horizon_exit_2(self, tmp_path):
        rc = main(["plan", "--u0", "0,1,0", "--v0", "1,0,0",
                   "--u1", "0,0,1", "--v1", "0,1,0", "--T", "1.0",
                   "--out", str(tmp_path)])
        assert rc == 2
        assert not (tmp_path / "plan.json").exists()

    def test_zero_speed_exit_2(self, tmp_path):
        rc = main(["plan", "--u0", "0,1,0", "--v0", "0,0,0",
                   "--u1", "0,0,1", "--v1", "0,1,0", "--T", "10.0",
                   "--out", str(tmp_path)])
        assert rc == 2


class TestVerify:
    def test_property_suite_passes(self, tmp_path):
        rc = main(["verify", "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "verify.json").read_text())
        assert report["passed"] is True
        assert report["failures"] == []
        assert report["backend"] in ("compiled", "python")
