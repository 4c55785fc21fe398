import json
import math
import shutil
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

import delaylyap as dl
from delaylyap.cli import main


@pytest.fixture()
def configs(tmp_path):
    """System descriptor files used across the command tests."""
    paths = {}

    def put(name, vsys):
        p = tmp_path / f"{name}.json"
        p.write_text(dl.system_to_json(vsys.system))
        paths[name] = str(p)

    put("scalar", dl.validate(dl.DelaySystem.single(0.5, Fraction(1))))
    put("two_delay", dl.validate(dl.DelaySystem(2, [
        (Fraction(1), 0.5 * np.array([[-0.4, -0.3], [0.1, 0.15]])),
        (Fraction(3, 2), 0.5 * np.array([[0.1, 0.25], [-0.9, -0.1]])),
    ])))
    put("unstable", dl.validate(dl.DelaySystem(2, [
        (Fraction(1), np.array([[1.1, 0.0], [-0.4, 0.0]])),
        (Fraction(3, 2), np.array([[0.25, -0.125], [-0.4, -0.5]])),
    ])))
    put("irrational", dl.validate(dl.DelaySystem(1, [
        (1.0, np.array([[0.3]])), (math.sqrt(2.0), np.array([[0.2]])),
    ])))
    put("critical", dl.validate(dl.DelaySystem.single(np.diag([2.0, 0.5]), Fraction(1))))

    bad = tmp_path / "singular.json"
    bad.write_text('{"n": 1, "entries": [{"delay": 1, "A": [[1.0]]}]}')
    paths["singular"] = str(bad)

    garbage = tmp_path / "garbage.json"
    garbage.write_text("{nope")
    paths["garbage"] = str(garbage)
    return paths


class TestCheck:
    def test_stable_system(self, configs, capsys):
        assert main(["check", "--config", configs["scalar"]]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["valid"] is True
        assert data["stability"]["verdict"] == "stable"
        assert data["delays"] == [1.0]

    def test_unstable_still_exits_zero(self, configs, capsys):
        assert main(["check", "--config", configs["unstable"]]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["stability"]["verdict"] == "unstable"

    def test_singular_system_exits_two(self, configs, capsys):
        assert main(["check", "--config", configs["singular"]]) == 2
        assert "invalid system" in capsys.readouterr().err

    def test_malformed_json_exits_three(self, configs, capsys):
        assert main(["check", "--config", configs["garbage"]]) == 3

    def test_missing_file_exits_three(self, tmp_path, capsys):
        assert main(["check", "--config", str(tmp_path / "nope.json")]) == 3

    def test_out_file(self, configs, tmp_path):
        out = tmp_path / "report.json"
        assert main(["check", "--config", configs["scalar"], "--out", str(out)]) == 0
        assert json.loads(out.read_text())["valid"] is True


class TestK:
    def test_stdout_csv(self, configs, capsys):
        assert main(["k", "--config", configs["scalar"], "--horizon", "3"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "t,K11"
        assert len(lines) >= 4

    def test_sides(self, configs, tmp_path):
        right = tmp_path / "r.csv"
        left = tmp_path / "l.csv"
        for side, out in (("right", right), ("left", left)):
            rc = main(["k", "--config", configs["two_delay"], "--horizon", "5",
                       "--side", side, "--out", str(out)])
            assert rc == 0
        a = np.loadtxt(right, delimiter=",", skiprows=1)
        b = np.loadtxt(left, delimiter=",", skiprows=1)
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestSim:
    def test_default_constant_initial(self, configs, capsys):
        rc = main(["sim", "--config", configs["scalar"], "--horizon", "3",
                   "--samples", "7"])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "t,x1"
        assert len(lines) == 8

    def test_both_methods_report_gap(self, configs, capsys):
        rc = main(["sim", "--config", configs["two_delay"], "--horizon", "4",
                   "--samples", "41", "--method", "both"])
        assert rc == 0
        err = capsys.readouterr().err
        assert "max gap" in err

    def test_phi_segments(self, configs, tmp_path, capsys):
        phi = tmp_path / "phi.json"
        phi.write_text(json.dumps({"segments": [
            {"start": -1.5, "value": [1.0, 0.0]},
            {"start": -0.5, "value": [0.0, 1.0], "slope": [1.0, 0.0]},
        ]}))
        rc = main(["sim", "--config", configs["two_delay"], "--horizon", "2",
                   "--samples", "11", "--phi", str(phi)])
        assert rc == 0

    def test_bad_phi(self, configs, tmp_path):
        phi = tmp_path / "phi.json"
        phi.write_text('{"constant": [1.0]}')
        rc = main(["sim", "--config", configs["two_delay"], "--phi", str(phi)])
        assert rc == 3


class TestLyap:
    def test_stdout_with_residual_diag(self, configs, capsys):
        assert main(["lyap", "--config", configs["scalar"]]) == 0
        captured = capsys.readouterr()
        assert captured.out.splitlines()[0] == "tau,U11"
        diag = json.loads(captured.err.splitlines()[-1])
        assert diag["symmetry"] <= 1e-8

    def test_out_writes_residual_sidecar(self, configs, tmp_path):
        out = tmp_path / "u.csv"
        assert main(["lyap", "--config", configs["two_delay"], "--out", str(out)]) == 0
        assert out.exists()
        sidecar = json.loads((tmp_path / "u.csv.residuals.json").read_text())
        assert sidecar["dynamic"] <= 1e-8

    def test_irrational_requires_order(self, configs):
        assert main(["lyap", "--config", configs["irrational"]]) == 3

    def test_irrational_with_order(self, configs, capsys):
        rc = main(["lyap", "--config", configs["irrational"], "--order", "2"])
        assert rc == 0
        assert capsys.readouterr().out.startswith("tau,U11")

    def test_critical_exits_four(self, configs, recwarn):
        assert main(["lyap", "--config", configs["critical"]]) == 4

    def test_weight_file(self, configs, tmp_path, capsys):
        wpath = tmp_path / "w.json"
        wpath.write_text(json.dumps({"W": [[2.0, 0.0], [0.0, 1.0]]}))
        assert main(["lyap", "--config", configs["two_delay"], "--w", str(wpath)]) == 0

    def test_weight_flag_alias(self, configs, tmp_path):
        wpath = tmp_path / "w.json"
        wpath.write_text(json.dumps([[2.0, 0.0], [0.0, 1.0]]))
        rc = main(["lyap", "--config", configs["two_delay"], "--weight", str(wpath)])
        assert rc == 0

    def test_bad_weight(self, configs, tmp_path):
        wpath = tmp_path / "w.json"
        wpath.write_text(json.dumps([[1.0, 0.5], [0.4, 1.0]]))
        assert main(["lyap", "--config", configs["two_delay"], "--w", str(wpath)]) == 3


class TestJumps:
    def test_stable_full_report(self, configs, capsys):
        assert main(["jumps", "--config", configs["two_delay"]]) == 0
        captured = capsys.readouterr()
        assert captured.out.splitlines()[0].startswith("tau,dU11")
        summary = json.loads(captured.err.splitlines()[-1])
        assert "route_deviation_max" in summary

    def test_unstable_needs_segments_only(self, configs, capsys):
        assert main(["jumps", "--config", configs["unstable"]]) == 5
        capsys.readouterr()
        rc = main(["jumps", "--config", configs["unstable"], "--segments-only"])
        assert rc == 0
        assert capsys.readouterr().out.startswith("tau,dU11")


class TestApprox:
    def test_ladder_json(self, configs, capsys):
        rc = main(["approx", "--config", configs["irrational"], "--orders", "1,2"])
        assert rc == 0
        data = json.loads(capsys.readouterr().out)
        assert data["orders"] == [1, 2]
        assert len(data["steps"]) == 2
        assert data["verdicts_agree"] in (True, False)
        assert data["steps"][1]["sup_diff_prev"] is not None

    def test_out_files(self, configs, tmp_path, capsys):
        base = tmp_path / "ladder"
        rc = main(["approx", "--config", configs["irrational"], "--orders", "1,3",
                   "--out", str(base)])
        assert rc == 0
        assert (tmp_path / "ladder_s1.csv").exists()
        assert (tmp_path / "ladder_s3.csv").exists()
        conv = json.loads((tmp_path / "ladder_convergence.json").read_text())
        assert len(conv["steps"]) == 2

    def test_bad_orders(self, configs):
        assert main(["approx", "--config", configs["irrational"], "--orders", "a,b"]) == 3
        assert main(["approx", "--config", configs["irrational"], "--orders", ","]) == 3

    def test_oversized_order_exits_six(self, configs):
        assert main(["approx", "--config", configs["irrational"], "--orders", "14"]) == 6


class TestVerify:
    def test_stable_passes_all_gates(self, configs, capsys):
        assert main(["verify", "--config", configs["two_delay"]]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["passed"] is True
        assert data["gates"]["residuals"] is True
        assert data["gates"]["integral_cross_check"] is True
        assert data["gates"]["p_matrix_oracle"] is True

    def test_unstable_runs_residual_gates_only(self, configs, capsys):
        assert main(["verify", "--config", configs["unstable"]]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["passed"] is True
        assert "integral_cross_check" not in data["gates"]
        assert "skipped" in data["integral_cross_check"]

    def test_scalar(self, configs, capsys):
        assert main(["verify", "--config", configs["scalar"]]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True


class TestConsoleScript:
    def test_entry_point_smoke(self, configs):
        exe = shutil.which("delaylyap")
        if exe is None:
            cmd = [sys.executable, "-m", "delaylyap.cli"]
        else:
            cmd = [exe]
        proc = subprocess.run(
            cmd + ["check", "--config", configs["scalar"]],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["valid"] is True
