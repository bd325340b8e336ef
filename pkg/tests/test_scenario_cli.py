import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fbslq.cli import main
from fbslq.io_utils import load_solution_dir
from fbslq.problem import validate
from fbslq.scenario import (
    classical_reduction_scenario,
    example_2_5_scenario,
    scenario_to_spec,
    smoke_scenario,
    trivial_scenario,
)


@pytest.mark.parametrize(
    "doc",
    [trivial_scenario(60), smoke_scenario(60), example_2_5_scenario(60), classical_reduction_scenario(60)],
)
def test_builtin_scenarios_validate(doc):
    spec = scenario_to_spec(doc)
    assert validate(spec).ok
    assert spec.grid.steps == 60


def test_scenario_grid_override():
    spec = scenario_to_spec(trivial_scenario(60), grid_steps=30)
    assert spec.grid.steps == 30


def test_scenario_missing_field_raises():
    doc = trivial_scenario(20)
    del doc["weights"]["Q"]
    with pytest.raises(ValueError):
        scenario_to_spec(doc)


def test_example_scenario_matches_preset_at_nodes():
    from fbslq.presets import example_2_5_problem

    doc = example_2_5_scenario(50)
    spec = scenario_to_spec(doc)
    preset = example_2_5_problem(50)
    nodes = spec.grid.nodes
    assert np.allclose(spec.weights.G1(nodes), preset.weights.G1(nodes), atol=1e-15)


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestCliSolve:
    def test_trivial_scenario_solves_to_zeros(self, tmp_path):
        scen = write(tmp_path, "trivial.json", trivial_scenario(60))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        data = np.genfromtxt(os.path.join(out, "theta.csv"), delimiter=",", skip_header=1)
        assert np.array_equal(data[:, 1], np.zeros(61))
        for name in ("theta.csv", "p1_diag.csv", "p2.csv", "p3_diag.csv",
                     "diagnostics.csv", "summary.json", "manifest.json", "scenario.json"):
            assert os.path.exists(os.path.join(out, name))

    def test_example_half_branch_flags_range_failure(self, tmp_path):
        scen = write(tmp_path, "ex25.json", example_2_5_scenario(80))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--theta0", "const:-0.5", "--out", out]) == 0
        summary = json.loads((tmp_path / "sol" / "summary.json").read_text())
        assert summary["constraint_report"]["range_pass"] is False
        assert "positivity_audit_failed" in summary

    def test_malformed_json_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"dims": {')
        assert main(["solve", str(bad), "--out", str(tmp_path / "x")]) == 2
        err = capsys.readouterr().err
        assert "line" in err and "column" in err

    def test_validation_failure_exits_2(self, tmp_path):
        doc = trivial_scenario(20)
        doc["weights"]["Q"] = {"type": "constant", "params": {"value": [[1.0, 0.0]]}}
        scen = write(tmp_path, "bad_shape.json", doc)
        assert main(["solve", scen, "--out", str(tmp_path / "x")]) == 2

    def test_solver_failure_exits_3(self, tmp_path, capsys):
        # Strong feedback through a vanishing control weight: the transported
        # weights overflow and the solver signals failure.
        doc = trivial_scenario(100)
        doc["coeffs"]["B"] = {"type": "constant", "params": {"value": [[40.0]]}}
        doc["weights"]["Q"] = {"type": "constant", "params": {"value": [[1.0]]}}
        doc["weights"]["R"] = {"type": "constant", "params": {"value": [[1e-4]]}}
        doc["weights"]["N"] = {"type": "constant", "params": {"value": [[1e-4]]}}
        doc["weights"]["G1"] = {"type": "constant", "params": {"value": [[1.0]]}}
        scen = write(tmp_path, "vicious.json", doc)
        assert main(["solve", scen, "--out", str(tmp_path / "x")]) == 3
        assert "solver failed" in capsys.readouterr().err

    def test_outputs_reproduce_byte_for_byte(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(60))
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["solve", scen, "--out", out_a]) == 0
        assert main(["solve", scen, "--out", out_b]) == 0
        for name in ("theta.csv", "p1_diag.csv", "p2.csv", "p3_diag.csv",
                     "diagnostics.csv", "summary.json", "scenario.json"):
            a = open(os.path.join(out_a, name), "rb").read()
            b = open(os.path.join(out_b, name), "rb").read()
            assert a == b, name

    def test_csv_floats_have_full_precision(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(60))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        sol = load_solution_dir(out)
        # Round-trip through the CSV is lossless.
        direct = np.genfromtxt(os.path.join(out, "theta.csv"), delimiter=",", skip_header=1)
        assert np.array_equal(direct[:, 1], sol.theta_star.flat())


class TestCliVerify:
    def test_example25_suite_exit_zero(self, tmp_path):
        report = str(tmp_path / "rep.json")
        assert main(["verify", "--suite", "example25", "--grid-steps", "300", "--out", report]) == 0
        doc = json.loads(open(report).read())
        assert doc["passed"] is True

    def test_classical_suite_exit_zero(self, tmp_path):
        scen = write(tmp_path, "cls.json", classical_reduction_scenario(300))
        assert main(["verify", scen, "--suite", "classical",
                     "--out", str(tmp_path / "rep.json")]) == 0

    def test_classical_suite_rejects_bad_target(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(50))
        assert main(["verify", scen, "--suite", "classical",
                     "--out", str(tmp_path / "rep.json")]) == 2

    def test_equilibrium_suite_on_solution(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(100))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        assert main(["verify", out, "--suite", "equilibrium", "--paths", "400",
                     "--seed", "3", "--out", str(tmp_path / "rep.json")]) == 0

    def test_equilibrium_suite_fails_on_corrupted_gain(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(100))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        path = os.path.join(out, "theta.csv")
        lines = open(path).read().splitlines()
        t50, v50 = lines[51].split(",")
        lines[51] = f"{t50},{float(v50) + 0.25}"
        open(path, "w").write("\n".join(lines) + "\n")
        assert main(["verify", out, "--suite", "equilibrium", "--paths", "400",
                     "--seed", "3", "--out", str(tmp_path / "rep.json")]) == 1

    def test_missing_target_exits_2(self, tmp_path):
        assert main(["verify", "--suite", "equilibrium",
                     "--out", str(tmp_path / "rep.json")]) == 2


class TestCliSimulate:
    def test_simulate_writes_spike_report(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(100))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        assert main(["simulate", out, "--paths", "400", "--seed", "7",
                     "--t", "0.5", "--spike-v", "1", "--out", str(tmp_path / "sim")]) == 0
        header = open(tmp_path / "sim" / "spike_report.csv").readline().strip()
        assert header == "eps,delta,stderr,theory_quadratic,theory_first_order"
        costs = json.loads((tmp_path / "sim" / "costs.json").read_text())
        assert costs["paths"] == 400

    def test_simulate_zero_direction_zero_deltas(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(100))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        assert main(["simulate", out, "--paths", "200", "--seed", "5",
                     "--t", "0.0", "--spike-v", "0", "--out", str(tmp_path / "sim")]) == 0
        rows = np.genfromtxt(tmp_path / "sim" / "spike_report.csv", delimiter=",", skip_header=1)
        assert np.array_equal(rows[:, 1], np.zeros(len(rows)))

    def test_simulate_missing_dir_exits_2(self, tmp_path):
        assert main(["simulate", str(tmp_path / "nope"), "--paths", "10"]) == 2

    def test_simulate_outputs_reproduce_byte_for_byte(self, tmp_path):
        scen = write(tmp_path, "smoke.json", smoke_scenario(80))
        out = str(tmp_path / "sol")
        assert main(["solve", scen, "--out", out]) == 0
        args = ["simulate", out, "--paths", "300", "--seed", "11", "--t", "0.25"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("spike_report.csv", "costs.json"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name


def test_cli_example_writes_scenarios(tmp_path):
    out = str(tmp_path / "scen")
    assert main(["example", "--out", out, "--grid-steps", "100"]) == 0
    names = sorted(os.listdir(out))
    assert names == ["classical.json", "example25.json", "smoke.json", "trivial.json"]


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fbslq.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "fbslq" in proc.stdout
