"""CSV/JSON writers and the solution-directory format.

All floats are printed with 17 significant digits so round-trips are
lossless; CSV files are comma-separated with a header row, UTF-8, LF line
endings.  A solution directory holds theta.csv, p1_diag.csv, p2.csv,
p3_diag.csv, diagnostics.csv, summary.json and a copy of the scenario.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .equilibrium import (
    EquilibriumSolution,
    IntegralState,
    SolverDiagnostics,
    second_moment_factor,
)
from .fields import OneTimeField, Strategy, TwoTimeField
from .problem import ProblemSpec
from .riccati import check_constraints, solve_p1, solve_p2, solve_p3

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "one_time_field_rows",
    "two_time_field_rows",
    "write_solution_dir",
    "load_solution_dir",
]


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, (int, float, np.floating)) else str(v) for v in row))
            fh.write("\n")


def write_json(path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _entry_headers(shape: tuple[int, int]) -> list[str]:
    return [f"e{i}{j}" for i in range(shape[0]) for j in range(shape[1])]


def one_time_field_rows(field: OneTimeField | Strategy):
    data = field.data if isinstance(field, OneTimeField) else field.values
    nodes = field.grid.nodes
    header = ["t"] + _entry_headers(data.shape[1:])
    rows = ([nodes[i]] + list(data[i].ravel()) for i in range(len(nodes)))
    return header, rows


def two_time_field_rows(field: TwoTimeField):
    """Stored triangle as rows (t, s, entries...)."""
    nodes = field.grid.nodes
    header = ["t", "s"] + _entry_headers(field.entry_shape)
    def rows():
        for i in range(len(nodes)):
            for j in range(i, len(nodes)):
                yield [nodes[i], nodes[j]] + list(field.data[i, j].ravel())
    return header, rows()


def write_solution_dir(outdir, solution: EquilibriumSolution, scenario: dict, theta0_desc: str):
    os.makedirs(outdir, exist_ok=True)

    header, rows = one_time_field_rows(solution.theta_star)
    write_csv(os.path.join(outdir, "theta.csv"), header, rows)
    header, rows = one_time_field_rows(solution.p1.diagonal())
    write_csv(os.path.join(outdir, "p1_diag.csv"), header, rows)
    header, rows = one_time_field_rows(solution.p2)
    write_csv(os.path.join(outdir, "p2.csv"), header, rows)
    header, rows = one_time_field_rows(solution.p3.diagonal())
    write_csv(os.path.join(outdir, "p3_diag.csv"), header, rows)

    diag = solution.diagnostics
    write_csv(
        os.path.join(outdir, "diagnostics.csv"),
        ["window_lo", "window_hi", "iterations", "final_residual", "max_contraction_ratio", "halvings"],
        (
            [w.lo, w.hi, w.iterations, w.final_residual, w.max_contraction_ratio, w.halvings]
            for w in diag.windows
        ),
    )

    summary = {
        "theta0": theta0_desc,
        "grid_steps": solution.spec.grid.steps,
        "horizon": solution.spec.grid.horizon,
        "theta_sup_norm": solution.theta_star.sup_norm(),
        "constraint_report": solution.constraint_report.summary(),
        "diagnostics": diag.summary(),
    }
    write_json(os.path.join(outdir, "summary.json"), summary)
    write_json(os.path.join(outdir, "scenario.json"), scenario)
    return summary


def load_solution_dir(path) -> EquilibriumSolution:
    """Rebuild a solution from a directory written by :func:`write_solution_dir`.

    The gain is read from theta.csv; every derived field is recomputed from
    it, so a corrupted gain shows up in the verification suites rather than
    being masked by stored values.
    """
    from .scenario import load_scenario

    spec = load_scenario(os.path.join(path, "scenario.json"))
    with open(os.path.join(path, "summary.json"), "r", encoding="utf-8") as fh:
        summary = json.load(fh)

    raw = np.genfromtxt(os.path.join(path, "theta.csv"), delimiter=",", skip_header=1)
    raw = np.atleast_2d(raw)
    if raw.shape[0] != spec.grid.num_nodes:
        raise ValueError("theta.csv does not match the scenario grid")
    k, n = spec.dims.k, spec.dims.n
    theta = Strategy(spec.grid, raw[:, 1:].reshape(spec.grid.num_nodes, k, n))

    theta0 = _theta0_from_desc(summary.get("theta0", "const:0"), spec)
    p2 = solve_p2(spec, theta)
    p1 = solve_p1(spec, theta)
    p3 = solve_p3(spec, theta, p2)
    p1d, p3d = p1.diagonal(), p3.diagonal()
    report = check_constraints(spec, p1d, p3d, p2, theta0)

    if spec.is_one_dimensional():
        lam = second_moment_factor(spec, theta)
        from .equilibrium import p1_tilde_from_theta

        p1t = p1_tilde_from_theta(spec, theta, p2, lam)
        state = IntegralState(p2_tilde=p2, p1_tilde=p1t, lambda_factor=lam, theta=theta)
    else:
        raise ValueError("solution directories are produced by the scalar solver only")

    return EquilibriumSolution(
        spec=spec,
        theta_star=theta,
        integral_state=state,
        p1=p1,
        p2=p2,
        p3=p3,
        constraint_report=report,
        diagnostics=SolverDiagnostics(),
    )


def _theta0_from_desc(desc: str, spec: ProblemSpec) -> Strategy:
    if desc.startswith("const:"):
        return Strategy.constant(spec.grid, float(desc.split(":", 1)[1]))
    raise ValueError(f"unknown theta0 description {desc!r}")
