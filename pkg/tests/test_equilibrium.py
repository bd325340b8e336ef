import numpy as np
import pytest

from fbslq.equilibrium import (
    AssumptionViolatedError,
    SolverConfig,
    fixed_point_map,
    p1_tilde_from_theta,
    second_moment_factor,
    solve_equilibrium,
)
from fbslq.fields import Strategy
from fbslq.presets import (
    assumption_smoke_problem,
    classical_reduction_problem,
    example_2_5_problem,
    trivial_problem,
)
from fbslq.riccati import solve_p2
from fbslq.verify import classical_riccati_feedback
from tests.test_riccati import build_scalar, zero_theta


class TestSecondMomentFactor:
    def test_frozen_dynamics_gives_one(self):
        spec = build_scalar()
        lam = second_moment_factor(spec, zero_theta(spec))
        mask = lam.triangle_mask()
        assert np.allclose(lam.data[mask], 1.0)

    def test_constant_coefficients_closed_form(self):
        a, c = 0.4, -0.3
        spec = build_scalar(A=a, C=c, steps=200)
        lam = second_moment_factor(spec, zero_theta(spec))
        nodes = spec.grid.nodes
        expected = np.exp((2 * a + c * c) * (nodes[-1] - nodes))
        assert np.allclose(lam.data[:, -1, 0, 0], expected, atol=1e-6)

    def test_diagonal_is_one(self, smoke_solution):
        lam = smoke_solution.integral_state.lambda_factor
        idx = np.arange(lam.grid.num_nodes)
        assert np.array_equal(lam.data[idx, idx, 0, 0], np.ones(len(idx)))
        mask = lam.triangle_mask()
        assert np.all(lam.data[mask] > 0)


class TestP1Tilde:
    def test_zero_weights(self):
        spec = build_scalar(A=0.2)
        th = zero_theta(spec)
        lam = second_moment_factor(spec, th)
        p1t = p1_tilde_from_theta(spec, th, solve_p2(spec, th), lam)
        assert p1t.sup_norm() == 0.0

    def test_pure_terminal_transport(self):
        g = 0.8
        spec = build_scalar(G1=g)
        th = zero_theta(spec)
        lam = second_moment_factor(spec, th)
        p1t = p1_tilde_from_theta(spec, th, solve_p2(spec, th), lam)
        assert np.allclose(p1t.flat(), g, atol=1e-12)

    def test_unit_running_weight_hand_integral(self):
        spec = build_scalar(Q=1.0, steps=200)
        th = zero_theta(spec)
        lam = second_moment_factor(spec, th)
        p1t = p1_tilde_from_theta(spec, th, solve_p2(spec, th), lam)
        assert np.allclose(p1t.flat(), 1.0 - spec.grid.nodes, atol=1e-12)


class TestFixedPointMap:
    def test_trivial_zero_is_fixed_point(self):
        spec = trivial_problem(100)
        th = zero_theta(spec)
        out = fixed_point_map(spec, th, th, (0.0, 1.0))
        assert out.sup_norm() == 0.0

    def test_output_uniformly_bounded(self, smoke_spec, rng):
        # The map sends sup-balls of growing radius into one fixed ball
        # (within float range: the transported weights grow like exp(|Th|^2)).
        sups = []
        for scale in (0.1, 1.0, 5.0, 20.0):
            th = Strategy.from_flat(
                smoke_spec.grid, scale * rng.standard_normal(smoke_spec.grid.num_nodes)
            )
            out = fixed_point_map(smoke_spec, th, zero_theta(smoke_spec), (0.0, 1.0))
            sups.append(out.sup_norm())
        assert max(sups) < 10.0

    def test_signals_non_finite_intermediates(self, smoke_spec, rng):
        from fbslq.equilibrium import EquilibriumError

        huge = Strategy.from_flat(
            smoke_spec.grid, 100.0 * rng.standard_normal(smoke_spec.grid.num_nodes)
        )
        with pytest.raises(EquilibriumError):
            with np.errstate(over="ignore", invalid="ignore"):
                fixed_point_map(smoke_spec, huge, zero_theta(smoke_spec), (0.0, 1.0))

    def test_contraction_scales_with_window_width(self, smoke_spec, rng):
        theta0 = zero_theta(smoke_spec)

        def lipschitz_ratio(window):
            ratios = []
            for _ in range(5):
                base = rng.standard_normal(smoke_spec.grid.num_nodes) * 0.3
                pert = base.copy()
                lo = smoke_spec.grid.index_of(window[0])
                hi = smoke_spec.grid.index_of(window[1])
                pert[lo : hi + 1] += rng.standard_normal(hi - lo + 1) * 0.1
                out_a = fixed_point_map(
                    smoke_spec, Strategy.from_flat(smoke_spec.grid, base), theta0, window
                )
                out_b = fixed_point_map(
                    smoke_spec, Strategy.from_flat(smoke_spec.grid, pert), theta0, window
                )
                num = np.max(np.abs(out_a.values - out_b.values))
                den = np.max(np.abs(base - pert))
                ratios.append(num / den)
            return max(ratios)

        wide = lipschitz_ratio((0.5, 1.0))
        narrow = lipschitz_ratio((0.875, 1.0))
        assert wide < 1.0
        assert narrow <= 0.75 * wide  # roughly the sqrt(window) decay


class TestSolveEquilibrium:
    def test_trivial_solution_is_zero(self):
        spec = trivial_problem(100)
        sol = solve_equilibrium(spec, zero_theta(spec))
        assert sol.theta_star.sup_norm() == 0.0
        assert all(w.iterations == 1 for w in sol.diagnostics.windows)
        assert sol.constraint_report.all_pass

    def test_smoke_instance_diagnostics(self, smoke_solution):
        diag = smoke_solution.diagnostics
        assert all(w.max_contraction_ratio < 0.5 for w in diag.windows)
        assert all(w.final_residual <= 1e-10 for w in diag.windows)
        assert diag.consistency_gap <= 1e-6
        assert diag.passthrough_nodes == []

    def test_fields_nonnegative_under_positivity_floor(self, smoke_solution):
        # Transported nonnegative weights keep the integral field nonnegative,
        # and both Riccati diagonals inherit it.
        assert np.min(smoke_solution.integral_state.p1_tilde.data) >= -1e-12
        assert np.min(smoke_solution.p1.diagonal().data) >= -1e-10
        assert np.min(smoke_solution.p3.diagonal().data) >= -1e-10

    def test_theta0_independence(self, smoke_spec, smoke_solution):
        other = solve_equilibrium(smoke_spec, Strategy.constant(smoke_spec.grid, 5.0))
        gap = np.max(np.abs(other.theta_star.values - smoke_solution.theta_star.values))
        assert gap <= 10.0 * 1e-10

    def test_classical_reduction_matches_oracle(self):
        spec = classical_reduction_problem(400)
        cfg = SolverConfig(check_assumptions=False)
        sol = solve_equilibrium(spec, zero_theta(spec), cfg)
        _, classical = classical_riccati_feedback(spec)
        assert np.max(np.abs(sol.theta_star.values - classical.values)) <= 1e-6

    def test_window_refinement_invariance(self):
        spec = assumption_smoke_problem(200)
        th0 = zero_theta(spec)
        sol_a = solve_equilibrium(spec, th0, SolverConfig(initial_window=0.25))
        sol_b = solve_equilibrium(spec, th0, SolverConfig(initial_window=0.125))
        gap = np.max(np.abs(sol_a.theta_star.values - sol_b.theta_star.values))
        assert gap <= 10.0 * 1e-10

    def test_assumption_violation_raises(self):
        spec = example_2_5_problem(100)
        with pytest.raises(AssumptionViolatedError):
            solve_equilibrium(spec, zero_theta(spec))

    def test_example_branches_with_check_waived(self):
        spec = example_2_5_problem(200)
        cfg = SolverConfig(check_assumptions=False)
        sol0 = solve_equilibrium(spec, zero_theta(spec), cfg)
        assert sol0.theta_star.sup_norm() == 0.0
        assert sol0.constraint_report.all_pass
        solh = solve_equilibrium(spec, Strategy.constant(spec.grid, -0.5), cfg)
        assert np.allclose(solh.theta_star.values, -0.5)
        assert not solh.constraint_report.range_pass
        # Pass-through is active on the whole grid: the denominator vanishes.
        assert len(solh.diagnostics.passthrough_nodes) == spec.grid.num_nodes

    def test_damped_iteration_reaches_same_fixed_point(self, smoke_spec, smoke_solution):
        sol = solve_equilibrium(
            smoke_spec, zero_theta(smoke_spec), SolverConfig(damping=0.7)
        )
        gap = np.max(np.abs(sol.theta_star.values - smoke_solution.theta_star.values))
        assert gap <= 1e-8

    def test_solver_rejects_matrix_problems(self):
        from fbslq.presets import matrix_reduction_problem

        spec = matrix_reduction_problem(20)
        with pytest.raises(ValueError):
            solve_equilibrium(spec, Strategy.zeros(spec.grid, 2, 2))

    def test_no_convergence_when_iteration_cap_binds(self):
        spec = assumption_smoke_problem(100)
        from fbslq.equilibrium import NoConvergenceError

        with pytest.raises(NoConvergenceError):
            solve_equilibrium(
                spec, zero_theta(spec), SolverConfig(max_iterations_per_window=2)
            )

    def test_non_contractive_when_target_unreachable(self):
        spec = assumption_smoke_problem(100)
        from fbslq.equilibrium import NonContractiveError

        # No window can beat a 1e-9 ratio; halving bottoms out at one step.
        with pytest.raises(NonContractiveError):
            solve_equilibrium(
                spec, zero_theta(spec), SolverConfig(contraction_target=1e-9)
            )


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(fp_tolerance=0.0)
    with pytest.raises(ValueError):
        SolverConfig(contraction_target=1.5)
    with pytest.raises(ValueError):
        SolverConfig(damping=0.0)
