"""Scalar equilibrium gain via a windowed contraction iteration.

The one-dimensional problem is rewritten as an integral system: with the
second moment of the closed-loop transition

    lam(s, t) = E[Phi(s, t)^2] = exp( int_t^s (2 A_Th(r) + C_Th(r)^2) dr ),

the diagonal field obeys

    p1t(t) = G1(t) lam(T, t)
             + int_t^T [Q(s,t) + Th^2 R(s,t) + p2t^2 M(s,t)
                        + C_Th^2 p2t^2 N(s,t)] lam(s, t) ds,

and the gain update reads, with den(s) = R(s,s) + D^2 (p1t + N(s,s) p2t^2),

    Th+(s) = -[(B + D C) p1t + Bhat G2 p2t
               + (D C N(s,s) + (B + D Dhat) G2) p2t^2] / den(s).

Using the exact exponential for E[Phi^2] removes all sampling noise from the
fixed point; Monte-Carlo only appears as an external cross-check.  The map is
iterated window by window from the terminal time; a window is halved whenever
its observed contraction ratio exceeds the configured target.

When den(s) falls below the configured floor the update routes through the
theta0 pass-through (the zero-pseudoinverse convention); nodes where the
floor binds are recorded in the diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import OneTimeField, Strategy, TwoTimeField
from .problem import ProblemSpec, check_one_dim_positivity
from .riccati import check_constraints, solve_p1, solve_p2, solve_p3
from .riccati import ConstraintReport

__all__ = [
    "SolverConfig",
    "IntegralState",
    "WindowDiagnostics",
    "SolverDiagnostics",
    "EquilibriumSolution",
    "EquilibriumError",
    "NonContractiveError",
    "NoConvergenceError",
    "AssumptionViolatedError",
    "second_moment_factor",
    "p1_tilde_from_theta",
    "fixed_point_map",
    "solve_equilibrium",
]


class EquilibriumError(RuntimeError):
    """Base class for solver failures."""


class NonContractiveError(EquilibriumError):
    """A window kept expanding differences even at the minimum width."""


class NoConvergenceError(EquilibriumError):
    """The iteration cap was reached before the tolerance."""


class AssumptionViolatedError(EquilibriumError):
    """The positivity precondition failed and enforcement was requested."""


@dataclass(frozen=True)
class SolverConfig:
    fp_tolerance: float = 1e-10
    max_iterations_per_window: int = 200
    initial_window: float | None = None  # defaults to horizon / 8
    contraction_target: float = 0.5
    damping: float = 1.0
    denominator_floor: float = 1e-12
    check_assumptions: bool = True
    positivity_floor: float = 1e-8
    min_window_steps: int = 1

    def __post_init__(self):
        if self.fp_tolerance <= 0:
            raise ValueError("fp_tolerance must be positive")
        if not 0.0 < self.contraction_target < 1.0:
            raise ValueError("contraction_target must lie in (0, 1)")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class IntegralState:
    """Converged integral-route fields: p2t, p1t, lam(s,t) and the gain."""

    p2_tilde: OneTimeField
    p1_tilde: OneTimeField
    lambda_factor: TwoTimeField
    theta: Strategy


@dataclass
class WindowDiagnostics:
    lo: int
    hi: int
    iterations: int
    final_residual: float
    max_contraction_ratio: float
    halvings: int


@dataclass
class SolverDiagnostics:
    windows: list[WindowDiagnostics] = field(default_factory=list)
    consistency_gap: float = float("nan")
    passthrough_nodes: list[int] = field(default_factory=list)
    fp_tolerance: float = float("nan")

    def summary(self) -> dict:
        return {
            "num_windows": len(self.windows),
            "iterations_per_window": [w.iterations for w in self.windows],
            "final_residuals": [w.final_residual for w in self.windows],
            "contraction_ratios": [w.max_contraction_ratio for w in self.windows],
            "halvings": [w.halvings for w in self.windows],
            "window_nodes": [[w.lo, w.hi] for w in self.windows],
            "consistency_gap": self.consistency_gap,
            "passthrough_nodes": self.passthrough_nodes,
            "fp_tolerance": self.fp_tolerance,
        }


@dataclass(frozen=True)
class EquilibriumSolution:
    spec: ProblemSpec
    theta_star: Strategy
    integral_state: IntegralState
    p1: TwoTimeField
    p2: OneTimeField
    p3: TwoTimeField
    constraint_report: ConstraintReport
    diagnostics: SolverDiagnostics


def _require_scalar(spec: ProblemSpec):
    if not spec.is_one_dimensional():
        raise ValueError("the equilibrium solver handles m = n = k = 1 only")


class _Workspace:
    """Precomputed node samples for the scalar integral system."""

    def __init__(self, spec: ProblemSpec):
        _require_scalar(spec)
        self.spec = spec
        grid = spec.grid
        self.grid = grid
        self.h = grid.h
        self.L = grid.num_nodes
        nodes = grid.nodes
        self.nodes = nodes
        c, w = spec.coeffs, spec.weights

        def f1(fn, times):
            return fn(times)[..., 0, 0]

        self.A, self.B = f1(c.A, nodes), f1(c.B, nodes)
        self.C, self.D = f1(c.C, nodes), f1(c.D, nodes)
        self.Ahat, self.Bhat = f1(c.Ahat, nodes), f1(c.Bhat, nodes)
        self.Chat, self.Dhat = f1(c.Chat, nodes), f1(c.Dhat, nodes)
        self.H = float(np.asarray(c.H).reshape(()))
        self.G1, self.G2 = f1(w.G1, nodes), f1(w.G2, nodes)

        mids = grid.midpoints
        q1 = 0.75 * nodes[:-1] + 0.25 * nodes[1:]
        q3 = 0.25 * nodes[:-1] + 0.75 * nodes[1:]
        self.half_times = {
            "mid": (f1(c.A, mids), f1(c.B, mids), f1(c.C, mids), f1(c.D, mids),
                    f1(c.Ahat, mids), f1(c.Bhat, mids), f1(c.Chat, mids), f1(c.Dhat, mids)),
            "q1": (f1(c.A, q1), f1(c.B, q1), f1(c.C, q1), f1(c.D, q1),
                   f1(c.Ahat, q1), f1(c.Bhat, q1), f1(c.Chat, q1), f1(c.Dhat, q1)),
            "q3": (f1(c.A, q3), f1(c.B, q3), f1(c.C, q3), f1(c.D, q3),
                   f1(c.Ahat, q3), f1(c.Bhat, q3), f1(c.Chat, q3), f1(c.Dhat, q3)),
        }

        ss, tt = np.meshgrid(nodes, nodes, indexing="ij")
        self.Q_tab = w.Q(ss, tt)[..., 0, 0]
        self.R_tab = w.R(ss, tt)[..., 0, 0]
        self.M_tab = w.M(ss, tt)[..., 0, 0]
        self.N_tab = w.N(ss, tt)[..., 0, 0]
        self.R_diag = np.diagonal(self.R_tab).copy()
        self.N_diag = np.diagonal(self.N_tab).copy()
        # mask[j, i] = interval j contributes to the integral from t_i
        jj, ii = np.meshgrid(np.arange(self.L - 1), np.arange(self.L), indexing="ij")
        self.interval_mask = (jj >= ii).astype(float)

    # -- integral-route fields -------------------------------------------------

    def p2_tilde(self, th: np.ndarray) -> np.ndarray:
        """Backward RK4 (two half-steps per interval) for the scalar p2t."""
        th_iv = th[:-1]
        a_l = self.A[:-1] + self.B[:-1] * th_iv
        c_l = self.C[:-1] + self.D[:-1] * th_iv
        ah_l = self.Ahat[:-1] + self.Bhat[:-1] * th_iv
        a_r = self.A[1:] + self.B[1:] * th_iv
        c_r = self.C[1:] + self.D[1:] * th_iv
        ah_r = self.Ahat[1:] + self.Bhat[1:] * th_iv

        def closed(key):
            A, B, C, D, Ah, Bh, Ch, Dh = self.half_times[key]
            return (A + B * th_iv, C + D * th_iv, Ah + Bh * th_iv, Ch, Dh)

        a_m, c_m, ah_m, ch_m, dh_m = closed("mid")
        a_1, c_1, ah_1, ch_1, dh_1 = closed("q1")
        a_3, c_3, ah_3, ch_3, dh_3 = closed("q3")
        ch_l, dh_l = self.Chat[:-1], self.Dhat[:-1]
        ch_r, dh_r = self.Chat[1:], self.Dhat[1:]

        # p' = -(alpha p + beta) with alpha = a_th + chat + dhat c_th, beta = ahat_th
        al_l, be_l = a_l + ch_l + dh_l * c_l, ah_l
        al_r, be_r = a_r + ch_r + dh_r * c_r, ah_r
        al_m, be_m = a_m + ch_m + dh_m * c_m, ah_m
        al_1, be_1 = a_1 + ch_1 + dh_1 * c_1, ah_1
        al_3, be_3 = a_3 + ch_3 + dh_3 * c_3, ah_3

        hh = 0.5 * self.h
        out = np.empty(self.L)
        out[-1] = self.H
        p = self.H
        for j in range(self.L - 2, -1, -1):
            for hi_a, hi_b, md_a, md_b, lo_a, lo_b in (
                (al_r[j], be_r[j], al_3[j], be_3[j], al_m[j], be_m[j]),
                (al_m[j], be_m[j], al_1[j], be_1[j], al_l[j], be_l[j]),
            ):
                k1 = -(hi_a * p + hi_b)
                p2 = p - 0.5 * hh * k1
                k2 = -(md_a * p2 + md_b)
                p3 = p - 0.5 * hh * k2
                k3 = -(md_a * p3 + md_b)
                p4 = p - hh * k3
                k4 = -(lo_a * p4 + lo_b)
                p = p - (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[j] = p
        return out

    def exponent(self, th: np.ndarray) -> np.ndarray:
        """Cumulative per-interval trapezoid of 2 A_Th + C_Th^2."""
        th_iv = th[:-1]
        g_l = 2.0 * (self.A[:-1] + self.B[:-1] * th_iv) + (self.C[:-1] + self.D[:-1] * th_iv) ** 2
        g_r = 2.0 * (self.A[1:] + self.B[1:] * th_iv) + (self.C[1:] + self.D[1:] * th_iv) ** 2
        e = np.zeros(self.L)
        np.cumsum(0.5 * self.h * (g_l + g_r), out=e[1:])
        return e

    def p1_tilde(self, th, p2t, expo, cols=None) -> np.ndarray:
        """Quadrature of the transported running weights from each node t_i.

        ``cols`` restricts the evaluation to a slice of t-indices.
        """
        if cols is None:
            cols = slice(0, self.L)
        th_iv = th[:-1, None]
        c_l = (self.C[:-1] + self.D[:-1] * th[:-1])[:, None]
        c_r = (self.C[1:] + self.D[1:] * th[:-1])[:, None]
        p2_l, p2_r = p2t[:-1, None], p2t[1:, None]

        f_l = (
            self.Q_tab[:-1, cols]
            + th_iv**2 * self.R_tab[:-1, cols]
            + p2_l**2 * self.M_tab[:-1, cols]
            + c_l**2 * p2_l**2 * self.N_tab[:-1, cols]
        )
        f_r = (
            self.Q_tab[1:, cols]
            + th_iv**2 * self.R_tab[1:, cols]
            + p2_r**2 * self.M_tab[1:, cols]
            + c_r**2 * p2_r**2 * self.N_tab[1:, cols]
        )
        e_cols = expo[cols][None, :]
        lam_l = np.exp(expo[:-1, None] - e_cols)
        lam_r = np.exp(expo[1:, None] - e_cols)
        contrib = 0.5 * self.h * (f_l * lam_l + f_r * lam_r) * self.interval_mask[:, cols]
        terminal = self.G1[cols] * np.exp(expo[-1] - expo[cols])
        return terminal + contrib.sum(axis=0)

    def gain(self, p1t_cols, p2t_cols, cols, theta0, floor):
        """Scalar feedback update with the zero-pseudoinverse pass-through."""
        B, C, D = self.B[cols], self.C[cols], self.D[cols]
        Bh, Dh, G2 = self.Bhat[cols], self.Dhat[cols], self.G2[cols]
        Rd, Nd = self.R_diag[cols], self.N_diag[cols]
        den = Rd + D**2 * (p1t_cols + Nd * p2t_cols**2)
        num = (
            (B + D * C) * p1t_cols
            + Bh * G2 * p2t_cols
            + (D * C * Nd + (B + D * Dh) * G2) * p2t_cols**2
        )
        if not (np.all(np.isfinite(den)) and np.all(np.isfinite(num))):
            raise EquilibriumError("non-finite intermediate values in the gain update")
        safe = np.abs(den) > floor
        out = np.where(safe, -num / np.where(safe, den, 1.0), theta0[cols])
        return out, den

    def apply_map(self, th, theta0, lo, hi, floor):
        """One application of the window map: update nodes lo..hi of th.

        Overflow in the transported weights produces non-finite values that
        the gain update reports as an error, so the float warnings carry no
        extra information and are silenced here.
        """
        with np.errstate(over="ignore", invalid="ignore"):
            p2t = self.p2_tilde(th)
            expo = self.exponent(th)
            cols = slice(lo, hi + 1)
            p1t = self.p1_tilde(th, p2t, expo, cols)
            new_vals, _ = self.gain(p1t, p2t[cols], cols, theta0, floor)
        return new_vals


def second_moment_factor(spec: ProblemSpec, theta: Strategy) -> TwoTimeField:
    """lam(s, t) = E[Phi(s, t)^2] for the scalar closed-loop transition.

    Computed as exp of the cumulative quadrature of 2 A_Th + C_Th^2 (one
    sweep, reused for all t through exponent differences); exact whenever the
    exponent quadrature is.
    """
    ws = _Workspace(spec)
    expo = ws.exponent(theta.flat())
    lam = np.exp(expo[None, :] - expo[:, None])  # [i, j] = exp(E_j - E_i)
    ii, jj = np.indices(lam.shape)
    lam[jj < ii] = np.nan
    return TwoTimeField(spec.grid, lam[..., None, None])


def p1_tilde_from_theta(
    spec: ProblemSpec, theta: Strategy, p2_tilde: OneTimeField, lam: TwoTimeField
) -> OneTimeField:
    """Grid quadrature of the transported-weights representation of p1t."""
    ws = _Workspace(spec)
    th = theta.flat()
    # The factor's first row spans all s with exp(E_s - E_0), E_0 = 0.
    expo = np.log(lam.data[0, :, 0, 0])
    vals = ws.p1_tilde(th, p2_tilde.flat(), expo)
    return OneTimeField.from_flat(spec.grid, vals)


def fixed_point_map(
    spec: ProblemSpec,
    theta: Strategy,
    theta0: Strategy,
    window: tuple[float, float],
    denominator_floor: float = 1e-12,
) -> Strategy:
    """One application of the window update map on [a, b].

    The integral fields are computed from the full strategy on [a, T] (values
    right of b are read as-is) and the gain formula rewrites the nodes inside
    the window; everything else is returned unchanged.
    """
    ws = _Workspace(spec)
    lo = spec.grid.index_of(window[0])
    hi = spec.grid.index_of(window[1])
    if lo > hi:
        raise ValueError("window must satisfy a <= b")
    th = theta.flat().copy()
    th[lo : hi + 1] = ws.apply_map(th, theta0.flat(), lo, hi, denominator_floor)
    return Strategy.from_flat(spec.grid, th)


def solve_equilibrium(
    spec: ProblemSpec, theta0: Strategy, config: SolverConfig = SolverConfig()
) -> EquilibriumSolution:
    """Compute the scalar equilibrium gain by windowed Picard iteration.

    Windows tile [0, T] backward from the terminal time.  On each window the
    map is iterated to ``fp_tolerance`` in sup norm with fresh zero initial
    values; a window whose observed contraction ratio exceeds
    ``contraction_target`` is halved and retried.  The converged gain is then
    run back through the matrix Riccati route and the constraint checks.
    """
    _require_scalar(spec)
    if config.check_assumptions:
        report = check_one_dim_positivity(spec, config.positivity_floor)
        if not report.passed:
            raise AssumptionViolatedError(
                f"positivity assumption failed: {report.details}"
            )

    ws = _Workspace(spec)
    grid = spec.grid
    L = grid.num_nodes
    th0 = theta0.flat()
    th = np.zeros(L)

    window_time = config.initial_window if config.initial_window is not None else grid.horizon / 8
    base_steps = max(config.min_window_steps, int(round(window_time / grid.h)))

    diagnostics = SolverDiagnostics(fp_tolerance=config.fp_tolerance)
    hi = L - 1
    while hi >= 0:
        w_steps = min(base_steps, hi + 1)
        halvings = 0
        while True:
            lo = max(0, hi - w_steps + 1)
            th[lo : hi + 1] = 0.0
            prev_change = None
            max_ratio = 0.0
            iterations = 0
            contractive = True
            while iterations < config.max_iterations_per_window:
                iterations += 1
                new_vals = ws.apply_map(th, th0, lo, hi, config.denominator_floor)
                change = float(np.max(np.abs(new_vals - th[lo : hi + 1])))
                th[lo : hi + 1] = (1.0 - config.damping) * th[
                    lo : hi + 1
                ] + config.damping * new_vals
                if prev_change is not None and prev_change > 10.0 * config.fp_tolerance:
                    ratio = change / prev_change
                    max_ratio = max(max_ratio, ratio)
                    if ratio > config.contraction_target:
                        contractive = False
                        break
                if change <= config.fp_tolerance:
                    break
                prev_change = change
            else:
                raise NoConvergenceError(
                    f"window nodes [{lo}, {hi}] did not reach {config.fp_tolerance} "
                    f"within {config.max_iterations_per_window} iterations"
                )
            if contractive:
                resid_vals = ws.apply_map(th, th0, lo, hi, config.denominator_floor)
                residual = float(np.max(np.abs(resid_vals - th[lo : hi + 1])))
                diagnostics.windows.append(
                    WindowDiagnostics(
                        lo=lo,
                        hi=hi,
                        iterations=iterations,
                        final_residual=residual,
                        max_contraction_ratio=max_ratio,
                        halvings=halvings,
                    )
                )
                hi = lo - 1
                break
            if w_steps <= config.min_window_steps:
                raise NonContractiveError(
                    f"window nodes [{lo}, {hi}] is not a contraction even at "
                    f"{config.min_window_steps} grid step(s)"
                )
            w_steps = max(config.min_window_steps, w_steps // 2)
            halvings += 1

    theta_star = Strategy.from_flat(grid, th)

    # Integral-route state at the converged gain.
    with np.errstate(over="ignore", invalid="ignore"):
        p2t = ws.p2_tilde(th)
        expo = ws.exponent(th)
        p1t = ws.p1_tilde(th, p2t, expo)
        lam = np.exp(expo[None, :] - expo[:, None])
    ii, jj = np.indices(lam.shape)
    lam[jj < ii] = np.nan
    state = IntegralState(
        p2_tilde=OneTimeField.from_flat(grid, p2t),
        p1_tilde=OneTimeField.from_flat(grid, p1t),
        lambda_factor=TwoTimeField(grid, lam[..., None, None]),
        theta=theta_star,
    )
    _, den = ws.gain(p1t, p2t, slice(0, L), th0, config.denominator_floor)
    diagnostics.passthrough_nodes = np.nonzero(np.abs(den) <= config.denominator_floor)[
        0
    ].tolist()

    # Matrix-route reconstruction and the constraint audit.
    p2 = solve_p2(spec, theta_star)
    p1 = solve_p1(spec, theta_star)
    p3 = solve_p3(spec, theta_star, p2)
    p1d, p3d = p1.diagonal(), p3.diagonal()
    diagnostics.consistency_gap = float(
        np.max(np.abs(p1t - p1d.data[:, 0, 0] - p3d.data[:, 0, 0]))
    )
    report = check_constraints(spec, p1d, p3d, p2, theta0)

    return EquilibriumSolution(
        spec=spec,
        theta_star=theta_star,
        integral_state=state,
        p1=p1,
        p2=p2,
        p3=p3,
        constraint_report=report,
        diagnostics=diagnostics,
    )
