"""Backward integration of the coupled equilibrium Riccati system.

For a fixed feedback gain Theta the three fields solve, backward in s
(X^T denoting the transpose),

    dP1/ds + P1 A_Th + A_Th^T P1 + C_Th^T P1 C_Th + Q(s,t) + Th^T R(s,t) Th = 0
    dP2/ds + P2 A_Th + Ahat_Th + Chat P2 + Dhat P2 C_Th = 0
    dP3/ds + P3 A_Th + A_Th^T P3 + C_Th^T P3 C_Th
           + P2^T M(s,t) P2 + C_Th^T P2^T N(s,t) P2 C_Th = 0

with P1(T;t) = G1(t), P2(T) = H, P3(T;t) = 0.  P1 and P3 are two-time
fields: one backward sweep per grid node t, all sweeps advanced together so
the kernel evaluations vectorize across t.

The stepper is classical RK4 on the uniform grid.  Theta is read as
piecewise-constant on [t_i, t_{i+1}), so every stage evaluation inside a step
uses the gain of that interval while coefficient functions and kernels are
sampled exactly at the stage times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import OneTimeField, Strategy, TwoTimeField
from .matrixkit import min_eig, pinv, range_residual, specnorm
from .problem import ProblemSpec

__all__ = [
    "ClosedLoopCoefficients",
    "ConstraintReport",
    "closed_loop_coefficients",
    "solve_p1",
    "solve_p2",
    "solve_p3",
    "feedback_map",
    "check_constraints",
    "characterization_residual",
]


def _require_same_grid(spec: ProblemSpec, strategy: Strategy):
    g, sg = spec.grid, strategy.grid
    if (g.horizon, g.steps) != (sg.horizon, sg.steps):
        raise ValueError("strategy grid does not match problem grid")
    want = (spec.dims.k, spec.dims.n)
    if strategy.entry_shape != want:
        raise ValueError(f"strategy entries {strategy.entry_shape}, want {want}")


@dataclass(frozen=True)
class ClosedLoopCoefficients:
    """A + B Theta, C + D Theta, Ahat + Bhat Theta under one strategy.

    ``*_node[i]`` uses the gain of interval i at time t_i (the value the
    feedback and residual formulas read).  The ``*_stage`` arrays hold, per
    interval j, the matrices at the left node, midpoint and right node, all
    with the interval's own gain -- what the RK4 stages consume.
    """

    a_node: OneTimeField
    c_node: OneTimeField
    ahat_node: OneTimeField
    a_stage: np.ndarray  # (steps, 3, n, n): left, mid, right
    c_stage: np.ndarray  # (steps, 3, n, n)
    ahat_stage: np.ndarray  # (steps, 3, m, n)


def closed_loop_coefficients(spec: ProblemSpec, theta: Strategy) -> ClosedLoopCoefficients:
    _require_same_grid(spec, theta)
    grid = spec.grid
    nodes, mids = grid.nodes, grid.midpoints
    c = spec.coeffs
    th = theta.values  # (L, k, n)

    A_n, B_n, C_n, D_n = c.A(nodes), c.B(nodes), c.C(nodes), c.D(nodes)
    Ah_n, Bh_n = c.Ahat(nodes), c.Bhat(nodes)
    A_m, B_m, C_m, D_m = c.A(mids), c.B(mids), c.C(mids), c.D(mids)
    Ah_m, Bh_m = c.Ahat(mids), c.Bhat(mids)

    a_node = A_n + B_n @ th
    c_node = C_n + D_n @ th
    ahat_node = Ah_n + Bh_n @ th

    th_iv = th[:-1]  # gain of interval j
    a_stage = np.stack(
        [A_n[:-1] + B_n[:-1] @ th_iv, A_m + B_m @ th_iv, A_n[1:] + B_n[1:] @ th_iv], axis=1
    )
    c_stage = np.stack(
        [C_n[:-1] + D_n[:-1] @ th_iv, C_m + D_m @ th_iv, C_n[1:] + D_n[1:] @ th_iv], axis=1
    )
    ahat_stage = np.stack(
        [Ah_n[:-1] + Bh_n[:-1] @ th_iv, Ah_m + Bh_m @ th_iv, Ah_n[1:] + Bh_n[1:] @ th_iv], axis=1
    )
    return ClosedLoopCoefficients(
        a_node=OneTimeField(spec.grid, a_node),
        c_node=OneTimeField(spec.grid, c_node),
        ahat_node=OneTimeField(spec.grid, ahat_node),
        a_stage=a_stage,
        c_stage=c_stage,
        ahat_stage=ahat_stage,
    )


def _sym(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + np.swapaxes(p, -1, -2))


def _sweep_two_time(spec: ProblemSpec, clc: ClosedLoopCoefficients, terminal: np.ndarray, source):
    """Shared backward sweep for the P1/P3 equations.

    ``source(j, stage, t_idx)`` returns the inhomogeneous term W(s_stage, t_i)
    for the active t-batch (stage 0/1/2 = left/mid/right of interval j).
    """
    grid = spec.grid
    L, h = grid.num_nodes, grid.h
    n = terminal.shape[-1]
    data = np.full((L, L, n, n), np.nan)
    data[:, L - 1] = terminal
    p = terminal.copy()

    def rhs(pb, a, ct, w):
        return -(pb @ a + np.swapaxes(a, -1, -2) @ pb + np.swapaxes(ct, -1, -2) @ pb @ ct + w)

    for j in range(grid.steps - 1, -1, -1):
        idx = slice(0, j + 1)
        pj = p[idx]
        a0, am, a1 = clc.a_stage[j]
        c0, cm, c1 = clc.c_stage[j]
        w0 = source(j, 0, idx)
        wm = source(j, 1, idx)
        w1 = source(j, 2, idx)
        k1 = rhs(pj, a1, c1, w1)
        k2 = rhs(pj - 0.5 * h * k1, am, cm, wm)
        k3 = rhs(pj - 0.5 * h * k2, am, cm, wm)
        k4 = rhs(pj - h * k3, a0, c0, w0)
        pj = _sym(pj - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        data[idx, j] = pj
        p[idx] = pj
    return TwoTimeField(grid, data)


def solve_p1(spec: ProblemSpec, theta: Strategy) -> TwoTimeField:
    """Two-time state-weight field with terminal value G1(t)."""
    _require_same_grid(spec, theta)
    grid = spec.grid
    nodes, mids = grid.nodes, grid.midpoints
    clc = closed_loop_coefficients(spec, theta)
    terminal = _sym(spec.weights.G1(nodes))
    Q, R = spec.weights.Q, spec.weights.R
    th = theta.values

    def source(j, stage, idx):
        s = (nodes[j], mids[j], nodes[j + 1])[stage]
        t = nodes[idx]
        thj = th[j]
        return Q(s, t) + np.swapaxes(thj, -1, -2) @ R(s, t) @ thj

    return _sweep_two_time(spec, clc, terminal, source)


def solve_p2(spec: ProblemSpec, theta: Strategy) -> OneTimeField:
    """One-time coupling field with terminal value H."""
    nodes_vals, _ = _integrate_p2(spec, theta)
    return OneTimeField(spec.grid, nodes_vals)


def _p2_rhs(p, a, ct, ahat, chat, dhat):
    return -(p @ a + ahat + chat @ p + dhat @ (p @ ct))


def _p2_half_step(p, h_half, stages):
    """One backward RK4 step of length h_half; stages = coefficient triple."""
    (a_hi, c_hi, ah_hi, ch_hi, dh_hi), (a_md, c_md, ah_md, ch_md, dh_md), (
        a_lo,
        c_lo,
        ah_lo,
        ch_lo,
        dh_lo,
    ) = stages
    k1 = _p2_rhs(p, a_hi, c_hi, ah_hi, ch_hi, dh_hi)
    k2 = _p2_rhs(p - 0.5 * h_half * k1, a_md, c_md, ah_md, ch_md, dh_md)
    k3 = _p2_rhs(p - 0.5 * h_half * k2, a_md, c_md, ah_md, ch_md, dh_md)
    k4 = _p2_rhs(p - h_half * k3, a_lo, c_lo, ah_lo, ch_lo, dh_lo)
    return p - (h_half / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _p2_interval_coeffs(spec: ProblemSpec, theta: Strategy):
    """Closed-loop coefficient tuples at node/quarter/mid points per interval."""
    grid = spec.grid
    nodes, mids = grid.nodes, grid.midpoints
    c = spec.coeffs
    th_iv = theta.values[:-1]

    def closed(times):
        A, B, C, D = c.A(times), c.B(times), c.C(times), c.D(times)
        Ah, Bh, Ch, Dh = c.Ahat(times), c.Bhat(times), c.Chat(times), c.Dhat(times)
        return (A + B @ th_iv, C + D @ th_iv, Ah + Bh @ th_iv, Ch, Dh)

    left = closed(nodes[:-1])
    right = closed(nodes[1:])
    mid = closed(mids)
    q1 = closed(0.75 * nodes[:-1] + 0.25 * nodes[1:])
    q3 = closed(0.25 * nodes[:-1] + 0.75 * nodes[1:])
    return left, q1, mid, q3, right


def _integrate_p2(spec: ProblemSpec, theta: Strategy):
    """P2 at grid nodes and interval midpoints (half-step RK4, backward)."""
    _require_same_grid(spec, theta)
    grid = spec.grid
    L, h = grid.num_nodes, grid.h
    m, n = spec.dims.m, spec.dims.n
    left, q1, mid, q3, right = _p2_interval_coeffs(spec, theta)

    def pick(tup, j):
        return tuple(arr[j] for arr in tup)

    p_nodes = np.empty((L, m, n))
    p_mids = np.empty((L - 1, m, n))
    p_nodes[L - 1] = np.asarray(spec.coeffs.H, dtype=float)
    p = p_nodes[L - 1].copy()
    for j in range(grid.steps - 1, -1, -1):
        p = _p2_half_step(p, 0.5 * h, (pick(right, j), pick(q3, j), pick(mid, j)))
        p_mids[j] = p
        p = _p2_half_step(p, 0.5 * h, (pick(mid, j), pick(q1, j), pick(left, j)))
        p_nodes[j] = p
    return p_nodes, p_mids


def solve_p3(spec: ProblemSpec, theta: Strategy, p2: OneTimeField) -> TwoTimeField:
    """Two-time field sourced by the backward-state weights; P3(T;t) = 0.

    ``p2`` must come from :func:`solve_p2` on the same grid; midpoint values
    are regenerated from it with the same half-step rule, so the stage inputs
    match the dense P2 integration bit for bit.
    """
    _require_same_grid(spec, theta)
    grid = spec.grid
    nodes, mids = grid.nodes, grid.midpoints
    h = grid.h
    clc = closed_loop_coefficients(spec, theta)
    n = spec.dims.n

    left, q1, mid, q3, right = _p2_interval_coeffs(spec, theta)
    p2_nodes = p2.data
    p2_mids = np.empty((grid.steps,) + p2.entry_shape)
    for j in range(grid.steps):
        stages = (
            tuple(arr[j] for arr in right),
            tuple(arr[j] for arr in q3),
            tuple(arr[j] for arr in mid),
        )
        p2_mids[j] = _p2_half_step(p2_nodes[j + 1], 0.5 * h, stages)

    M, N = spec.weights.M, spec.weights.N

    def source(j, stage, idx):
        s = (nodes[j], mids[j], nodes[j + 1])[stage]
        t = nodes[idx]
        p2s = (p2_nodes[j], p2_mids[j], p2_nodes[j + 1])[stage]
        cs = clc.c_stage[j, stage]
        p2c = p2s @ cs
        term_m = np.swapaxes(p2s, -1, -2) @ M(s, t) @ p2s
        term_n = np.swapaxes(p2c, -1, -2) @ N(s, t) @ p2c
        return term_m + term_n

    terminal = np.zeros((grid.num_nodes, n, n))
    return _sweep_two_time(spec, clc, terminal, source)


def _diag_weights(spec: ProblemSpec):
    nodes = spec.grid.nodes
    w, c = spec.weights, spec.coeffs
    return {
        "R": w.R(nodes, nodes),
        "N": w.N(nodes, nodes),
        "G2": w.G2(nodes),
        "B": c.B(nodes),
        "C": c.C(nodes),
        "D": c.D(nodes),
        "Bhat": c.Bhat(nodes),
        "Dhat": c.Dhat(nodes),
    }


def gain_denominator_numerator(
    spec: ProblemSpec, p1_diag: OneTimeField, p3_diag: OneTimeField, p2: OneTimeField
):
    """The pair (Lambda, Gamma) entering the feedback map and the constraints.

        Lambda(t) = R(t,t) + D'(P1(t;t) + P3(t;t) + P2' N(t,t) P2) D
        Gamma(t)  = B'(P1 + P3) + D'(P1 + P3 + P2' N P2) C
                    + (Bhat' + B' P2' + D' P2' Dhat') G2 P2
    """
    d = _diag_weights(spec)
    psum = p1_diag.data + p3_diag.data
    p2v = p2.data
    p2t = np.swapaxes(p2v, -1, -2)
    dmat, bmat, cmat = d["D"], d["B"], d["C"]
    dT = np.swapaxes(dmat, -1, -2)
    bT = np.swapaxes(bmat, -1, -2)
    p2np2 = p2t @ d["N"] @ p2v
    core = psum + p2np2
    lam = d["R"] + dT @ core @ dmat
    coupling = (
        np.swapaxes(d["Bhat"], -1, -2) + bT @ p2t + dT @ p2t @ np.swapaxes(d["Dhat"], -1, -2)
    )
    gam = bT @ psum + dT @ core @ cmat + coupling @ d["G2"] @ p2v
    return lam, gam


def feedback_map(
    spec: ProblemSpec,
    p1_diag: OneTimeField,
    p3_diag: OneTimeField,
    p2: OneTimeField,
    theta0: Strategy,
) -> Strategy:
    """Gain update Theta = -Lambda^+ Gamma + theta0 - Lambda^+ Lambda theta0.

    When Lambda(t) is invertible the theta0 terms cancel and the result is
    parameter-free; a singular Lambda routes the unresolved directions through
    the theta0 pass-through.
    """
    lam, gam = gain_denominator_numerator(spec, p1_diag, p3_diag, p2)
    lam_p = pinv(lam)
    th0 = theta0.values
    values = -lam_p @ gam + th0 - lam_p @ lam @ th0
    return Strategy(spec.grid, values)


@dataclass
class ConstraintReport:
    """Node-wise audit of the three solvability constraints."""

    l2_pass: bool
    l2_sup_norm: float
    l2_grid_norm: float
    range_ok_per_node: np.ndarray
    range_worst_residual: float
    range_worst_node: int
    psd_ok_per_node: np.ndarray
    psd_worst_eig: float
    psd_worst_node: int

    @property
    def range_pass(self) -> bool:
        return bool(np.all(self.range_ok_per_node))

    @property
    def psd_pass(self) -> bool:
        return bool(np.all(self.psd_ok_per_node))

    @property
    def all_pass(self) -> bool:
        return self.l2_pass and self.range_pass and self.psd_pass

    def summary(self) -> dict:
        return {
            "l2_pass": self.l2_pass,
            "l2_sup_norm": self.l2_sup_norm,
            "l2_grid_norm": self.l2_grid_norm,
            "range_pass": self.range_pass,
            "range_worst_residual": self.range_worst_residual,
            "range_worst_node": self.range_worst_node,
            "range_fail_count": int(np.size(self.range_ok_per_node) - np.sum(self.range_ok_per_node)),
            "psd_pass": self.psd_pass,
            "psd_worst_eig": self.psd_worst_eig,
            "psd_worst_node": self.psd_worst_node,
        }


def check_constraints(
    spec: ProblemSpec,
    p1_diag: OneTimeField,
    p3_diag: OneTimeField,
    p2: OneTimeField,
    theta0: Strategy,
    range_tol: float = 1e-8,
    psd_tol: float = 1e-10,
) -> ConstraintReport:
    """Audit the square-integrability, range-inclusion and PSD constraints.

    The membership check reports sup and grid-quadrature L2 norms of
    Lambda^+ Gamma and passes iff both are finite (true measure-theoretic
    membership is not machine-checkable).  The a.e. constraints are enforced
    at every grid node; one failing node fails the check.
    """
    lam, gam = gain_denominator_numerator(spec, p1_diag, p3_diag, p2)
    feedback = pinv(lam) @ gam
    norms = specnorm(feedback)
    sup = float(np.max(norms))
    l2 = float(np.sqrt(np.trapezoid(norms**2, spec.grid.nodes)))
    l2_pass = bool(np.isfinite(sup) and np.isfinite(l2))

    resid = range_residual(lam, gam)
    bound = range_tol * (1.0 + specnorm(gam))
    range_ok = resid <= bound
    worst = int(np.argmax(resid - bound))

    eigs = min_eig(lam)
    psd_ok = eigs >= -psd_tol
    psd_worst = int(np.argmin(eigs))

    return ConstraintReport(
        l2_pass=l2_pass,
        l2_sup_norm=sup,
        l2_grid_norm=l2,
        range_ok_per_node=range_ok,
        range_worst_residual=float(np.max(resid)),
        range_worst_node=worst,
        psd_ok_per_node=psd_ok,
        psd_worst_eig=float(eigs[psd_worst]),
        psd_worst_node=psd_worst,
    )


def characterization_residual(spec: ProblemSpec, theta: Strategy) -> OneTimeField:
    """Node-wise defect of the equilibrium characterization equation.

    Solves the Riccati system for the given strategy and evaluates
    Gamma(t) + Lambda(t) Theta(t); the field vanishes exactly at a true
    closed-loop equilibrium.
    """
    _require_same_grid(spec, theta)
    p2 = solve_p2(spec, theta)
    p1_diag = solve_p1(spec, theta).diagonal()
    p3_diag = solve_p3(spec, theta, p2).diagonal()
    lam, gam = gain_denominator_numerator(spec, p1_diag, p3_diag, p2)
    resid = gam + lam @ theta.values
    return OneTimeField(spec.grid, resid)
