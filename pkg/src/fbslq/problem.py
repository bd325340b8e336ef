"""Problem instances: dimensions, dynamics coefficients, cost weights.

A :class:`ProblemSpec` bundles the forward-backward dynamics

    dX = (A X + B u) ds + (C X + D u) dW
    dY = -(Ahat X + Bhat u + Chat Y + Dhat Z) ds + Z dW,   Y(T) = H X(T)

with the two-time cost weights Q, R, M, N and the single-time weights
G1, G2 evaluated at the (moving) initial time.  Standing-assumption audits
(`check_lipschitz_in_t`, `check_one_dim_positivity`) are empirical,
report-style checks; they never raise on a failing hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import TimeGrid
from .kernels import TimeFunction, TwoTimeKernel

__all__ = [
    "Dimensions",
    "Coefficients",
    "Weights",
    "ProblemSpec",
    "ValidationReport",
    "AssumptionReport",
    "validate",
    "check_lipschitz_in_t",
    "check_one_dim_positivity",
]


@dataclass(frozen=True)
class Dimensions:
    n: int  # forward state
    m: int  # backward state
    k: int  # control

    def __post_init__(self):
        if min(self.n, self.m, self.k) < 1:
            raise ValueError("dimensions must be positive integers")


@dataclass(frozen=True)
class Coefficients:
    """Dynamics coefficients; all bounded functions on [0, horizon]."""

    A: TimeFunction  # n x n
    B: TimeFunction  # n x k
    C: TimeFunction  # n x n
    D: TimeFunction  # n x k
    Ahat: TimeFunction  # m x n
    Bhat: TimeFunction  # m x k
    Chat: TimeFunction  # m x m
    Dhat: TimeFunction  # m x m
    H: np.ndarray  # m x n, constant
    horizon: float


@dataclass(frozen=True)
class Weights:
    Q: TwoTimeKernel  # n x n, symmetric
    R: TwoTimeKernel  # k x k, symmetric
    M: TwoTimeKernel  # m x m, symmetric
    N: TwoTimeKernel  # m x m, symmetric
    G1: TimeFunction  # n x n, symmetric
    G2: TimeFunction  # m x m, symmetric


@dataclass(frozen=True)
class ProblemSpec:
    dims: Dimensions
    coeffs: Coefficients
    weights: Weights
    grid: TimeGrid

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def is_one_dimensional(self) -> bool:
        d = self.dims
        return d.n == d.m == d.k == 1


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


@dataclass
class AssumptionReport:
    """Outcome of an empirical standing-assumption audit."""

    name: str
    passed: bool
    empirical_constant: float
    details: dict = field(default_factory=dict)


_COEFF_SHAPES = {
    "A": ("n", "n"),
    "B": ("n", "k"),
    "C": ("n", "n"),
    "D": ("n", "k"),
    "Ahat": ("m", "n"),
    "Bhat": ("m", "k"),
    "Chat": ("m", "m"),
    "Dhat": ("m", "m"),
}

_WEIGHT_SHAPES = {
    "Q": ("n", "n"),
    "R": ("k", "k"),
    "M": ("m", "m"),
    "N": ("m", "m"),
    "G1": ("n", "n"),
    "G2": ("m", "m"),
}

_SYMMETRIC_WEIGHTS = ("Q", "R", "M", "N", "G1", "G2")


def _expected_shape(dims: Dimensions, spec: tuple[str, str]) -> tuple[int, int]:
    look = {"n": dims.n, "m": dims.m, "k": dims.k}
    return look[spec[0]], look[spec[1]]


def _sample_times(grid: TimeGrid, cap: int = 41) -> np.ndarray:
    """Coarse deterministic sub-lattice of grid nodes, endpoints included."""
    nodes = grid.nodes
    if len(nodes) <= cap:
        return nodes
    idx = np.unique(np.linspace(0, len(nodes) - 1, cap).round().astype(int))
    return nodes[idx]


def validate(spec: ProblemSpec, sym_tol: float = 1e-9) -> ValidationReport:
    """Report dimension mismatches, non-symmetric weights, and non-finite samples.

    An empty issue list means the spec is well formed.  Pure and idempotent.
    """
    report = ValidationReport()
    dims = spec.dims
    ts = _sample_times(spec.grid)

    if abs(spec.coeffs.horizon - spec.grid.horizon) > 1e-12 * max(1.0, spec.grid.horizon):
        report.issues.append(
            f"grid horizon {spec.grid.horizon} does not span coefficient horizon "
            f"{spec.coeffs.horizon}"
        )

    H = np.asarray(spec.coeffs.H, dtype=float)
    if H.shape != (dims.m, dims.n):
        report.issues.append(f"dimension mismatch H: got {H.shape}, want {(dims.m, dims.n)}")
    elif not np.all(np.isfinite(H)):
        report.issues.append("non-finite samples H")

    for name, shape_spec in _COEFF_SHAPES.items():
        fn: TimeFunction = getattr(spec.coeffs, name)
        want = _expected_shape(dims, shape_spec)
        if tuple(fn.shape) != want:
            report.issues.append(f"dimension mismatch {name}: got {tuple(fn.shape)}, want {want}")
            continue
        vals = fn(ts)
        if not np.all(np.isfinite(vals)):
            report.issues.append(f"non-finite samples {name}")

    ss, tt = np.meshgrid(ts, ts, indexing="ij")
    tri = ss >= tt
    for name, shape_spec in _WEIGHT_SHAPES.items():
        kern = getattr(spec.weights, name)
        want = _expected_shape(dims, shape_spec)
        if tuple(kern.shape) != want:
            report.issues.append(f"dimension mismatch {name}: got {tuple(kern.shape)}, want {want}")
            continue
        vals = kern(ss, tt) if isinstance(kern, TwoTimeKernel) else kern(ts)
        if not np.all(np.isfinite(vals)):
            report.issues.append(f"non-finite samples {name}")
            continue
        if name in _SYMMETRIC_WEIGHTS:
            gap = np.abs(vals - np.swapaxes(vals, -1, -2))
            if isinstance(kern, TwoTimeKernel):
                gap = gap[tri]
            scale = 1.0 + float(np.max(np.abs(vals)))
            if float(np.max(gap)) > sym_tol * scale:
                report.issues.append(f"symmetry violation {name}")
    return report


def _kernel_gap_sup(spec: ProblemSpec, t: np.ndarray, tau: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Sum of sup-norm kernel differences between initial times t and tau."""
    w = spec.weights
    total = np.zeros(t.shape)
    for kern in (w.Q, w.R, w.M, w.N):
        diff = kern(s, t) - kern(s, tau)
        total += np.max(np.abs(diff), axis=(-2, -1))
    for fn in (w.G1, w.G2):
        diff = fn(t) - fn(tau)
        total += np.max(np.abs(diff), axis=(-2, -1))
    return total


def check_lipschitz_in_t(spec: ProblemSpec, probe_count: int = 200) -> AssumptionReport:
    """Empirical audit of Lipschitz dependence on the initial time.

    Samples triples 0 <= t <= tau <= s <= T at gap scales |t - tau| from the
    grid spacing up to T/4 and reports the worst difference ratio.  The check
    fails when the ratio keeps growing as the gap shrinks toward the grid
    spacing (a Hoelder-type blow-up), or when any sample is non-finite.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be positive")
    grid = spec.grid
    T = grid.horizon
    h = grid.h
    rng = np.random.default_rng(0)  # deterministic audit

    gaps = []
    g = h
    while g <= T / 4 + 1e-15:
        gaps.append(g)
        g *= 2.0
    if not gaps:
        gaps = [h]

    per_gap = []
    for gap in gaps:
        t = rng.uniform(0.0, T - gap, size=probe_count)
        tau = t + gap
        s = tau + rng.uniform(0.0, 1.0, size=probe_count) * (T - tau)
        # Structured probes along the diagonal s = tau, where Hoelder-type
        # kernels blow up first, plus the far end s = T.
        t_det = np.linspace(0.0, T - gap, 17)
        tau_det = t_det + gap
        for offset in (0.0, 0.5, 1.0):
            t = np.concatenate([t, t_det])
            tau = np.concatenate([tau, tau_det])
            s = np.concatenate([s, tau_det + offset * (T - tau_det)])
        ratios = _kernel_gap_sup(spec, t, tau, s) / gap
        per_gap.append(float(np.max(ratios)))

    empirical = float(np.max(per_gap))
    finite = bool(np.isfinite(empirical))
    # Blow-up probe: compare the smallest gap against the next one up.
    if len(per_gap) >= 2 and per_gap[1] > 0:
        growth = per_gap[0] / per_gap[1]
    else:
        growth = 1.0
    passed = finite and growth <= 1.25
    return AssumptionReport(
        name="lipschitz_in_initial_time",
        passed=passed,
        empirical_constant=empirical,
        details={
            "gaps": [float(g) for g in gaps],
            "per_gap_constant": per_gap,
            "small_gap_growth": float(growth),
            "probe_count": int(probe_count),
        },
    )


def check_one_dim_positivity(spec: ProblemSpec, delta_floor: float = 1e-8) -> AssumptionReport:
    """Audit of the one-dimensional positivity assumption.

    On the grid: R(t,t), N(t,t) and D(t)^2 must admit a common positive floor
    delta >= delta_floor, while Q(s,t), M(s,t) on the triangle and G1(t) must
    be nonnegative.  Returns the largest admissible delta found.
    """
    if delta_floor <= 0:
        raise ValueError("delta_floor must be positive")
    if not spec.is_one_dimensional():
        raise ValueError("positivity audit applies to one-dimensional specs only")
    nodes = spec.grid.nodes
    w = spec.weights
    c = spec.coeffs

    r_diag = w.R(nodes, nodes)[:, 0, 0]
    n_diag = w.N(nodes, nodes)[:, 0, 0]
    d_sq = c.D(nodes)[:, 0, 0] ** 2
    delta = float(min(r_diag.min(), n_diag.min(), d_sq.min()))

    ss, tt = np.meshgrid(nodes, nodes, indexing="ij")
    tri = ss >= tt
    q_min = float(np.min(w.Q(ss, tt)[tri]))
    m_min = float(np.min(w.M(ss, tt)[tri]))
    g1_min = float(np.min(w.G1(nodes)))

    floor_ok = delta >= delta_floor
    nonneg_ok = min(q_min, m_min, g1_min) >= -1e-12
    return AssumptionReport(
        name="one_dim_positivity",
        passed=bool(floor_ok and nonneg_ok),
        empirical_constant=delta,
        details={
            "delta": delta,
            "delta_floor": float(delta_floor),
            "min_R_diag": float(r_diag.min()),
            "min_N_diag": float(n_diag.min()),
            "min_D_squared": float(d_sq.min()),
            "min_Q": q_min,
            "min_M": m_min,
            "min_G1": g1_min,
        },
    )
