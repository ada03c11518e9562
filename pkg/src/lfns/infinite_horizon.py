"""Discounted stationary synthesis and the feedback-stabilizability test.

The fixed point is found by value iteration from zero, which mirrors the
constructive argument behind the stationary theory: the iterates are
exactly the finite-horizon discounted matrices with zero terminal weight,
they are monotone in the PSD order, and their limit (when it exists) is the
minimal fixed point.

The certificate test evaluated here, positive definiteness of the fixed
point together with (1 - gamma) P < Q + H'RH in the strict matrix order,
is equivalent to the Stein inequality (A-BH)' P (A-BH) < P for this
particular P via the Lyapunov identity.  That makes it sufficient for
rho(A - BH) < 1 but not necessary: a stable closed loop can fail it when
the Stein certificate happens to need a different test matrix than the
Riccati solution.  The verdict therefore reports the inequality margin and
the spectral radius separately instead of collapsing them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PD_TOL, CompactModel, CostSpec, LfnsModel, eigmin, symmetrize

FIXED_POINT_TOL = 1e-12
MAX_ITERATIONS = 100_000
DIVERGENCE_NORM = 1e12


class RiccatiDivergence(RuntimeError):
    """Value iteration blew past the divergence threshold (non-stabilizable)."""

    def __init__(self, iterations: int, norm: float):
        super().__init__(f"stationary Riccati iteration diverged after {iterations} "
                         f"iterations (iterate norm {norm:.3e})")
        self.iterations = iterations
        self.norm = norm


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """Fixed point P, gain H = gamma Psi^{-1} L, and solver telemetry."""

    p: np.ndarray
    h: np.ndarray
    psi: np.ndarray
    l: np.ndarray
    gamma: float
    iterations: int
    residual: float
    n: int
    m1: int

    @property
    def converged(self) -> bool:
        return self.residual < FIXED_POINT_TOL


@dataclass(frozen=True)
class CertifiedFlag:
    """Trivalent certificate: True/False when the margin is decisive, None when
    it sits inside the strictness tolerance band."""

    value: bool | None
    margin: float


@dataclass(frozen=True)
class StabilizabilityVerdict:
    positive_definite: CertifiedFlag
    inequality_holds: CertifiedFlag
    spectral_radius: float
    stabilizable: bool | None
    detail: str = ""


def solve_stationary_riccati(compact: CompactModel, cost: CostSpec) -> StationarySolution:
    """Value-iterate P <- Q + gamma A'PA - gamma^2 L' Psi^{-1} L from P = 0.

    Stops when the relative Frobenius change drops below 1e-12; raises
    RiccatiDivergence when the iterate norm passes 1e12.  Hitting the
    iteration cap returns the last iterate with its residual recorded, so
    callers can see the non-convergence rather than receiving an exception.
    """
    if cost.gamma is None or not (0.0 < cost.gamma < 1.0):
        raise ValueError(f"stationary solve requires gamma in (0, 1), got {cost.gamma}")
    gamma = cost.gamma
    a, b = compact.a, compact.b
    q, r = cost.q, cost.r
    p = np.zeros_like(q)
    residual = np.inf
    iterations = 0
    for i in range(1, MAX_ITERATIONS + 1):
        l_mat = b.T @ p @ a
        psi = symmetrize(r + gamma * (b.T @ p @ b))
        x = np.linalg.solve(psi, l_mat)
        p_new = symmetrize(q + gamma * (a.T @ p @ a) - gamma**2 * (l_mat.T @ x))
        norm = float(np.linalg.norm(p_new))
        if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
            raise RiccatiDivergence(i, norm)
        residual = float(np.linalg.norm(p_new - p) / max(1.0, norm))
        p = p_new
        iterations = i
        if residual < FIXED_POINT_TOL:
            break
    l_mat = b.T @ p @ a
    psi = symmetrize(r + gamma * (b.T @ p @ b))
    h = gamma * np.linalg.solve(psi, l_mat)
    return StationarySolution(p=p, h=h, psi=psi, l=l_mat, gamma=gamma,
                              iterations=iterations, residual=residual,
                              n=compact.n, m1=compact.m1)


def _flag(margin: float) -> CertifiedFlag:
    if margin >= PD_TOL:
        return CertifiedFlag(value=True, margin=margin)
    if margin <= -PD_TOL:
        return CertifiedFlag(value=False, margin=margin)
    return CertifiedFlag(value=None, margin=margin)


def check_stabilizability(solution: StationarySolution, cost: CostSpec,
                          compact: CompactModel) -> StabilizabilityVerdict:
    """Certify P > 0 and (1-gamma) P < Q + H'RH, and report rho(A - BH).

    Margins within 1e-9 of zero yield an inconclusive (None) flag instead
    of a forced boolean.  The overall verdict is the conjunction of the two
    certificates; the spectral radius is derived evidence, reported but not
    part of the conjunction.
    """
    p, h, gamma = solution.p, solution.h, solution.gamma
    pd_flag = _flag(eigmin(p))
    gap = cost.q + h.T @ cost.r @ h - (1.0 - gamma) * p
    ineq_flag = _flag(eigmin(gap))
    rho = float(np.max(np.abs(np.linalg.eigvals(compact.a - compact.b @ h))))
    flags = (pd_flag.value, ineq_flag.value)
    if False in flags:
        stab = False
    elif None in flags:
        stab = None
    else:
        stab = True
    detail = (f"min eig P = {pd_flag.margin:.6g}; "
              f"min eig(Q + H'RH - (1-gamma)P) = {ineq_flag.margin:.6g}; "
              f"rho(A - BH) = {rho:.6g}")
    return StabilizabilityVerdict(positive_definite=pd_flag, inequality_holds=ineq_flag,
                                  spectral_radius=rho, stabilizable=stab, detail=detail)


def certify(compact: CompactModel, cost: CostSpec
            ) -> tuple[StationarySolution | None, StabilizabilityVerdict]:
    """Solve and certify in one call, mapping solver divergence to a negative verdict."""
    try:
        solution = solve_stationary_riccati(compact, cost)
    except RiccatiDivergence as exc:
        verdict = StabilizabilityVerdict(
            positive_definite=CertifiedFlag(value=None, margin=float("nan")),
            inequality_holds=CertifiedFlag(value=None, margin=float("nan")),
            spectral_radius=float("nan"), stabilizable=False,
            detail=str(exc))
        return None, verdict
    return solution, check_stabilizability(solution, cost, compact)


def stationary_cost(solution: StationarySolution, model: LfnsModel) -> float:
    """Analytic stationary cost
    E[X(0)' P X(0)] + gamma/(1-gamma) tr(Sigma_W P)."""
    n = model.n
    xbar = np.concatenate([model.xbar0, model.xbar1])
    sigma_x = np.zeros((2 * n, 2 * n))
    sigma_x[:n, :n] = model.sigma_x0
    sigma_x[n:, n:] = model.sigma_x1
    sigma_w = np.zeros((2 * n, 2 * n))
    sigma_w[:n, :n] = model.sigma_w0
    sigma_w[n:, n:] = model.sigma_w1
    p = solution.p
    quad = float(xbar @ p @ xbar + np.trace(sigma_x @ p))
    return quad + solution.gamma / (1.0 - solution.gamma) * float(np.trace(sigma_w @ p))


def stationary_decentralized_control(solution: StationarySolution, x0, x1, x1hat):
    """Constant-gain decentralized control with the stationary H blocks."""
    from .finite_horizon import control, split_gain
    gains = split_gain(solution.h, solution.n, solution.m1)
    return control(gains, x0, x1, x1hat)
