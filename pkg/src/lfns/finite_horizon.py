"""Finite-horizon decentralized LQ synthesis.

Backward Riccati recursion for the aggregated system, the block-partitioned
decentralized gains, the analytic optimal cost, and the per-step stationarity
identities used as verification checks.  Includes the discounted variant
with zero terminal weight, whose iterates double as the value-iteration
sequence of the stationary problem.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import PD_TOL, CompactModel, CostSpec, LfnsModel, eigmin, symmetrize

PSD_TOL = -1e-9
ASYMMETRY_TOL = 1e-8


class RiccatiError(RuntimeError):
    """Recursion broke an assumption (indefinite Lambda, non-finite entries)."""


@dataclass(frozen=True, eq=False)
class FiniteHorizonSolution:
    """Backward-recursion output over the control window k = 0..N.

    p_seq has N+2 entries (indices 0..N+1, the last being the terminal
    weight, zero in the discounted variant); k_seq, lambda_seq, l_seq have
    N+1 entries each.
    """

    p_seq: list[np.ndarray]
    k_seq: list[np.ndarray]
    lambda_seq: list[np.ndarray]
    l_seq: list[np.ndarray]
    discounted: bool
    gamma: float | None

    @property
    def horizon(self) -> int:
        return len(self.k_seq) - 1


@dataclass(frozen=True, eq=False)
class DecentralizedGains:
    """Block partition of a stacked gain: u0 = -k00 x0 - k01 x1hat, u1 = -k10 x0 - k11 x1."""

    k00: np.ndarray
    k01: np.ndarray
    k10: np.ndarray
    k11: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.block([[self.k00, self.k01], [self.k10, self.k11]])


@dataclass(frozen=True, eq=False)
class CostateCheck:
    """Per-step residual norms of the two stationarity identities.

    hat_residuals[k] is the norm of Lambda(k) Uhat(k) + L(k) Xhat(k) along a
    trace (conditional-mean components), tilde_residuals[k] the same for the
    residual components Utilde, Xtilde.  The discounted/stationary variant
    uses Psi and gamma L in place of Lambda and L.
    """

    hat_residuals: np.ndarray
    tilde_residuals: np.ndarray

    @property
    def max_hat(self) -> float:
        return float(self.hat_residuals.max()) if self.hat_residuals.size else 0.0

    @property
    def max_tilde(self) -> float:
        return float(self.tilde_residuals.max()) if self.tilde_residuals.size else 0.0


def split_gain(k: np.ndarray, n: int, m1: int) -> DecentralizedGains:
    """Partition a stacked (m1+m2) x 2n gain into its four blocks."""
    return DecentralizedGains(k00=k[:m1, :n], k01=k[:m1, n:],
                              k10=k[m1:, :n], k11=k[m1:, n:])


def _check_step(p: np.ndarray, k: int) -> np.ndarray:
    if not np.all(np.isfinite(p)):
        raise RiccatiError(f"non-finite Riccati iterate at step {k}")
    sym = symmetrize(p)
    denom = max(1.0, float(np.linalg.norm(sym)))
    if np.linalg.norm(p - sym) / denom > ASYMMETRY_TOL:
        warnings.warn(f"Riccati iterate at step {k} asymmetric beyond tolerance",
                      RuntimeWarning, stacklevel=3)
    if eigmin(sym) < PSD_TOL:
        raise RiccatiError(f"Riccati iterate at step {k} lost positive semidefiniteness")
    return sym


def backward_riccati(compact: CompactModel, cost: CostSpec, n_horizon: int) -> FiniteHorizonSolution:
    """Undiscounted backward recursion from the terminal weight.

    For k = N..0:
        Lambda(k) = R + B' P(k+1) B
        L(k)      = B' P(k+1) A
        K(k)      = Lambda(k)^{-1} L(k)
        P(k)      = Q + A' P(k+1) A - L(k)' Lambda(k)^{-1} L(k)

    Lambda is factorized, never inverted.
    """
    a, b = compact.a, compact.b
    q, r = cost.q, cost.r
    p_t = cost.p_terminal if cost.p_terminal is not None else np.zeros_like(q)
    dim = q.shape[0]
    p_seq: list[np.ndarray] = [np.zeros((dim, dim))] * (n_horizon + 2)
    k_seq: list[np.ndarray] = [np.zeros((r.shape[0], dim))] * (n_horizon + 1)
    lam_seq = list(k_seq)
    l_seq = list(k_seq)
    p_seq[n_horizon + 1] = _check_step(p_t, n_horizon + 1)
    for k in range(n_horizon, -1, -1):
        p_next = p_seq[k + 1]
        lam = symmetrize(r + b.T @ p_next @ b)
        if eigmin(lam) < PD_TOL:
            raise RiccatiError(f"Lambda({k}) not positive definite")
        l_mat = b.T @ p_next @ a
        k_gain = np.linalg.solve(lam, l_mat)
        p = q + a.T @ p_next @ a - l_mat.T @ k_gain
        p_seq[k] = _check_step(p, k)
        k_seq[k] = k_gain
        lam_seq[k] = lam
        l_seq[k] = l_mat
    return FiniteHorizonSolution(p_seq=p_seq, k_seq=k_seq, lambda_seq=lam_seq,
                                 l_seq=l_seq, discounted=False, gamma=None)


def discounted_backward_riccati(compact: CompactModel, cost: CostSpec,
                                n_horizon: int) -> FiniteHorizonSolution:
    """Discounted recursion with terminal weight forced to zero.

    For k = N..0:
        Psi(k) = R + gamma B' P(k+1) B
        L(k)   = B' P(k+1) A
        H(k)   = gamma Psi(k)^{-1} L(k)
        P(k)   = Q + gamma A' P(k+1) A - gamma^2 L(k)' Psi(k)^{-1} L(k)
    """
    if cost.gamma is None or not (0.0 < cost.gamma < 1.0):
        raise RiccatiError(f"discounted recursion requires gamma in (0, 1), got {cost.gamma}")
    gamma = cost.gamma
    a, b = compact.a, compact.b
    q, r = cost.q, cost.r
    dim = q.shape[0]
    p_seq: list[np.ndarray] = [np.zeros((dim, dim))] * (n_horizon + 2)
    k_seq: list[np.ndarray] = [np.zeros((r.shape[0], dim))] * (n_horizon + 1)
    psi_seq = list(k_seq)
    l_seq = list(k_seq)
    for k in range(n_horizon, -1, -1):
        p_next = p_seq[k + 1]
        psi = symmetrize(r + gamma * (b.T @ p_next @ b))
        if eigmin(psi) < PD_TOL:
            raise RiccatiError(f"Psi({k}) not positive definite")
        l_mat = b.T @ p_next @ a
        x = np.linalg.solve(psi, l_mat)
        h_gain = gamma * x
        p = q + gamma * (a.T @ p_next @ a) - gamma**2 * (l_mat.T @ x)
        p_seq[k] = _check_step(p, k)
        k_seq[k] = h_gain
        psi_seq[k] = psi
        l_seq[k] = l_mat
    return FiniteHorizonSolution(p_seq=p_seq, k_seq=k_seq, lambda_seq=psi_seq,
                                 l_seq=l_seq, discounted=True, gamma=gamma)


def gains_at(solution: FiniteHorizonSolution, k: int, n: int, m1: int) -> DecentralizedGains:
    return split_gain(solution.k_seq[k], n, m1)


def control(gains: DecentralizedGains, x0, x1, x1hat):
    """Decentralized control pair.

    u0 reads only the leader state and the leader-side estimate; u1 reads
    only follower-visible quantities (x1 directly, never x1hat).
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    x1hat = np.asarray(x1hat, dtype=float)
    u0 = -gains.k00 @ x0 - gains.k01 @ x1hat
    u1 = -gains.k10 @ x0 - gains.k11 @ x1
    return u0, u1


def _initial_second_moment(model: LfnsModel) -> tuple[np.ndarray, np.ndarray]:
    xbar = np.concatenate([model.xbar0, model.xbar1])
    n = model.n
    sigma = np.zeros((2 * n, 2 * n))
    sigma[:n, :n] = model.sigma_x0
    sigma[n:, n:] = model.sigma_x1
    return xbar, sigma


def optimal_cost(solution: FiniteHorizonSolution, model: LfnsModel) -> float:
    """Analytic optimal cost of the solved horizon.

    Undiscounted:  J = E[X(0)' P(0) X(0)] + sum_{k=0}^{N} tr(Sigma_W P(k+1))
    Discounted:    J = E[X(0)' P(0) X(0)] + sum_{k=0}^{N} gamma^{k+1} tr(Sigma_W P(k+1))

    with E[X(0)' P(0) X(0)] = xbar' P(0) xbar + tr(blockdiag(Sigma_x0,
    Sigma_x1) P(0)), the Gaussian second-moment expansion.
    """
    n = model.n
    sigma_w = np.zeros((2 * n, 2 * n))
    sigma_w[:n, :n] = model.sigma_w0
    sigma_w[n:, n:] = model.sigma_w1
    xbar, sigma_x = _initial_second_moment(model)
    p0 = solution.p_seq[0]
    total = float(xbar @ p0 @ xbar + np.trace(sigma_x @ p0))
    n_horizon = solution.horizon
    for k in range(n_horizon + 1):
        term = float(np.trace(sigma_w @ solution.p_seq[k + 1]))
        if solution.discounted:
            term *= solution.gamma ** (k + 1)
        total += term
    return total


def stationarity_residuals(solution, trace) -> CostateCheck:
    """Evaluate the two per-step stationarity identities along a trace.

    The conditional-mean identity uses Uhat = (u0, u1hat) and Xhat =
    (x0, x1hat); the residual identity uses Utilde = (0, u1 - u1hat) and
    Xtilde = (0, x1 - x1hat), where u1hat = -k10 x0 - k11 x1hat is the
    policy's conditional-mean follower control.  For an undiscounted
    solution the identity matrices are Lambda(k), L(k); for a discounted or
    stationary solution they are Psi, gamma L.

    solution may be a FiniteHorizonSolution or a stationary solution object
    with fields psi, l, h, gamma.
    """
    x0 = np.asarray(trace.x0, dtype=float)
    x1 = np.asarray(trace.x1, dtype=float)
    x1hat = np.asarray(trace.x1hat, dtype=float)
    u0 = np.asarray(trace.u0, dtype=float)
    u1 = np.asarray(trace.u1, dtype=float)
    steps = u0.shape[0]
    n = x0.shape[1]
    m1 = u0.shape[1]
    hat = np.zeros(steps)
    tilde = np.zeros(steps)
    for k in range(steps):
        if isinstance(solution, FiniteHorizonSolution):
            gains = split_gain(solution.k_seq[k], n, m1)
            lam = solution.lambda_seq[k]
            l_mat = solution.l_seq[k]
            if solution.discounted:
                l_mat = solution.gamma * l_mat
        else:
            gains = split_gain(solution.h, n, m1)
            lam = solution.psi
            l_mat = solution.gamma * solution.l
        u1hat = -gains.k10 @ x0[k] - gains.k11 @ x1hat[k]
        uhat = np.concatenate([u0[k], u1hat])
        utilde = np.concatenate([np.zeros(m1), u1[k] - u1hat])
        xhat = np.concatenate([x0[k], x1hat[k]])
        xtilde = np.concatenate([np.zeros(n), x1[k] - x1hat[k]])
        hat[k] = np.linalg.norm(lam @ uhat + l_mat @ xhat)
        tilde[k] = np.linalg.norm(lam @ utilde + l_mat @ xtilde)
    return CostateCheck(hat_residuals=hat, tilde_residuals=tilde)
