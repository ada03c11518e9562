"""Planar three-degree-of-freedom vehicle layer for two-agent tracking.

Vehicle motion splits into world-frame kinematics eta' = R(psi) nu and a
body-frame force balance M nu' + C(nu) nu + D(nu) nu = tau, with
eta = (x, y, psi) and nu = (surge, sway, yaw rate).  Sampling turns the
tracking error z = (eta - eta_d, velocity error) into a double-integrator
model driven by an abstract input u_z; feedback linearization maps u_z to
the thrust tau exactly, so thrust selection reduces to linear-quadratic
control of z.  The bundled twelve-state example couples a leader and a
follower vehicle through dense error-model matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CostSpec, LfnsModel, eigmin, make_cost, make_model

BASIS_TERMS = ("1", "u", "|u|", "v", "|v|", "r", "|r|")


@dataclass(frozen=True, eq=False)
class AuvParams:
    """Inertia plus velocity-dependent coefficient tables.

    coriolis holds (cu, cv, cr): C(nu) is the skew pattern with
    C[0,2] = -cv*v + cr*r and C[1,2] = cu*u.  damping is a (3,3,7)
    table over the basis (1, u, |u|, v, |v|, r, |r|); D(nu) is its
    contraction with that basis vector.
    """

    m: np.ndarray
    coriolis: tuple[float, float, float]
    damping: np.ndarray


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Per-channel sinusoid eta_d(k) = amplitude*sin(frequency*k) + offset.

    Defined for any integer k, negative indices included; the force map
    needs eta_d(k-1) already at k = 0.
    """

    amplitude: np.ndarray
    frequency: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True, eq=False)
class AuvExample:
    """Bundled coupled leader-follower setup: error model, cost, vehicle data."""

    model: LfnsModel
    cost: CostSpec
    leader: AuvParams
    follower: AuvParams
    leader_ref: ReferenceTrajectory
    follower_ref: ReferenceTrajectory
    t: float
    leader_eta0: np.ndarray
    leader_nu0: np.ndarray
    follower_eta0: np.ndarray
    follower_nu0: np.ndarray


def make_auv_params(m, coriolis, damping) -> AuvParams:
    m = np.asarray(m, dtype=float)
    damping = np.asarray(damping, dtype=float)
    if m.shape != (3, 3) or damping.shape != (3, 3, 7):
        raise ValueError("inertia must be 3x3 and the damping table (3,3,7)")
    if eigmin(m) <= 0.0:
        raise ValueError("inertia matrix not positive definite")
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("inertia matrix not invertible")
    cu, cv, cr = (float(c) for c in coriolis)
    return AuvParams(m=m, coriolis=(cu, cv, cr), damping=damping)


def make_reference(amplitude, frequency, offset) -> ReferenceTrajectory:
    amp = np.asarray(amplitude, dtype=float)
    freq = np.asarray(frequency, dtype=float)
    off = np.asarray(offset, dtype=float)
    if amp.shape != (3,) or freq.shape != (3,) or off.shape != (3,):
        raise ValueError("reference needs three channels")
    return ReferenceTrajectory(amplitude=amp, frequency=freq, offset=off)


def reference(traj: ReferenceTrajectory, k: int | float) -> np.ndarray:
    return traj.amplitude * np.sin(traj.frequency * k) + traj.offset


def rotation(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _velocity_basis(nu: np.ndarray) -> np.ndarray:
    u, v, r = nu
    return np.array([1.0, u, abs(u), v, abs(v), r, abs(r)])


def eval_coriolis(params: AuvParams, nu) -> np.ndarray:
    u, v, r = np.asarray(nu, dtype=float)
    cu, cv, cr = params.coriolis
    top = -cv * v + cr * r
    return np.array([[0.0, 0.0, top],
                     [0.0, 0.0, cu * u],
                     [-top, -cu * u, 0.0]])


def eval_damping(params: AuvParams, nu) -> np.ndarray:
    return params.damping @ _velocity_basis(np.asarray(nu, dtype=float))


def build_error_dynamics(t: float) -> tuple[np.ndarray, np.ndarray]:
    """Canonical sampled error model: a_z = I6 + t*[[0,I3],[0,0]], b_z = t*[0;I3]."""
    if t <= 0:
        raise ValueError("sampling period must be positive")
    a_z = np.eye(6)
    a_z[:3, 3:] = t * np.eye(3)
    b_z = np.vstack([np.zeros((3, 3)), t * np.eye(3)])
    return a_z, b_z


def h_term(params: AuvParams, rot_now: np.ndarray, rot_prev: np.ndarray,
           nu, t: float) -> np.ndarray:
    """Velocity-dependent bias absorbed by the feedback linearization."""
    nu = np.asarray(nu, dtype=float)
    rate = np.linalg.solve(rot_now, (rot_now - rot_prev) @ nu) / t
    return (params.m @ rate
            - eval_coriolis(params, nu) @ nu
            - eval_damping(params, nu) @ nu)


def _reference_curvature(traj: ReferenceTrajectory, k: int) -> np.ndarray:
    return (reference(traj, k + 1) - 2.0 * reference(traj, k)
            + reference(traj, k - 1))


def force_reconstruction(params: AuvParams, u_z, traj: ReferenceTrajectory,
                         k: int, rot: np.ndarray, h: np.ndarray,
                         t: float) -> np.ndarray:
    """Thrust realizing the commanded error-model input u_z at step k."""
    u_z = np.asarray(u_z, dtype=float)
    m_rinv = params.m @ np.linalg.inv(rot)
    return m_rinv @ u_z - h + m_rinv @ _reference_curvature(traj, k) / t ** 2


def error_model_control(params: AuvParams, tau, traj: ReferenceTrajectory,
                        k: int, rot: np.ndarray, h: np.ndarray,
                        t: float) -> np.ndarray:
    """Inverse of force_reconstruction: the u_z a given thrust realizes."""
    tau = np.asarray(tau, dtype=float)
    rinv_m = rot @ np.linalg.inv(params.m)
    return (rinv_m @ tau - _reference_curvature(traj, k) / t ** 2
            + rinv_m @ h)


def error_state(eta, nu, traj: ReferenceTrajectory, k: int, t: float) -> np.ndarray:
    """Six-state tracking error (position error, velocity error) at step k.

    The velocity channel compares nu against the backward difference of the
    reference, (eta_d(k) - eta_d(k-1))/t, so it is well defined at k = 0.
    """
    eta = np.asarray(eta, dtype=float)
    nu = np.asarray(nu, dtype=float)
    ref_vel = (reference(traj, k) - reference(traj, k - 1)) / t
    return np.concatenate([eta - reference(traj, k), nu - ref_vel])


def nonlinear_step(params: AuvParams, eta, nu, tau, t: float):
    """Forward-Euler step of the vehicle: kinematics then force balance."""
    if t <= 0:
        raise ValueError("sampling period must be positive")
    eta = np.asarray(eta, dtype=float)
    nu = np.asarray(nu, dtype=float)
    tau = np.asarray(tau, dtype=float)
    eta_next = eta + t * rotation(eta[2]) @ nu
    load = tau - eval_coriolis(params, nu) @ nu - eval_damping(params, nu) @ nu
    nu_next = nu + t * np.linalg.solve(params.m, load)
    if not (np.all(np.isfinite(eta_next)) and np.all(np.isfinite(nu_next))):
        raise ValueError("vehicle state diverged to non-finite values")
    return eta_next, nu_next


def leader_params() -> AuvParams:
    m = np.array([[37.93, 0.0, 0.0],
                  [0.0, 72.5, -1.93],
                  [0.0, -1.93, 8.33]])
    d = np.zeros((3, 3, 7))
    d[0, 0] = [-13.50, -1.62, -1.62, 0.0, 0.0, 0.0, 0.0]
    d[0, 1] = [0.0, 0.0, 0.0, -4.48, 0.0, 35.50, 0.0]
    d[1, 1] = [-175.21, 0.0, 0.0, 0.0, -1310.0, 0.0, 24.96]
    d[1, 2] = [-25.06, 0.0, 0.0, 0.0, 0.0, 0.0, 0.63]
    d[2, 1] = [23.83, 0.0, 0.0, 0.0, 40.01, 0.0, 0.0]
    d[2, 2] = [31.42, 0.0, 0.0, -93.16, 0.0, 0.0, -94.0]
    return make_auv_params(m=m, coriolis=(37.93, 72.50, 1.93), damping=d)


def follower_params() -> AuvParams:
    m = np.array([[20.74, 0.0, 0.0],
                  [0.0, 38.24, -6.19],
                  [0.0, -8.97, 2.92]])
    d = np.zeros((3, 3, 7))
    d[0, 0] = [-3.00, -3.37, -1.25, 0.0, 0.0, 0.0, 0.0]
    d[0, 1] = [0.0, 0.0, 0.0, -40.99, 0.0, 17.86, 0.0]
    d[1, 1] = [-26.72, 0.0, 0.0, 0.0, -45.29, 0.0, 11.72]
    d[1, 2] = [-12.67, 0.0, 0.0, 0.0, 0.0, 0.0, 0.34]
    d[2, 1] = [26.09, 0.0, 0.0, 0.0, 24.58, 0.0, 0.0]
    d[2, 2] = [35.56, 0.0, 0.0, -0.94, 0.0, 0.0, 0.03]
    return make_auv_params(m=m, coriolis=(20.74, 38.24, 6.19), damping=d)


def leader_reference() -> ReferenceTrajectory:
    return make_reference(amplitude=[6.0, 4.0, 1.0],
                          frequency=[0.2, 0.2, 0.2],
                          offset=[1.2, 1.2, 0.0])


def follower_reference() -> ReferenceTrajectory:
    return make_reference(amplitude=[4.0, 2.0, 2.0],
                          frequency=[0.2, 0.2, 0.2],
                          offset=[1.5, 1.4, 0.0])


_A_Z00 = [
    [-0.50, -1.13, 0.49, -1.22, -0.21, 0.42],
    [-1.14, 0.20, 0.20, -0.58, -0.72, 0.05],
    [-2.46, 1.47, -1.40, 4.17, -0.20, -2.24],
    [-0.93, 0.43, -1.02, 3.07, 0.14, -1.30],
    [0.17, -0.59, -0.19, 0.82, 0.13, -0.21],
    [0.50, 0.53, -0.83, 2.16, 0.26, -0.50]]
_A_Z11 = [
    [-0.59, 0.27, -0.01, -0.32, -0.52, -0.94],
    [-0.15, 0.39, 0.20, -0.05, -0.90, -1.72],
    [-0.40, 0.09, -0.15, -0.32, -0.10, 0.10],
    [0.03, 0.16, 0.27, 0.31, -0.11, -0.82],
    [0.08, -0.20, 0.03, 0.16, 0.29, 0.53],
    [-0.54, 0.25, 0.16, -0.19, -0.36, -0.86]]
_A_Z10 = [
    [0.79, -1.00, 0.89, 0.14, 0.50, 0.26],
    [-0.64, 1.00, -0.52, 0.73, -0.15, 0.75],
    [-0.28, 0.45, -0.01, 0.52, -0.03, 0.22],
    [-0.68, 1.33, -0.15, 1.27, -0.67, 1.23],
    [-1.66, 3.67, -3.14, 1.52, -1.15, 2.97],
    [0.91, -0.94, 0.20, -0.45, 0.52, -0.12]]
_B_Z00 = [
    [0.92, 0.57, 0.09],
    [0.40, 0.68, 0.36],
    [0.68, 0.13, 0.57],
    [0.49, 0.06, 0.72],
    [0.29, 0.69, 0.01],
    [0.25, 0.29, 0.06]]
_B_Z11 = [
    [0.99, 0.46, 0.86],
    [0.24, 0.35, 0.72],
    [0.50, 0.32, 0.82],
    [0.53, 0.39, 0.44],
    [0.60, 0.41, 0.98],
    [0.13, 0.75, 0.12]]
_B_Z10 = [
    [0.86, 0.01, 0.91],
    [0.96, 0.50, 0.99],
    [0.80, 0.93, 0.63],
    [0.87, 0.66, 0.99],
    [0.26, 0.21, 0.76],
    [0.03, 0.48, 0.65]]


def bundled_example() -> AuvExample:
    """The coupled leader-follower setup shipped with the package.

    The twelve-state error model uses dense identified matrices rather than
    the canonical build_error_dynamics structure; both remain available.
    Initial mean error states derive from the listed initial positions and
    velocities through error_state at k = 0; initial covariances are zero
    and both process noises are unit white.
    """
    t = 1.0
    leader_ref = leader_reference()
    follower_ref = follower_reference()
    leader_eta0 = np.array([8.0, 6.0, 1.5])
    leader_nu0 = np.array([1.0, 2.0, 0.5])
    follower_eta0 = np.array([6.0, 4.0, 1.0])
    follower_nu0 = np.array([2.1, 1.4, 0.3])
    z0 = error_state(leader_eta0, leader_nu0, leader_ref, 0, t)
    z1 = error_state(follower_eta0, follower_nu0, follower_ref, 0, t)
    model = make_model(a00=_A_Z00, a10=_A_Z10, a11=_A_Z11,
                       b00=_B_Z00, b10=_B_Z10, b11=_B_Z11,
                       sigma_w0=np.eye(6), sigma_w1=np.eye(6),
                       xbar0=z0, xbar1=z1,
                       sigma_x0=np.zeros((6, 6)), sigma_x1=np.zeros((6, 6)))
    cost = make_cost(q=np.eye(12), r=np.eye(6), p_terminal=None, gamma=0.9)
    return AuvExample(model=model, cost=cost,
                      leader=leader_params(), follower=follower_params(),
                      leader_ref=leader_ref, follower_ref=follower_ref, t=t,
                      leader_eta0=leader_eta0, leader_nu0=leader_nu0,
                      follower_eta0=follower_eta0, follower_nu0=follower_nu0)
