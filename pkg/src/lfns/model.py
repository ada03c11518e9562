"""Two-agent leader-follower linear system: types, validation, dynamics.

The follower is driven by the leader state and input, the leader is
autonomous.  Everything downstream (estimation, control synthesis,
simulation) consumes the types defined here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

PSD_TOL = -1e-9
PD_TOL = 1e-9


class SpecFormatError(ValueError):
    """Model-spec document cannot be parsed into model/cost structures."""


class ModelValidationError(ValueError):
    """Model-spec document parsed but failed admissibility validation."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def eigmin(m: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetrized matrix."""
    return float(np.linalg.eigvalsh(symmetrize(m)).min())


def is_psd(m: np.ndarray) -> bool:
    return eigmin(m) >= PSD_TOL


def is_pd(m: np.ndarray) -> bool:
    return eigmin(m) >= PD_TOL


def _matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 2:
        raise SpecFormatError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _vector(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise SpecFormatError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class LfnsModel:
    """Leader (agent 0) and follower (agent 1) dynamics plus noise statistics.

    x0(k+1) = a00 x0(k) + b00 u0(k) + w0(k)
    x1(k+1) = a11 x1(k) + b11 u1(k) + a10 x0(k) + b10 u0(k) + w1(k)

    Both agents share state dimension n; u0 has dimension m1, u1 has m2.
    Initial states are Gaussian with the given means and covariances, and
    the noises w0, w1 are mutually independent zero-mean Gaussians.
    """

    a00: np.ndarray
    a10: np.ndarray
    a11: np.ndarray
    b00: np.ndarray
    b10: np.ndarray
    b11: np.ndarray
    sigma_w0: np.ndarray
    sigma_w1: np.ndarray
    xbar0: np.ndarray
    xbar1: np.ndarray
    sigma_x0: np.ndarray
    sigma_x1: np.ndarray
    n: int
    m1: int
    m2: int


@dataclass(frozen=True, eq=False)
class CompactModel:
    """Aggregated form X(k+1) = a X(k) + b U(k) + W(k).

    a and b are lower block-triangular; the zero blocks are exact zeros,
    they encode that the leader never sees follower state or input.  The
    block partition (n, m1, m2) is carried along so stacked gains can be
    split back into decentralized blocks.
    """

    a: np.ndarray
    b: np.ndarray
    sigma_w: np.ndarray
    n: int
    m1: int
    m2: int


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Quadratic stage cost X'qX + U'rU with optional terminal weight and discount."""

    q: np.ndarray
    r: np.ndarray
    p_terminal: np.ndarray | None
    gamma: float | None


def make_model(a00, a10, a11, b00, b10, b11, sigma_w0=None, sigma_w1=None,
               xbar0=None, xbar1=None, sigma_x0=None, sigma_x1=None) -> LfnsModel:
    """Build an LfnsModel from array-likes, defaulting moments to zero.

    Covariances are symmetrized here once; validate() reports semantic
    problems (PSD failures, dimension mismatches between blocks).
    """
    a00 = _matrix(a00, "a00")
    if a00.shape[0] != a00.shape[1]:
        raise SpecFormatError(f"a00 must be square, got {a00.shape}")
    n = a00.shape[0]
    a10 = _matrix(a10, "a10")
    a11 = _matrix(a11, "a11")
    b00 = _matrix(b00, "b00")
    b10 = _matrix(b10, "b10")
    b11 = _matrix(b11, "b11")
    m1 = b00.shape[1]
    m2 = b11.shape[1]

    def cov(value, name):
        if value is None:
            return np.zeros((n, n))
        return symmetrize(_matrix(value, name))

    def mean(value, name):
        if value is None:
            return np.zeros(n)
        return _vector(value, name)

    return LfnsModel(
        a00=a00, a10=a10, a11=a11, b00=b00, b10=b10, b11=b11,
        sigma_w0=cov(sigma_w0, "sigma_w0"), sigma_w1=cov(sigma_w1, "sigma_w1"),
        xbar0=mean(xbar0, "xbar0"), xbar1=mean(xbar1, "xbar1"),
        sigma_x0=cov(sigma_x0, "sigma_x0"), sigma_x1=cov(sigma_x1, "sigma_x1"),
        n=n, m1=m1, m2=m2)


def make_cost(q, r, p_terminal=None, gamma=None) -> CostSpec:
    q = symmetrize(_matrix(q, "q"))
    r = symmetrize(_matrix(r, "r"))
    if p_terminal is not None:
        p_terminal = symmetrize(_matrix(p_terminal, "p_terminal"))
    if gamma is not None:
        gamma = float(gamma)
    return CostSpec(q=q, r=r, p_terminal=p_terminal, gamma=gamma)


def validate(model: LfnsModel, cost: CostSpec | None = None) -> list[str]:
    """Admissibility diagnostics; empty list iff the model (and cost) check out.

    Returns human-readable violation strings rather than raising, so a CLI
    can surface all problems at once.
    """
    v: list[str] = []
    n, m1, m2 = model.n, model.m1, model.m2
    shape_req = [
        ("a10", model.a10, (n, n)), ("a11", model.a11, (n, n)),
        ("b00", model.b00, (n, m1)), ("b10", model.b10, (n, m1)),
        ("b11", model.b11, (n, m2)),
        ("sigma_w0", model.sigma_w0, (n, n)), ("sigma_w1", model.sigma_w1, (n, n)),
        ("sigma_x0", model.sigma_x0, (n, n)), ("sigma_x1", model.sigma_x1, (n, n)),
        ("xbar0", model.xbar0, (n,)), ("xbar1", model.xbar1, (n,)),
    ]
    for name, arr, want in shape_req:
        if arr.shape != want:
            v.append(f"dimension mismatch: {name} has shape {arr.shape}, expected {want}")
    if model.a11.shape == (n, n) and model.a11.shape != model.a00.shape:
        v.append("leader and follower must share the state dimension")
    for name, arr in [("sigma_w0", model.sigma_w0), ("sigma_w1", model.sigma_w1),
                      ("sigma_x0", model.sigma_x0), ("sigma_x1", model.sigma_x1)]:
        if arr.shape == (n, n) and not is_psd(arr):
            kind = "noise covariance" if name.startswith("sigma_w") else "initial covariance"
            v.append(f"{kind} not PSD: {name} has min eigenvalue {eigmin(arr):.3e}")
    if cost is not None:
        if cost.q.shape != (2 * n, 2 * n):
            v.append(f"dimension mismatch: q has shape {cost.q.shape}, expected {(2 * n, 2 * n)}")
        elif not is_psd(cost.q):
            v.append(f"Q not positive semidefinite: min eigenvalue {eigmin(cost.q):.3e}")
        m = m1 + m2
        if cost.r.shape != (m, m):
            v.append(f"dimension mismatch: r has shape {cost.r.shape}, expected {(m, m)}")
        elif not is_pd(cost.r):
            v.append(f"R not positive definite: min eigenvalue {eigmin(cost.r):.3e}")
        if cost.p_terminal is not None:
            if cost.p_terminal.shape != (2 * n, 2 * n):
                v.append(f"dimension mismatch: p_terminal has shape {cost.p_terminal.shape}, "
                         f"expected {(2 * n, 2 * n)}")
            elif not is_psd(cost.p_terminal):
                v.append(f"terminal weight not positive semidefinite: "
                         f"min eigenvalue {eigmin(cost.p_terminal):.3e}")
        if cost.gamma is not None and not (0.0 < cost.gamma < 1.0):
            v.append(f"gamma out of range (0, 1): {cost.gamma}")
    return v


def assemble_compact(model: LfnsModel) -> CompactModel:
    """Stack the two agents into the aggregated 2n-state form.

    The upper-right blocks of a and b are exact zeros by construction.
    """
    n, m1, m2 = model.n, model.m1, model.m2
    a = np.zeros((2 * n, 2 * n))
    a[:n, :n] = model.a00
    a[n:, :n] = model.a10
    a[n:, n:] = model.a11
    b = np.zeros((2 * n, m1 + m2))
    b[:n, :m1] = model.b00
    b[n:, :m1] = model.b10
    b[n:, m1:] = model.b11
    sigma_w = np.zeros((2 * n, 2 * n))
    sigma_w[:n, :n] = model.sigma_w0
    sigma_w[n:, n:] = model.sigma_w1
    return CompactModel(a=a, b=b, sigma_w=sigma_w, n=n, m1=m1, m2=m2)


def step(model: LfnsModel, x0, x1, u0, u1, w0, w1):
    """One dynamics step; the leader update never reads x1 or u1."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    x0_next = model.a00 @ x0 + model.b00 @ u0 + w0
    x1_next = model.a11 @ x1 + model.b11 @ u1 + model.a10 @ x0 + model.b10 @ u0 + w1
    return x0_next, x1_next


_MODEL_FIELDS = ["a00", "a10", "a11", "b00", "b10", "b11", "sigma_w0", "sigma_w1",
                 "xbar0", "xbar1", "sigma_x0", "sigma_x1"]


def model_to_dict(model: LfnsModel, cost: CostSpec) -> dict:
    doc = {"model": {f: getattr(model, f).tolist() for f in _MODEL_FIELDS},
           "cost": {"q": cost.q.tolist(), "r": cost.r.tolist()}}
    doc["cost"]["p_terminal"] = None if cost.p_terminal is None else cost.p_terminal.tolist()
    doc["cost"]["gamma"] = cost.gamma
    return doc


def model_from_dict(doc: dict) -> tuple[LfnsModel, CostSpec]:
    try:
        mdoc = doc["model"]
        cdoc = doc["cost"]
        model = make_model(**{f: mdoc[f] for f in _MODEL_FIELDS})
        cost = make_cost(cdoc["q"], cdoc["r"], cdoc.get("p_terminal"), cdoc.get("gamma"))
    except (KeyError, TypeError) as exc:
        raise SpecFormatError(f"malformed model spec: {exc}") from exc
    return model, cost


def load_model_spec(path) -> tuple[LfnsModel, CostSpec]:
    """Read and validate a JSON model-spec document.

    Raises SpecFormatError when the document cannot be parsed and
    ModelValidationError when it parses but is inadmissible.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecFormatError(f"cannot read model spec {path}: {exc}") from exc
    model, cost = model_from_dict(doc)
    violations = validate(model, cost)
    if violations:
        raise ModelValidationError(violations)
    return model, cost


def save_model_spec(path, model: LfnsModel, cost: CostSpec) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, cost), fh, indent=2, sort_keys=True)
        fh.write("\n")
