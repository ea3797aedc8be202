"""System and problem data types, fixed points and spectral utilities."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .errors import Degenerate, SingularHessian
from .tolerances import Tolerances, get_tolerances


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# JSON helpers

def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "data": M.ravel().tolist()}


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols, data = obj["rows"], obj["cols"], obj["data"]
    if len(data) != rows * cols:
        raise ValueError(f"matrix data has {len(data)} entries, expected {rows}x{cols}")
    return np.array(data, dtype=float).reshape(rows, cols)


def vector_to_json(v) -> list:
    return np.asarray(v, dtype=float).ravel().tolist()


# --------------------------------------------------------------------------
# Domain types

@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time iteration ``x_{k+1} = A x_k + C w``."""

    A: np.ndarray
    C: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        C = _frozen(np.atleast_2d(self.C) if np.ndim(self.C) else self.C, 2, "C")
        w = _frozen(np.atleast_1d(self.w), 1, "w")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if C.shape[0] != A.shape[0]:
            raise ValueError(f"C has {C.shape[0]} rows, A has dimension {A.shape[0]}")
        if w.shape[0] != C.shape[1]:
            raise ValueError(f"w has length {w.shape[0]}, C has {C.shape[1]} columns")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "w", w)

    @classmethod
    def affine(cls, A, c) -> "LtiSystem":
        """System with ``C = I`` so that ``w`` is the constant forcing itself."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls(A, np.eye(c.size), c)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    def forcing(self, w=None) -> np.ndarray:
        return self.C @ (self.w if w is None else np.asarray(w, dtype=float))

    # Plant protocol used by the simulator.
    def initial_inputs(self) -> dict:
        return {"w": self.w}

    def step(self, x, inputs: dict | None = None, lag=None) -> np.ndarray:
        """One iteration. ``lag = (x_old, same)`` reads entries with
        ``same[i, j]`` false from the delayed state ``x_old``."""
        w = self.w if inputs is None else inputs["w"]
        if lag is None:
            return self.A @ x + self.C @ w
        x_old, same = lag
        return np.where(same, self.A, 0.0) @ x + np.where(same, 0.0, self.A) @ x_old + self.C @ w

    def apply_event(self, inputs: dict, mutation: dict) -> dict:
        unknown = set(mutation) - {"w"}
        if unknown:
            raise ValueError(f"linear system accepts only 'w' events, got {sorted(unknown)}")
        w = np.asarray(mutation["w"], dtype=float)
        if w.shape != self.w.shape:
            raise ValueError(f"event w has shape {w.shape}, expected {self.w.shape}")
        return {"w": w}

    def input_keys(self) -> tuple[str, ...]:
        return ("w",)

    def partition(self, n1: int) -> "PartitionedLtiSystem":
        return PartitionedLtiSystem(self, n1)

    def to_dict(self) -> dict:
        return {"A": matrix_to_json(self.A), "C": matrix_to_json(self.C), "w": vector_to_json(self.w)}

    @classmethod
    def from_dict(cls, obj: dict) -> "LtiSystem":
        return cls(matrix_from_json(obj["A"]), matrix_from_json(obj["C"]), obj["w"])


@dataclass(frozen=True)
class PartitionedLtiSystem:
    """An :class:`LtiSystem` with its state split as ``(x1, x2)``, ``x1`` first."""

    base: LtiSystem
    n1: int

    def __post_init__(self):
        if not 0 < self.n1 < self.base.n:
            raise ValueError(f"n1={self.n1} must lie strictly between 0 and n={self.base.n}")

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def n2(self) -> int:
        return self.base.n - self.n1

    @property
    def A11(self):
        return self.base.A[: self.n1, : self.n1]

    @property
    def A12(self):
        return self.base.A[: self.n1, self.n1:]

    @property
    def A21(self):
        return self.base.A[self.n1:, : self.n1]

    @property
    def A22(self):
        return self.base.A[self.n1:, self.n1:]

    def forcing_blocks(self, w=None) -> tuple[np.ndarray, np.ndarray]:
        c = self.base.forcing(w)
        return c[: self.n1], c[self.n1:]

    # Delegate the plant protocol.
    def initial_inputs(self) -> dict:
        return self.base.initial_inputs()

    def step(self, x, inputs=None, lag=None):
        return self.base.step(x, inputs, lag)

    def apply_event(self, inputs, mutation):
        return self.base.apply_event(inputs, mutation)

    def input_keys(self):
        return self.base.input_keys()

    @property
    def A(self):
        return self.base.A

    def to_dict(self) -> dict:
        return {**self.base.to_dict(), "partition": self.n1}


@dataclass(frozen=True)
class FunctionClassParams:
    """Strong convexity ``mu`` and gradient Lipschitz constant ``L_lip``."""

    mu: float
    L_lip: float

    def __post_init__(self):
        if self.mu < 0 or self.L_lip < 0:
            raise ValueError("mu and L_lip must be nonnegative")
        if self.mu > self.L_lip * (1 + 1e-12):
            raise ValueError(f"mu={self.mu} exceeds L_lip={self.L_lip}")

    @property
    def kappa(self) -> float:
        return self.L_lip / self.mu if self.mu > 0 else math.inf

    @property
    def strongly_convex(self) -> bool:
        return self.mu > 0

    def to_dict(self) -> dict:
        return {"mu": self.mu, "L_lip": self.L_lip, "kappa": None if math.isinf(self.kappa) else self.kappa}


@dataclass(frozen=True)
class QuadraticObjectiveO:
    """``f(x) = 1/2 x'Qx + x'r`` minimised by ``x+ = x - P grad f(x)``."""

    Q: np.ndarray
    r: np.ndarray
    P: np.ndarray
    eps_nominal: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "Q", _frozen(self.Q, 2, "Q"))
        object.__setattr__(self, "r", _frozen(np.atleast_1d(self.r), 1, "r"))
        object.__setattr__(self, "P", _frozen(self.P, 2, "P"))
        n = self.Q.shape[0]
        if self.Q.shape != (n, n) or self.P.shape != (n, n) or self.r.shape != (n,):
            raise ValueError(f"inconsistent shapes Q{self.Q.shape} P{self.P.shape} r{self.r.shape}")
        tol = get_tolerances()
        for M, name in ((self.Q, "Q"), (self.P, "P")):
            if not _is_symmetric(M, 1e-10):
                raise ValueError(f"{name} must be symmetric")
        scale = max(1.0, float(np.abs(self.Q).max()))
        if np.linalg.eigvalsh(self.Q)[0] < -tol.psd * scale:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.P)[0] <= 0:
            raise ValueError("P must be positive definite")
        if self.eps_nominal <= 0:
            raise ValueError("eps_nominal must be positive")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ self.Q @ x + x @ self.r

    def gradient(self, x) -> np.ndarray:
        return self.Q @ x + self.r

    def scaled_hessian(self) -> np.ndarray:
        """``P^{1/2} Q P^{1/2}``, similar to ``PQ = I - A``."""
        Ph = _sym_sqrt(self.P)
        H = Ph @ self.Q @ Ph
        return 0.5 * (H + H.T)

    def to_system(self) -> LtiSystem:
        """The gradient iteration ``x - P(Qx + r)`` as an :class:`LtiSystem`."""
        n = self.n
        return LtiSystem.affine(np.eye(n) - self.eps_nominal * self.P @ self.Q,
                                -self.eps_nominal * self.P @ self.r)

    def to_dict(self) -> dict:
        return {"Q": matrix_to_json(self.Q), "r": vector_to_json(self.r),
                "P": matrix_to_json(self.P), "eps_nominal": self.eps_nominal}


@dataclass(frozen=True)
class SaddleProblem:
    """``max_lam min_x  1/2 x'Q22 x + r'x + lam'(Bx - b)``.

    ``dual_metric`` is a symmetric positive definite ``S`` scaling the dual
    step, ``lam+ = lam + eps2 * S (Bx - b)``; identity for the plain method.
    """

    Q22: np.ndarray
    r: np.ndarray
    B: np.ndarray
    b: np.ndarray
    eps1: float = 1.0
    eps2: float = 1.0
    dual_metric: np.ndarray | None = None

    def __post_init__(self):
        Q = _frozen(self.Q22, 2, "Q22")
        B = _frozen(np.atleast_2d(self.B), 2, "B")
        r = _frozen(np.atleast_1d(self.r), 1, "r")
        b = _frozen(np.atleast_1d(self.b), 1, "b")
        if Q.shape != (B.shape[1], B.shape[1]) or r.shape[0] != B.shape[1] or b.shape[0] != B.shape[0]:
            raise ValueError(f"inconsistent shapes Q22{Q.shape} r{r.shape} B{B.shape} b{b.shape}")
        S = np.eye(B.shape[0]) if self.dual_metric is None else self.dual_metric
        object.__setattr__(self, "Q22", Q)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "dual_metric", _frozen(S, 2, "dual_metric"))
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("step sizes must be positive")

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def plain_dual(self) -> bool:
        return bool(np.array_equal(self.dual_metric, np.eye(self.m)))

    def objective(self, x) -> float:
        return 0.5 * x @ self.Q22 @ x + self.r @ x

    def kkt_solution(self) -> tuple[np.ndarray, np.ndarray]:
        """Saddle point ``(x*, lam*)``; least-squares when B is rank deficient."""
        m, n = self.m, self.n
        K = np.block([[self.Q22, self.B.T], [self.B, np.zeros((m, m))]])
        rhs = np.concatenate([-self.r, self.b])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:n], sol[n:]

    def conjugate_argmin(self, lam) -> np.ndarray:
        """Minimiser of ``f(x) + lam'Bx``, i.e. the conjugate gradient at ``-B'lam``."""
        try:
            return np.linalg.solve(self.Q22, -(self.r + self.B.T @ lam))
        except np.linalg.LinAlgError:
            raise SingularHessian("Q22 is singular; conjugate gradient map undefined") from None

    def to_system(self) -> PartitionedLtiSystem:
        """Primal-dual gradient iteration on the state ``(lam, x)``."""
        m, n = self.m, self.n
        S = self.dual_metric
        A = np.block([
            [np.eye(m), self.eps2 * S @ self.B],
            [-self.eps1 * self.B.T, np.eye(n) - self.eps1 * self.Q22],
        ])
        c = np.concatenate([-self.eps2 * S @ self.b, -self.eps1 * self.r])
        return PartitionedLtiSystem(LtiSystem.affine(A, c), m)

    def to_dict(self) -> dict:
        return {"Q22": matrix_to_json(self.Q22), "r": vector_to_json(self.r),
                "B": matrix_to_json(self.B), "b": vector_to_json(self.b),
                "eps1": self.eps1, "eps2": self.eps2,
                "dual_metric": matrix_to_json(self.dual_metric)}


@dataclass
class Trajectory:
    """Recorded rollout. ``states[k]`` is the state at step ``k``."""

    states: np.ndarray
    aux: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)
    diverged_at: int | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise ValueError("states must be a (steps+1, n) array")

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# --------------------------------------------------------------------------
# Operations

@dataclass(frozen=True)
class FixedPoint:
    x: np.ndarray
    unique: bool


def fixed_point(sys: LtiSystem, w=None, tol: Tolerances | None = None) -> FixedPoint:
    """Minimum-norm solution of ``(I - A) x = C w``.

    Raises :class:`Degenerate` if ``C w`` is not in the range of ``I - A``.
    """
    tol = get_tolerances(tol)
    M = np.eye(sys.n) - sys.A
    c = sys.forcing(w)
    U, s, Vt = np.linalg.svd(M)
    cutoff = tol.rank * (s[0] if s.size and s[0] > 0 else 1.0)
    keep = s > cutoff
    coeffs = U.T @ c
    x = Vt[keep].T @ (coeffs[keep] / s[keep])
    residual = np.linalg.norm(M @ x - c)
    if residual > 1e-10 * (1 + np.linalg.norm(c)) * max(1.0, s[0] if s.size else 1.0):
        raise Degenerate(f"C w lies outside range(I - A): residual {residual:.3e}")
    return FixedPoint(x, unique=bool(keep.all()))


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    diagonalizable: bool
    real: bool
    J: np.ndarray | None = None
    Lam: np.ndarray | None = None
    eigvec_cond: float = math.inf

    def reconstruct(self) -> np.ndarray:
        """``J Lam J^-1``; complex factors are only present for complex spectra."""
        if self.J is None:
            raise ValueError("matrix is not diagonalizable")
        M = self.J @ np.diag(self.Lam) @ np.linalg.inv(self.J)
        return M.real if self.real else M


def _sym_sqrt(P) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def _is_symmetric(M, rtol=1e-12) -> bool:
    return np.allclose(M, M.T, rtol=0, atol=rtol * max(1.0, np.abs(M).max()))


def eigen_clusters(eigenvalues, scale: float, tol: Tolerances) -> list[np.ndarray]:
    """Group eigenvalues closer than ``tol.cluster * max(1, scale)`` (single linkage)."""
    lam = np.asarray(eigenvalues)
    order = np.lexsort((lam.imag, lam.real))
    radius = tol.cluster * max(1.0, scale)
    groups: list[list[int]] = []
    for i in order:
        for g in groups:
            if np.min(np.abs(lam[g] - lam[i])) <= radius:
                g.append(int(i))
                break
        else:
            groups.append([int(i)])
    return [np.array(sorted(g)) for g in groups]


def _geometric_deficit(M, lam, idx, scale, tol) -> bool:
    """True when a cluster has fewer independent eigenvectors than members."""
    if idx.size == 1:
        return False
    centre = lam[idx].mean()
    spread = np.max(np.abs(lam[idx] - centre))
    s = np.linalg.svd(M - centre * np.eye(M.shape[0]), compute_uv=False)
    threshold = 10.0 * spread + tol.rank * max(1.0, scale)
    return int(np.sum(s <= threshold)) < idx.size


def spectrum(M, tol: Tolerances | None = None) -> SpectrumReport:
    """Eigenvalues, diagonalisability verdict and real factors ``M = J Lam J^-1``."""
    tol = get_tolerances(tol)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectrum needs a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = float(np.linalg.norm(M, 2)) if M.size else 0.0

    if _is_symmetric(M):
        lam, J = np.linalg.eigh(0.5 * (M + M.T))
        return SpectrumReport(lam.astype(complex), True, True, J, lam, 1.0)

    lam, V = np.linalg.eig(M)
    clusters = eigen_clusters(lam, scale, tol)
    # A defective real eigenvalue splits into a conjugate pair under rounding,
    # so realness is judged on cluster means.
    real = all(abs(lam[g].mean().imag) <= tol.real * (1 + abs(lam[g].mean())) for g in clusters)
    defective = any(_geometric_deficit(M, lam, g, scale, tol) for g in clusters)
    cond = float(np.linalg.cond(V))

    if defective:
        return SpectrumReport(lam, False, real, eigvec_cond=cond)
    if not real:
        if cond <= tol.diag:
            return SpectrumReport(lam, True, False, V, lam, cond)
        return SpectrumReport(lam, False, False, eigvec_cond=cond)

    lam_r = lam.real
    candidates = [(np.real(V), lam_r)]
    if any(g.size > 1 for g in clusters):
        candidates.append(_cluster_basis(M, lam_r, clusters))
    for J, Lam in candidates:
        J = J / np.linalg.norm(J, axis=0)
        c = float(np.linalg.cond(J))
        if c > tol.diag:
            continue
        err = np.linalg.norm(J @ np.diag(Lam) @ np.linalg.inv(J) - M)
        if err <= tol.recon * max(1.0, scale):
            return SpectrumReport(lam_r.astype(complex), True, True, J, Lam, c)
    return SpectrumReport(lam, False, True, eigvec_cond=cond)


def _cluster_basis(M, lam, clusters):
    """Eigenbasis built cluster-by-cluster from null spaces of ``M - centre I``."""
    n = M.shape[0]
    cols, vals = [], []
    for g in clusters:
        centre = lam[g].mean()
        _, _, Vt = np.linalg.svd(M - centre * np.eye(n))
        N = Vt[-g.size:].T
        T = np.linalg.lstsq(N, M @ N, rcond=None)[0]
        t, W = np.linalg.eig(T)
        cols.append(np.real(N @ W))
        vals.append(np.real(t))
    return np.hstack(cols), np.concatenate(vals)


class Stability(enum.Enum):
    ASYMPTOTIC = "Asymptotic"
    MARGINAL = "Marginal"
    UNSTABLE = "Unstable"


def stability_verdict(sys, tol: Tolerances | None = None) -> Stability:
    """Spectral radius <= 1 with semisimple unit-circle eigenvalues."""
    tol = get_tolerances(tol)
    A = sys.A if hasattr(sys, "A") else np.asarray(sys, dtype=float)
    lam = np.linalg.eigvals(A)
    mod = np.abs(lam)
    if np.all(mod < 1 - tol.unit):
        return Stability.ASYMPTOTIC
    if np.any(mod > 1 + tol.unit):
        return Stability.UNSTABLE
    on_circle = np.flatnonzero(np.abs(mod - 1) <= tol.unit)
    scale = float(np.linalg.norm(A, 2))
    for g in eigen_clusters(lam[on_circle], scale, tol):
        if _geometric_deficit(A, lam, on_circle[g], scale, tol):
            return Stability.UNSTABLE
    return Stability.MARGINAL


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def null_space(M, rtol: float = 1e-10) -> np.ndarray:
    return scipy.linalg.null_space(np.atleast_2d(M), rcond=rtol)
