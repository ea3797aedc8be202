"""Membership tests for gradient-descent (Class-O) and primal-dual (Class-S)
systems, and the constructions that recover the underlying problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    FunctionClassParams,
    LtiSystem,
    PartitionedLtiSystem,
    QuadraticObjectiveO,
    SaddleProblem,
    Stability,
    eigen_clusters,
    fixed_point,
    matrix_to_json,
    spectrum,
    stability_verdict,
)
from .errors import Degenerate, DegenerateObjective, InconsistentScaling, NotInClass
from .tolerances import Tolerances, get_tolerances

# Reason codes, in the order the conditions are checked.
NO_FIXED_POINT = "no fixed point"
UNSTABLE = "unstable"
COMPLEX_SPECTRUM = "complex spectrum"
NOT_DIAGONALIZABLE = "not diagonalizable"
COMPLEX_BLOCK = "complex block spectrum"
POSITIVE_BLOCK = "positive block eigenvalue"
BLOCK_NOT_DIAGONALIZABLE = "block not diagonalizable"
COUPLING_INFEASIBLE = "coupling infeasible"


@dataclass(frozen=True)
class Witness:
    """Negative definite ``V1``, ``V2`` solving the coupling equations."""

    V1: np.ndarray
    V2: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    Lam1: np.ndarray
    Lam2: np.ndarray
    residual: float
    commute_residual: float
    max_eig: float

    def to_dict(self) -> dict:
        return {
            "V1": matrix_to_json(self.V1), "V2": matrix_to_json(self.V2),
            "residual": self.residual, "commute_residual": self.commute_residual,
            "max_eig": self.max_eig,
        }


@dataclass(frozen=True)
class ClassVerdict:
    member: bool
    kind: str
    reasons: tuple[str, ...] = ()
    partition: tuple[int, int] | None = None
    witness: Witness | None = None
    details: dict = field(default_factory=dict)

    @property
    def reason(self) -> str | None:
        return self.reasons[0] if self.reasons else None

    def to_dict(self) -> dict:
        out = {"class": self.kind, "member": self.member, "reasons": list(self.reasons)}
        if self.partition is not None:
            out["partition"] = list(self.partition)
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        out.update(self.details)
        return out


def _fixed_point_exists(sys: LtiSystem, tol) -> bool:
    try:
        fixed_point(sys, tol=tol)
    except Degenerate:
        return False
    return True


# --------------------------------------------------------------------------
# Class-O

def classify_O(sys: LtiSystem, tol: Tolerances | None = None) -> ClassVerdict:
    """Fixed point exists, stable, and ``I - A`` real and diagonalizable."""
    tol = get_tolerances(tol)
    if not _fixed_point_exists(sys, tol):
        return ClassVerdict(False, "O", (NO_FIXED_POINT,))
    verdict = stability_verdict(sys, tol)
    if verdict is Stability.UNSTABLE:
        return ClassVerdict(False, "O", (UNSTABLE,))
    rep = spectrum(np.eye(sys.n) - sys.A, tol)
    if not rep.real:
        return ClassVerdict(False, "O", (COMPLEX_SPECTRUM,))
    if not rep.diagonalizable:
        return ClassVerdict(False, "O", (NOT_DIAGONALIZABLE,))
    return ClassVerdict(True, "O", details={"stability": verdict.value})


def reverse_engineer_O(sys: LtiSystem, tol: Tolerances | None = None) -> QuadraticObjectiveO:
    """Recover ``(P, Q, r)`` with ``A = I - PQ`` and ``Cw = -P r``.

    From ``I - A = J Lam J^-1``: ``P = J J'`` and ``Q = J^-T Lam J^-1``.
    """
    tol = get_tolerances(tol)
    verdict = classify_O(sys, tol)
    if not verdict.member:
        raise NotInClass(f"system is not Class-O: {verdict.reason}")
    rep = spectrum(np.eye(sys.n) - sys.A, tol)
    J, Lam = rep.J, rep.Lam
    Jinv = np.linalg.inv(J)
    P = J @ J.T
    Q = Jinv.T @ np.diag(Lam) @ Jinv
    P, Q = 0.5 * (P + P.T), 0.5 * (Q + Q.T)
    r = -np.linalg.solve(P, sys.forcing())
    obj = QuadraticObjectiveO(Q, r, P)
    err = np.linalg.norm(np.eye(sys.n) - P @ Q - sys.A)
    if err > tol.recon * max(1.0, np.linalg.norm(sys.A)):
        raise NotInClass(f"reconstruction residual {err:.3e} exceeds tolerance")
    return obj


# --------------------------------------------------------------------------
# Class-S

def _symmetric_block_basis(groups: list[np.ndarray], n: int) -> list[np.ndarray]:
    """Basis of symmetric matrices that are block diagonal over ``groups``."""
    basis = []
    for g in groups:
        for a_pos, a in enumerate(g):
            for b in g[a_pos:]:
                E = np.zeros((n, n))
                E[a, b] = E[b, a] = 1.0
                basis.append(E)
    return basis


def _assemble(basis, coeffs, n) -> np.ndarray:
    V = np.zeros((n, n))
    for c, E in zip(coeffs, basis):
        V += c * E
    return V


def _coupling_residual(W1, W2, A12, A21) -> np.ndarray:
    return W1 @ A12 + A21.T @ W2


def _solve_coupling_sdp(N, basis1, basis2, n1, n2):
    """Maximise the negative-definiteness margin over the null-space coordinates."""
    import cvxpy as cp

    y = cp.Variable(N.shape[1])
    t = cp.Variable()
    coeffs = N @ y
    p1 = len(basis1)
    V1 = sum(coeffs[j] * basis1[j] for j in range(p1))
    V2 = sum(coeffs[p1 + j] * basis2[j] for j in range(len(basis2)))
    cons = [
        0.5 * (V1 + V1.T) << -t * np.eye(n1),
        0.5 * (V2 + V2.T) << -t * np.eye(n2),
        cp.norm(y, 2) <= 1,
    ]
    prob = cp.Problem(cp.Maximize(t), cons)
    for solver in ("CLARABEL", "SCS"):
        try:
            prob.solve(solver=solver)
        except (cp.error.SolverError, ValueError):
            continue
        if y.value is not None and prob.status in ("optimal", "optimal_inaccurate"):
            return N @ y.value
    return None


def find_coupling_witness(psys: PartitionedLtiSystem, J1, Lam1, J2, Lam2,
                          tol: Tolerances | None = None) -> Witness | None:
    """Search for ``V1, V2 < 0`` commuting with ``Lam1, Lam2`` that solve
    ``J1^-T V1 J1^-1 A12 + A21' J2^-T V2 J2^-1 = 0``."""
    tol = get_tolerances(tol)
    n1, n2 = psys.n1, psys.n2
    A12, A21 = psys.A12, psys.A21
    J1i, J2i = np.linalg.inv(J1), np.linalg.inv(J2)
    g1 = eigen_clusters(Lam1, float(np.max(np.abs(Lam1), initial=0.0)), tol)
    g2 = eigen_clusters(Lam2, float(np.max(np.abs(Lam2), initial=0.0)), tol)
    basis1 = _symmetric_block_basis(g1, n1)
    basis2 = _symmetric_block_basis(g2, n2)

    cols = [(J1i.T @ E @ J1i @ A12).ravel() for E in basis1]
    cols += [(A21.T @ J2i.T @ E @ J2i).ravel() for E in basis2]
    M = np.column_stack(cols)
    scale = max(1.0, np.linalg.norm(M, 2))
    N = scipy.linalg.null_space(M, rcond=1e-12)
    if N.shape[1] == 0:
        return None

    def build(coeffs):
        V1 = _assemble(basis1, coeffs[: len(basis1)], n1)
        V2 = _assemble(basis2, coeffs[len(basis1):], n2)
        norm = max(np.abs(V1).max(), np.abs(V2).max())
        if norm == 0:
            return None
        V1, V2 = V1 / norm, V2 / norm
        W1 = J1i.T @ V1 @ J1i
        W2 = J2i.T @ V2 @ J2i
        res = float(np.linalg.norm(_coupling_residual(W1, W2, A12, A21)))
        comm = float(max(np.linalg.norm(V1 * Lam1 - Lam1[:, None] * V1),
                         np.linalg.norm(V2 * Lam2 - Lam2[:, None] * V2)))
        e1 = np.linalg.eigvalsh(V1).max()
        e2 = np.linalg.eigvalsh(V2).max()
        margin_ok = (e1 <= -1e-6 * np.linalg.norm(V1, 2)) and (e2 <= -1e-6 * np.linalg.norm(V2, 2))
        if margin_ok and res <= tol.feas * scale:
            return Witness(V1, V2, J1, J2, Lam1, Lam2, res, comm, float(max(e1, e2)))
        return None

    # Least-squares projection of (-I, -I) onto the feasible subspace.
    target = np.concatenate([
        [-1.0 if np.count_nonzero(E) == 1 else 0.0 for E in basis1],
        [-1.0 if np.count_nonzero(E) == 1 else 0.0 for E in basis2],
    ])
    w = build(N @ (N.T @ target))
    if w is not None:
        return w
    coeffs = _solve_coupling_sdp(N, basis1, basis2, n1, n2)
    return None if coeffs is None else build(coeffs)


def _block_factors(M, tol):
    """Real diagonal factors of a diagonal block or a reason code."""
    rep = spectrum(M, tol)
    if not rep.real:
        return None, COMPLEX_BLOCK
    if np.any(rep.eigenvalues.real > tol.real * max(1.0, np.abs(rep.eigenvalues).max())):
        return None, POSITIVE_BLOCK
    if not rep.diagonalizable:
        return None, BLOCK_NOT_DIAGONALIZABLE
    return rep, None


def classify_S(psys: PartitionedLtiSystem, tol: Tolerances | None = None) -> ClassVerdict:
    """Fixed point, stability, block spectra, and the coupling witness."""
    tol = get_tolerances(tol)
    part = (psys.n1, psys.n2)
    if not _fixed_point_exists(psys.base, tol):
        return ClassVerdict(False, "S", (NO_FIXED_POINT,), part)
    verdict = stability_verdict(psys.base, tol)
    if verdict is Stability.UNSTABLE:
        return ClassVerdict(False, "S", (UNSTABLE,), part)
    rep1, why = _block_factors(psys.A11 - np.eye(psys.n1), tol)
    if why:
        return ClassVerdict(False, "S", (why,), part)
    rep2, why = _block_factors(psys.A22 - np.eye(psys.n2), tol)
    if why:
        return ClassVerdict(False, "S", (why,), part)
    witness = find_coupling_witness(psys, rep1.J, rep1.Lam, rep2.J, rep2.Lam, tol)
    if witness is None:
        return ClassVerdict(False, "S", (COUPLING_INFEASIBLE,), part)
    return ClassVerdict(True, "S", (), part, witness, {"stability": verdict.value})


def reverse_engineer_S(psys: PartitionedLtiSystem, eps1: float = 1.0, eps2: float = 1.0,
                       tol: Tolerances | None = None) -> SaddleProblem:
    """Read a primal-dual gradient iteration off a partitioned system.

    The state is ``(lam, x)`` with ``lam`` first. The primal row gives
    ``B = -A21'/eps1`` and ``Q22 = (I - A22)/eps1``; the dual row must read
    ``A12 = eps2 * S * B`` for a symmetric positive definite dual metric ``S``.
    """
    tol = get_tolerances(tol)
    if np.linalg.norm(psys.A11 - np.eye(psys.n1)) > tol.recon:
        raise NotInClass("A11 must equal the identity for a primal-dual reading")
    verdict = classify_S(psys, tol)
    if not verdict.member:
        raise NotInClass(f"system is not Class-S: {verdict.reason}")

    B = -psys.A21.T / eps1
    Q22 = (np.eye(psys.n2) - psys.A22) / eps1
    scale = max(1.0, np.linalg.norm(psys.base.A))
    if np.linalg.norm(Q22 - Q22.T) > tol.recon * scale:
        raise InconsistentScaling("primal block is not symmetric; only an identity primal metric is supported")
    Q22 = 0.5 * (Q22 + Q22.T)

    S = psys.A12 @ np.linalg.pinv(B) / eps2
    if np.linalg.norm(eps2 * S @ B - psys.A12) > tol.recon * scale:
        raise InconsistentScaling("dual row is not a scaling of the primal coupling")
    if np.linalg.norm(S - S.T) > tol.recon * max(1.0, np.linalg.norm(S)):
        raise InconsistentScaling("dual scaling is not symmetric")
    S = 0.5 * (S + S.T)
    if np.linalg.eigvalsh(S).min() <= 0:
        raise InconsistentScaling("dual scaling is not positive definite")

    c1, c2 = psys.forcing_blocks()
    b = -np.linalg.solve(S, c1) / eps2
    r = -c2 / eps1
    eye = np.eye(psys.n1)
    metric = None if np.allclose(S, eye, atol=tol.recon, rtol=0) else S
    return SaddleProblem(Q22, r, B, b, eps1, eps2, metric)


# --------------------------------------------------------------------------

def extract_params(obj: QuadraticObjectiveO | SaddleProblem) -> FunctionClassParams:
    """``mu`` and ``L`` from the extreme Hessian eigenvalues."""
    if isinstance(obj, QuadraticObjectiveO):
        H = obj.scaled_hessian()
    elif isinstance(obj, SaddleProblem):
        H = obj.Q22
    else:
        H = np.asarray(obj, dtype=float)
    H = 0.5 * (H + H.T)
    w = np.linalg.eigvalsh(H)
    L = float(w[-1])
    if L <= 0:
        raise DegenerateObjective(f"largest Hessian eigenvalue {L:.3e} is not positive")
    mu = float(w[0])
    mu = 0.0 if mu <= get_tolerances().psd * max(1.0, L) else mu
    return FunctionClassParams(mu, L)
