"""Convergence-rate certificates and the primal-dual potential monitor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import FunctionClassParams, SaddleProblem, Trajectory, spectral_radius
from .errors import NotApplicable, NotOrdered, RankDeficient, SingularHessian, StepSizeOutOfRange
from .tolerances import Tolerances, get_tolerances

THEOREMS = ("T3", "T4", "C1", "T5", "T6", "T7", "T9", "C2", "C3")

_REL = 1e-12  # relative slack when comparing a step size against its limit


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    worst_step: int | None
    worst_excess: float
    checked: int
    kind: str

    def to_dict(self) -> dict:
        return {"passed": self.passed, "worst_step": self.worst_step,
                "worst_excess": self.worst_excess, "checked": self.checked, "kind": self.kind}


def _compare(values, bounds, slack, start, kind) -> CheckResult:
    values = np.asarray(values, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    excess = values[start:] - bounds[start:] - slack
    if excess.size == 0:
        return CheckResult(True, None, -math.inf, 0, kind)
    i = int(np.argmax(excess))
    return CheckResult(bool(excess[i] <= 0), start + i, float(excess[i]), int(excess.size), kind)


@dataclass(frozen=True)
class RateCertificate:
    """A named bound. ``kind`` is ``geometric`` (ratio^k r0), ``inv_k``
    (C r0^2/(eps k)), ``inv_k2`` (C r0^2/(eps (k+1)^2)) or ``potential``."""

    theorem_id: str
    kind: str
    constants: dict
    applicability: str
    feasible: bool = True
    notes: tuple[str, ...] = ()

    @property
    def ratio(self) -> float:
        return self.constants["ratio"]

    def bound(self, k, r0: float):
        k = np.asarray(k, dtype=float)
        c = self.constants
        if self.kind in ("geometric", "potential"):
            return c["ratio"] ** k * r0
        if self.kind == "inv_k":
            with np.errstate(divide="ignore"):
                return np.where(k > 0, c["C"] * r0 ** 2 / (c["eps"] * np.maximum(k, 1)), np.inf)
        if self.kind == "inv_k2":
            return c["C"] * r0 ** 2 / (c["eps"] * (k + 1) ** 2)
        raise ValueError(self.kind)

    def check_errors(self, errors, start: int = 0, slack: float = 1e-10) -> CheckResult:
        """``errors[k] <= ratio^k errors[0] + slack`` for ``k >= start``."""
        if self.kind not in ("geometric", "potential"):
            raise NotApplicable(f"{self.theorem_id} bounds the objective gap, not the error")
        errors = np.asarray(errors, dtype=float)
        ks = np.arange(errors.size)
        return _compare(errors, self.bound(ks, errors[0]), slack, start, "error")

    def check_gaps(self, gaps, r0: float, start: int = 1, slack: float = 1e-10) -> CheckResult:
        """Objective gaps ``f(x_k) - f*`` against a sublinear bound."""
        if self.kind not in ("inv_k", "inv_k2"):
            raise NotApplicable(f"{self.theorem_id} is not a sublinear gap bound")
        gaps = np.asarray(gaps, dtype=float)
        ks = np.arange(gaps.size)
        return _compare(gaps, self.bound(ks, r0), slack, start, "gap")

    def check_spectral(self, M, slack: float = 1e-8) -> CheckResult:
        """Compare the radius of ``M`` (or a precomputed radius) with the ratio."""
        rho = float(M) if np.ndim(M) == 0 else spectral_radius(M)
        excess = rho - self.ratio - slack
        return CheckResult(bool(excess <= 0), None, float(excess), 1, "spectral")

    def check_potential(self, trace: "PotentialTrace", rel: float = 1e-12,
                        floor: float = 1e-9) -> CheckResult:
        """``V_{k+1} <= c V_k`` with relative slack.

        Steps where ``V_k`` has dropped below ``floor * V_0`` are skipped:
        there the iterates sit at rounding level and the ratio is noise.
        """
        V = trace.V
        c = self.constants["c"]
        live = V[:-1] > floor * V[0]
        lhs = np.where(live, V[1:], 0.0)
        rhs = c * V[:-1] * (1 + rel)
        return _compare(lhs, rhs, 0.0, 0, "potential")

    def to_dict(self) -> dict:
        return {"theorem": self.theorem_id, "kind": self.kind,
                "constants": {k: _jsonable(v) for k, v in self.constants.items()},
                "applicability": self.applicability, "feasible": self.feasible,
                "notes": list(self.notes)}


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return None
    return float(v) if isinstance(v, (int, float, np.floating)) else v


# --------------------------------------------------------------------------
# Class-O certificates

def gd_certificate(params: FunctionClassParams, eps: float, theorem: str | None = None) -> RateCertificate:
    """Plain gradient descent with step ``eps``.

    Picks the optimal-step corollary at ``eps = 2/(mu+L)``, the geometric
    bound below it, and the sublinear bound otherwise. ``theorem`` forces one.
    """
    mu, L = params.mu, params.L_lip
    if eps <= 0:
        raise StepSizeOutOfRange(f"step {eps} must be positive")
    opt = 2.0 / (mu + L)
    if theorem is None:
        if mu > 0 and abs(eps - opt) <= _REL * opt:
            theorem = "C1"
        elif mu > 0 and eps < opt:
            theorem = "T4"
        else:
            theorem = "T3"
    if theorem == "C1":
        if mu <= 0:
            raise NotApplicable("optimal-step rate needs mu > 0")
        if abs(eps - opt) > _REL * opt:
            raise StepSizeOutOfRange(f"C1 requires eps = 2/(mu+L) = {opt}, got {eps}")
        return RateCertificate("C1", "geometric", {"ratio": (L - mu) / (L + mu), "eps": eps, "mu": mu, "L": L},
                               "S_{mu,L}")
    if theorem == "T4":
        if mu <= 0:
            raise NotApplicable("geometric rate needs mu > 0")
        if eps > opt * (1 + _REL):
            raise StepSizeOutOfRange(f"T4 requires eps <= 2/(mu+L) = {opt}, got {eps}")
        return RateCertificate("T4", "geometric", {"ratio": 1.0 - mu * eps, "eps": eps, "mu": mu, "L": L},
                               "S_{mu,L}")
    if theorem == "T3":
        if eps >= 2.0 / L:
            raise StepSizeOutOfRange(f"T3 requires eps < 2/L = {2.0 / L}, got {eps}")
        notes = ()
        if eps > 1.0 / L:
            notes = ("bound is known to be loose-to-violated as eps approaches 2/L",)
        return RateCertificate("T3", "inv_k", {"C": 2.0, "eps": eps, "L": L}, "F_L", notes=notes)
    raise ValueError(f"not a gradient-descent theorem: {theorem}")


def hb_certificate(params: FunctionClassParams) -> RateCertificate:
    if params.mu <= 0:
        raise NotApplicable("heavy-ball rate needs mu > 0")
    sL, sm = math.sqrt(params.L_lip), math.sqrt(params.mu)
    return RateCertificate("T5", "geometric",
                           {"ratio": (sL - sm) / (sL + sm), "mu": params.mu, "L": params.L_lip,
                            "eps": 4.0 / (sL + sm) ** 2},
                           "S_{mu,L}, twice differentiable",
                           notes=("certified through the extended-matrix spectral radius",))


def agd_certificate(params: FunctionClassParams, schedule: str = "constant",
                    eps: float | None = None) -> RateCertificate:
    L = params.L_lip
    if schedule == "nesterov":
        eps = 1.0 / L if eps is None else eps
        if not 0 < eps <= (1.0 / L) * (1 + _REL):
            raise StepSizeOutOfRange(f"T6 requires 0 < eps <= 1/L = {1.0 / L}, got {eps}")
        return RateCertificate("T6", "inv_k2", {"C": 8.0 / 3.0, "eps": eps, "L": L}, "F_L")
    if schedule != "constant":
        raise ValueError(f"unknown schedule {schedule!r}")
    if params.mu <= 0:
        raise NotApplicable("constant-momentum AGD rate needs mu > 0")
    if eps is not None and abs(eps - 1.0 / L) > _REL / L:
        raise StepSizeOutOfRange(f"T7 requires eps = 1/L = {1.0 / L}, got {eps}")
    return RateCertificate("T7", "geometric",
                           {"ratio": 1.0 - math.sqrt(params.mu / L), "eps": 1.0 / L, "mu": params.mu, "L": L},
                           "S_{mu,L}",
                           notes=("certified through the extended-matrix spectral radius",))


# --------------------------------------------------------------------------
# Class-S certificates

def _singular_values(B) -> tuple[float, float]:
    B = np.atleast_2d(B)
    s = np.linalg.svd(B, compute_uv=False)
    if B.shape[0] > B.shape[1] or s.size < B.shape[0] or s[-1] <= 1e-10 * max(s[0], 1e-300):
        raise RankDeficient("constraint matrix B does not have full row rank")
    return float(s[0]), float(s[-1])


def _saddle_params(prob: SaddleProblem, params):
    if params is None:
        w = np.linalg.eigvalsh(prob.Q22)
        params = FunctionClassParams(max(float(w[0]), 0.0), float(w[-1]))
    if params.mu <= 0:
        raise NotApplicable("primal-dual rates need a strongly convex objective")
    return params


def gamma_default(mu, L, smax, smin) -> float:
    return mu ** 2 * smin ** 2 / (2.0 * L * smax ** 3)


def pdg_constants(mu, L, smax, smin, gamma, eps1, eps2) -> tuple[float, float]:
    c1 = 1 - mu * eps1 + eps2 * smax ** 2 / mu + eps2 * smax / gamma
    c2 = 1 - eps2 * smin ** 2 / L + eps2 * gamma * smax ** 3 / mu ** 2
    return c1, c2


def pdg_certificate(prob: SaddleProblem, params: FunctionClassParams | None = None, gamma: float | None = None,
                    eps1: float | None = None, eps2: float | None = None) -> RateCertificate:
    """Potential decay ``V_{k+1} <= c V_k`` for the primal-dual gradient method."""
    smax, smin = _singular_values(prob.B)
    params = _saddle_params(prob, params)
    mu, L = params.mu, params.L_lip
    eps1 = prob.eps1 if eps1 is None else eps1
    eps2 = prob.eps2 if eps2 is None else eps2
    lim1 = 2.0 / (L + mu)
    lim2 = 2.0 / (smin ** 2 / L + smax ** 2 / mu)
    if not 0 < eps1 <= lim1 * (1 + _REL):
        raise StepSizeOutOfRange(f"eps1 must lie in (0, {lim1}], got {eps1}")
    if not 0 < eps2 <= lim2 * (1 + _REL):
        raise StepSizeOutOfRange(f"eps2 must lie in (0, {lim2}], got {eps2}")
    gamma = gamma_default(mu, L, smax, smin) if gamma is None else gamma
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    c1, c2 = pdg_constants(mu, L, smax, smin, gamma, eps1, eps2)
    c = max(c1, c2)
    gamma_limit = mu ** 2 * smin ** 2 / (L * smax ** 3)
    notes = []
    if not prob.plain_dual:
        notes.append("dual update carries a non-identity metric; the bound assumes the plain method")
    if gamma >= gamma_limit:
        notes.append("gamma at or above mu^2 smin^2/(L smax^3)")
    consts = {"ratio": c, "c": c, "c1": c1, "c2": c2, "gamma": gamma, "gamma_limit": gamma_limit,
              "eps1": eps1, "eps2": eps2, "mu": mu, "L": L, "sigma_max": smax, "sigma_min": smin}
    return RateCertificate("T9", "potential", consts, "S_{mu,L}, B full row rank",
                           feasible=bool(c < 1 and gamma < gamma_limit), notes=tuple(notes))


class PdgSteps(NamedTuple):
    eps1: float
    eps2: float
    gamma: float
    c: float
    c1: float
    c2: float
    bound: float


def optimal_pdg_steps(prob: SaddleProblem, params: FunctionClassParams | None = None,
                      gamma: float | None = None) -> PdgSteps:
    """Balancing step sizes (``c1 = c2`` at ``eps1 = 2/(L+mu)``) and the
    conditioning bound ``1 - 1/(kappa^3 (4 tau^2 + 2 tau + 1))``."""
    smax, smin = _singular_values(prob.B)
    params = _saddle_params(prob, params)
    mu, L = params.mu, params.L_lip
    gamma = gamma_default(mu, L, smax, smin) if gamma is None else gamma
    eps1 = 2.0 / (L + mu)
    denom = smax ** 2 / mu + smax / gamma + smin ** 2 / L - gamma * smax ** 3 / mu ** 2
    eps2 = 2.0 * mu / (L + mu) / denom
    c1, c2 = pdg_constants(mu, L, smax, smin, gamma, eps1, eps2)
    kappa = L / mu
    tau = smax ** 2 / smin ** 2
    bound = 1.0 - 1.0 / (kappa ** 3 * (4 * tau ** 2 + 2 * tau + 1))
    return PdgSteps(eps1, eps2, gamma, max(c1, c2), c1, c2, bound)


def conjugate_params(params: FunctionClassParams | None, prob: SaddleProblem) -> FunctionClassParams:
    """Strong convexity and smoothness of the dual function ``g(lam)``."""
    smax, smin = _singular_values(prob.B)
    params = _saddle_params(prob, params)
    return FunctionClassParams(smin ** 2 / params.L_lip, smax ** 2 / params.mu)


@dataclass(frozen=True)
class PotentialTrace:
    a: np.ndarray
    b: np.ndarray
    V: np.ndarray
    gamma: float
    lam_star: np.ndarray = field(repr=False, default=None)
    x_star: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "a": self.a.tolist(), "b": self.b.tolist(), "V": self.V.tolist()}


def potential_trace(prob: SaddleProblem, traj: Trajectory, gamma: float) -> PotentialTrace:
    """``a_k = |x_k - grad f*(-B' lam_k)|``, ``b_k = |lam_k - lam*|``, ``V = gamma a + b``.

    The trajectory state is ``(lam, x)``; extra columns (a tracking state,
    for instance) are ignored.
    """
    m, n = prob.m, prob.n
    S = traj.states
    lam = traj.aux.get("lambda", S[:, :m])
    x = S[:, m:m + n]
    x_star, lam_star = prob.kkt_solution()
    if np.linalg.matrix_rank(prob.Q22) < n:
        raise SingularHessian("Q22 is singular; the conjugate gradient map is undefined")
    x_conj = np.linalg.solve(prob.Q22, -(prob.r[:, None] + prob.B.T @ lam.T)).T
    a = np.linalg.norm(x - x_conj, axis=1)
    b = np.linalg.norm(lam - lam_star, axis=1)
    return PotentialTrace(a, b, gamma * a + b, gamma, lam_star, x_star)


@dataclass(frozen=True)
class OrderVerdict:
    max_lhs: float
    max_rhs: float
    min_lhs: float
    min_rhs: float

    @property
    def holds(self) -> bool:
        return self.max_lhs <= self.max_rhs + 1e-12 * max(1, abs(self.max_rhs)) and \
            self.min_lhs <= self.min_rhs + 1e-12 * max(1, abs(self.min_rhs))


def matrix_order_check(A1, A2, tol: Tolerances | None = None) -> OrderVerdict:
    """Given ``A1 <= A2`` (Loewner), report both extreme-eigenvalue orderings."""
    tol = get_tolerances(tol)
    A1 = np.asarray(A1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    for M, name in ((A1, "A1"), (A2, "A2")):
        if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max()), rtol=0):
            raise ValueError(f"{name} is not symmetric")
    gap = np.linalg.eigvalsh(A2 - A1)[0]
    if gap < -tol.psd:
        raise NotOrdered(f"A2 - A1 has eigenvalue {gap:.3e}")
    w1, w2 = np.linalg.eigvalsh(A1), np.linalg.eigvalsh(A2)
    return OrderVerdict(float(w1[-1]), float(w2[-1]), float(w1[0]), float(w2[0]))
