"""Retrofit synthesis: extra dynamics for heavy-ball, accelerated gradient,
augmented Lagrangian and hat-x redesigns, plus conditioning analyses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .core import (
    FunctionClassParams,
    LtiSystem,
    PartitionedLtiSystem,
    QuadraticObjectiveO,
    SaddleProblem,
    null_space,
)
from .errors import (
    ConfigError,
    DegenerateObjective,
    MissingCoefficient,
    NotApplicable,
    NotConvexifiable,
)

METHODS = ("HB", "AGD", "AL", "HATX")
SCHEDULES = ("constant", "nesterov")
BETA_RULES = ("polyak", "unsquared")


@dataclass(frozen=True)
class RedesignSpec:
    method: str
    beta: float | None = None
    beta_schedule: str = "constant"
    alpha: float | None = None
    eps_star: float | None = None
    retune_step: bool = True
    beta_rule: str = "polyak"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}", "method")
        if self.beta_schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.beta_schedule!r}", "beta_schedule")
        if self.beta_rule not in BETA_RULES:
            raise ConfigError(f"unknown beta rule {self.beta_rule!r}", "beta_rule")
        if self.beta is not None and not 0 <= self.beta < 1:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}", "beta")
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}", "alpha")
        if self.eps_star is not None and self.eps_star <= 0:
            raise ConfigError(f"eps_star must be positive, got {self.eps_star}", "eps_star")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RedesignSpec":
        return cls(**obj)


def nesterov_beta(j: int) -> float:
    """``beta_k = (k-1)/(k+2)`` at 0-based step ``j = k - 1``."""
    return j / (j + 3)


@dataclass(frozen=True)
class RedesignedSystem:
    """Original plant plus extra dynamics ``x_{k+1} = A x_k + C w + du_k``.

    ``base`` is any plant with ``step(x, inputs, lag)`` (a linear system or a
    gradient iteration). For the saddle-point methods ``primal`` is the slice
    of the base state holding ``x`` and ``problem`` the recovered saddle data.
    """

    base: Any
    spec: RedesignSpec
    coefficients: dict
    problem: Any = None
    primal: slice | None = None
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def method(self) -> str:
        return self.spec.method

    def initial_inputs(self) -> dict:
        return self.base.initial_inputs()

    def apply_event(self, inputs, mutation):
        return self.base.apply_event(inputs, mutation)

    def beta_at(self, j: int) -> float:
        if self.coefficients.get("schedule") == "nesterov":
            return nesterov_beta(j)
        return self.coefficients["beta"]

    # -- rollout ----------------------------------------------------------

    def start(self, x0, inputs) -> dict:
        x0 = np.asarray(x0, dtype=float)
        st = {"x": x0, "k": 0}
        if self.method == "HB":
            st["x_prev"] = x0
        elif self.method == "AGD":
            # x_{-1} = x_0, so the first correction vanishes.
            st["y"] = self._gradient_point(x0, self.base.step(x0, inputs))
        elif self.method == "HATX":
            st["xhat"] = x0[self.primal].copy()
        return st

    def _gradient_point(self, x, b):
        if not self.spec.retune_step:
            return b
        s = self.coefficients["step_ratio"]
        return x - s * (x - b)

    def advance(self, st: dict, inputs, lag=None) -> dict:
        x, j = st["x"], st["k"]
        b = self.base.step(x, inputs, lag)
        m = self.method
        out = {"k": j + 1}
        if m == "HB":
            beta = self.beta_at(j)
            du = beta * (x - st["x_prev"])
            if self.spec.retune_step:
                du = (1.0 - self.coefficients["step_ratio"]) * (x - b) + du
            out["x_prev"] = x
        elif m == "AGD":
            beta = self.beta_at(j)
            y = self._gradient_point(x, b)
            du = (y - b) + beta * (y - st["y"])
            out["y"] = y
        elif m == "AL":
            du = np.zeros_like(x)
            du[self.primal] = self._al_correction(x, lag)
        else:
            ea = self.coefficients["eps1"] * self.coefficients["alpha"]
            xp = x[self.primal]
            gap = xp - st["xhat"]
            du = np.zeros_like(x)
            du[self.primal] = -ea * gap
            out["xhat"] = st["xhat"] + ea * gap
        out["x"] = b + du
        out["delta_u"] = du
        return out

    def _al_correction(self, x, lag):
        prob = self.problem
        ea = self.coefficients["eps1"] * self.coefficients["alpha"]
        xp = x[self.primal]
        if lag is None:
            return -ea * (prob.B.T @ (prob.B @ xp - prob.b))
        x_old, same = lag
        BtB = prob.B.T @ prob.B
        same_p = same[self.primal, self.primal]
        local = np.where(same_p, BtB, 0.0) @ xp
        remote = np.where(same_p, 0.0, BtB) @ x_old[self.primal]
        return -ea * (local + remote - prob.B.T @ prob.b)

    # -- analysis ---------------------------------------------------------

    def extended_iteration_matrix(self) -> np.ndarray | None:
        """Augmented linear map over the extended state, or None when the
        base is nonlinear or the schedule is time-varying."""
        A = getattr(self.base, "A", None)
        if A is None:
            return None
        n = A.shape[0]
        I = np.eye(n)
        m = self.method
        if m in ("HB", "AGD"):
            if self.coefficients.get("schedule") == "nesterov":
                return None
            beta = self.coefficients["beta"]
            s = self.coefficients["step_ratio"] if self.spec.retune_step else 1.0
            G = I - s * (I - A)
            if m == "HB":
                return np.block([[(1 + beta) * I - s * (I - A), -beta * I], [I, np.zeros((n, n))]])
            return np.block([[(1 + beta) * G, -beta * G], [I, np.zeros((n, n))]])
        ea = self.coefficients["eps1"] * self.coefficients["alpha"]
        p = self.primal
        if m == "AL":
            M = np.array(A)
            M[p, p] -= ea * (self.problem.B.T @ self.problem.B)
            return M
        n2 = p.stop - p.start
        E = np.zeros((n, n2))
        E[p] = np.eye(n2)
        M = np.array(A)
        M[p, p] -= ea * np.eye(n2)
        return np.block([[M, ea * E], [ea * E.T, (1 - ea) * np.eye(n2)]])

    def extended_spectral_radius(self) -> float | None:
        """Spectral radius of the extended map.

        For the momentum methods the map decouples along the eigenvectors
        of ``I - A`` into quadratics ``z^2 - a z + c``, solved in closed
        form. This stays accurate at double roots, where a general
        eigensolver loses about sqrt(machine eps).
        """
        M = self.extended_iteration_matrix()
        if M is None:
            return None
        if self.method not in ("HB", "AGD"):
            return float(np.max(np.abs(np.linalg.eigvals(M))))
        A = self.base.A
        h = np.linalg.eigvals(np.eye(A.shape[0]) - A)
        if np.max(np.abs(h.imag)) > 1e-9 * max(1.0, np.max(np.abs(h))):
            return float(np.max(np.abs(np.linalg.eigvals(M))))
        h = h.real
        beta = self.coefficients["beta"]
        s = self.coefficients["step_ratio"] if self.spec.retune_step else 1.0
        if self.method == "HB":
            a, c = 1 + beta - s * h, np.full_like(h, beta)
        else:
            g = 1 - s * h
            a, c = (1 + beta) * g, beta * g
        return float(np.max(quadratic_root_moduli(a, c)))

    def extended_offset(self) -> np.ndarray | None:
        if getattr(self.base, "A", None) is None:
            return None
        c = self.base.forcing() if hasattr(self.base, "forcing") else self.base.base.forcing()
        m = self.method
        if m in ("HB", "AGD"):
            if self.coefficients.get("schedule") == "nesterov":
                return None
            s = self.coefficients["step_ratio"] if self.spec.retune_step else 1.0
            return np.concatenate([s * c, np.zeros_like(c)])
        ea = self.coefficients["eps1"] * self.coefficients["alpha"]
        if m == "AL":
            out = np.array(c)
            out[self.primal] += ea * (self.problem.B.T @ self.problem.b)
            return out
        return np.concatenate([c, np.zeros(self.primal.stop - self.primal.start)])

    def extended_fixed_point(self) -> np.ndarray:
        M, c = self.extended_iteration_matrix(), self.extended_offset()
        if M is None:
            raise NotApplicable("no linear extended iteration for this redesign")
        return np.linalg.lstsq(np.eye(M.shape[0]) - M, c, rcond=None)[0]

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(),
                "coefficients": {k: v for k, v in self.coefficients.items()},
                "info": self.info}


def quadratic_root_moduli(a, c) -> np.ndarray:
    """Largest root modulus of ``z^2 - a z + c`` (elementwise, real a, c).

    A discriminant within rounding of zero is treated as a double root.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    disc = a * a - 4 * c
    tiny = 16 * np.finfo(float).eps * np.maximum(a * a, 4 * np.abs(c))
    out = np.empty_like(a)
    cplx = disc < -tiny
    dbl = np.abs(disc) <= tiny
    real = ~(cplx | dbl)
    out[cplx] = np.sqrt(c[cplx])
    out[dbl] = np.abs(a[dbl]) / 2
    out[real] = (np.abs(a[real]) + np.sqrt(disc[real])) / 2
    return out


# --------------------------------------------------------------------------
# Class-O retrofits

def _as_plant(base):
    if isinstance(base, QuadraticObjectiveO):
        return base.to_system(), base.eps_nominal
    return base, float(getattr(base, "eps_nominal", 1.0))


def hb_coefficients(params: FunctionClassParams, rule: str = "polyak") -> tuple[float, float]:
    """Step and momentum for the heavy-ball retrofit.

    ``rule="polyak"`` squares the ratio ``(sqrt L - sqrt mu)/(sqrt L + sqrt mu)``,
    which is what makes the extended matrix contract at that ratio.
    """
    if params.mu <= 0:
        raise MissingCoefficient("heavy-ball coefficients need mu > 0; supply beta")
    sL, sm = math.sqrt(params.L_lip), math.sqrt(params.mu)
    eps = 4.0 / (sL + sm) ** 2
    rho = (sL - sm) / (sL + sm)
    return eps, rho * rho if rule == "polyak" else rho


def agd_coefficients(params: FunctionClassParams) -> tuple[float, float]:
    if params.mu <= 0:
        raise MissingCoefficient("constant AGD momentum needs mu > 0; supply beta or use the nesterov schedule")
    sL, sm = math.sqrt(params.L_lip), math.sqrt(params.mu)
    return 1.0 / params.L_lip, (sL - sm) / (sL + sm)


def hb_redesign(base, params: FunctionClassParams | None = None, *, beta=None, eps_star=None,
                retune_step: bool = True, beta_rule: str = "polyak") -> RedesignedSystem:
    """``x_{k+1} = x_k - eps* grad f(x_k) + beta (x_k - x_{k-1})``."""
    plant, eps_nom = _as_plant(base)
    spec = RedesignSpec("HB", beta, "constant", None, eps_star, retune_step, beta_rule)
    if beta is None or (retune_step and eps_star is None):
        if params is None:
            raise MissingCoefficient("function-class parameters or explicit coefficients required")
        if params.mu > 0:
            eps_t, beta_t = hb_coefficients(params, beta_rule)
        elif beta is None:
            raise MissingCoefficient("mu = 0: the heavy-ball momentum must be supplied")
        else:
            eps_t, beta_t = 1.0 / params.L_lip, beta
        beta = beta_t if beta is None else beta
        eps_star = eps_t if eps_star is None else eps_star
    coeffs = {"beta": float(beta), "schedule": "constant"}
    if retune_step:
        coeffs["eps_star"] = float(eps_star)
        coeffs["step_ratio"] = float(eps_star) / eps_nom
    return RedesignedSystem(plant, spec, coeffs, problem=base)


def agd_redesign(base, params: FunctionClassParams | None = None, *, beta=None, schedule: str = "constant",
                 eps_star=None, retune_step: bool = True) -> RedesignedSystem:
    """Combined form ``x_{k+1} = y_k + beta_k (y_k - y_{k-1})``, ``y_k = x_k - eps grad f(x_k)``."""
    plant, eps_nom = _as_plant(base)
    spec = RedesignSpec("AGD", beta, schedule, None, eps_star, retune_step)
    if schedule == "constant" and beta is None:
        if params is None:
            raise MissingCoefficient("function-class parameters or explicit beta required")
        eps_t, beta = agd_coefficients(params)
        eps_star = eps_t if eps_star is None else eps_star
    if retune_step and eps_star is None:
        if params is None:
            raise MissingCoefficient("retuned step needs function-class parameters or eps_star")
        eps_star = 1.0 / params.L_lip
    coeffs = {"schedule": schedule}
    if schedule == "constant":
        coeffs["beta"] = float(beta)
    if retune_step:
        coeffs["eps_star"] = float(eps_star)
        coeffs["step_ratio"] = float(eps_star) / eps_nom
    return RedesignedSystem(plant, spec, coeffs, problem=base)


# --------------------------------------------------------------------------
# Class-S retrofits

def _saddle_plant(prob: SaddleProblem, system):
    psys = prob.to_system() if system is None else system
    if isinstance(psys, LtiSystem):
        psys = PartitionedLtiSystem(psys, prob.m)
    return psys, slice(psys.n1, psys.n)


def _cond(H) -> float:
    w = np.linalg.eigvalsh(0.5 * (H + H.T))
    return math.inf if w[0] <= 0 else float(w[-1] / w[0])


def al_redesign(prob: SaddleProblem, alpha: float, system=None) -> RedesignedSystem:
    """Primal correction ``du = -eps1 alpha B'(Bx - b)``; dual row unchanged."""
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative", "alpha")
    psys, primal = _saddle_plant(prob, system)
    k0 = _cond(prob.Q22)
    kg = _cond(prob.Q22 + alpha * prob.B.T @ prob.B)
    info = {"kappa_0": k0, "kappa_g": kg, "advised": bool(kg < k0)}
    coeffs = {"alpha": float(alpha), "eps1": float(prob.eps1)}
    return RedesignedSystem(psys, RedesignSpec("AL", alpha=alpha), coeffs, prob, primal, info)


def hatx_redesign(prob: SaddleProblem, alpha: float, system=None) -> RedesignedSystem:
    """Tracking state ``xhat+ = xhat + eps1 alpha (x - xhat)`` with
    ``du = -eps1 alpha (x - xhat)`` on the primal block."""
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative", "alpha")
    psys, primal = _saddle_plant(prob, system)
    info = {}
    w = np.linalg.eigvalsh(prob.Q22)
    if w[0] > 0 and alpha > 0:
        lo, hi = kappa_h_bounds(FunctionClassParams(float(w[0]), float(w[-1])), alpha)
        info = {"kappa_h_lower": lo, "kappa_h_upper": hi, "kappa_0": float(w[-1] / w[0])}
    coeffs = {"alpha": float(alpha), "eps1": float(prob.eps1)}
    return RedesignedSystem(psys, RedesignSpec("HATX", alpha=alpha), coeffs, prob, primal, info)


def kappa_h_bounds(params: FunctionClassParams, alpha: float) -> tuple[float, float]:
    """Bracket on the condition number of ``f(x) + alpha/2 |x - xhat|^2``."""
    mu, L = params.mu, params.L_lip
    if mu <= 0:
        raise DegenerateObjective("kappa_h bracket needs mu > 0")
    if alpha <= 0:
        raise DegenerateObjective("kappa_h bracket needs alpha > 0")
    a2 = 2.0 * alpha
    rm, rL = math.hypot(mu, a2), math.hypot(L, a2)
    # 2a + t - sqrt(t^2 + 4a^2) == 4 a t / (2a + t + sqrt(t^2 + 4a^2)), free of cancellation.
    lower = (a2 + mu + rm) * (a2 + L + rL) / (2.0 * a2 * L)
    upper = (a2 + L + rL) * (a2 + mu + rm) / (2.0 * a2 * mu)
    return lower, upper


def hatx_hessian(H, alpha: float) -> np.ndarray:
    n = H.shape[0]
    I = np.eye(n)
    return np.block([[H + alpha * I, -alpha * I], [-alpha * I, alpha * I]])


def convexification_alpha(H, B, margin: float = 1e-10, rel: float = 1e-6) -> float:
    """Smallest ``alpha`` (to ``rel``) with ``lambda_min(H + alpha B'B) >= margin``."""
    H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Z = null_space(B)
    if Z.shape[1] and np.linalg.eigvalsh(Z.T @ H @ Z).min() <= margin:
        raise NotConvexifiable("Hessian is not positive definite on the null space of B")
    BtB = B.T @ B

    def ok(a):
        return np.linalg.eigvalsh(H + a * BtB)[0] >= margin

    if ok(0.0):
        return 0.0
    hi = 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > 2.0 ** 60:
            raise NotConvexifiable("no finite penalty convexifies the Hessian")
    lo = 0.0
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
