"""Scenario builders: primal congestion control and distributed PI control."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse.csgraph

from .core import LtiSystem, PartitionedLtiSystem
from .errors import ConfigError, DisconnectedGraph
from .simulator import DelayConfig, EventSchedule, GradientField, GradientIteration

# --------------------------------------------------------------------------
# Congestion control


@dataclass(frozen=True)
class CongestionScenario:
    """Sources with rate gains ``gains`` sharing links through ``routing``.

    ``utility`` is ``"log"`` or ``"quadratic"`` (with diagonal ``q`` and
    linear term ``r1``); ``penalty`` is ``"kelly"`` (``sigma``,
    ``capacities``) or ``"linear"`` (diagonal ``r2`` and offset ``s2``).
    """

    routing: np.ndarray
    gains: np.ndarray
    eps: float = 1.0
    utility: str = "log"
    q: np.ndarray | None = None
    r1: np.ndarray | None = None
    penalty: str = "kelly"
    sigma: float = 1.0
    capacities: np.ndarray | None = None
    r2: np.ndarray | None = None
    s2: np.ndarray | None = None
    x0: np.ndarray | None = None
    events: tuple = ()

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.routing, dtype=float))
        object.__setattr__(self, "routing", R)
        M, N = R.shape
        if not np.all((R == 0) | (R == 1)):
            raise ConfigError("routing entries must be 0 or 1", "routing")
        if np.any(R.sum(axis=0) < 1):
            raise ConfigError("every source must use at least one link", "routing")
        gains = np.broadcast_to(np.asarray(self.gains, dtype=float), (N,)).copy()
        if np.any(gains <= 0):
            raise ConfigError("rate gains must be positive", "gains")
        object.__setattr__(self, "gains", gains)
        if self.eps <= 0:
            raise ConfigError("step size must be positive", "eps")
        if self.utility not in ("log", "quadratic"):
            raise ConfigError(f"unknown utility {self.utility!r}", "utility")
        if self.penalty not in ("kelly", "linear"):
            raise ConfigError(f"unknown penalty {self.penalty!r}", "penalty")
        if self.utility == "quadratic":
            object.__setattr__(self, "q", self._vec(self.q, N, "q", positive=True))
            object.__setattr__(self, "r1", self._vec(self.r1, N, "r1"))
        if self.penalty == "kelly":
            if self.sigma <= 0:
                raise ConfigError("sigma must be positive", "sigma")
            object.__setattr__(self, "capacities", self._vec(self.capacities, M, "capacities", positive=True))
        else:
            object.__setattr__(self, "r2", self._vec(self.r2, M, "r2", positive=True))
            object.__setattr__(self, "s2", self._vec(self.s2 if self.s2 is not None else np.zeros(M), M, "s2"))
        x0 = np.full(N, 0.1) if self.x0 is None else np.asarray(self.x0, dtype=float)
        if x0.shape != (N,):
            raise ConfigError(f"x0 must have {N} entries", "x0")
        object.__setattr__(self, "x0", x0)
        for k, mutation in self.events:
            for key, value in mutation.items():
                if key != "capacities":
                    raise ConfigError(f"unsupported event key {key!r}", "events")
                self._vec(value, M, "events.capacities", positive=True)

    @staticmethod
    def _vec(v, size, name, positive=False):
        if v is None:
            raise ConfigError("value required", name)
        arr = np.broadcast_to(np.asarray(v, dtype=float), (size,)).copy()
        if positive and np.any(arr <= 0):
            raise ConfigError("entries must be positive", name)
        return arr

    @property
    def n_sources(self) -> int:
        return self.routing.shape[1]

    @property
    def n_links(self) -> int:
        return self.routing.shape[0]

    @property
    def linear(self) -> bool:
        return self.utility == "quadratic" and self.penalty == "linear"

    def schedule(self) -> EventSchedule:
        return EventSchedule(tuple(self.events))


@dataclass(frozen=True)
class CongestionModel:
    iteration: GradientIteration
    system: LtiSystem | None
    scenario: CongestionScenario

    def equilibrium(self, inputs: dict | None = None, guess=None) -> np.ndarray:
        """Zero of the gradient field, i.e. the rate allocation ``x*``."""
        inputs = self.iteration.initial_inputs() if inputs is None else inputs
        fld = self.iteration.field
        start = self.scenario.x0 if guess is None else np.asarray(guess, dtype=float)
        sol = scipy.optimize.root(lambda x: fld(x, inputs), start, method="hybr", tol=1e-13)
        if np.linalg.norm(fld(sol.x, inputs)) > 1e-10:
            raise ConfigError(f"equilibrium solve failed: {sol.message}", "scenario")
        return sol.x


def kelly_penalty(y, capacities, sigma):
    """``(y - c + sigma)^+ / sigma^2``, one-sided at the kink."""
    return np.maximum(y - capacities + sigma, 0.0) / sigma ** 2


def build_congestion(sc: CongestionScenario) -> CongestionModel:
    R = sc.routing

    def utility_grad(x):
        if sc.utility == "log":
            return 1.0 / x
        return -sc.q * x + sc.r1

    if sc.penalty == "kelly":
        def evaluator(x, inputs):
            return utility_grad(x) - R.T @ kelly_penalty(R @ x, inputs["capacities"], sc.sigma)
        inputs = {"capacities": sc.capacities}
    else:
        def evaluator(x, inputs):
            return utility_grad(x) - R.T @ (sc.r2 * (R @ x) + sc.s2)
        inputs = {}

    gain = sc.eps * sc.gains
    it = GradientIteration(GradientField(sc.n_sources, evaluator), gain, inputs)
    system = None
    if sc.linear:
        K = np.diag(gain)
        A = np.eye(sc.n_sources) - K @ (np.diag(sc.q) + R.T @ np.diag(sc.r2) @ R)
        c = K @ (sc.r1 - R.T @ sc.s2)
        system = LtiSystem.affine(A, c)
    return CongestionModel(it, system, sc)


# --------------------------------------------------------------------------
# Distributed PI control


def ring_adjacency(n: int) -> np.ndarray:
    A = np.zeros((n, n))
    if n == 2:
        A[0, 1] = A[1, 0] = 1
    elif n > 2:
        for i in range(n):
            A[i, (i + 1) % n] = A[(i + 1) % n, i] = 1
    return A


@dataclass(frozen=True)
class PiScenario:
    adjacency: np.ndarray
    rho1: float
    rho2: float
    delta: float
    d: np.ndarray
    y0: np.ndarray
    eps1: float = 0.02
    eps2: float = 0.02
    delay_steps: int = 0
    events: tuple = field(default=())

    def __post_init__(self):
        Adj = np.atleast_2d(np.asarray(self.adjacency, dtype=float))
        n = Adj.shape[0]
        if Adj.shape != (n, n) or not np.allclose(Adj, Adj.T) or np.any(Adj < 0):
            raise ConfigError("adjacency must be square, symmetric and nonnegative", "adjacency")
        if np.any(np.diag(Adj) != 0):
            raise ConfigError("adjacency must have a zero diagonal", "adjacency")
        object.__setattr__(self, "adjacency", Adj)
        for name in ("rho1", "rho2", "delta", "eps1", "eps2"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be positive", name)
        if self.delay_steps < 0:
            raise ConfigError("must be nonnegative", "delay_steps")
        for name in ("d", "y0"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise ConfigError(f"must have {n} entries", name)
            object.__setattr__(self, name, v)
        if n > 1 and scipy.sparse.csgraph.connected_components(Adj, directed=False)[0] != 1:
            raise DisconnectedGraph("agent graph is not connected", "adjacency")
        for k, mutation in self.events:
            if set(mutation) - {"d"}:
                raise ConfigError("only disturbance events are supported", "events")

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.adjacency.sum(axis=1)) - self.adjacency

    def owners(self) -> tuple[int, ...]:
        """Agent owning each state entry: ``z_i`` and ``y_i`` belong to agent ``i``."""
        n = self.n_agents
        return tuple(range(n - 1)) + tuple(range(n))

    def delay(self) -> DelayConfig:
        return DelayConfig(self.delay_steps, self.owners())

    def w_for(self, d) -> np.ndarray:
        return np.concatenate([np.asarray(d, dtype=float), self.y0])

    def schedule(self) -> EventSchedule:
        return EventSchedule(tuple((k, {"w": self.w_for(m["d"])}) for k, m in self.events))

    def consensus_value(self) -> float:
        """Common steady-state output ``(sum d + delta sum y0) / (delta n)``."""
        return float((self.d.sum() + self.delta * self.y0.sum()) / (self.delta * self.n_agents))


def build_pi(sc: PiScenario) -> PartitionedLtiSystem:
    """State ``(z, y)`` with ``z`` the integral states relative to agent ``n``."""
    n = sc.n_agents
    if n < 2:
        raise ConfigError("at least two agents are needed for an integral state", "adjacency")
    L = sc.laplacian
    Lt = L[:, : n - 1]
    D = np.hstack([np.eye(n - 1), -np.ones((n - 1, 1))])
    e1, e2 = sc.eps1, sc.eps2
    A = np.block([
        [np.eye(n - 1), e2 * D],
        [-e1 * sc.rho1 * Lt, np.eye(n) - e1 * sc.rho2 * L - e1 * sc.delta * np.eye(n)],
    ])
    C = np.block([
        [np.zeros((n - 1, n)), np.zeros((n - 1, n))],
        [e1 * np.eye(n), e1 * sc.delta * np.eye(n)],
    ])
    return PartitionedLtiSystem(LtiSystem(A, C, sc.w_for(sc.d)), n - 1)


def pi_initial_state(sc: PiScenario) -> np.ndarray:
    return np.concatenate([np.zeros(sc.n_agents - 1), sc.y0])
