"""Deterministic rollouts of original and redesigned iterations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import FunctionClassParams, Trajectory
from .errors import ConfigError, NotApplicable

OVERFLOW = 1e12


@dataclass(frozen=True)
class GradientField:
    """Ascent direction ``x -> -grad f(x)`` that may depend on named inputs
    (link capacities, for instance)."""

    n: int
    evaluator: Callable[[np.ndarray, dict], np.ndarray]
    params: FunctionClassParams | None = None

    def __call__(self, x, inputs) -> np.ndarray:
        out = np.asarray(self.evaluator(x, inputs), dtype=float)
        if out.shape != (self.n,):
            raise ValueError(f"gradient field returned shape {out.shape}, expected ({self.n},)")
        return out


@dataclass(frozen=True)
class GradientIteration:
    """``x_{k+1} = x_k + gain * field(x_k)`` with a per-coordinate gain."""

    field: GradientField
    gain: np.ndarray
    inputs: dict
    eps_nominal: float = 1.0

    @property
    def n(self) -> int:
        return self.field.n

    def initial_inputs(self) -> dict:
        return dict(self.inputs)

    def step(self, x, inputs=None, lag=None) -> np.ndarray:
        if lag is not None:
            raise NotApplicable("delayed reads are only modelled for linear plants")
        return x + self.gain * self.field(x, self.inputs if inputs is None else inputs)

    def apply_event(self, inputs: dict, mutation: dict) -> dict:
        out = dict(inputs)
        for key, value in mutation.items():
            if key not in inputs:
                raise ValueError(f"unknown event key {key!r}; expected one of {sorted(inputs)}")
            value = np.asarray(value, dtype=float)
            if value.shape != np.shape(inputs[key]):
                raise ValueError(f"event {key!r} has shape {value.shape}, expected {np.shape(inputs[key])}")
            out[key] = value
        return out


@dataclass(frozen=True)
class EventSchedule:
    """Ordered ``(step, mutation)`` pairs applied before computing ``x_{step+1}``."""

    events: tuple = ()

    def __post_init__(self):
        events = tuple((int(k), dict(m)) for k, m in self.events)
        steps = [k for k, _ in events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("event steps must be strictly increasing", "schedule")
        if any(k < 0 for k in steps):
            raise ConfigError("event steps must be nonnegative", "schedule")
        object.__setattr__(self, "events", events)

    def at(self, k: int) -> dict | None:
        for step, mutation in self.events:
            if step == k:
                return mutation
        return None

    def to_list(self) -> list:
        return [{"step": k, **{key: np.asarray(v).tolist() for key, v in m.items()}} for k, m in self.events]


@dataclass(frozen=True)
class DelayConfig:
    """Uniform read delay between state entries owned by different agents.

    ``owners[i]`` names the agent holding state entry ``i``; an update uses
    its own agent's entries at ``k`` and everyone else's at ``k - delay``.
    """

    delay_steps: int = 0
    owners: tuple = ()

    def __post_init__(self):
        if self.delay_steps < 0:
            raise ConfigError("delay must be nonnegative", "delay_steps")
        object.__setattr__(self, "owners", tuple(self.owners))

    def same_owner(self, n: int) -> np.ndarray:
        if len(self.owners) != n:
            raise ConfigError(f"delay owners list has {len(self.owners)} entries, state has {n}", "owners")
        o = np.array(self.owners)
        return o[:, None] == o[None, :]


def _aux_names(plant) -> tuple[str, ...]:
    return {"HB": ("x_prev", "delta_u"), "AGD": ("y", "delta_u"),
            "AL": ("delta_u",), "HATX": ("xhat", "delta_u")}.get(getattr(plant, "method", None), ())


def simulate(system, x0, steps: int, schedule: EventSchedule | None = None,
             delay: DelayConfig | None = None, clamp_nonnegative: bool = False,
             metadata: dict | None = None) -> Trajectory:
    """Roll out ``steps`` iterations from ``x0``.

    ``system`` is a linear system, a gradient iteration, or a redesigned
    system. Rollouts stop early (``diverged_at`` set) when the state norm
    exceeds ``1e12`` or becomes non-finite.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x0 = np.array(x0, dtype=float)
    if x0.shape != (system.n,):
        raise ValueError(f"x0 has shape {x0.shape}, system dimension is {system.n}")

    redesigned = hasattr(system, "advance")
    inputs = system.initial_inputs()
    if schedule is not None and schedule.at(0):
        inputs = system.apply_event(inputs, schedule.at(0))
    st = system.start(x0, inputs) if redesigned else {"x": x0}
    names = _aux_names(system)

    d = delay.delay_steps if delay is not None else 0
    same = delay.same_owner(system.n) if d > 0 else None

    states = [x0]
    aux = {k: [st[k]] for k in names if k in st}
    aux_du = [np.zeros_like(x0)] if "delta_u" in names else None
    diverged = None
    for k in range(steps):
        if k > 0 and schedule is not None:
            mutation = schedule.at(k)
            if mutation:
                inputs = system.apply_event(inputs, mutation)
        lag = None if same is None else (states[max(k - d, 0)], same)
        if redesigned:
            st = system.advance(st, inputs, lag)
        else:
            st = {"x": system.step(st["x"], inputs, lag)}
        x = st["x"]
        if clamp_nonnegative:
            x = np.maximum(x, 0.0)
            st["x"] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > OVERFLOW:
            diverged = k + 1
            break
        states.append(x)
        for key in aux:
            aux[key].append(st[key])
        if aux_du is not None:
            aux_du.append(st["delta_u"])

    aux_arr = {k: np.array(v) for k, v in aux.items()}
    if aux_du is not None:
        aux_arr["delta_u"] = np.array(aux_du)
    n1 = getattr(getattr(system, "base", system), "n1", None)
    if n1 is not None:
        aux_arr["lambda"] = np.array(states)[:, :n1]
    meta = {"steps": steps, "method": getattr(system, "method", "OD")}
    meta.update(metadata or {})
    return Trajectory(np.array(states), aux_arr, meta, diverged)


# --------------------------------------------------------------------------
# Metrics

THRESHOLDS = (1e-2, 1e-4, 1e-6)


@dataclass(frozen=True)
class ErrorMetrics:
    errors: np.ndarray
    first_reach: dict
    settle: dict
    total_variation: float
    final_error: float

    def steps_to(self, threshold: float, settle: bool = False) -> int | None:
        table = self.settle if settle else self.first_reach
        if threshold in table:
            return table[threshold]
        return _first_reach(self.errors, threshold, settle)

    def to_dict(self) -> dict:
        return {
            "first_reach": {f"{t:g}": v for t, v in self.first_reach.items()},
            "settle": {f"{t:g}": v for t, v in self.settle.items()},
            "total_variation": self.total_variation,
            "final_error": self.final_error,
            "errors": self.errors.tolist(),
        }


def _first_reach(errors, threshold, settle=False):
    below = errors <= threshold
    if not below.any():
        return None
    if not settle:
        return int(np.argmax(below))
    if not below[-1]:
        return None
    above = np.flatnonzero(~below)
    return 0 if above.size == 0 else int(above[-1] + 1)


def error_metrics(traj: Trajectory, reference, components=None,
                  thresholds=THRESHOLDS) -> ErrorMetrics:
    """Per-step ``|x_k - ref|``, threshold crossings and total variation."""
    S = traj.states if components is None else traj.states[:, components]
    ref = np.asarray(reference, dtype=float)
    if ref.shape != S.shape[1:]:
        raise ValueError(f"reference has shape {ref.shape}, states have {S.shape[1:]}")
    errors = np.linalg.norm(S - ref, axis=1)
    tv = float(np.sum(np.linalg.norm(np.diff(S, axis=0), axis=1)))
    return ErrorMetrics(
        errors,
        {t: _first_reach(errors, t) for t in thresholds},
        {t: _first_reach(errors, t, settle=True) for t in thresholds},
        tv,
        float(errors[-1]),
    )


@dataclass(frozen=True)
class ConsensusMetrics:
    disagreement: np.ndarray
    final: float

    def to_dict(self) -> dict:
        return {"final_disagreement": self.final, "disagreement": self.disagreement.tolist()}


def consensus_metrics(traj: Trajectory, components=None) -> ConsensusMetrics:
    """``max_i y_i - min_i y_i`` per step over the agent components."""
    S = traj.states if components is None else traj.states[:, components]
    dis = S.max(axis=1) - S.min(axis=1) if S.shape[1] else np.zeros(S.shape[0])
    return ConsensusMetrics(dis, float(dis[-1]))


# --------------------------------------------------------------------------
# Export

def trajectory_rows(traj: Trajectory):
    n = traj.states.shape[1]
    header = ["step"] + [f"x_{i}" for i in range(n)]
    extra = [(key, traj.aux[key]) for key in ("lambda", "xhat") if key in traj.aux]
    for key, arr in extra:
        header += [f"{key}_{i}" for i in range(arr.shape[1])]
    yield header
    for k in range(traj.states.shape[0]):
        row = [k] + [repr(float(v)) for v in traj.states[k]]
        for _, arr in extra:
            row += [repr(float(v)) for v in arr[k]]
        yield row


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in trajectory_rows(traj):
            writer.writerow(row)


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def finite_or_none(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v
