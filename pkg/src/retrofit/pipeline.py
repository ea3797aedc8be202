"""Classify, reverse-engineer, retrofit, simulate, certify and report."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import apps
from .classifier import classify_O, classify_S, extract_params, reverse_engineer_O, reverse_engineer_S
from .config import RunConfig
from .core import LtiSystem, PartitionedLtiSystem, Trajectory, fixed_point, spectral_radius
from .errors import ConfigError, MissingCoefficient, RetrofitError
from .rates import agd_certificate, gd_certificate, hb_certificate, pdg_certificate, potential_trace
from .redesign import agd_redesign, al_redesign, hatx_redesign, hb_redesign
from .simulator import (
    DelayConfig,
    EventSchedule,
    consensus_metrics,
    error_metrics,
    simulate,
    write_trajectory_csv,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REJECTED = 3
EXIT_CERTIFICATE = 4
EXIT_DIVERGED = 5


class PipelineError(Exception):
    def __init__(self, stage: str, exit_code: int, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


# --------------------------------------------------------------------------
# Sources

@dataclass
class Source:
    kind: str                    # "lti", "congestion" or "pi"
    plant: object                # what gets simulated as the original dynamics
    linear: LtiSystem | PartitionedLtiSystem | None
    x0: np.ndarray
    schedule: EventSchedule | None = None
    delay: DelayConfig | None = None
    components: slice | None = None
    eps1: float = 1.0
    eps2: float = 1.0
    scenario: object = None
    model: object = None

    @property
    def partitioned(self) -> bool:
        return isinstance(self.linear, PartitionedLtiSystem)


def _adjacency(cfg) -> np.ndarray:
    if cfg.adjacency is not None:
        return np.array(cfg.adjacency, dtype=float)
    n = cfg.graph.n
    if cfg.graph.type == "ring":
        return apps.ring_adjacency(n)
    if cfg.graph.type == "path":
        A = np.zeros((n, n))
        for i in range(n - 1):
            A[i, i + 1] = A[i + 1, i] = 1
        return A
    return np.ones((n, n)) - np.eye(n)


def build_source(cfg: RunConfig) -> Source:
    run = cfg.run
    if cfg.system is not None:
        s = cfg.system
        A = s.A.array()
        C = s.C.array() if s.C is not None else np.eye(len(s.w))
        try:
            base = LtiSystem(A, C, s.w)
            linear = base.partition(s.partition) if s.partition else base
        except ValueError as exc:
            raise ConfigError(str(exc), "system") from None
        x0 = np.zeros(base.n) if run.x0 is None else np.array(run.x0, dtype=float)
        delay = None
        if run.delay_steps:
            if run.owners is None:
                raise ConfigError("a delay needs 'owners' for every state entry", "run.owners")
            delay = DelayConfig(run.delay_steps, tuple(run.owners))
        return Source("lti", linear, linear, x0, None, delay, None, s.eps1, s.eps2)

    sc = cfg.scenario
    if sc.kind == "congestion":
        scen = apps.CongestionScenario(
            routing=sc.routing, gains=sc.gains, eps=sc.eps, utility=sc.utility, q=sc.q, r1=sc.r1,
            penalty=sc.penalty, sigma=sc.sigma, capacities=sc.capacities, r2=sc.r2, s2=sc.s2,
            x0=sc.x0, events=tuple((e.step, {"capacities": e.capacities}) for e in sc.events))
        model = apps.build_congestion(scen)
        x0 = scen.x0 if run.x0 is None else np.array(run.x0, dtype=float)
        plant = model.system if model.system is not None else model.iteration
        schedule = scen.schedule() if model.system is None else None
        return Source("congestion", plant, model.system, x0, schedule, None, None,
                      scenario=scen, model=model)

    scen = apps.PiScenario(_adjacency(sc), sc.rho1, sc.rho2, sc.delta, sc.d, sc.y0, sc.eps1, sc.eps2,
                           sc.delay_steps, tuple((e.step, {"d": e.d}) for e in sc.events))
    psys = apps.build_pi(scen)
    x0 = apps.pi_initial_state(scen) if run.x0 is None else np.array(run.x0, dtype=float)
    n = scen.n_agents
    return Source("pi", psys, psys, x0, scen.schedule() if sc.events else None,
                  scen.delay() if scen.delay_steps else None, slice(n - 1, 2 * n - 1),
                  scen.eps1, scen.eps2, scen)


# --------------------------------------------------------------------------
# Stages

@dataclass
class Reverse:
    cls: str
    problem: object
    params: object

    def to_dict(self) -> dict:
        out = {"class": self.cls, "params": self.params.to_dict()}
        out["problem"] = self.problem.to_dict()
        return out


def stage_classify(src: Source, tol=None):
    if src.linear is None:
        return None
    if src.partitioned:
        return classify_S(src.linear, tol)
    return classify_O(src.linear, tol)


def stage_reverse(src: Source, tol=None) -> Reverse | None:
    if src.linear is None:
        return None
    if src.partitioned:
        prob = reverse_engineer_S(src.linear, src.eps1, src.eps2, tol)
        return Reverse("S", prob, extract_params(prob))
    obj = reverse_engineer_O(src.linear, tol)
    return Reverse("O", obj, extract_params(obj))


def variant_names(specs) -> list[str]:
    names, seen = [], {}
    for spec in specs:
        seen[spec.method] = seen.get(spec.method, 0) + 1
        names.append(spec.method if seen[spec.method] == 1 else f"{spec.method}_{seen[spec.method]}")
    return names


def stage_redesign(src: Source, rev: Reverse | None, specs) -> dict:
    """Build one redesigned plant per spec, keyed by variant name."""
    out = {}
    for name, spec in zip(variant_names(specs), specs):
        if spec.method in ("HB", "AGD"):
            if rev is not None and rev.cls != "O":
                raise ConfigError(f"{spec.method} applies to Class-O systems only", "redesign.method")
            base = src.plant
            params = rev.params if rev is not None else None
            if spec.method == "HB":
                out[name] = hb_redesign(base, params, beta=spec.beta, eps_star=spec.eps_star,
                                        retune_step=spec.retune_step, beta_rule=spec.beta_rule)
            else:
                out[name] = agd_redesign(base, params, beta=spec.beta, schedule=spec.beta_schedule,
                                         eps_star=spec.eps_star, retune_step=spec.retune_step)
        else:
            if rev is None or rev.cls != "S":
                raise ConfigError(f"{spec.method} applies to Class-S systems only", "redesign.method")
            alpha = 0.0 if spec.alpha is None else spec.alpha
            if spec.method == "AL":
                if src.kind == "pi":
                    # Configured alpha multiplies the Laplacian product directly,
                    # while the recovered constraint matrix carries a factor rho1.
                    alpha = alpha / src.scenario.rho1 ** 2
                out[name] = al_redesign(rev.problem, alpha, src.linear)
            else:
                out[name] = hatx_redesign(rev.problem, alpha, src.linear)
    return out


def segments(src: Source, steps: int) -> list[tuple[int, int, np.ndarray]]:
    """``(start, end, reference)`` between consecutive input events."""
    plant = src.plant
    inputs = plant.initial_inputs()
    bounds = [0]
    muts = []
    if src.schedule is not None:
        for k, m in src.schedule.events:
            if k == 0:
                inputs = plant.apply_event(inputs, m)
            elif k < steps:
                bounds.append(k)
                muts.append(m)
    bounds.append(steps)
    out = []
    guess = src.x0
    for i in range(len(bounds) - 1):
        if i > 0:
            inputs = plant.apply_event(inputs, muts[i - 1])
        ref = _reference(src, inputs, guess)
        guess = ref
        out.append((bounds[i], bounds[i + 1], ref))
    return out


def _reference(src: Source, inputs, guess):
    if src.linear is not None:
        base = src.linear.base if src.partitioned else src.linear
        return fixed_point(base, inputs["w"]).x
    return src.model.equilibrium(inputs, guess)


# --------------------------------------------------------------------------
# Certificates

def _cert_entry(variant, cert=None, check=None, reason=None) -> dict:
    entry = {"variant": variant}
    if cert is not None:
        entry["certificate"] = cert.to_dict()
    if check is not None:
        entry["status"] = "pass" if check.passed else "fail"
        entry["check"] = check.to_dict()
    else:
        entry["status"] = "skipped"
        entry["reason"] = reason
    return entry


def _scaled(obj, X):
    """Coordinates ``P^{-1/2} x`` in which the iteration is scalar-step GD."""
    w, V = np.linalg.eigh(obj.P)
    Pmh = (V / np.sqrt(w)) @ V.T
    return X @ Pmh.T


def stage_certify(src: Source, rev: Reverse | None, plants: dict, trajs: dict, segs) -> list[dict]:
    if rev is None:
        return [_cert_entry("OD", reason="nonlinear dynamics: simulation only")]
    out = []
    start, end, ref = segs[0]
    if rev.cls == "O":
        obj, params = rev.problem, rev.params
        X = _scaled(obj, trajs["OD"].states[start:end + 1] - ref)
        r0 = float(np.linalg.norm(X[0]))
        try:
            cert = gd_certificate(params, 1.0)
        except RetrofitError as exc:
            out.append(_cert_entry("OD", reason=str(exc)))
        else:
            if cert.kind == "geometric":
                check = cert.check_errors(np.linalg.norm(X, axis=1))
            else:
                fstar = obj.value(ref)
                gaps = np.array([obj.value(x) for x in trajs["OD"].states[start:end + 1]]) - fstar
                check = cert.check_gaps(gaps, r0)
            out.append(_cert_entry("OD", cert, check))
        for name, plant in plants.items():
            out.append(_certify_momentum(name, plant, params))
        return out

    prob = rev.problem
    if not prob.plain_dual:
        out.append(_cert_entry("OD", reason="dual update uses a non-identity metric"))
    else:
        try:
            cert = pdg_certificate(prob, rev.params)
        except RetrofitError as exc:
            out.append(_cert_entry("OD", reason=str(exc)))
        else:
            if not cert.feasible:
                out.append(_cert_entry("OD", cert, reason="step sizes give c >= 1"))
            else:
                seg = Trajectory(trajs["OD"].states[start:end + 1])
                trace = potential_trace(prob, seg, cert.constants["gamma"])
                out.append(_cert_entry("OD", cert, cert.check_potential(trace)))
    for name in plants:
        out.append(_cert_entry(name, reason="no rate theorem for this retrofit"))
    return out


def _certify_momentum(name, plant, params) -> dict:
    spec = plant.spec
    prescribed = spec.beta is None and spec.eps_star is None and spec.retune_step
    if not prescribed:
        return _cert_entry(name, reason="manually chosen coefficients")
    M = plant.extended_iteration_matrix()
    try:
        if spec.method == "HB":
            cert = hb_certificate(params)
        else:
            cert = agd_certificate(params, spec.beta_schedule)
    except RetrofitError as exc:
        return _cert_entry(name, reason=str(exc))
    if M is None:
        return _cert_entry(name, cert, reason="time-varying momentum: no spectral check")
    return _cert_entry(name, cert, cert.check_spectral(plant.extended_spectral_radius()))


# --------------------------------------------------------------------------
# Metrics and output

def variant_metrics(src: Source, traj: Trajectory, segs, thresholds) -> dict:
    comp = src.components
    out = {"diverged_at": traj.diverged_at, "segments": []}
    last = traj.states.shape[0] - 1
    for start, end, ref in segs:
        if start > last:
            break
        sub = Trajectory(traj.states[start:min(end, last) + 1])
        r = ref if comp is None else ref[comp]
        em = error_metrics(sub, r, comp, tuple(thresholds))
        out["segments"].append({
            "start": start, "end": min(end, last), "reference": r.tolist(),
            "first_reach": {f"{t:g}": v for t, v in em.first_reach.items()},
            "settle": {f"{t:g}": v for t, v in em.settle.items()},
            "final_error": em.final_error,
        })
    em_all = error_metrics(traj, segs[-1][2] if comp is None else segs[-1][2][comp], comp, tuple(thresholds))
    out["total_variation"] = em_all.total_variation
    out["final_error"] = em_all.final_error
    out["errors"] = em_all.errors.tolist()
    if src.kind == "pi":
        cm = consensus_metrics(traj, comp)
        out["final_disagreement"] = cm.final
    return out


@dataclass
class Report:
    exit_code: int = EXIT_OK
    data: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, slice):
        return [o.start, o.stop]
    raise TypeError(type(o))


def run_pipeline(cfg: RunConfig, out_dir: str | Path | None = None, stages: str = "pipeline") -> Report:
    """Run the stages up to ``stages`` (classify, reverse, redesign, simulate,
    certify or pipeline) and write artifacts when ``out_dir`` is given."""
    tol = cfg.tolerance_set()
    rep = Report()
    data = rep.data
    data["name"] = cfg.name
    data["config"] = cfg.model_dump(mode="json")

    try:
        src = build_source(cfg)
    except ConfigError as exc:
        raise PipelineError("config", EXIT_CONFIG, str(exc)) from None

    verdict = stage_classify(src, tol)
    data["classification"] = verdict.to_dict() if verdict is not None else {"class": None, "member": None,
                                                                              "reasons": ["nonlinear dynamics"]}
    if verdict is not None and not verdict.member:
        data["stopped_at"] = "classify"
        rep.exit_code = EXIT_REJECTED
        return rep
    if stages == "classify":
        return rep

    try:
        rev = stage_reverse(src, tol)
    except RetrofitError as exc:
        raise PipelineError("reverse", EXIT_REJECTED, str(exc)) from None
    if rev is not None:
        data["reverse"] = rev.to_dict()
    if stages == "reverse":
        return rep

    specs = [r.spec() for r in cfg.redesign]
    try:
        plants = stage_redesign(src, rev, specs)
    except RetrofitError as exc:
        code = EXIT_CONFIG if isinstance(exc, (ConfigError, MissingCoefficient)) else EXIT_REJECTED
        raise PipelineError("redesign", code, str(exc)) from None
    data["redesign"] = {}
    for name, p in plants.items():
        entry = p.to_dict()
        rho = p.extended_spectral_radius()
        if rho is not None:
            entry["extended_spectral_radius"] = rho
        data["redesign"][name] = entry
    if stages == "redesign":
        return rep

    steps = cfg.run.steps
    variants = {"OD": src.plant, **plants}
    for name, plant in variants.items():
        rep.trajectories[name] = simulate(plant, src.x0, steps, src.schedule, src.delay,
                                          cfg.run.clamp_nonnegative, {"variant": name, "scenario": cfg.name})
    segs = segments(src, steps)
    data["metrics"] = {name: variant_metrics(src, t, segs, cfg.run.thresholds)
                       for name, t in rep.trajectories.items()}
    diverged = [n for n, t in rep.trajectories.items() if t.diverged_at is not None]

    if stages in ("certify", "pipeline") and cfg.run.certify:
        data["certificates"] = stage_certify(src, rev, plants, rep.trajectories, segs)

    if out_dir is not None:
        write_outputs(rep, Path(out_dir), cfg.output.plot, cfg.output.trajectories)

    if diverged:
        data["diverged"] = diverged
        rep.exit_code = EXIT_DIVERGED
    elif any(c["status"] == "fail" for c in data.get("certificates", [])):
        rep.exit_code = EXIT_CERTIFICATE
    data["exit_code"] = rep.exit_code
    return rep


def write_outputs(rep: Report, out: Path, plot: bool = False, trajectories: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, traj in rep.trajectories.items():
        if trajectories:
            write_trajectory_csv(traj, out / f"trajectory_{name}.csv")
        metrics = {k: v for k, v in rep.data.get("metrics", {}).get(name, {}).items()}
        (out / f"metrics_{name}.json").write_text(json.dumps(metrics, indent=2, default=_json_default))
    if plot and rep.trajectories:
        from .plotting import plot_errors, plot_states
        plot_errors(rep.data["metrics"], out / "plot_error.svg")
        for name, traj in rep.trajectories.items():
            plot_states(traj, out / f"plot_states_{name}.svg", title=name)
    (out / "report.json").write_text(rep.to_json())
