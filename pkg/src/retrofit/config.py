"""JSON run configuration with strict validation."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .redesign import RedesignSpec
from .tolerances import Tolerances


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MatrixModel(_Strict):
    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    data: list[float]

    @model_validator(mode="after")
    def _size(self):
        if len(self.data) != self.rows * self.cols:
            raise ValueError(f"data has {len(self.data)} entries, expected {self.rows}x{self.cols}")
        return self

    def array(self) -> np.ndarray:
        return np.array(self.data, dtype=float).reshape(self.rows, self.cols)


class LtiConfig(_Strict):
    kind: Literal["lti"] = "lti"
    A: MatrixModel
    C: Optional[MatrixModel] = None
    w: list[float]
    partition: Optional[int] = Field(default=None, ge=1)
    eps1: float = Field(default=1.0, gt=0)
    eps2: float = Field(default=1.0, gt=0)


class CapacityEvent(_Strict):
    step: int = Field(ge=0)
    capacities: list[float]


class CongestionConfig(_Strict):
    kind: Literal["congestion"]
    routing: list[list[int]]
    gains: Union[float, list[float]] = 0.1
    eps: float = 1.0
    utility: Literal["log", "quadratic"] = "log"
    q: Optional[list[float]] = None
    r1: Optional[list[float]] = None
    penalty: Literal["kelly", "linear"] = "kelly"
    sigma: float = 1.0
    capacities: Optional[list[float]] = None
    r2: Optional[list[float]] = None
    s2: Optional[list[float]] = None
    x0: Optional[list[float]] = None
    events: list[CapacityEvent] = []


class GraphModel(_Strict):
    type: Literal["ring", "path", "complete"]
    n: int = Field(ge=1)


class DisturbanceEvent(_Strict):
    step: int = Field(ge=0)
    d: list[float]


class PiConfig(_Strict):
    kind: Literal["pi"]
    graph: Optional[GraphModel] = None
    adjacency: Optional[list[list[float]]] = None
    rho1: float
    rho2: float
    delta: float
    d: list[float]
    y0: list[float]
    eps1: float = 0.02
    eps2: float = 0.02
    delay_steps: int = 0
    events: list[DisturbanceEvent] = []

    @model_validator(mode="after")
    def _one_graph(self):
        if (self.graph is None) == (self.adjacency is None):
            raise ValueError("give exactly one of 'graph' and 'adjacency'")
        return self


class RedesignModel(_Strict):
    method: Literal["HB", "AGD", "AL", "HATX"]
    beta: Optional[float] = None
    beta_schedule: Literal["constant", "nesterov"] = "constant"
    alpha: Optional[float] = None
    eps_star: Optional[float] = None
    retune_step: bool = True
    beta_rule: Literal["polyak", "unsquared"] = "polyak"

    def spec(self) -> RedesignSpec:
        return RedesignSpec(**self.model_dump())


class RunModel(_Strict):
    steps: int = Field(default=1000, ge=1)
    x0: Optional[list[float]] = None
    delay_steps: int = Field(default=0, ge=0)
    owners: Optional[list[int]] = None
    certify: bool = True
    thresholds: list[float] = [1e-2, 1e-4, 1e-6]
    clamp_nonnegative: bool = False
    seed: Optional[int] = None


class OutputModel(_Strict):
    dir: str = "out"
    plot: bool = False
    trajectories: bool = True


Scenario = Annotated[Union[CongestionConfig, PiConfig], Field(discriminator="kind")]


class RunConfig(_Strict):
    name: str = "run"
    system: Optional[LtiConfig] = None
    scenario: Optional[Scenario] = None
    redesign: list[RedesignModel] = []
    run: RunModel = RunModel()
    output: OutputModel = OutputModel()
    tolerances: dict[str, float] = {}

    @model_validator(mode="after")
    def _one_source(self):
        if (self.system is None) == (self.scenario is None):
            raise ValueError("give exactly one of 'system' and 'scenario'")
        known = set(Tolerances.__dataclass_fields__)
        unknown = set(self.tolerances) - known
        if unknown:
            raise ValueError(f"unknown tolerance(s) {sorted(unknown)}")
        return self

    def tolerance_set(self) -> Tolerances | None:
        if not self.tolerances:
            return None
        return Tolerances(**self.tolerances)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2)


def _error_from(exc: ValidationError) -> ConfigError:
    first = exc.errors()[0]
    loc = ".".join(str(p) for p in first["loc"])
    return ConfigError(first["msg"], loc or None)


def parse_config(obj: dict | str) -> RunConfig:
    """Validate a config dict or JSON string; raises :class:`ConfigError`."""
    try:
        if isinstance(obj, str):
            return RunConfig.model_validate_json(obj)
        return RunConfig.model_validate(obj)
    except ValidationError as exc:
        raise _error_from(exc) from None


def bundled_names() -> list[str]:
    root = resources.files("retrofit") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref: str | Path) -> RunConfig:
    """Load from a path, or ``bundled:<name>`` for a packaged scenario."""
    ref = str(ref)
    if ref.startswith("bundled:"):
        name = ref.split(":", 1)[1]
        res = resources.files("retrofit") / "scenarios" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"no bundled scenario {name!r}; available: {bundled_names()}", "config")
        text = res.read_text()
    else:
        try:
            text = Path(ref).read_text()
        except OSError as exc:
            raise ConfigError(str(exc), "config") from None
    try:
        json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "config") from None
    return parse_config(text)
