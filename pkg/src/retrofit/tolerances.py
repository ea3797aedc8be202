"""Numerical tolerances, overridable through ``RETROFIT_TOL_OVERRIDES``."""

from __future__ import annotations

import dataclasses
import json
import os

ENV_VAR = "RETROFIT_TOL_OVERRIDES"


@dataclasses.dataclass(frozen=True)
class Tolerances:
    recon: float = 1e-8
    psd: float = 1e-10
    feas: float = 1e-8
    rank: float = 1e-10
    diag: float = 1e8
    real: float = 1e-9
    unit: float = 1e-8
    cluster: float = 1e-5

    def replace(self, **changes) -> "Tolerances":
        return dataclasses.replace(self, **changes)


def get_tolerances(tol: Tolerances | None = None) -> Tolerances:
    """Return ``tol`` if given, else defaults patched by the environment."""
    if tol is not None:
        return tol
    raw = os.environ.get(ENV_VAR)
    if not raw:
        return Tolerances()
    try:
        overrides = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{ENV_VAR} is not valid JSON: {exc}") from None
    known = {f.name for f in dataclasses.fields(Tolerances)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"{ENV_VAR}: unknown tolerance(s) {sorted(unknown)}")
    return Tolerances(**{k: float(v) for k, v in overrides.items()})
