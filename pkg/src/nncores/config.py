"""Run configuration: one JSON document, validated strictly.

Sections are ``problem``, ``model``, ``kernel``, ``sampling``, ``optimizer``
and ``experiment``. Unknown keys are rejected so a typo never silently falls
back to a default.
"""
from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigInvalid
from .problems import PROBLEMS


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemSection(_Strict):
    name: str
    params: dict[str, float] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in PROBLEMS:
            raise ValueError(f"unknown problem {v!r}; choose from {sorted(PROBLEMS)}")
        return v


class ModelSection(_Strict):
    kind: Literal["nn-cores", "pinn", "pinn-hc"] = "nn-cores"
    hidden: list[int] = Field(default_factory=lambda: [20, 20, 20, 20])
    strategy: Literal["rh", "naive"] = "rh"
    w_pde: float = 1.0
    w_rh: float = 1.0
    n_rh: int = Field(64, ge=1)


class KernelSection(_Strict):
    omega: float = 2.0
    kappa_max: float = Field(1e6, gt=1)
    eig_method: Literal["jacobi", "lapack"] = "jacobi"


class SamplingSection(_Strict):
    n_bc: int = Field(40, ge=1)
    n_pde: int = Field(10_000, ge=1)
    n_test: int = Field(10_000, ge=1)
    n_pinn_boundary: int = Field(1000, ge=1)


class OptimizerSection(_Strict):
    method: Literal["lbfgs", "adam"] = "lbfgs"
    learning_rate: Optional[float] = Field(None, gt=0)
    epochs: Optional[int] = Field(None, ge=1)
    history: int = Field(10, ge=1)
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = Field(25, ge=1)
    iterations_per_epoch: int = Field(1, ge=1)


class InverseSection(_Strict):
    unknowns: dict[str, float] = Field(default_factory=dict)
    n_obs: int = Field(200, ge=1)
    log_space: bool = True


class SweepSection(_Strict):
    omega_min: float = -2.0
    omega_max: float = 6.0
    n_omega: int = Field(200, ge=1)
    n_train: list[int] = Field(default_factory=lambda: [10, 20, 40, 80, 160])
    n_test: int = Field(10_000, ge=1)
    stage_b: bool = False
    stage_b_omegas: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0])


class GpDemoSection(_Strict):
    frequencies: list[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    n_train: int = Field(100, ge=1)
    n_test: int = Field(1000, ge=1)
    omega: float = 2.0
    lower: float = -1.0
    upper: float = 1.0


class ExperimentSection(_Strict):
    name: str = "run"
    seeds: list[int] = Field(default_factory=lambda: [0])
    noise: float = Field(0.0, ge=0)
    noise_levels: list[float] = Field(default_factory=lambda: [0.0, 0.005, 0.01])
    eval_every: int = Field(10, ge=1)
    grid_n: int = Field(201, ge=2)
    jobs: int = Field(1, ge=1)
    inverse: InverseSection = Field(default_factory=InverseSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    gp_demo: GpDemoSection = Field(default_factory=GpDemoSection)


class RunConfig(_Strict):
    problem: ProblemSection
    model: ModelSection = Field(default_factory=ModelSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    sampling: SamplingSection = Field(default_factory=SamplingSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git blob id of the canonical JSON, stable across key order and whitespace."""
        data = self.canonical_json().encode("utf-8")
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = [str(p) for p in err["loc"]]
        field = ".".join(loc)
        line = _line_of(text, loc[-1]) if loc else None
        raise ConfigInvalid(err["msg"], field=field, line=line) from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from None
    return parse_config(text)
