# funnel_sim/models.py
"""Scenario documents: schema, loading and the system/state builders used by the CLI."""
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from funnel_sim.beam_fem import BeamConfig, SecondOrderSystem, assemble, to_passive_lti
from funnel_sim.errors import ConfigError, DimensionMismatch
from funnel_sim.funnel import FunnelSpec
from funnel_sim.matrix_io import load_matrix
from funnel_sim.passive_lti import MATRIX_NAMES, PassiveLTI
from funnel_sim.signals import Constant, Signal

logger = logging.getLogger(__name__)

# a file path (plain-text matrix format) or an inline matrix
MatrixSource = Union[str, float, List[float], List[List[float]]]


class MatrixSystemSource(BaseModel):
    H: MatrixSource
    A: MatrixSource
    B: MatrixSource
    C: MatrixSource
    D: MatrixSource

    model_config = {"extra": "forbid", "frozen": True}


class SystemSource(BaseModel):
    """Exactly one of a beam description or a set of (H, A, B, C, D) matrices."""

    beam: Optional[BeamConfig] = None
    matrices: Optional[MatrixSystemSource] = None

    model_config = {"extra": "forbid", "frozen": True}

    @model_validator(mode="after")
    def postprocess(self):
        if (self.beam is None) == (self.matrices is None):
            raise ValueError("system needs exactly one of 'beam' or 'matrices'")
        return self


class ScenarioConfig(BaseModel):
    name: str = Field(min_length=1)
    description: str = ""
    system: SystemSource
    funnel: FunnelSpec
    y_ref: Signal
    u_ext: Signal = Field(default_factory=Constant)
    compensate_initial_mismatch: bool = False
    x0: Union[Literal["zero"], str, List[float]] = "zero"
    horizon: float = Field(default=30.0, gt=0.0)
    rtol: float = Field(default=1e-7, gt=0.0)
    atol: float = Field(default=1e-9, gt=0.0)
    method: Literal["dopri54", "rkf45"] = "dopri54"
    sample_interval: Optional[float] = Field(default=None, ge=0.0)
    alpha: Optional[float] = Field(default=None, gt=0.0, description="strict passivity rate to audit, if any")
    probe_lambda: float = Field(default=1.0, gt=0.0)
    base_dir: Optional[Path] = Field(default=None, exclude=True, description="resolves relative paths")

    model_config = {"extra": "forbid"}

    def resolve_path(self, value: str) -> Path:
        path = Path(value)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path


def config_error_from_validation(exc: ValidationError, prefix: str = "") -> ConfigError:
    """First validation error as a ConfigError carrying its dotted field path."""
    first = exc.errors()[0]
    field_path = ".".join(str(part) for part in first["loc"])
    if prefix:
        field_path = f"{prefix}.{field_path}" if field_path else prefix
    return ConfigError(f"{first['msg']} ({exc.error_count()} error(s))", field_path=field_path or None)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}", field_path=str(path)) from exc
    try:
        cfg = ScenarioConfig.model_validate_json(text)
    except ValidationError as exc:
        raise config_error_from_validation(exc) from exc
    logger.info("Loaded scenario %r from %s", cfg.name, path)
    return cfg.model_copy(update={"base_dir": path.parent.resolve()})


def _matrix(cfg: ScenarioConfig, name: str, source: MatrixSource) -> np.ndarray:
    if isinstance(source, str):
        return load_matrix(cfg.resolve_path(source))
    return np.atleast_2d(np.asarray(source, dtype=float))


def build_system(cfg: ScenarioConfig) -> Tuple[PassiveLTI, Optional[SecondOrderSystem]]:
    """Assembled first-order system and, for beams, the second-order FEM data behind it."""
    source = cfg.system
    if source.beam is not None:
        sos = assemble(source.beam)
        return to_passive_lti(sos), sos
    matrices = {name: _matrix(cfg, name, getattr(source.matrices, name)) for name in MATRIX_NAMES}
    try:
        sys = PassiveLTI(**matrices)
    except ValidationError as exc:
        raise config_error_from_validation(exc, prefix="system.matrices") from exc
    return sys, None


def build_initial_state(cfg: ScenarioConfig, n: int) -> np.ndarray:
    if cfg.x0 == "zero":
        return np.zeros(n)
    if isinstance(cfg.x0, str):
        x0 = load_matrix(cfg.resolve_path(cfg.x0)).ravel()
    else:
        x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (n,):
        raise DimensionMismatch(f"initial state has {x0.size} entries, system has {n} states", field_path="x0")
    return x0
