"""Funnel functions, the funnel gain law and controller initialization."""
import logging
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, TypeAdapter, model_validator

from funnel_sim.errors import DimensionMismatch, FunnelViolation, NoFeasibleInit
from funnel_sim.monotone_solver import CoerciveOperator, solve_implicit
from funnel_sim.passive_lti import PassiveLTI
from funnel_sim.signals import Bump, Scaled, _SignalBase

logger = logging.getLogger(__name__)


class _FunnelBase(BaseModel):
    model_config = {"extra": "forbid", "frozen": True}

    def phi(self, t: float) -> float:
        raise NotImplementedError

    def phi_dot(self, t: float) -> float:
        raise NotImplementedError

    def phi_ddot(self, t: float) -> float:
        raise NotImplementedError

    def radius(self, t: float) -> float:
        """Funnel radius 1/φ(t)."""
        return 1.0 / self.phi(t)

    @property
    def lower_bound(self) -> float:
        raise NotImplementedError

    @property
    def upper_bound(self) -> float:
        raise NotImplementedError

    @property
    def limit_radius(self) -> float:
        return 1.0 / self.upper_bound


class ExpApproachFunnel(_FunnelBase):
    """φ(t) = a − b·e^{−ct}"""

    type: Literal["exp_approach"] = "exp_approach"
    a: float
    b: float = Field(ge=0.0)
    c: float = Field(gt=0.0)
    mu: Optional[float] = Field(default=None, gt=0.0, description="lower bound; defaults to a - b")

    @model_validator(mode="after")
    def postprocess(self):
        if not self.a > self.b:
            raise ValueError(f"exp_approach funnel needs a > b, got a={self.a}, b={self.b}")
        if self.mu is not None and self.a - self.b < self.mu:
            raise ValueError(f"phi(0) = {self.a - self.b} is below the lower bound mu = {self.mu}")
        return self

    def phi(self, t: float) -> float:
        return self.a - self.b * np.exp(-self.c * t)

    def phi_dot(self, t: float) -> float:
        return self.b * self.c * np.exp(-self.c * t)

    def phi_ddot(self, t: float) -> float:
        return -self.b * self.c ** 2 * np.exp(-self.c * t)

    @property
    def lower_bound(self) -> float:
        return self.mu if self.mu is not None else self.a - self.b

    @property
    def upper_bound(self) -> float:
        return self.a


class ConstantFunnel(_FunnelBase):
    type: Literal["constant"] = "constant"
    phi0: float = Field(gt=0.0)
    mu: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def postprocess(self):
        if self.mu is not None and self.phi0 < self.mu:
            raise ValueError(f"phi0 = {self.phi0} is below the lower bound mu = {self.mu}")
        return self

    def phi(self, t: float) -> float:
        return self.phi0

    def phi_dot(self, t: float) -> float:
        return 0.0

    def phi_ddot(self, t: float) -> float:
        return 0.0

    @property
    def lower_bound(self) -> float:
        return self.mu if self.mu is not None else self.phi0

    @property
    def upper_bound(self) -> float:
        return self.phi0


FunnelSpec = Annotated[Union[ExpApproachFunnel, ConstantFunnel], Field(discriminator="type")]

FUNNEL_ADAPTER: TypeAdapter = TypeAdapter(FunnelSpec)


def parse_funnel(record: Any) -> _FunnelBase:
    return FUNNEL_ADAPTER.validate_python(record)


def funnel_gain(phi_t: float, e) -> np.ndarray:
    """u_fun = −e/(1 − φ²‖e‖²); raises FunnelViolation on or outside the funnel boundary."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    scaled_sq = phi_t ** 2 * float(e @ e)
    if scaled_sq >= 1.0:
        raise FunnelViolation(f"error left the funnel: phi*|e| = {np.sqrt(scaled_sq):.17g}")
    return -e / (1.0 - scaled_sq)


def feedforward_compensator(
    e0,
    phi0: float,
    u_ext0,
    u0=None,
    bump: Optional[_SignalBase] = None,
) -> Scaled:
    """t ↦ p(t)·(e0/(1 − φ0²‖e0‖²) − u_ext(0) + u0); added to u_ext it makes u(0) = u0."""
    e0 = np.atleast_1d(np.asarray(e0, dtype=float))
    u_ext0 = np.atleast_1d(np.asarray(u_ext0, dtype=float))
    u0 = np.zeros_like(e0) if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float))
    bump = bump if bump is not None else Bump()

    mismatch = -funnel_gain(phi0, e0) - u_ext0 + u0
    logger.info("Feedforward compensator amplitude %s", np.array2string(mismatch, precision=6))
    return Scaled(signal=bump, factor=mismatch.tolist())


def _output_parts(sys: PassiveLTI, x0, y_ref0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise DimensionMismatch(f"initial state has shape {x0.shape}, expected ({sys.n},)", field_path="x0")
    y_ref0 = np.atleast_1d(np.asarray(y_ref0, dtype=float))
    if y_ref0.shape != (sys.m,):
        raise DimensionMismatch(f"reference has shape {y_ref0.shape}, expected ({sys.m},)", field_path="y_ref")
    return sys.C @ x0 - y_ref0


def initial_error(sys: PassiveLTI, x0, u_ext0, phi0: float, y_ref0, tol: float = 1e-12) -> np.ndarray:
    """e0 = Cx0 + D(u_ext(0) − e0/(1 − φ0²‖e0‖²)) − y_ref(0) with φ0‖e0‖ < 1."""
    if phi0 <= 0.0:
        raise ValueError(f"phi(0) must be positive, got {phi0}")
    drift = _output_parts(sys, x0, y_ref0)

    if not sys.has_feedthrough:
        if phi0 * np.linalg.norm(drift) >= 1.0:
            raise NoFeasibleInit(
                f"initial output is outside the funnel: phi(0)*|Cx0 - y_ref(0)| = {phi0 * np.linalg.norm(drift):.6g}"
            )
        return drift

    # with w = φ0·e0 the output equation reads w = φ0(Cx0 + D u_ext(0) − y_ref(0)) − D·phi_map(w)
    u_ext0 = np.atleast_1d(np.asarray(u_ext0, dtype=float))
    op = CoerciveOperator.from_matrix(sys.D)
    solution = solve_implicit(op, phi0 * (drift + sys.D @ u_ext0), tol=tol)
    return solution.w / phi0


def compensated_initial_error(sys: PassiveLTI, x0, phi0: float, y_ref0, u0=None) -> np.ndarray:
    """Error at t = 0 once the compensator enforces u(0) = u0: e0 = Cx0 + D u0 − y_ref(0)."""
    drift = _output_parts(sys, x0, y_ref0)
    u0 = np.zeros(sys.m) if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float))
    e0 = drift + sys.D @ u0
    if phi0 * np.linalg.norm(e0) >= 1.0:
        raise NoFeasibleInit(f"compensated initial error is outside the funnel: phi(0)*|e0| = {phi0 * np.linalg.norm(e0):.6g}")
    return e0
