"""
Funnel-controlled closed loop: right-hand side, adaptive integration and audits.

The integrator is an explicit embedded 4(5) Runge–Kutta pair with PI step control. A stage
that leaves the funnel raises FunnelViolation, which the step controller treats as a
rejection, so every accepted sample satisfies φ(t)‖e(t)‖ < 1.
"""
import logging
from functools import cached_property
from typing import Dict, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from funnel_sim.errors import DimensionMismatch, FunnelViolation, InvalidConfig, StepUnderflow
from funnel_sim.funnel import FunnelSpec, funnel_gain, initial_error
from funnel_sim.monotone_solver import CoerciveOperator, phi_map, solve_implicit
from funnel_sim.passive_lti import PassiveLTI, energy
from funnel_sim.signals import Signal

logger = logging.getLogger(__name__)

LOOP_TOL_CAP = 1e-10
H_MIN_FRACTION = 1e-12
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
PI_ALPHA = 0.7
PI_BETA = 0.4


class ButcherTableau(NamedTuple):
    c: Tuple[float, ...]
    a: Tuple[Tuple[float, ...], ...]
    b: Tuple[float, ...]
    error: Tuple[float, ...]
    order: int
    fsal: bool


# Dormand–Prince 5(4), first same as last
DOPRI54 = ButcherTableau(
    c=(0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0),
    a=(
        (1 / 5,),
        (3 / 40, 9 / 40),
        (44 / 45, -56 / 15, 32 / 9),
        (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
        (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
        (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
    ),
    b=(35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
    error=(71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40),
    order=5,
    fsal=True,
)

# Runge–Kutta–Fehlberg 4(5), fifth-order solution propagated
RKF45 = ButcherTableau(
    c=(0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2),
    a=(
        (1 / 4,),
        (3 / 32, 9 / 32),
        (1932 / 2197, -7200 / 2197, 7296 / 2197),
        (439 / 216, -8.0, 3680 / 513, -845 / 4104),
        (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
    ),
    b=(16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55),
    error=(1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55),
    order=5,
    fsal=False,
)

TABLEAUS: Dict[str, ButcherTableau] = {"dopri54": DOPRI54, "rkf45": RKF45}


class IntegratorOptions(BaseModel):
    rtol: float = Field(default=1e-7, gt=0.0)
    atol: float = Field(default=1e-9, gt=0.0)
    h0: Optional[float] = Field(default=None, gt=0.0)
    h_min: Optional[float] = Field(default=None, gt=0.0, description="defaults to 1e-12 * horizon")
    method: Literal["dopri54", "rkf45"] = "dopri54"
    sample_interval: Optional[float] = Field(default=None, ge=0.0, description="None records every accepted step")

    model_config = {"extra": "forbid", "frozen": True}


class ClosedLoopProblem(BaseModel):
    sys: PassiveLTI
    funnel: FunnelSpec
    y_ref: Signal
    u_ext: Signal
    x0: np.ndarray
    horizon: float = Field(gt=0.0)

    model_config = {"arbitrary_types_allowed": True}

    @field_validator("x0", mode="before")
    @classmethod
    def _as_state(cls, value):
        return np.array(value, dtype=float)

    @model_validator(mode="after")
    def postprocess(self):
        if self.x0.shape != (self.sys.n,):
            raise DimensionMismatch(f"initial state has shape {self.x0.shape}, expected ({self.sys.n},)", field_path="x0")
        for name in ("y_ref", "u_ext"):
            signal = getattr(self, name)
            if signal.dim not in (1, self.sys.m):
                raise DimensionMismatch(f"signal has dimension {signal.dim}, expected {self.sys.m}", field_path=name)
            if not signal.bounded:
                raise InvalidConfig("signal is unbounded on [0, inf)", field_path=name)
        # raises NotCoercive for a feedthrough the output loop cannot be solved with
        self.loop_operator
        return self

    @cached_property
    def loop_operator(self) -> Optional[CoerciveOperator]:
        if not self.sys.has_feedthrough:
            return None
        return CoerciveOperator.from_matrix(self.sys.D)

    def reference(self, t: float) -> np.ndarray:
        return np.broadcast_to(self.y_ref(t), (self.sys.m,))

    def external_input(self, t: float) -> np.ndarray:
        return np.broadcast_to(self.u_ext(t), (self.sys.m,))


class ClosedLoopEval(NamedTuple):
    xdot: np.ndarray
    y: np.ndarray
    u: np.ndarray
    u_fun: np.ndarray
    u_ext: np.ndarray
    y_ref: np.ndarray
    e: np.ndarray
    phi: float


def closed_loop_rhs(problem: ClosedLoopProblem, t: float, x: np.ndarray, loop_tol: float = LOOP_TOL_CAP) -> ClosedLoopEval:
    sys = problem.sys
    phi = problem.funnel.phi(t)
    y_ref = problem.reference(t)
    u_ext = problem.external_input(t)
    Cx = sys.C @ x

    op = problem.loop_operator
    if op is None:
        e = Cx - y_ref
        u_fun = funnel_gain(phi, e)
        u = u_ext + u_fun
        y = Cx
    else:
        # algebraic output loop in w = φe: w = φ(Cx + D u_ext − y_ref) − D·phi_map(w)
        r = phi * (Cx + sys.D @ u_ext - y_ref)
        w = solve_implicit(op, r, tol=loop_tol).w
        e = w / phi
        u_fun = -phi_map(w) / phi
        u = u_ext + u_fun
        y = Cx + sys.D @ u

    xdot = sys.A @ x + sys.B @ u
    return ClosedLoopEval(xdot, y, u, u_fun, u_ext, y_ref, e, phi)


class IntegratorStats(BaseModel):
    accepted: int = 0
    rejected: int = 0
    funnel_rejections: int = 0
    rhs_evaluations: int = 0
    min_step: float = float("inf")
    max_step: float = 0.0
    max_phi_e: float = 0.0


class Trajectory(BaseModel):
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    references: np.ndarray
    errors: np.ndarray
    inv_phi: np.ndarray
    inputs: np.ndarray
    u_fun: np.ndarray
    u_ext: np.ndarray
    energies: np.ndarray
    supply_integral: float = 0.0
    quadrature_error: float = 0.0
    state_error: float = 0.0
    stats: IntegratorStats = Field(default_factory=IntegratorStats)

    model_config = {"arbitrary_types_allowed": True}

    @model_validator(mode="after")
    def postprocess(self):
        length = self.times.shape[0]
        for name in ("states", "outputs", "references", "errors", "inv_phi", "inputs", "u_fun", "u_ext", "energies"):
            if getattr(self, name).shape[0] != length:
                raise DimensionMismatch(f"expected {length} samples", field_path=name)
        if length > 1 and not np.all(np.diff(self.times) > 0.0):
            raise ValueError("sample times must be strictly increasing")
        return self

    @property
    def quad_err(self) -> float:
        return self.quadrature_error + self.state_error

    @property
    def phi_e(self) -> np.ndarray:
        return np.linalg.norm(self.errors, axis=1) / self.inv_phi


class _Recorder:
    def __init__(self, problem: ClosedLoopProblem, sample_interval: Optional[float]):
        self.problem = problem
        self.sample_interval = sample_interval
        self.columns: Dict[str, List] = {name: [] for name in (
            "times", "states", "outputs", "references", "errors", "inv_phi", "inputs", "u_fun", "u_ext", "energies",
        )}
        self.last_time: Optional[float] = None

    def record(self, t: float, x: np.ndarray, ev: ClosedLoopEval, force: bool = False) -> None:
        if not force and self.last_time is not None and self.sample_interval:
            if t - self.last_time < self.sample_interval:
                return
        self.last_time = t
        cols = self.columns
        cols["times"].append(t)
        cols["states"].append(x.copy())
        cols["outputs"].append(np.array(ev.y))
        cols["references"].append(np.array(ev.y_ref))
        cols["errors"].append(np.array(ev.e))
        cols["inv_phi"].append(1.0 / ev.phi)
        cols["inputs"].append(np.array(ev.u))
        cols["u_fun"].append(np.array(ev.u_fun))
        cols["u_ext"].append(np.array(ev.u_ext))
        cols["energies"].append(energy(self.problem.sys, x))

    def build(self, **extra) -> Trajectory:
        arrays = {name: np.array(values) for name, values in self.columns.items()}
        return Trajectory(**arrays, **extra)


class _SupplyQuadrature:
    """Composite trapezoid for ∫2u·y with a divided-difference curvature error estimate."""

    def __init__(self, g0: float):
        self.g = g0
        self.integral = 0.0
        self.error = 0.0
        self.prev_step: Optional[float] = None
        self.prev_slope: Optional[float] = None
        self.prev_curvature = 0.0
        self.first_step: Optional[float] = None

    def add(self, h: float, g_new: float) -> None:
        self.integral += 0.5 * h * (self.g + g_new)
        slope = (g_new - self.g) / h
        if self.prev_slope is None:
            self.first_step = h
        else:
            curvature = 2.0 * abs(slope - self.prev_slope) / (h + self.prev_step)
            if self.first_step is not None:
                self.error += self.first_step ** 3 / 12.0 * curvature
                self.first_step = None
            self.error += h ** 3 / 12.0 * max(curvature, self.prev_curvature)
            self.prev_curvature = curvature
        self.g, self.prev_step, self.prev_slope = g_new, h, slope


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(v * v)))


def _initial_step(rhs, x0: np.ndarray, f0: np.ndarray, opts: IntegratorOptions, order: int, horizon: float) -> float:
    scale = opts.atol + opts.rtol * np.abs(x0)
    d0 = _rms(x0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, horizon)
    try:
        f1 = rhs(h0, x0 + h0 * f0).xdot
    except FunnelViolation:
        return h0 * 1e-2
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100.0 * h0, h1, horizon)


def integrate(problem: ClosedLoopProblem, opts: Optional[IntegratorOptions] = None) -> Trajectory:
    opts = opts or IntegratorOptions()
    tableau = TABLEAUS[opts.method]
    horizon = problem.horizon
    h_min = opts.h_min if opts.h_min is not None else H_MIN_FRACTION * horizon
    loop_tol = min(opts.rtol, LOOP_TOL_CAP)
    stats = IntegratorStats()
    sys = problem.sys

    def rhs(t: float, x: np.ndarray) -> ClosedLoopEval:
        stats.rhs_evaluations += 1
        return closed_loop_rhs(problem, t, x, loop_tol=loop_tol)

    # raises NoFeasibleInit when the initial output lies outside the funnel
    initial_error(sys, problem.x0, problem.external_input(0.0), problem.funnel.phi(0.0), problem.reference(0.0))

    t = 0.0
    x = problem.x0.copy()
    current = rhs(t, x)
    stats.max_phi_e = float(current.phi * np.linalg.norm(current.e))
    recorder = _Recorder(problem, opts.sample_interval)
    recorder.record(t, x, current, force=True)
    supply = _SupplyQuadrature(2.0 * float(current.u @ current.y))
    state_error = 0.0

    stages = len(tableau.c)
    K = np.empty((stages, sys.n))
    b = np.array(tableau.b)
    err_weights = np.array(tableau.error)
    a_rows = [np.array(row) for row in tableau.a]

    h = opts.h0 if opts.h0 is not None else _initial_step(rhs, x, current.xdot, opts, tableau.order, horizon)
    previous_error = 1.0
    end_tol = 1e-14 * horizon

    logger.info("Integrating n=%d m=%d over [0, %g] with %s (rtol=%g, atol=%g, h0=%.3e)",
                sys.n, sys.m, horizon, opts.method, opts.rtol, opts.atol, h)

    while horizon - t > end_tol:
        if h < h_min:
            raise StepUnderflow(f"step size {h:.3e} below h_min={h_min:.3e} at t={t:.17g}", time=t)
        last = h >= horizon - t
        step = horizon - t if last else h
        t_new = horizon if last else t + step

        try:
            K[0] = current.xdot
            stage_eval = current
            for i in range(1, stages):
                stage_state = x + step * (a_rows[i - 1] @ K[:i])
                stage_eval = rhs(t + tableau.c[i] * step, stage_state)
                K[i] = stage_eval.xdot
            if tableau.fsal:
                x_new = stage_state
                endpoint = stage_eval
            else:
                x_new = x + step * (b @ K)
                endpoint = rhs(t_new, x_new)
        except FunnelViolation as exc:
            stats.rejected += 1
            stats.funnel_rejections += 1
            logger.debug("Funnel rejection at t=%.6g, h=%.3e: %s", t, step, exc.detail)
            h = 0.5 * step
            previous_error = 1.0
            continue

        delta = step * (err_weights @ K)
        scale = opts.atol + opts.rtol * np.maximum(np.abs(x), np.abs(x_new))
        error = _rms(delta / scale)

        if not np.isfinite(error) or error > 1.0:
            stats.rejected += 1
            factor = MIN_FACTOR if not np.isfinite(error) else max(MIN_FACTOR, SAFETY * error ** (-1.0 / tableau.order))
            logger.debug("Error rejection at t=%.6g, h=%.3e, err=%.3e", t, step, error)
            h = step * min(factor, 1.0)
            previous_error = 1.0
            continue

        # accepted
        stats.accepted += 1
        stats.min_step = min(stats.min_step, step)
        stats.max_step = max(stats.max_step, step)
        stats.max_phi_e = max(stats.max_phi_e, float(endpoint.phi * np.linalg.norm(endpoint.e)))
        supply.add(step, 2.0 * float(endpoint.u @ endpoint.y))
        H_delta = sys.H @ delta
        state_error += abs(2.0 * float(x_new @ H_delta)) + float(delta @ H_delta)

        t, x, current = t_new, x_new, endpoint
        recorder.record(t, x, current, force=horizon - t <= end_tol)

        if error == 0.0:
            factor = MAX_FACTOR
        else:
            factor = SAFETY * error ** (-PI_ALPHA / tableau.order) * previous_error ** (PI_BETA / tableau.order)
        h = step * min(MAX_FACTOR, max(MIN_FACTOR, factor))
        previous_error = max(error, 1e-4)

    total_steps = stats.accepted + stats.rejected
    if total_steps and stats.funnel_rejections > 0.1 * total_steps:
        logger.warning("Funnel rejections make up %d of %d attempted steps", stats.funnel_rejections, total_steps)
    logger.info("Integration finished: %d accepted, %d rejected (%d funnel), min step %.3e, max phi*|e| %.6f",
                stats.accepted, stats.rejected, stats.funnel_rejections, stats.min_step, stats.max_phi_e)

    return recorder.build(
        supply_integral=supply.integral,
        quadrature_error=supply.error,
        state_error=state_error,
        stats=stats,
    )


class EnergyBalanceReport(BaseModel):
    lhs: float
    rhs: float
    slack: float
    quad_err: float

    @property
    def passes(self) -> bool:
        """Passivity inequality: energy gain ≤ supplied energy, up to the error bar."""
        return self.slack >= -self.quad_err

    @property
    def lossless(self) -> bool:
        return abs(self.slack) <= self.quad_err


def energy_balance_report(problem: ClosedLoopProblem, traj: Trajectory) -> EnergyBalanceReport:
    lhs = energy(problem.sys, traj.states[-1]) - energy(problem.sys, traj.states[0])
    rhs = traj.supply_integral
    return EnergyBalanceReport(lhs=lhs, rhs=rhs, slack=rhs - lhs, quad_err=traj.quad_err)


class FunnelAudit(BaseModel):
    max_phi_e: float
    argmax_t: float
    violated: bool


def verify_funnel(traj: Trajectory) -> FunnelAudit:
    phi_e = traj.phi_e
    index = int(np.argmax(phi_e))
    max_phi_e = float(phi_e[index])
    return FunnelAudit(max_phi_e=max_phi_e, argmax_t=float(traj.times[index]), violated=max_phi_e >= 1.0)
