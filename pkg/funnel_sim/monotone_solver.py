"""
Radial map φ(w) = w/(1−‖w‖²) on the open unit ball and the solver for w = r − Pφ(w).

The solver globalizes with the one-dimensional parameterization w(ξ) = (ξI + P⁻¹)⁻¹P⁻¹r,
whose root ξ* of ‖w(ξ)‖² − 1 + 1/ξ satisfies φ(w) = ξ*w, and then polishes with damped Newton.
Complex data is handled on realified vectors, so ⟨·,·⟩ is the real part of the inner product.
"""
import logging
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, field_validator, model_validator
from scipy.optimize import brentq

from funnel_sim.errors import DimensionMismatch, DomainViolation, MaxIterations, NotCoercive

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
MAX_ITERATIONS = 200
XI_CAP = 1e30
BRACKET_RTOL = 1e-14
MAX_HALVINGS = 60


class CoerciveOperator(BaseModel):
    """Square P with P + P* ⪰ cI, c > 0."""

    P: np.ndarray
    c: float

    model_config = {
        "arbitrary_types_allowed": True,
        "frozen": True,
    }

    @field_validator("P", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        arr = np.atleast_2d(np.array(value))
        arr = arr.astype(complex if np.iscomplexobj(arr) else float)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def postprocess(self):
        rows, cols = self.P.shape
        if rows != cols:
            raise DimensionMismatch(f"operator must be square, got {rows}x{cols}", field_path="P")
        if not self.c > 0.0:
            raise NotCoercive(f"min eig of P + P* is {self.c:.3e}, not positive")
        return self

    @classmethod
    def from_matrix(cls, P) -> "CoerciveOperator":
        P = np.atleast_2d(np.array(P))
        if P.shape[0] != P.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {P.shape}", field_path="P")
        c = float(np.linalg.eigvalsh(P + P.conj().T).min())
        return cls(P=P, c=c)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.P)


class BracketResult(NamedTuple):
    xi: float
    w: np.ndarray
    evaluations: int


class ImplicitSolution(NamedTuple):
    w: np.ndarray
    residual: float
    xi: float
    newton_steps: int


def phi_map(w) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w))
    norm_sq = float(np.vdot(w, w).real)
    if norm_sq >= 1.0:
        raise DomainViolation(f"phi is defined on the open unit ball, got |w| = {np.sqrt(norm_sq):.17g}")
    return w / (1.0 - norm_sq)


def _phi_jacobian(w: np.ndarray) -> np.ndarray:
    norm_sq = float(w @ w)
    gap = 1.0 - norm_sq
    return (gap * np.eye(w.size) + 2.0 * np.outer(w, w)) / gap ** 2


def _realify_matrix(P: np.ndarray) -> np.ndarray:
    return np.block([[P.real, -P.imag], [P.imag, P.real]])


def _realify_vector(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def _complexify_vector(v: np.ndarray) -> np.ndarray:
    half = v.size // 2
    return v[:half] + 1j * v[half:]


def _real_problem(op: CoerciveOperator, r):
    r = np.atleast_1d(np.asarray(r))
    if r.shape != (op.dim,):
        raise DimensionMismatch(f"right-hand side has shape {r.shape}, expected ({op.dim},)", field_path="r")
    if op.is_complex or np.iscomplexobj(r):
        return _realify_matrix(op.P.astype(complex)), _realify_vector(r.astype(complex)), True
    return np.asarray(op.P, dtype=float), r.astype(float), False


def _bracket(P: np.ndarray, r: np.ndarray, xi_start: float) -> BracketResult:
    dim = r.size
    if not np.any(r):
        return BracketResult(1.0, np.zeros(dim), 0)

    P_inv = np.linalg.inv(P)
    rhs = P_inv @ r
    identity = np.eye(dim)
    evaluations = 0

    def radial_gap(xi: float) -> float:
        nonlocal evaluations
        evaluations += 1
        w = np.linalg.solve(xi * identity + P_inv, rhs)
        return float(w @ w) - 1.0 + 1.0 / xi

    lo = max(float(xi_start), 1.0)
    if radial_gap(lo) < 0.0:
        hi = lo
        while lo > 1.0:
            lo = max(lo / 2.0, 1.0)
            if radial_gap(lo) >= 0.0:
                break
            hi = lo
    else:
        hi = 2.0 * lo
        while radial_gap(hi) >= 0.0:
            lo = hi
            hi *= 2.0
            if hi > XI_CAP:
                raise MaxIterations(f"no sign change of the radial gap below xi = {XI_CAP:g}")

    if radial_gap(lo) == 0.0:
        xi = lo
    else:
        xi = brentq(radial_gap, lo, hi, xtol=BRACKET_RTOL * lo, rtol=BRACKET_RTOL, maxiter=MAX_ITERATIONS)
    w = np.linalg.solve(xi * identity + P_inv, rhs)
    return BracketResult(float(xi), w, evaluations)


def bracket_solution(op: CoerciveOperator, r, xi_start: float = 1.0) -> BracketResult:
    """Globalization stage only: ξ* and w = (ξ*I + P⁻¹)⁻¹P⁻¹r, before Newton polishing."""
    P, rr, is_complex = _real_problem(op, r)
    result = _bracket(P, rr, xi_start)
    if is_complex:
        return result._replace(w=_complexify_vector(result.w))
    return result


def solve_implicit(
    op: CoerciveOperator,
    r,
    tol: float = DEFAULT_TOL,
    xi_start: float = 1.0,
    max_iter: int = MAX_ITERATIONS,
) -> ImplicitSolution:
    """Unique w in the open unit ball with ‖w − r + Pφ(w)‖ ≤ tol·(1 + ‖r‖)."""
    P, rr, is_complex = _real_problem(op, r)
    target = tol * (1.0 + np.linalg.norm(rr))

    bracket = _bracket(P, rr, xi_start)
    w = bracket.w

    def residual_of(candidate: np.ndarray) -> np.ndarray:
        return candidate + P @ phi_map(candidate) - rr

    F = residual_of(w)
    res = float(np.linalg.norm(F))
    identity = np.eye(rr.size)
    steps = 0

    while res > target:
        if steps >= max_iter:
            raise MaxIterations(f"residual {res:.3e} above {target:.3e} after {max_iter} Newton steps")
        steps += 1
        jacobian = identity + P @ _phi_jacobian(w)
        direction = np.linalg.solve(jacobian, -F)

        damping = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = w + damping * direction
            if candidate @ candidate < 1.0:
                F_candidate = residual_of(candidate)
                res_candidate = float(np.linalg.norm(F_candidate))
                if res_candidate < res:
                    break
            damping *= 0.5
        else:
            raise MaxIterations(f"Newton stalled at residual {res:.3e} (target {target:.3e})")
        w, F, res = candidate, F_candidate, res_candidate

    logger.debug("solve_implicit: xi*=%.6g, %d bracket evals, %d Newton steps, residual %.3e",
                 bracket.xi, bracket.evaluations, steps, res)
    if is_complex:
        w = _complexify_vector(w)
    return ImplicitSolution(w=w, residual=res, xi=bracket.xi, newton_steps=steps)


def solution_map_lipschitz_bound(op: CoerciveOperator) -> float:
    """Global Lipschitz constant of r ↦ w(r).

    With c₀ = min eig(P⁻¹ + P⁻¹*) and φ' ⪰ I on the ball,
    Re⟨Δw, P⁻¹Δr⟩ ≥ (c₀/2 + 1)‖Δw‖², hence L = ‖P⁻¹‖/(c₀/2 + 1).
    """
    P_inv = np.linalg.inv(op.P)
    c0 = float(np.linalg.eigvalsh(P_inv + P_inv.conj().T).min())
    if c0 <= 0.0:
        raise NotCoercive(f"inverse is not coercive (c0 = {c0:.3e})")
    return float(np.linalg.norm(P_inv, 2) / (0.5 * c0 + 1.0))
