"""
Finite-dimensional impedance-passive systems and numerical checks of the standing assumptions.

A system is stored as (H, A, B, C, D) where xᵀHx is the stored energy. Passivity is certified
by the KYP block with the known Gram H, so no LMI search is needed.
"""
import logging
import warnings
from pathlib import Path
from typing import Dict, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, field_validator, model_validator
from scipy.linalg import LinAlgError, LinAlgWarning

from funnel_sim.errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    SingularResolvent,
)
from funnel_sim.matrix_io import load_matrix, save_matrix

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_PROBE = 1.0
MATRIX_NAMES = ("H", "A", "B", "C", "D")


def _frozen_matrix(value) -> np.ndarray:
    arr = np.atleast_2d(np.array(value, dtype=float))
    arr.setflags(write=False)
    return arr


class PassiveLTI(BaseModel):
    """State-space model ẋ = Ax + Bu, y = Cx + Du with energy Gram H."""

    H: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    model_config = {
        "arbitrary_types_allowed": True,
        "frozen": True,
    }

    @field_validator("H", "A", "B", "C", "D", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        return _frozen_matrix(value)

    @model_validator(mode="after")
    def postprocess(self):
        self._check_shapes()
        return self

    def _check_shapes(self):
        n = self.A.shape[0]
        m = self.D.shape[0]
        expected = {
            "H": (n, n),
            "A": (n, n),
            "B": (n, m),
            "C": (m, n),
            "D": (m, m),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise DimensionMismatch(f"expected shape {shape}, got {actual}", field_path=name)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def has_feedthrough(self) -> bool:
        return bool(np.any(self.D != 0.0))


class PassivityReport(BaseModel):
    max_kyp_eig: float
    block_norm: float
    kyp_scale: float
    passive: bool
    strict_alpha: float
    strict_alpha_eig: float
    coercivity_c: float
    probe_lambda: float
    tol: float

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def postprocess(self):
        if not np.isfinite(self.coercivity_c):
            raise ValueError("coercivity constant must be finite")
        if self.probe_lambda <= 0:
            raise ValueError("probe lambda must be positive")
        return self


class StrictPassivityResult(BaseModel):
    holds: bool
    margin: float
    max_eig: float
    alpha: float

    model_config = {"frozen": True}


def validate_gram(H: np.ndarray, tol: float = DEFAULT_TOL) -> None:
    scale = 1.0 + np.linalg.norm(H, 2)
    asymmetry = np.linalg.norm(H - H.T, 2)
    if asymmetry > tol * scale:
        raise NotSymmetric(f"energy Gram is not symmetric (|H - H^T| = {asymmetry:.3e})", field_path="H")
    min_eig = float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())
    if min_eig <= 0.0:
        raise NotPositiveDefinite(f"energy Gram is not positive definite (min eig {min_eig:.3e})", field_path="H")


def transfer_eval(sys: PassiveLTI, lam: complex) -> np.ndarray:
    """P(λ) = C(λI − A)⁻¹B + D for Re λ > 0."""
    lam = complex(lam)
    if lam.real <= 0.0:
        raise ValueError(f"probe must lie in the open right half plane, got {lam}")

    resolvent = lam * np.eye(sys.n) - sys.A
    cond = np.linalg.cond(resolvent)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularResolvent(f"lambda*I - A is numerically singular at lambda={lam} (cond {cond:.3e})")
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        try:
            solved = scipy.linalg.solve(resolvent, sys.B.astype(complex))
        except (LinAlgError, LinAlgWarning) as exc:
            raise SingularResolvent(f"lambda*I - A is numerically singular at lambda={lam}: {exc}") from exc
    if not np.all(np.isfinite(solved)):
        raise SingularResolvent(f"resolvent solve at lambda={lam} produced non-finite values")
    return sys.C @ solved + sys.D


def kyp_block(sys: PassiveLTI, alpha: float = 0.0) -> np.ndarray:
    """Symmetric KYP block, shifted by 2αH in the state corner when α > 0."""
    HA = sys.H @ sys.A
    corner = HA + HA.T + 2.0 * alpha * sys.H
    coupling = sys.H @ sys.B - sys.C.T
    block = np.block([
        [corner, coupling],
        [coupling.T, -(sys.D + sys.D.T)],
    ])
    return 0.5 * (block + block.T)


def kyp_scale(sys: PassiveLTI, alpha: float = 0.0) -> float:
    """Magnitude of the terms that cancel in the KYP block.

    A lossless block is pure round-off, so its own norm cannot set the tolerance.
    """
    norms = [np.linalg.norm(M, 2) for M in (sys.H @ sys.A, sys.H @ sys.B, sys.C, sys.D)]
    return float(1.0 + sum(norms) + 2.0 * alpha * np.linalg.norm(sys.H, 2))


def _max_eig_and_norm(block: np.ndarray):
    eigs = np.linalg.eigvalsh(block)
    return float(eigs[-1]), float(np.abs(eigs).max())


def check_coercivity(sys: PassiveLTI, lam: float = DEFAULT_PROBE) -> float:
    """Smallest eigenvalue of P(λ) + P(λ)* at a real probe λ > 0."""
    if not np.isreal(lam) or float(np.real(lam)) <= 0.0:
        raise ValueError(f"coercivity probe must be a positive real, got {lam}")
    P = transfer_eval(sys, float(np.real(lam)))
    return float(np.linalg.eigvalsh(P + P.conj().T).min())


def _coercivity_with_fallback(sys: PassiveLTI, probe: float, attempts: int = 8):
    for _ in range(attempts):
        try:
            return check_coercivity(sys, probe), probe
        except SingularResolvent:
            logger.warning("Singular resolvent at probe %g, doubling the probe", probe)
            probe *= 2.0
    raise SingularResolvent(f"no regular probe found up to lambda={probe:g}")


def check_passivity(
    sys: PassiveLTI,
    tol: float = DEFAULT_TOL,
    *,
    probe_lambda: float = DEFAULT_PROBE,
    alpha: float = 0.0,
) -> PassivityReport:
    validate_gram(sys.H, tol)

    max_eig, norm = _max_eig_and_norm(kyp_block(sys))
    scale = kyp_scale(sys)
    passive = max_eig <= tol * scale
    strict_eig = max_eig if alpha == 0.0 else _max_eig_and_norm(kyp_block(sys, alpha))[0]
    coercivity_c, used_probe = _coercivity_with_fallback(sys, probe_lambda)

    logger.info(
        "KYP check n=%d m=%d: max eig %.3e (|W| %.3e, scale %.3e) -> %s; coercivity c=%.6g at lambda=%g",
        sys.n, sys.m, max_eig, norm, scale, "passive" if passive else "NOT passive", coercivity_c, used_probe,
    )
    return PassivityReport(
        max_kyp_eig=max_eig,
        block_norm=norm,
        kyp_scale=scale,
        passive=passive,
        strict_alpha=alpha,
        strict_alpha_eig=strict_eig,
        coercivity_c=coercivity_c,
        probe_lambda=used_probe,
        tol=tol,
    )


def check_strict_passivity(sys: PassiveLTI, alpha: float, tol: float = DEFAULT_TOL) -> StrictPassivityResult:
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    validate_gram(sys.H, tol)

    max_eig, _ = _max_eig_and_norm(kyp_block(sys, alpha))
    holds = max_eig <= tol * kyp_scale(sys, alpha)
    return StrictPassivityResult(holds=holds, margin=-max_eig, max_eig=max_eig, alpha=alpha)


def energy(sys: PassiveLTI, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise DimensionMismatch(f"state has shape {x.shape}, expected ({sys.n},)", field_path="x")
    return float(x @ sys.H @ x)


def similarity_transform(sys: PassiveLTI, T) -> PassiveLTI:
    """Change of coordinates x = T z."""
    T = np.asarray(T, dtype=float)
    T_inv = np.linalg.inv(T)
    return PassiveLTI(
        H=T.T @ sys.H @ T,
        A=T_inv @ sys.A @ T,
        B=T_inv @ sys.B,
        C=sys.C @ T,
        D=sys.D,
    )


def save_system(sys: PassiveLTI, directory: Union[str, Path]) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in MATRIX_NAMES:
        paths[name] = directory / f"{name}.txt"
        save_matrix(paths[name], getattr(sys, name))
    return paths


def load_system(paths: Dict[str, Union[str, Path]]) -> PassiveLTI:
    return PassiveLTI(**{name: load_matrix(paths[name]) for name in MATRIX_NAMES})
