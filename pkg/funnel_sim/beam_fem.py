"""
Clamped–free Euler–Bernoulli beam discretized with cubic Hermite elements.

Nodal DOFs are (w, w') per node in global units; the clamped left node is eliminated, the
free right end needs no constraint (moment and shear vanish naturally).
"""
import logging
from pathlib import Path
from typing import Annotated, Dict, List, Literal, NamedTuple, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.linalg import LinAlgError
from scipy.optimize import brentq

from funnel_sim.errors import InvalidConfig, NotPositiveDefinite, NotSymmetric, SingularMass
from funnel_sim.matrix_io import save_matrix
from funnel_sim.passive_lti import PassiveLTI

logger = logging.getLogger(__name__)

DOF_PER_NODE = 2
GAUSS_POINTS = 4
NODE_SNAP_TOL = 1e-12


class DistributedActuation(BaseModel):
    type: Literal["distributed"] = "distributed"
    a: float = Field(ge=0.0, description="left end of the actuated interval")
    b: float = Field(description="right end of the actuated interval")

    model_config = {"extra": "forbid", "frozen": True}

    @model_validator(mode="after")
    def postprocess(self):
        if not self.a < self.b:
            raise ValueError(f"actuation interval must satisfy a < b, got [{self.a}, {self.b}]")
        return self


class PointActuation(BaseModel):
    type: Literal["point"] = "point"
    xi0: float = Field(gt=0.0, description="position of the point force")

    model_config = {"extra": "forbid", "frozen": True}


Actuation = Annotated[Union[DistributedActuation, PointActuation], Field(discriminator="type")]


class BeamConfig(BaseModel):
    length: float = Field(default=1.0, gt=0.0)
    EI: Union[float, List[float]] = Field(default=1.0, description="flexural rigidity")
    rho: Union[float, List[float]] = Field(default=1.0, description="linear density")
    n_elements: int = Field(default=80, ge=2)
    actuation: Actuation

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator("EI", "rho")
    @classmethod
    def _positive(cls, value):
        values = value if isinstance(value, list) else [value]
        if not values or min(values) <= 0.0:
            raise ValueError("material coefficients must be positive")
        return value

    @model_validator(mode="after")
    def postprocess(self):
        act = self.actuation
        if isinstance(act, DistributedActuation) and act.b > self.length:
            raise ValueError(f"actuation interval [{act.a}, {act.b}] leaves the beam [0, {self.length}]")
        if isinstance(act, PointActuation) and act.xi0 > self.length:
            raise ValueError(f"point force at {act.xi0} lies beyond the free end {self.length}")
        return self

    @property
    def element_length(self) -> float:
        return self.length / self.n_elements


class SecondOrderSystem(BaseModel):
    """M q̈ + S q = b_vec u on the reduced (clamped) DOFs."""

    M: np.ndarray
    S: np.ndarray
    b_vec: np.ndarray
    dof_map: Dict[int, Tuple[int, int]]
    n_elements: int
    length: float
    EI: float = Field(default=1.0, gt=0.0)

    model_config = {
        "arbitrary_types_allowed": True,
        "frozen": True,
    }

    @model_validator(mode="after")
    def postprocess(self):
        for name in ("M", "S"):
            matrix = getattr(self, name)
            scale = np.abs(matrix).max()
            if np.abs(matrix - matrix.T).max() > 1e-12 * scale:
                raise NotSymmetric(f"{name} is not symmetric", field_path=name)
            try:
                scipy.linalg.cholesky(matrix, lower=True)
            except LinAlgError as exc:
                raise NotPositiveDefinite(f"{name} is not positive definite: {exc}", field_path=name) from exc
        for arr in (self.M, self.S, self.b_vec):
            arr.setflags(write=False)
        return self

    @property
    def n_dof(self) -> int:
        return self.M.shape[0]

    @property
    def element_length(self) -> float:
        return self.length / self.n_elements


class HermiteBasis(NamedTuple):
    values: np.ndarray
    first: np.ndarray
    second: np.ndarray


def hermite_basis(h: float, s) -> HermiteBasis:
    """Cubic Hermite shape functions on an element of length h at local coordinate s ∈ [0, 1].

    Slope functions are scaled by h so the DOFs are (w, w') in global units; derivatives are
    taken with respect to the global coordinate.
    """
    if h <= 0.0:
        raise ValueError(f"element length must be positive, got {h}")
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("local coordinate must lie in [0, 1]")

    s2 = s * s
    s3 = s2 * s
    values = np.array([
        1.0 - 3.0 * s2 + 2.0 * s3,
        h * s * (1.0 - s) ** 2,
        3.0 * s2 - 2.0 * s3,
        h * s2 * (s - 1.0),
    ])
    first = np.array([
        -6.0 * s + 6.0 * s2,
        h * (1.0 - 4.0 * s + 3.0 * s2),
        6.0 * s - 6.0 * s2,
        h * (3.0 * s2 - 2.0 * s),
    ]) / h
    second = np.array([
        -6.0 + 12.0 * s,
        h * (-4.0 + 6.0 * s),
        6.0 - 12.0 * s,
        h * (6.0 * s - 2.0),
    ]) / h ** 2
    return HermiteBasis(values, first, second)


def element_mass(h: float, rho: float) -> np.ndarray:
    return (rho * h / 420.0) * np.array([
        [156.0, 22.0 * h, 54.0, -13.0 * h],
        [22.0 * h, 4.0 * h ** 2, 13.0 * h, -3.0 * h ** 2],
        [54.0, 13.0 * h, 156.0, -22.0 * h],
        [-13.0 * h, -3.0 * h ** 2, -22.0 * h, 4.0 * h ** 2],
    ])


def element_stiffness(h: float, EI: float) -> np.ndarray:
    return (EI / h ** 3) * np.array([
        [12.0, 6.0 * h, -12.0, 6.0 * h],
        [6.0 * h, 4.0 * h ** 2, -6.0 * h, 2.0 * h ** 2],
        [-12.0, -6.0 * h, 12.0, -6.0 * h],
        [6.0 * h, 2.0 * h ** 2, -6.0 * h, 4.0 * h ** 2],
    ])


def _constant_coefficients(cfg: BeamConfig) -> Tuple[float, float]:
    for name in ("EI", "rho"):
        if isinstance(getattr(cfg, name), list):
            raise InvalidConfig("spatially varying coefficients are not supported", field_path=name)
    return float(cfg.EI), float(cfg.rho)


def global_matrices(cfg: BeamConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Unconstrained (free–free) mass and stiffness matrices."""
    EI, rho = _constant_coefficients(cfg)
    h = cfg.element_length
    size = DOF_PER_NODE * (cfg.n_elements + 1)
    M = np.zeros((size, size))
    S = np.zeros((size, size))
    m_e = element_mass(h, rho)
    k_e = element_stiffness(h, EI)

    for e in range(cfg.n_elements):
        idx = DOF_PER_NODE * e
        M[idx:idx + 4, idx:idx + 4] += m_e
        S[idx:idx + 4, idx:idx + 4] += k_e
    return M, S


def _locate(n_elements: int, length: float, xi: float) -> Tuple[int, float]:
    """Element index and local coordinate of a point; mesh nodes map exactly to s = 0 (or s = 1 at the tip)."""
    t = xi * n_elements / length
    if abs(t - round(t)) < NODE_SNAP_TOL:
        t = float(round(t))
    element = min(int(np.floor(t)), n_elements - 1)
    return element, min(max(t - element, 0.0), 1.0)


def _distributed_load(cfg: BeamConfig, a: float, b: float) -> np.ndarray:
    h = cfg.element_length
    gauss_nodes, gauss_weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    load = np.zeros(DOF_PER_NODE * (cfg.n_elements + 1))

    for e in range(cfg.n_elements):
        left = e * h
        lo, hi = max(a, left), min(b, left + h)
        if hi <= lo:
            continue
        # integrate only the covered part so the indicator jump never falls between Gauss points
        half = 0.5 * (hi - lo)
        points = 0.5 * (hi + lo) + half * gauss_nodes
        local = np.clip((points - left) / h, 0.0, 1.0)
        shape = hermite_basis(h, local).values
        load[DOF_PER_NODE * e:DOF_PER_NODE * e + 4] += half * (shape @ gauss_weights)
    return load


def _point_load(cfg: BeamConfig, xi0: float) -> np.ndarray:
    element, s = _locate(cfg.n_elements, cfg.length, xi0)
    load = np.zeros(DOF_PER_NODE * (cfg.n_elements + 1))
    load[DOF_PER_NODE * element:DOF_PER_NODE * element + 4] = hermite_basis(cfg.element_length, s).values
    return load


def load_vector(cfg: BeamConfig, clamped: bool = True) -> np.ndarray:
    act = cfg.actuation
    if isinstance(act, DistributedActuation):
        load = _distributed_load(cfg, act.a, act.b)
    else:
        load = _point_load(cfg, act.xi0)
    return load[DOF_PER_NODE:] if clamped else load


def assemble(cfg: BeamConfig) -> SecondOrderSystem:
    M, S = global_matrices(cfg)
    # clamp: w(0) = w'(0) = 0
    M = M[DOF_PER_NODE:, DOF_PER_NODE:]
    S = S[DOF_PER_NODE:, DOF_PER_NODE:]
    dof_map = {
        node: (DOF_PER_NODE * (node - 1), DOF_PER_NODE * (node - 1) + 1)
        for node in range(1, cfg.n_elements + 1)
    }
    sos = SecondOrderSystem(
        M=M,
        S=S,
        b_vec=load_vector(cfg),
        dof_map=dof_map,
        n_elements=cfg.n_elements,
        length=cfg.length,
        EI=_constant_coefficients(cfg)[0],
    )
    logger.info("Assembled beam: %d elements, %d DOFs, actuation=%s", cfg.n_elements, sos.n_dof, cfg.actuation.type)
    return sos


def to_passive_lti(sos: SecondOrderSystem) -> PassiveLTI:
    """First-order form x = (q, v) with co-located velocity output and H = blockdiag(S, M)."""
    n = sos.n_dof
    if np.linalg.cond(sos.M) > 1.0 / np.finfo(float).eps:
        raise SingularMass("mass matrix is numerically singular")
    try:
        factor = scipy.linalg.cho_factor(sos.M)
    except LinAlgError as exc:
        raise SingularMass(f"mass matrix factorization failed: {exc}") from exc

    M_inv_S = scipy.linalg.cho_solve(factor, sos.S)
    M_inv_b = scipy.linalg.cho_solve(factor, sos.b_vec)
    zeros = np.zeros((n, n))

    return PassiveLTI(
        H=scipy.linalg.block_diag(sos.S, sos.M),
        A=np.block([[zeros, np.eye(n)], [-M_inv_S, zeros]]),
        B=np.concatenate([np.zeros(n), M_inv_b])[:, None],
        C=np.concatenate([np.zeros(n), sos.b_vec])[None, :],
        D=np.zeros((1, 1)),
    )


def bending_energy(sos: SecondOrderSystem, q) -> np.ndarray:
    """qᵀSq = EI∫(w'')² summed from Gauss-point curvatures, per column of q.

    Curvatures are formed before squaring, so smooth fields keep full relative accuracy
    where the assembled product qᵀ(Sq) cancels large entries.
    """
    q = np.asarray(q, dtype=float)
    columns = q[:, None] if q.ndim == 1 else q
    full = np.vstack([np.zeros((DOF_PER_NODE, columns.shape[1])), columns])
    h = sos.element_length

    points = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
    curvature_rows = hermite_basis(h, points).second.T
    dofs = DOF_PER_NODE * np.arange(sos.n_elements)[:, None] + np.arange(4)
    curvatures = np.einsum("gj,ejk->egk", curvature_rows, full[dofs])
    energy = sos.EI * h * 0.5 * np.sum(curvatures ** 2, axis=(0, 1))
    return energy[0] if q.ndim == 1 else energy


def natural_frequencies(sos: SecondOrderSystem) -> np.ndarray:
    """Angular eigenfrequencies of S φ = λ M φ, ascending.

    Each λ is the Rayleigh quotient of its eigenvector with the stiffness form from
    bending_energy; the dense eigenvalues alone carry an absolute error of order eps·λ_max.
    """
    _, modes = scipy.linalg.eigh(sos.S, sos.M)
    kinetic = np.einsum("ik,ik->k", modes, sos.M @ modes)
    eigenvalues = np.sort(bending_energy(sos, modes) / kinetic)
    return np.sqrt(eigenvalues)


def clamped_free_frequency(cfg: BeamConfig, mode: int = 1) -> float:
    """Analytic angular frequency of a uniform clamped–free beam; βℓ solves cos β cosh β = −1."""
    EI, rho = _constant_coefficients(cfg)
    beta = brentq(lambda x: np.cos(x) * np.cosh(x) + 1.0, (mode - 1) * np.pi, mode * np.pi, xtol=1e-15)
    return (beta / cfg.length) ** 2 * np.sqrt(EI / rho)


def field_at(sos: SecondOrderSystem, q, xi: float, derivative: int = 0) -> float:
    """Interpolated displacement (or its first/second derivative) at position xi."""
    if derivative not in (0, 1, 2):
        raise ValueError("derivative must be 0, 1 or 2")
    full = np.concatenate([np.zeros(DOF_PER_NODE), np.asarray(q, dtype=float)])
    element, s = _locate(sos.n_elements, sos.length, xi)
    basis = hermite_basis(sos.element_length, s)[derivative]
    return float(basis @ full[DOF_PER_NODE * element:DOF_PER_NODE * element + 4])


def export_second_order(sos: SecondOrderSystem, directory: Union[str, Path]) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"M": directory / "M.txt", "S": directory / "S.txt", "b_vec": directory / "b_vec.txt"}
    save_matrix(paths["M"], sos.M)
    save_matrix(paths["S"], sos.S)
    save_matrix(paths["b_vec"], sos.b_vec[:, None])
    return paths
