import pytest
import numpy as np
from pydantic import ValidationError

from funnel_sim.beam_fem import (
    BeamConfig,
    DistributedActuation,
    PointActuation,
    SecondOrderSystem,
    assemble,
    bending_energy,
    clamped_free_frequency,
    element_mass,
    element_stiffness,
    export_second_order,
    field_at,
    hermite_basis,
    load_vector,
    natural_frequencies,
    to_passive_lti,
)
from funnel_sim.errors import InvalidConfig, NotSymmetric, SingularMass
from funnel_sim.matrix_io import load_matrix
from funnel_sim.passive_lti import check_passivity, energy
from tests.conftest import BETA_1


def _quadrature_element_matrices(h: float, EI: float, rho: float):
    """Element matrices from 4-point Gauss–Legendre on the shape functions (exact for degree 7)."""
    nodes, weights = np.polynomial.legendre.leggauss(4)
    s = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    basis = hermite_basis(h, s)
    mass = rho * h * (basis.values * w) @ basis.values.T
    stiffness = EI * h * (basis.second * w) @ basis.second.T
    return mass, stiffness


# ============================================================================
# TEST CLASS: Hermite Shape Functions
# ============================================================================

@pytest.mark.fem
class TestHermiteBasis:
    """Nodal interpolation and closed-form values of the cubic Hermite basis."""

    def test_left_node_interpolation(self):
        """
        TEST: Basis at s = 0.

        Verifies:
        - Values are (1, 0, 0, 0)
        - Global derivative of the left slope function is 1
        """
        basis = hermite_basis(0.25, 0.0)
        np.testing.assert_allclose(basis.values, [1.0, 0.0, 0.0, 0.0], atol=1e-15)
        assert basis.first[1] == pytest.approx(1.0, abs=1e-15)

    def test_right_node_interpolation(self):
        """
        TEST: Basis at s = 1.

        Verifies:
        - Values are (0, 0, 1, 0)
        - Global derivative of the right slope function is 1
        """
        basis = hermite_basis(0.25, 1.0)
        np.testing.assert_allclose(basis.values, [0.0, 0.0, 1.0, 0.0], atol=1e-15)
        assert basis.first[3] == pytest.approx(1.0, abs=1e-15)

    def test_midpoint_values_unit_element(self):
        """
        TEST: Closed-form cubics at s = 0.5, h = 1.

        Verifies:
        - (N1, N2, N3, N4) = (0.5, 0.125, 0.5, -0.125)
        """
        basis = hermite_basis(1.0, 0.5)
        np.testing.assert_allclose(basis.values, [0.5, 0.125, 0.5, -0.125], atol=1e-15)

    def test_partition_of_unity(self):
        """
        TEST: Displacement pair sums to one.

        Verifies:
        - N1 + N3 = 1 on a grid of local coordinates
        - First and second derivatives of N1 + N3 vanish
        """
        s = np.linspace(0.0, 1.0, 41)
        basis = hermite_basis(0.1, s)
        np.testing.assert_allclose(basis.values[0] + basis.values[2], 1.0, atol=1e-15)
        np.testing.assert_allclose(basis.first[0] + basis.first[2], 0.0, atol=1e-12)
        np.testing.assert_allclose(basis.second[0] + basis.second[2], 0.0, atol=1e-9)

    @pytest.mark.validation
    @pytest.mark.parametrize("h,s", [(0.0, 0.5), (-1.0, 0.5), (1.0, -0.1), (1.0, 1.5)])
    def test_invalid_arguments_rejected(self, h, s):
        """
        TEST: Non-positive element length or s outside [0, 1].

        Verifies:
        - ValueError is raised
        """
        with pytest.raises(ValueError):
            hermite_basis(h, s)


# ============================================================================
# TEST CLASS: Element and Global Matrices
# ============================================================================

@pytest.mark.fem
class TestAssembly:
    """Element stencils, clamping and the assembled second-order system."""

    @pytest.mark.parametrize("h,EI,rho", [(1.0, 1.0, 1.0), (0.3, 2.0, 3.0), (0.0125, 1.0, 1.0)])
    def test_element_matrices_match_quadrature(self, h, EI, rho):
        """
        TEST: Stencils agree with quadrature of the shape functions.

        Verifies:
        - Mass stencil equals rho*h*∫N N^T
        - Stiffness stencil equals EI*h*∫N'' N''^T
        """
        mass, stiffness = _quadrature_element_matrices(h, EI, rho)
        np.testing.assert_allclose(element_mass(h, rho), mass, rtol=1e-12, atol=1e-14 * np.abs(mass).max())
        np.testing.assert_allclose(
            element_stiffness(h, EI), stiffness, rtol=1e-12, atol=1e-12 * np.abs(stiffness).max()
        )

    def test_clamped_system_dimensions(self, distributed_beam):
        """
        TEST: 80 elements give 160 reduced DOFs.

        Verifies:
        - Left node DOFs are eliminated
        - dof_map starts at node 1 with indices (0, 1)
        """
        assert distributed_beam.n_dof == 160
        assert distributed_beam.M.shape == (160, 160)
        assert 0 not in distributed_beam.dof_map
        assert distributed_beam.dof_map[1] == (0, 1)
        assert distributed_beam.dof_map[80] == (158, 159)

    def test_matrices_symmetric_positive_definite(self, distributed_beam):
        """
        TEST: Clamped M and S are SPD.

        Verifies:
        - Symmetry within 1e-12 relative
        - Positive smallest eigenvalues
        """
        for matrix in (distributed_beam.M, distributed_beam.S):
            assert np.abs(matrix - matrix.T).max() <= 1e-12 * np.abs(matrix).max()
            assert np.linalg.eigvalsh(matrix).min() > 0.0

    def test_spatially_varying_coefficients_rejected(self):
        """
        TEST: List-valued EI is accepted by the schema but not by assembly.

        Verifies:
        - InvalidConfig names the offending field
        """
        cfg = BeamConfig(n_elements=4, EI=[1.0, 2.0], actuation=PointActuation(xi0=1.0))
        with pytest.raises(InvalidConfig, match="EI"):
            assemble(cfg)

    def test_bending_energy_matches_quadratic_form(self, rng):
        """
        TEST: Curvature-based energy equals q^T S q.

        Verifies:
        - Agreement for random DOF vectors on a coarse mesh
        """
        sos = assemble(BeamConfig(n_elements=5, actuation=PointActuation(xi0=1.0)))
        q = rng.standard_normal((sos.n_dof, 3))
        expected = np.einsum("ik,ik->k", q, sos.S @ q)
        np.testing.assert_allclose(bending_energy(sos, q), expected, rtol=1e-10)


# ============================================================================
# TEST CLASS: Load Vectors
# ============================================================================

@pytest.mark.fem
class TestLoadVector:
    """Distributed and point actuation profiles."""

    def test_distributed_middle_third_total_load(self, distributed_cfg):
        """
        TEST: Indicator of [1/3, 2/3] against the constant field.

        Verifies:
        - Sum over displacement DOFs equals 1/3 within 1e-12
        """
        load = load_vector(distributed_cfg, clamped=False)
        assert load[0::2].sum() == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_distributed_whole_beam_total_load(self):
        """
        TEST: Indicator of [0, l] against the constant field.

        Verifies:
        - Sum over displacement DOFs equals the beam length
        """
        cfg = BeamConfig(length=2.5, n_elements=7, actuation=DistributedActuation(a=0.0, b=2.5))
        load = load_vector(cfg, clamped=False)
        assert load[0::2].sum() == pytest.approx(2.5, abs=1e-12)

    def test_point_load_on_mesh_node_is_unit_vector(self, point_beam):
        """
        TEST: Point force at 0.5 with 80 elements.

        Verifies:
        - b_vec is the unit vector on the displacement DOF of node 40
        """
        index = point_beam.dof_map[40][0]
        expected = np.zeros(point_beam.n_dof)
        expected[index] = 1.0
        np.testing.assert_array_equal(point_beam.b_vec, expected)

    def test_point_load_is_limit_of_mollified_load(self, point_cfg):
        """
        TEST: Distributed load on [x0 - eps, x0 + eps] scaled by 1/(2 eps).

        Verifies:
        - Deviation from the point load is O(eps^2 / h^2)
        """
        eps = 1e-4
        mollified = BeamConfig(
            n_elements=point_cfg.n_elements,
            actuation=DistributedActuation(a=0.5 - eps, b=0.5 + eps),
        )
        approx = load_vector(mollified) / (2.0 * eps)
        h = point_cfg.element_length
        assert np.abs(approx - load_vector(point_cfg)).max() <= 10.0 * eps ** 2 / h ** 2

    def test_mirrored_interval_permutes_free_free_load(self):
        """
        TEST: Mirroring the actuation interval about l/2.

        Verifies:
        - Displacement entries are reversed node-wise
        - Slope entries are reversed with a sign flip
        """
        n = 10
        left = load_vector(BeamConfig(n_elements=n, actuation=DistributedActuation(a=0.23, b=0.61)), clamped=False)
        right = load_vector(BeamConfig(n_elements=n, actuation=DistributedActuation(a=0.39, b=0.77)), clamped=False)
        np.testing.assert_allclose(right[0::2], left[0::2][::-1], atol=1e-13)
        np.testing.assert_allclose(right[1::2], -left[1::2][::-1], atol=1e-13)

    @pytest.mark.passivity
    def test_tip_actuation_is_passive(self):
        """
        TEST: Point force at the free end.

        Verifies:
        - Assembly succeeds with xi0 = l
        - The first-order system passes the KYP check
        """
        sos = assemble(BeamConfig(n_elements=20, actuation=PointActuation(xi0=1.0)))
        assert sos.b_vec[sos.dof_map[20][0]] == 1.0
        assert check_passivity(to_passive_lti(sos)).passive

    @pytest.mark.validation
    @pytest.mark.parametrize("record", [
        {"n_elements": 1, "actuation": {"type": "point", "xi0": 0.5}},
        {"actuation": {"type": "distributed", "a": 0.6, "b": 0.4}},
        {"actuation": {"type": "distributed", "a": 0.5, "b": 1.5}},
        {"actuation": {"type": "point", "xi0": 0.0}},
        {"actuation": {"type": "point", "xi0": 1.2}},
        {"EI": -1.0, "actuation": {"type": "point", "xi0": 0.5}},
        {"actuation": {"type": "point", "xi0": 0.5}, "damping": 0.1},
    ])
    def test_invalid_beam_config_rejected(self, record):
        """
        TEST: Schema violations in BeamConfig.

        Verifies:
        - ValidationError is raised for each malformed record
        """
        with pytest.raises(ValidationError):
            BeamConfig.model_validate(record)


# ============================================================================
# TEST CLASS: First-Order Conversion
# ============================================================================

@pytest.mark.fem
class TestToPassiveLTI:
    """State-space form x = (q, v) with co-located velocity output."""

    def test_state_dimension(self, distributed_beam_lti):
        """
        TEST: 80 elements give a 320-dimensional state.

        Verifies:
        - n = 320, m = 1, zero feedthrough
        """
        assert distributed_beam_lti.n == 320
        assert distributed_beam_lti.m == 1
        assert not distributed_beam_lti.has_feedthrough

    def test_kinetic_energy_block(self, distributed_beam, distributed_beam_lti, rng):
        """
        TEST: energy((0, v)) is the kinetic energy.

        Verifies:
        - energy equals v^T M v
        """
        v = rng.standard_normal(distributed_beam.n_dof)
        x = np.concatenate([np.zeros(distributed_beam.n_dof), v])
        assert energy(distributed_beam_lti, x) == pytest.approx(v @ distributed_beam.M @ v, rel=1e-12)

    def test_point_output_selects_node_velocity(self, point_beam, point_beam_lti, rng):
        """
        TEST: Output for point actuation at 0.5.

        Verifies:
        - y = C x is the velocity DOF of node 40
        """
        x = rng.standard_normal(point_beam_lti.n)
        velocity = x[point_beam.n_dof:]
        assert (point_beam_lti.C @ x)[0] == velocity[point_beam.dof_map[40][0]]

    def test_unforced_flow_conserves_energy(self, distributed_beam_lti, rng):
        """
        TEST: Skew structure of the drift.

        Verifies:
        - x^T (HA + A^T H) x vanishes relative to the size of HA
        """
        sys = distributed_beam_lti
        HA = sys.H @ sys.A
        for _ in range(5):
            x = rng.standard_normal(sys.n)
            assert abs(x @ (HA + HA.T) @ x) <= 1e-10 * np.linalg.norm(HA) * (x @ x)

    def test_near_singular_mass_rejected(self):
        """
        TEST: Mass matrix with condition number above 1/eps.

        Verifies:
        - SingularMass is raised
        """
        sos = SecondOrderSystem(
            M=np.diag([1.0, 1e-20]), S=np.eye(2), b_vec=np.array([1.0, 0.0]),
            dof_map={1: (0, 1)}, n_elements=1, length=1.0,
        )
        with pytest.raises(SingularMass):
            to_passive_lti(sos)

    @pytest.mark.validation
    def test_non_symmetric_mass_rejected(self):
        """
        TEST: SecondOrderSystem with an asymmetric mass matrix.

        Verifies:
        - NotSymmetric is raised during construction and names M
        """
        with pytest.raises(NotSymmetric) as exc_info:
            SecondOrderSystem(
                M=np.array([[2.0, 1.0], [0.0, 2.0]]), S=np.eye(2), b_vec=np.array([1.0, 0.0]),
                dof_map={1: (0, 1)}, n_elements=1, length=1.0,
            )
        assert exc_info.value.field_path == "M"
        assert exc_info.value.exit_code == 2


# ============================================================================
# TEST CLASS: Frequencies, Fields and Export
# ============================================================================

@pytest.mark.fem
class TestModalAndFieldEvaluation:
    """Natural frequencies, interpolated fields and matrix export."""

    def test_analytic_first_frequency(self, distributed_cfg):
        """
        TEST: Clamped-free reference frequency.

        Verifies:
        - omega_1 = beta_1^2 for EI = rho = l = 1
        """
        assert clamped_free_frequency(distributed_cfg) == pytest.approx(BETA_1 ** 2, rel=1e-13)

    def test_frequency_converges_with_fourth_order(self):
        """
        TEST: Lowest frequency under mesh doubling 10 -> 20 -> 40 -> 80.

        Verifies:
        - Observed order in h is at least 3.9 between consecutive meshes
        """
        exact = BETA_1 ** 2
        errors = []
        for n in (10, 20, 40, 80):
            sos = assemble(BeamConfig(n_elements=n, actuation=PointActuation(xi0=1.0)))
            errors.append(abs(natural_frequencies(sos)[0] - exact))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert orders.min() >= 3.9, f"observed orders {orders}"

    def test_second_mode_close_to_analytic(self):
        """
        TEST: Second clamped-free mode on a 40-element mesh.

        Verifies:
        - Relative error below 1e-6
        """
        cfg = BeamConfig(n_elements=40, actuation=PointActuation(xi0=1.0))
        omega = natural_frequencies(assemble(cfg))
        assert omega[1] == pytest.approx(clamped_free_frequency(cfg, mode=2), rel=1e-6)

    def test_field_reproduces_cubic(self):
        """
        TEST: Hermite interpolation of w = x^2 (clamped: w(0) = w'(0) = 0).

        Verifies:
        - Displacement, slope and curvature are reproduced exactly off the nodes
        """
        cfg = BeamConfig(n_elements=8, actuation=PointActuation(xi0=1.0))
        sos = assemble(cfg)
        nodes = np.arange(1, 9) * cfg.element_length
        q = np.ravel(np.column_stack([nodes ** 2, 2.0 * nodes]))
        xi = 0.537
        assert field_at(sos, q, xi) == pytest.approx(xi ** 2, abs=1e-13)
        assert field_at(sos, q, xi, derivative=1) == pytest.approx(2.0 * xi, abs=1e-11)
        assert field_at(sos, q, xi, derivative=2) == pytest.approx(2.0, abs=1e-8)

    def test_export_second_order(self, tmp_path):
        """
        TEST: Export of M, S and b_vec in the plain-text matrix format.

        Verifies:
        - Files are written and read back exactly
        """
        sos = assemble(BeamConfig(n_elements=4, actuation=DistributedActuation(a=0.25, b=0.75)))
        paths = export_second_order(sos, tmp_path / "beam")
        np.testing.assert_array_equal(load_matrix(paths["M"]), sos.M)
        np.testing.assert_array_equal(load_matrix(paths["S"]), sos.S)
        np.testing.assert_array_equal(load_matrix(paths["b_vec"]).ravel(), sos.b_vec)
