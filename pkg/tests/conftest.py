import pytest
import numpy as np

from funnel_sim.beam_fem import BeamConfig, DistributedActuation, PointActuation, assemble, to_passive_lti
from funnel_sim.funnel import ConstantFunnel, ExpApproachFunnel
from funnel_sim.passive_lti import PassiveLTI
from funnel_sim.settings import Settings
from funnel_sim.signals import Constant, Cosine


# Reference values used across modules
BETA_1 = 1.8751040687119611     # first root of cos(b)cosh(b) = -1
BEAM_FUNNEL_LIMIT = 0.1         # 1/sup(phi) for phi(t) = 10 - 9.5 exp(-t/2)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator; every test gets a fresh stream."""
    return np.random.default_rng(20240517)


@pytest.fixture
def scalar_feedthrough_system() -> PassiveLTI:
    """x' = -x + u, y = -x + u: passive with P(lambda) = lambda/(lambda + 1)."""
    return PassiveLTI(H=[[1.0]], A=[[-1.0]], B=[[1.0]], C=[[-1.0]], D=[[1.0]])


@pytest.fixture
def scalar_strict_system() -> PassiveLTI:
    """x' = -x + u, y = x: strictly passive with rate alpha = 1."""
    return PassiveLTI(H=[[1.0]], A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]])


@pytest.fixture
def beam_funnel() -> ExpApproachFunnel:
    return ExpApproachFunnel(a=10.0, b=9.5, c=0.5)


@pytest.fixture
def unit_funnel() -> ConstantFunnel:
    return ConstantFunnel(phi0=2.0)


@pytest.fixture
def cosine_reference() -> Cosine:
    return Cosine(omega=1.0)


@pytest.fixture
def zero_signal() -> Constant:
    return Constant(value=0.0)


@pytest.fixture
def distributed_cfg() -> BeamConfig:
    return BeamConfig(n_elements=80, actuation=DistributedActuation(a=1.0 / 3.0, b=2.0 / 3.0))


@pytest.fixture
def point_cfg() -> BeamConfig:
    return BeamConfig(n_elements=80, actuation=PointActuation(xi0=0.5))


@pytest.fixture
def coarse_distributed_cfg() -> BeamConfig:
    """Same beam on a mesh coarse enough for explicit integration in the default suite."""
    return BeamConfig(n_elements=6, actuation=DistributedActuation(a=1.0 / 3.0, b=2.0 / 3.0))


@pytest.fixture
def coarse_point_cfg() -> BeamConfig:
    return BeamConfig(n_elements=6, actuation=PointActuation(xi0=0.5))


@pytest.fixture(scope="session")
def distributed_beam():
    """Assembled 80-element beam with distributed actuation, shared read-only."""
    cfg = BeamConfig(n_elements=80, actuation=DistributedActuation(a=1.0 / 3.0, b=2.0 / 3.0))
    return assemble(cfg)


@pytest.fixture(scope="session")
def point_beam():
    cfg = BeamConfig(n_elements=80, actuation=PointActuation(xi0=0.5))
    return assemble(cfg)


@pytest.fixture(scope="session")
def distributed_beam_lti(distributed_beam) -> PassiveLTI:
    return to_passive_lti(distributed_beam)


@pytest.fixture(scope="session")
def point_beam_lti(point_beam) -> PassiveLTI:
    return to_passive_lti(point_beam)


@pytest.fixture
def test_settings(tmp_path) -> Settings:
    """Settings isolated from the environment, writing into the test's tmp dir."""
    return Settings(threads=2, log_level="INFO", output_dir=tmp_path / "out")
