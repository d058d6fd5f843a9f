"""Exception hierarchy. Every error carries a ``detail`` message and the CLI exit code it maps to."""
from typing import Optional


class FunnelSimError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None, field_path: Optional[str] = None):
        if field_path:
            detail = f"{field_path}: {detail}"
        super().__init__(detail)
        self.detail = detail
        self.field_path = field_path
        if exit_code is not None:
            self.exit_code = exit_code


# exit code 1: configuration

class ConfigError(FunnelSimError):
    exit_code = 1

    def __init__(self, detail: str, field_path: Optional[str] = None):
        super().__init__(detail, field_path=field_path)


class InvalidConfig(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


# exit code 2: passivity and standing assumptions

class PassivityError(FunnelSimError):
    exit_code = 2


class NotSymmetric(PassivityError):
    pass


class NotPositiveDefinite(PassivityError):
    pass


class SingularResolvent(PassivityError):
    pass


class SingularMass(PassivityError):
    pass


class PassivityFailure(PassivityError):
    pass


# exit code 3: integration

class IntegrationError(FunnelSimError):
    exit_code = 3


class FunnelViolation(IntegrationError):
    pass


class DomainViolation(IntegrationError):
    pass


class NotCoercive(IntegrationError):
    pass


class MaxIterations(IntegrationError):
    pass


class NoFeasibleInit(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    def __init__(self, detail: str, time: Optional[float] = None):
        super().__init__(detail)
        self.time = time


# exit code 4: audits

class AuditFailure(FunnelSimError):
    exit_code = 4
