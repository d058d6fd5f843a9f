"""
Smooth signals with analytic first and second derivatives.

The family is closed: constants, cosines, polynomials, the raised-cosine bump and
sums/products/scalings of these. Records are tagged by "type" so a scenario file can
describe them directly, e.g. {"type": "cos", "omega": 1.0}.
"""
from typing import Annotated, Any, List, Literal, Optional, Union

import numpy as np
from numpy.polynomial import Polynomial as _NumpyPolynomial
from pydantic import BaseModel, Field, TypeAdapter

Vector = Union[float, List[float]]


def _as_vector(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=float))


class _SignalBase(BaseModel):
    model_config = {"extra": "forbid", "frozen": True}

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: float) -> np.ndarray:
        return self.evaluate(t, 0)

    def first(self, t: float) -> np.ndarray:
        return self.evaluate(t, 1)

    def second(self, t: float) -> np.ndarray:
        return self.evaluate(t, 2)

    @property
    def dim(self) -> int:
        return self.evaluate(0.0, 0).size

    @property
    def bounded(self) -> bool:
        """Value and both derivatives bounded on [0, ∞)."""
        return True

    @property
    def support_end(self) -> Optional[float]:
        """Time after which the signal vanishes identically, None if it never does."""
        return None


def _check_order(order: int) -> None:
    if order not in (0, 1, 2):
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


class Constant(_SignalBase):
    type: Literal["constant"] = "constant"
    value: Vector = 0.0

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_order(order)
        value = _as_vector(self.value)
        return value if order == 0 else np.zeros_like(value)

    @property
    def support_end(self) -> Optional[float]:
        return 0.0 if not np.any(_as_vector(self.value)) else None


class Cosine(_SignalBase):
    """amplitude · cos(ωt + phase)"""

    type: Literal["cos"] = "cos"
    omega: float = 1.0
    phase: float = 0.0
    amplitude: Vector = 1.0

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_order(order)
        arg = self.omega * t + self.phase
        amplitude = _as_vector(self.amplitude)
        if order == 0:
            return amplitude * np.cos(arg)
        if order == 1:
            return -amplitude * self.omega * np.sin(arg)
        return -amplitude * self.omega ** 2 * np.cos(arg)


class Polynomial(_SignalBase):
    """Σ coefficients[k] · t^k; bounded only when constant."""

    type: Literal["poly"] = "poly"
    coefficients: List[float] = Field(min_length=1)

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_order(order)
        poly = _NumpyPolynomial(self.coefficients)
        if order:
            poly = poly.deriv(order)
        return _as_vector(poly(t))

    @property
    def bounded(self) -> bool:
        return not np.any(np.asarray(self.coefficients[1:], dtype=float))


class Bump(_SignalBase):
    """p(t) = ½(1 + cos πt) on [0, 1], 0 afterwards: p(0) = 1, p(1) = 0, p'(0) = p'(1) = 0."""

    type: Literal["bump"] = "bump"

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_order(order)
        if t > 1.0:
            return np.zeros(1)
        arg = np.pi * t
        if order == 0:
            return _as_vector(0.5 * (1.0 + np.cos(arg)))
        if order == 1:
            return _as_vector(-0.5 * np.pi * np.sin(arg))
        return _as_vector(-0.5 * np.pi ** 2 * np.cos(arg))

    @property
    def support_end(self) -> Optional[float]:
        return 1.0


class Sum(_SignalBase):
    type: Literal["sum"] = "sum"
    terms: List["Signal"] = Field(min_length=1)

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        total = self.terms[0].evaluate(t, order)
        for term in self.terms[1:]:
            total = total + term.evaluate(t, order)
        return total

    @property
    def bounded(self) -> bool:
        return all(term.bounded for term in self.terms)

    @property
    def support_end(self) -> Optional[float]:
        ends = [term.support_end for term in self.terms]
        return None if any(end is None for end in ends) else max(ends)


class Product(_SignalBase):
    """Elementwise product; derivatives by the Leibniz rule."""

    type: Literal["product"] = "product"
    factors: List["Signal"] = Field(min_length=1)

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_order(order)
        f = self.factors[0]
        value, first, second = f.evaluate(t, 0), f.evaluate(t, 1), f.evaluate(t, 2)
        for g in self.factors[1:]:
            g0, g1, g2 = g.evaluate(t, 0), g.evaluate(t, 1), g.evaluate(t, 2)
            value, first, second = (
                value * g0,
                first * g0 + value * g1,
                second * g0 + 2.0 * first * g1 + value * g2,
            )
        return (value, first, second)[order]

    @property
    def bounded(self) -> bool:
        # every member of the family is smooth, so a compactly supported factor bounds the product
        return self.support_end is not None or all(f.bounded for f in self.factors)

    @property
    def support_end(self) -> Optional[float]:
        ends = [f.support_end for f in self.factors if f.support_end is not None]
        return min(ends) if ends else None


class Scaled(_SignalBase):
    type: Literal["scaled"] = "scaled"
    signal: "Signal"
    factor: Vector = 1.0

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        return _as_vector(self.factor) * self.signal.evaluate(t, order)

    @property
    def bounded(self) -> bool:
        return self.signal.bounded

    @property
    def support_end(self) -> Optional[float]:
        if not np.any(_as_vector(self.factor)):
            return 0.0
        return self.signal.support_end


Signal = Annotated[
    Union[Constant, Cosine, Polynomial, Bump, Sum, Product, Scaled],
    Field(discriminator="type"),
]

for _model in (Sum, Product, Scaled):
    _model.model_rebuild()

SIGNAL_ADAPTER: TypeAdapter = TypeAdapter(Signal)


def parse_signal(record: Any) -> _SignalBase:
    return SIGNAL_ADAPTER.validate_python(record)
