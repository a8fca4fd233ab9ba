"""Measurement model y = g(x) + v with a scalar Gaussian prior on x.

x ~ N(0, sigma_x^2) and v is circular symmetric complex Gaussian with
covariance sigma_v^2 * I, so the real and imaginary parts of every noise
component are independent N(0, sigma_v^2 / 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

__all__ = [
    "ModelDomainError",
    "Linear",
    "ComplexExponential",
    "Polynomial",
    "ObservationModel",
    "ProblemSpec",
    "TestPoint",
    "evaluate_model",
]


class ModelDomainError(ValueError):
    """Raised when g(x) is not finite."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Linear:
    """g(x) = c * x with a real gain vector c."""

    c: np.ndarray

    def __post_init__(self):
        c = _frozen(np.atleast_1d(self.c), float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("c must be a non-empty vector")
        object.__setattr__(self, "c", c)

    @property
    def n_y(self) -> int:
        return self.c.size

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., None] * self.c).astype(complex)


@dataclass(frozen=True, eq=False)
class ComplexExponential:
    """g(x)_k = amplitudes[k] * exp(i * frequencies[k] * x)."""

    frequencies: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        w = _frozen(np.atleast_1d(self.frequencies), float)
        a = _frozen(np.atleast_1d(self.amplitudes), complex)
        if w.ndim != 1 or w.size == 0 or w.shape != a.shape:
            raise ValueError("frequencies and amplitudes must be equal-length vectors")
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_y(self) -> int:
        return self.frequencies.size

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitudes * np.exp(1j * x[..., None] * self.frequencies)


@dataclass(frozen=True, eq=False)
class Polynomial:
    """g(x)_k = sum_j coefficients[k, j] * x**j (ascending powers)."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=complex)
        if c.ndim == 1:
            c = c[None, :]
        if c.ndim != 2 or c.size == 0:
            raise ValueError("coefficients must be a non-empty (n_y, degree+1) array")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def n_y(self) -> int:
        return self.coefficients.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=complex)[..., None]
        out = np.zeros(x.shape[:-1] + (self.n_y,), dtype=complex)
        # Horner, highest power first
        for col in self.coefficients.T[::-1]:
            out = out * x + col
        return out


ObservationModel = Union[Linear, ComplexExponential, Polynomial]


@dataclass(frozen=True)
class ProblemSpec:
    sigma_x: float
    sigma_v: float
    model: ObservationModel
    n_y: Optional[int] = None

    def __post_init__(self):
        if not (self.sigma_x > 0 and np.isfinite(self.sigma_x)):
            raise ValueError(f"sigma_x must be positive and finite, got {self.sigma_x!r}")
        if not (self.sigma_v > 0 and np.isfinite(self.sigma_v)):
            raise ValueError(f"sigma_v must be positive and finite, got {self.sigma_v!r}")
        if self.n_y is None:
            object.__setattr__(self, "n_y", self.model.n_y)
        elif self.n_y != self.model.n_y:
            raise ValueError(f"n_y={self.n_y} does not match model output dimension {self.model.n_y}")
        object.__setattr__(self, "sigma_x", float(self.sigma_x))
        object.__setattr__(self, "sigma_v", float(self.sigma_v))


@dataclass(frozen=True)
class TestPoint:
    """Arguments (s1, s2, h1, h2) of a moment, plus the state for the conditional one."""

    __test__ = False  # not a pytest class

    s1: int
    s2: int
    h1: float
    h2: float
    x_cond: Optional[float] = None

    def __post_init__(self):
        for name in ("s1", "s2"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        object.__setattr__(self, "h1", float(self.h1))
        object.__setattr__(self, "h2", float(self.h2))
        if self.x_cond is not None:
            object.__setattr__(self, "x_cond", float(self.x_cond))

    def swapped(self) -> "TestPoint":
        return TestPoint(self.s2, self.s1, self.h2, self.h1, self.x_cond)


def evaluate_model(spec: ProblemSpec, x):
    """Return g(x) as a complex array of shape x.shape + (n_y,).

    Raises ModelDomainError naming the first non-finite output component.
    """
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ModelDomainError("state x must be finite")
    with np.errstate(over="ignore", invalid="ignore"):
        g = spec.model(x)
    bad = ~np.isfinite(g)
    if bad.any():
        k = int(np.argwhere(bad)[0][-1])
        raise ModelDomainError(f"g(x) component {k} is not finite")
    return g
