"""Explicit prior mean functions for the regression model.

The observation model is y = m(x) + f(x) + noise, where f is the
zero-mean process and m is one of the functions here.  Mean parameters
marked trainable are optimized jointly with the kernel hyperparameters.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError

# parameter kinds for data-driven search bounds
MEAN_OFFSET = "mean_offset"
MEAN_AMPLITUDE = "mean_amplitude"
MEAN_RATE = "mean_rate"

_EXP_LIMIT = 700.0  # exp() overflows past this


class MeanFunction(ABC):
    """Base class; subclasses are immutable value objects."""

    @abstractmethod
    def __call__(self, x) -> np.ndarray: ...

    @abstractmethod
    def gradients(self, x) -> np.ndarray:
        """Partial derivatives w.r.t. trainable parameters, shape (n, p)."""

    @abstractmethod
    def _param_specs(self) -> list[tuple[str, str, float]]:
        """(name, kind, value) for each trainable parameter."""

    @abstractmethod
    def _with_values(self, values) -> "MeanFunction": ...

    def n_params(self) -> int:
        return len(self._param_specs())


@dataclass(frozen=True)
class Zero(MeanFunction):
    """m(x) = 0."""

    def __call__(self, x):
        return np.zeros(len(np.asarray(x, dtype=float)))

    def gradients(self, x):
        return np.zeros((len(np.asarray(x, dtype=float)), 0))

    def _param_specs(self):
        return []

    def _with_values(self, values):
        return self


@dataclass(frozen=True)
class Constant(MeanFunction):
    """m(x) = value; by default fixed (not trained)."""

    value: float = 0.0
    trainable: bool = False

    def __call__(self, x):
        return np.full(len(np.asarray(x, dtype=float)), self.value)

    def gradients(self, x):
        n = len(np.asarray(x, dtype=float))
        if not self.trainable:
            return np.zeros((n, 0))
        return np.ones((n, 1))

    def _param_specs(self):
        if not self.trainable:
            return []
        return [("value", MEAN_OFFSET, self.value)]

    def _with_values(self, values):
        if not self.trainable:
            return self
        return replace(self, value=float(next(values)))


@dataclass(frozen=True)
class ExpDegradation(MeanFunction):
    """m(x) = a1 + a2 * exp(a3 * x), the empirical capacity-fade shape.

    All three coefficients are trainable.  Typical fits have either a2 < 0
    with a3 > 0 (accelerating loss) or a2 > 0 with a3 < 0 (decelerating
    loss approaching the asymptote a1).
    """

    a1: float = 0.0
    a2: float = 1.0
    a3: float = -1.0

    def __post_init__(self):
        for name in ("a1", "a2", "a3"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ConfigError(f"{name} must be finite, got {v}")

    def _exponent(self, x):
        x = np.asarray(x, dtype=float)
        e = self.a3 * x
        if np.any(e > _EXP_LIMIT):
            bad = x[e > _EXP_LIMIT][0]
            raise NumericalError(
                f"exp overflow in degradation mean at x={bad} with a3={self.a3}"
            )
        return np.exp(e)

    def __call__(self, x):
        return self.a1 + self.a2 * self._exponent(x)

    def gradients(self, x):
        x = np.asarray(x, dtype=float)
        e = self._exponent(x)
        return np.column_stack([np.ones(len(x)), e, self.a2 * x * e])

    def _param_specs(self):
        return [
            ("a1", MEAN_OFFSET, self.a1),
            ("a2", MEAN_AMPLITUDE, self.a2),
            ("a3", MEAN_RATE, self.a3),
        ]

    def _with_values(self, values):
        return replace(
            self, a1=float(next(values)), a2=float(next(values)), a3=float(next(values))
        )

    @classmethod
    def initial_guess(cls, x, y) -> "ExpDegradation":
        """Crude decay-shaped start: asymptote at the last observation,
        amplitude spanning the observed drop, rate set by the input range."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x_range = float(x[-1] - x[0]) if len(x) > 1 else 1.0
        if x_range <= 0:
            x_range = 1.0
        return cls(a1=float(y[-1]), a2=float(y[0] - y[-1]), a3=-1.0 / x_range)


_TOKENS = ("ZERO", "CONST", "EXPDEG")


def mean_from_token(token: str, x, y) -> MeanFunction:
    """Build a mean function for training data from a grammar token.

    CONST is pinned to the mean of the observed targets and left fixed;
    EXPDEG starts from the heuristic initial guess.
    """
    token = token.strip().upper()
    if token == "ZERO":
        return Zero()
    if token == "CONST":
        return Constant(value=float(np.mean(np.asarray(y, dtype=float))))
    if token == "EXPDEG":
        return ExpDegradation.initial_guess(x, y)
    raise ConfigError(f"unknown mean token {token!r}; expected one of {_TOKENS}")


def format_mean(mean: MeanFunction) -> str:
    if isinstance(mean, Zero):
        return "ZERO"
    if isinstance(mean, Constant):
        return "CONST"
    if isinstance(mean, ExpDegradation):
        return "EXPDEG"
    raise ConfigError(f"cannot serialize mean function {type(mean).__name__}")


def mean_params(mean: MeanFunction) -> dict[str, float]:
    """All defining parameters (trainable or not), for serialization."""
    if isinstance(mean, Zero):
        return {}
    if isinstance(mean, Constant):
        return {"value": mean.value}
    if isinstance(mean, ExpDegradation):
        return {"a1": mean.a1, "a2": mean.a2, "a3": mean.a3}
    raise ConfigError(f"cannot serialize mean function {type(mean).__name__}")
