"""Covariance functions over a scalar input axis, with analytic gradients.

The kernel algebra is a small immutable expression tree: four stationary
bases (squared exponential, Matern 3/2 and 5/2, periodic), a white-noise
leaf, Sum and Product nodes, and a label covariance that turns any input
kernel into a multi-output one via

    k((x, l), (x', l')) = K_label[l, l'] * k_input(x, x').

Positive hyperparameters are optimized in log space; gradients returned by
``gram_gradients`` are taken with respect to that parametrization.  Label
covariances are built from hypersphere angles, which keeps the implied
correlation matrix positive semi-definite with unit diagonal for any angle
values.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np

from .errors import BoundsError, ConfigError, NumericalError

# parameter kinds, used to pick sensible data-driven search bounds
LOG_OUTPUT_SCALE = "log_output_scale"
LOG_LENGTH_SCALE = "log_length_scale"
# the periodic kernel's wiggliness divides sin^2, so it carries no input units
LOG_WIGGLE = "log_wiggle"
LOG_PERIOD = "log_period"
LOG_NOISE_SCALE = "log_noise_scale"
LOG_TAU = "log_tau"
ANGLE = "angle"

def is_log_kind(kind: str) -> bool:
    """Kinds named log_* live in log space in optimization vectors."""
    return kind.startswith("log_")


class LabeledInput(NamedTuple):
    """An input location paired with its integer output label (1-based)."""

    x: float
    label: int


def coerce_inputs(xs) -> tuple[np.ndarray, np.ndarray | None]:
    """Turn a sequence of floats or LabeledInput into (x, labels) arrays."""
    if isinstance(xs, np.ndarray) and xs.ndim == 1:
        return xs.astype(float, copy=False), None
    xs = list(xs)
    if xs and isinstance(xs[0], LabeledInput):
        x = np.array([p.x for p in xs], dtype=float)
        labels = np.array([p.label for p in xs], dtype=int)
        return x, labels
    return np.asarray(xs, dtype=float), None


@dataclass(frozen=True)
class Hyperparameters:
    """Named view of a parameter vector in optimization space.

    Positive-constrained entries hold log values; angles are raw radians.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if not (len(self.names) == len(self.kinds) == len(values)):
            raise ConfigError("hyperparameter names/kinds/values length mismatch")
        if not np.all(np.isfinite(values)):
            raise ConfigError("non-finite hyperparameter values")

    def __len__(self) -> int:
        return len(self.names)

    def raw(self) -> dict[str, float]:
        """Parameters in their natural (non-log) space, keyed by name."""
        out = {}
        for name, kind, value in zip(self.names, self.kinds, self.values):
            out[name] = float(np.exp(value)) if is_log_kind(kind) else float(value)
        return out


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"{name} must be positive and finite, got {value}")
    return value


def _abs_diff(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    return np.abs(x1[:, None] - x2[None, :])


class Kernel(ABC):
    """Base class for covariance expression nodes."""

    def gram(self, xs, xs2=None) -> np.ndarray:
        """Covariance matrix between ``xs`` and ``xs2`` (defaults to ``xs``)."""
        x1, l1 = coerce_inputs(xs)
        if xs2 is None:
            x2, l2 = x1, l1
        else:
            x2, l2 = coerce_inputs(xs2)
        return self._gram(x1, l1, x2, l2)

    def gram_gradients(self, xs) -> list[np.ndarray]:
        """Per-parameter gradients of the square gram, optimization space."""
        return self.gram_with_gradients(xs)[1]

    def gram_with_gradients(self, xs) -> tuple[np.ndarray, list[np.ndarray]]:
        x, labels = coerce_inputs(xs)
        return self._square_gram_and_grads(x, labels)

    def hyperparameters(self) -> Hyperparameters:
        names, kinds, values = [], [], []
        seen: dict[str, int] = {}
        for leaf in self._walk():
            token = leaf._token().lower()
            seen[token] = seen.get(token, 0) + 1
            prefix = token if seen[token] == 1 else f"{token}_{seen[token]}"
            for local, kind, raw in leaf._param_specs():
                names.append(f"{prefix}.{local}")
                kinds.append(kind)
                values.append(math.log(raw) if is_log_kind(kind) else raw)
        return Hyperparameters(tuple(names), tuple(kinds), np.array(values))

    def n_params(self) -> int:
        return sum(len(leaf._param_specs()) for leaf in self._walk())

    def with_hyperparameters(self, values) -> "Kernel":
        """New kernel with parameters replaced (optimization-space vector)."""
        if isinstance(values, Hyperparameters):
            values = values.values
        values = np.asarray(values, dtype=float)
        if len(values) != self.n_params():
            raise ConfigError(
                f"expected {self.n_params()} parameter values, got {len(values)}"
            )
        kinds = self.hyperparameters().kinds
        raw = []
        for v, k in zip(values, kinds):
            if is_log_kind(k):
                # exp can leave the float range for extreme optimizer steps
                try:
                    r = math.exp(v)
                except OverflowError:
                    raise NumericalError(f"log parameter {v} overflows") from None
                if r == 0.0:
                    raise NumericalError(f"log parameter {v} underflows to zero")
                raw.append(r)
            else:
                raw.append(float(v))
        it = iter(raw)
        rebuilt = self._with_raw(it)
        return rebuilt

    def __add__(self, other: "Kernel") -> "Sum":
        return Sum(self, other)

    def __mul__(self, other: "Kernel") -> "Product":
        return Product(self, other)

    # --- subclass surface -------------------------------------------------

    @abstractmethod
    def _gram(self, x1, l1, x2, l2) -> np.ndarray: ...

    @abstractmethod
    def _square_gram_and_grads(self, x, labels) -> tuple[np.ndarray, list[np.ndarray]]: ...

    @abstractmethod
    def _walk(self) -> Iterator["Kernel"]: ...

    @abstractmethod
    def _param_specs(self) -> list[tuple[str, str, float]]: ...

    @abstractmethod
    def _with_raw(self, values: Iterator[float]) -> "Kernel": ...

    def _token(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class SquaredExponential(Kernel):
    """k(x, x') = output_scale^2 * exp(-(x - x')^2 / length_scale^2)."""

    output_scale: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        _check_positive("output_scale", self.output_scale)
        _check_positive("length_scale", self.length_scale)

    def _gram(self, x1, l1, x2, l2):
        d = _abs_diff(x1, x2)
        return self.output_scale**2 * np.exp(-((d / self.length_scale) ** 2))

    def _square_gram_and_grads(self, x, labels):
        d2 = _abs_diff(x, x) ** 2
        k = self.output_scale**2 * np.exp(-d2 / self.length_scale**2)
        return k, [2.0 * k, k * (2.0 * d2 / self.length_scale**2)]

    def _walk(self):
        yield self

    def _param_specs(self):
        return [
            ("output_scale", LOG_OUTPUT_SCALE, self.output_scale),
            ("length_scale", LOG_LENGTH_SCALE, self.length_scale),
        ]

    def _with_raw(self, values):
        return replace(self, output_scale=next(values), length_scale=next(values))

    def _token(self):
        return "SE"


@dataclass(frozen=True)
class Matern(Kernel):
    """Matern covariance with smoothness 3/2 or 5/2.

    nu = 3/2:  sigma^2 (1 + a) exp(-a),            a = sqrt(3) |d| / rho
    nu = 5/2:  sigma^2 (1 + a + a^2/3) exp(-a),    a = sqrt(5) |d| / rho
    """

    nu: float = 2.5
    output_scale: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        if self.nu not in (1.5, 2.5):
            raise ConfigError(f"unsupported Matern smoothness nu={self.nu}")
        _check_positive("output_scale", self.output_scale)
        _check_positive("length_scale", self.length_scale)

    def _values(self, d):
        a = (math.sqrt(3.0) if self.nu == 1.5 else math.sqrt(5.0)) * d / self.length_scale
        poly = 1.0 + a if self.nu == 1.5 else 1.0 + a + a * a / 3.0
        return self.output_scale**2 * poly * np.exp(-a), a

    def _gram(self, x1, l1, x2, l2):
        return self._values(_abs_diff(x1, x2))[0]

    def _square_gram_and_grads(self, x, labels):
        d = _abs_diff(x, x)
        k, a = self._values(d)
        sigma2 = self.output_scale**2
        if self.nu == 1.5:
            dk_dlogrho = sigma2 * a * a * np.exp(-a)
        else:
            dk_dlogrho = sigma2 * (a * a * (1.0 + a) / 3.0) * np.exp(-a)
        return k, [2.0 * k, dk_dlogrho]

    def _walk(self):
        yield self

    def _param_specs(self):
        return [
            ("output_scale", LOG_OUTPUT_SCALE, self.output_scale),
            ("length_scale", LOG_LENGTH_SCALE, self.length_scale),
        ]

    def _with_raw(self, values):
        return replace(self, output_scale=next(values), length_scale=next(values))

    def _token(self):
        return "MA3" if self.nu == 1.5 else "MA5"


@dataclass(frozen=True)
class Periodic(Kernel):
    """k = output_scale^2 exp(-(2/length_scale^2) sin^2(pi (x - x') / period))."""

    output_scale: float = 1.0
    length_scale: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        _check_positive("output_scale", self.output_scale)
        _check_positive("length_scale", self.length_scale)
        _check_positive("period", self.period)

    def _gram(self, x1, l1, x2, l2):
        s2 = np.sin(np.pi * _abs_diff(x1, x2) / self.period) ** 2
        return self.output_scale**2 * np.exp(-2.0 * s2 / self.length_scale**2)

    def _square_gram_and_grads(self, x, labels):
        d = _abs_diff(x, x)
        u = np.pi * d / self.period
        s2 = np.sin(u) ** 2
        k = self.output_scale**2 * np.exp(-2.0 * s2 / self.length_scale**2)
        dk_dloglen = k * (4.0 * s2 / self.length_scale**2)
        dk_dlogp = k * (2.0 * np.pi * d / (self.length_scale**2 * self.period)) * np.sin(2.0 * u)
        return k, [2.0 * k, dk_dloglen, dk_dlogp]

    def _walk(self):
        yield self

    def _param_specs(self):
        return [
            ("output_scale", LOG_OUTPUT_SCALE, self.output_scale),
            ("length_scale", LOG_WIGGLE, self.length_scale),
            ("period", LOG_PERIOD, self.period),
        ]

    def _with_raw(self, values):
        return replace(
            self,
            output_scale=next(values),
            length_scale=next(values),
            period=next(values),
        )

    def _token(self):
        return "PER"


@dataclass(frozen=True)
class WhiteNoise(Kernel):
    """k = scale^2 when the two inputs coincide exactly, else 0."""

    scale: float = 1.0

    def __post_init__(self):
        _check_positive("scale", self.scale)

    @staticmethod
    def _match(x1, l1, x2, l2):
        eq = x1[:, None] == x2[None, :]
        if l1 is not None and l2 is not None:
            eq = eq & (l1[:, None] == l2[None, :])
        return eq.astype(float)

    def _gram(self, x1, l1, x2, l2):
        return self.scale**2 * self._match(x1, l1, x2, l2)

    def _square_gram_and_grads(self, x, labels):
        k = self.scale**2 * self._match(x, labels, x, labels)
        return k, [2.0 * k]

    def _walk(self):
        yield self

    def _param_specs(self):
        return [("scale", LOG_NOISE_SCALE, self.scale)]

    def _with_raw(self, values):
        return replace(self, scale=next(values))

    def _token(self):
        return "NOISE"


# --- label covariance ------------------------------------------------------


def _spherical_factor(angles: np.ndarray, m: int) -> np.ndarray:
    """Upper-triangular factor with unit-norm columns from m(m-1)/2 angles.

    Column c (0-based) is a point on the unit sphere in R^(c+1) written in
    spherical coordinates, so diag(S^T S) is exactly 1 and off-diagonal
    entries of S^T S lie in [-1, 1] for any angle values.
    """
    s = np.zeros((m, m))
    s[0, 0] = 1.0
    k = 0
    for c in range(1, m):
        a = angles[k : k + c]
        k += c
        prod = 1.0
        for i in range(c):
            s[i, c] = prod * math.cos(a[i])
            prod *= math.sin(a[i])
        s[c, c] = prod
    return s


def _spherical_factor_grads(angles: np.ndarray, m: int) -> list[np.ndarray]:
    """d S / d angle_j for each angle, matching _spherical_factor layout."""
    grads = [np.zeros((m, m)) for _ in angles]
    k = 0
    for c in range(1, m):
        a = angles[k : k + c]
        for j in range(c):
            g = grads[k + j]
            # entries i >= j of column c depend on angle j
            for i in range(j, c + 1):
                prod = 1.0
                for t in range(min(i, c)):
                    term = math.sin(a[t])
                    if t == j:
                        term = math.cos(a[t])
                    prod *= term
                if i < c:
                    if i == j:
                        # cos factor at position j differentiates to -sin
                        prod = -math.sin(a[i])
                        for t in range(i):
                            prod *= math.sin(a[t])
                        g[i, c] = prod
                    else:
                        g[i, c] = prod * math.cos(a[i])
                else:
                    g[c, c] = prod
        k += c
    return grads


def label_covariance(angles, shared_scale: float, m: int) -> np.ndarray:
    """m x m output covariance shared_scale * S^T S from hypersphere angles."""
    angles = np.asarray(angles, dtype=float)
    expected = m * (m - 1) // 2
    if angles.shape != (expected,):
        raise ConfigError(
            f"label covariance for m={m} needs {expected} angles, got {angles.shape}"
        )
    _check_positive("shared_scale", shared_scale)
    s = _spherical_factor(angles, m)
    return shared_scale * (s.T @ s)


@dataclass(frozen=True)
class LabelCovariance(Kernel):
    """Covariance between integer output labels, tau * S^T S.

    ``angles`` holds m(m-1)/2 hypersphere angles; ``shared_scale`` is the
    single variance multiplier shared by all outputs.
    """

    m: int
    angles: tuple[float, ...] = ()
    shared_scale: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"label covariance needs m >= 1, got {self.m}")
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        expected = self.m * (self.m - 1) // 2
        if len(self.angles) != expected:
            raise ConfigError(
                f"label covariance for m={self.m} needs {expected} angles, "
                f"got {len(self.angles)}"
            )
        _check_positive("shared_scale", self.shared_scale)

    def matrix(self) -> np.ndarray:
        return label_covariance(np.array(self.angles), self.shared_scale, self.m)

    def _check_labels(self, labels):
        if labels is None:
            raise ConfigError("label covariance requires labeled inputs")
        if np.any((labels < 1) | (labels > self.m)):
            bad = labels[(labels < 1) | (labels > self.m)]
            raise BoundsError(f"labels {sorted(set(bad.tolist()))} outside 1..{self.m}")

    def _gram(self, x1, l1, x2, l2):
        self._check_labels(l1)
        self._check_labels(l2)
        kl = self.matrix()
        return kl[np.ix_(l1 - 1, l2 - 1)]

    def _square_gram_and_grads(self, x, labels):
        self._check_labels(labels)
        idx = labels - 1
        s = _spherical_factor(np.array(self.angles), self.m)
        kl = self.shared_scale * (s.T @ s)
        grads = []
        for ds in _spherical_factor_grads(np.array(self.angles), self.m):
            dkl = self.shared_scale * (ds.T @ s + s.T @ ds)
            grads.append(dkl[np.ix_(idx, idx)])
        grads.append(kl[np.ix_(idx, idx)])  # d/d log tau
        return kl[np.ix_(idx, idx)], grads

    def wrapped(self) -> "LabelCovariance":
        """Equivalent kernel with canonical angles in (0, pi).

        Recovered from the Cholesky factor of the implied correlation
        matrix, which is the unique upper-triangular unit-column factor
        with positive diagonal.
        """
        corr = self.matrix() / self.shared_scale
        jitter = 0.0
        for _ in range(8):
            try:
                upper = np.linalg.cholesky(corr + jitter * np.eye(self.m)).T
                break
            except np.linalg.LinAlgError:
                jitter = 1e-12 if jitter == 0.0 else jitter * 100.0
        else:
            raise ConfigError("label correlation matrix is numerically singular")
        angles = []
        for c in range(1, self.m):
            prod = 1.0
            for i in range(c):
                val = upper[i, c] / prod if prod > 0 else 0.0
                a = math.acos(min(1.0, max(-1.0, val)))
                a = min(max(a, 1e-12), math.pi - 1e-12)
                angles.append(a)
                prod *= math.sin(a)
        return replace(self, angles=tuple(angles))

    def _walk(self):
        yield self

    def _param_specs(self):
        specs = [
            (f"phi_{i + 1}", ANGLE, a) for i, a in enumerate(self.angles)
        ]
        specs.append(("shared_scale", LOG_TAU, self.shared_scale))
        return specs

    def _with_raw(self, values):
        angles = tuple(next(values) for _ in self.angles)
        return replace(self, angles=angles, shared_scale=next(values))

    def _token(self):
        return "LABEL"


@dataclass(frozen=True)
class Sum(Kernel):
    left: Kernel
    right: Kernel

    def _gram(self, x1, l1, x2, l2):
        return self.left._gram(x1, l1, x2, l2) + self.right._gram(x1, l1, x2, l2)

    def _square_gram_and_grads(self, x, labels):
        kl, gl = self.left._square_gram_and_grads(x, labels)
        kr, gr = self.right._square_gram_and_grads(x, labels)
        return kl + kr, gl + gr

    def _walk(self):
        yield from self.left._walk()
        yield from self.right._walk()

    def _param_specs(self):
        raise NotImplementedError  # composite nodes carry no parameters

    def _with_raw(self, values):
        return Sum(self.left._with_raw(values), self.right._with_raw(values))


@dataclass(frozen=True)
class Product(Kernel):
    left: Kernel
    right: Kernel

    def _gram(self, x1, l1, x2, l2):
        return self.left._gram(x1, l1, x2, l2) * self.right._gram(x1, l1, x2, l2)

    def _square_gram_and_grads(self, x, labels):
        kl, gl = self.left._square_gram_and_grads(x, labels)
        kr, gr = self.right._square_gram_and_grads(x, labels)
        grads = [g * kr for g in gl] + [kl * g for g in gr]
        return kl * kr, grads

    def _walk(self):
        yield from self.left._walk()
        yield from self.right._walk()

    def _param_specs(self):
        raise NotImplementedError

    def _with_raw(self, values):
        return Product(self.left._with_raw(values), self.right._with_raw(values))


def sum_terms(kernel: Kernel) -> list[Kernel]:
    """Flatten nested Sum nodes into a list of addends."""
    if isinstance(kernel, Sum):
        return sum_terms(kernel.left) + sum_terms(kernel.right)
    return [kernel]


def mogp_gram(label_cov: np.ndarray, input_kernel: Kernel, inputs) -> np.ndarray:
    """Multi-output gram: entries K_label[l_i, l_j] * k_input(x_i, x_j).

    ``inputs`` is a sequence of LabeledInput with labels in 1..m.  When the
    inputs are cell-major copies of one shared grid this equals the
    Kronecker product of the label covariance with the input-kernel gram.
    """
    label_cov = np.asarray(label_cov, dtype=float)
    m = label_cov.shape[0]
    if label_cov.shape != (m, m):
        raise ConfigError(f"label covariance must be square, got {label_cov.shape}")
    x, labels = coerce_inputs(inputs)
    if labels is None:
        raise ConfigError("mogp_gram requires labeled inputs")
    if np.any((labels < 1) | (labels > m)):
        bad = labels[(labels < 1) | (labels > m)]
        raise BoundsError(f"labels {sorted(set(bad.tolist()))} outside 1..{m}")
    kx = input_kernel._gram(x, None, x, None)
    return label_cov[np.ix_(labels - 1, labels - 1)] * kx


# --- scalar convenience evaluators ------------------------------------------


def eval_se(x, x2, output_scale: float, length_scale: float):
    """Squared-exponential covariance between two locations."""
    return SquaredExponential(output_scale, length_scale).gram(
        np.atleast_1d(np.asarray(x, dtype=float)),
        np.atleast_1d(np.asarray(x2, dtype=float)),
    ).squeeze()[()]


def eval_matern(x, x2, nu: float, output_scale: float, length_scale: float):
    """Matern covariance (nu in {1.5, 2.5}) between two locations."""
    return Matern(nu, output_scale, length_scale).gram(
        np.atleast_1d(np.asarray(x, dtype=float)),
        np.atleast_1d(np.asarray(x2, dtype=float)),
    ).squeeze()[()]


def eval_periodic(x, x2, output_scale: float, length_scale: float, period: float):
    """Periodic covariance between two locations."""
    return Periodic(output_scale, length_scale, period).gram(
        np.atleast_1d(np.asarray(x, dtype=float)),
        np.atleast_1d(np.asarray(x2, dtype=float)),
    ).squeeze()[()]


# --- text grammar ------------------------------------------------------------

_BASE_FACTORIES = {
    "SE": SquaredExponential,
    "MA3": lambda: Matern(nu=1.5),
    "MA5": lambda: Matern(nu=2.5),
    "PER": Periodic,
    "NOISE": WhiteNoise,
}


def base_kernel(token: str) -> Kernel:
    """Fresh base kernel with default parameters for a grammar token."""
    try:
        return _BASE_FACTORIES[token.strip().upper()]()
    except KeyError:
        raise ConfigError(
            f"unknown kernel token {token.strip()!r}; expected one of "
            f"{sorted(_BASE_FACTORIES)}"
        ) from None


def parse_kernel(expression: str) -> Kernel:
    """Parse a '+'-separated kernel expression such as 'MA5+MA3+NOISE'."""
    tokens = [t for t in expression.split("+")]
    if not tokens or any(not t.strip() for t in tokens):
        raise ConfigError(f"malformed kernel expression {expression!r}")
    kernel = base_kernel(tokens[0])
    for token in tokens[1:]:
        kernel = Sum(kernel, base_kernel(token))
    return kernel


def format_kernel(kernel: Kernel) -> str:
    """Inverse of parse_kernel for sums of base kernels."""
    return "+".join(term._token() for term in sum_terms(kernel))


def with_data_scales(kernel: Kernel, x, y) -> Kernel:
    """Rebuild a kernel expression with data-informed starting parameters.

    Output scales start at the target standard deviation and length scales
    at a fraction of the input range, shrinking by 4x for each successive
    stationary leaf so that summed components start on distinct timescales
    instead of a symmetric (and optimizer-degenerate) configuration.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_range = float(x.max() - x.min()) if len(x) > 1 else 1.0
    x_range = max(x_range, 1e-6)
    y_std = max(float(np.std(y)), 1e-4)
    slot = 0

    def rebuild(k: Kernel) -> Kernel:
        nonlocal slot
        if isinstance(k, (Sum, Product)):
            return type(k)(rebuild(k.left), rebuild(k.right))
        if isinstance(k, (SquaredExponential, Matern, Periodic)):
            length = x_range / (3.0 * 4.0**slot)
            slot += 1
            if isinstance(k, Periodic):
                return replace(
                    k, output_scale=y_std, length_scale=1.0, period=2.0 * length
                )
            return replace(k, output_scale=y_std, length_scale=length)
        if isinstance(k, WhiteNoise):
            return replace(k, scale=y_std / 10.0)
        return k

    return rebuild(kernel)
