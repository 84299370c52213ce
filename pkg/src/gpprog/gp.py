"""Exact Gaussian process regression with an explicit prior mean.

The observation model is

    y_i = m(x_i) + f(x_i) + eps_i,   f ~ GP(0, k),   eps ~ N(0, sigma^2)

All inference reuses a single Cholesky factorization of K + sigma^2 I:
the marginal likelihood, its gradients, posterior conditioning, additive
decomposition, and sampling.  Models are immutable; training produces new
instances via ``with_opt_vector``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import ConfigError, ContractError, NumericalError
from .kernels import (
    Hyperparameters,
    Kernel,
    LabelCovariance,
    Product,
    sum_terms,
)
from .meanfn import Constant, MeanFunction, Zero

LOG_NOISE_VARIANCE = "log_noise_variance"

_LOG2PI = math.log(2.0 * math.pi)


def jittered_cholesky(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding diagonal jitter only if needed.

    The first attempt uses no jitter; on failure the jitter starts at
    1e-9 times the mean diagonal and escalates tenfold up to 1e-3 of the
    mean diagonal, after which a NumericalError is raised.
    """
    if not np.all(np.isfinite(a)):
        raise NumericalError("covariance matrix contains non-finite entries")
    diag_mean = float(np.mean(np.diag(a)))
    jitter = 0.0
    while True:
        try:
            shifted = a if jitter == 0.0 else a + jitter * np.eye(len(a))
            return cholesky(shifted, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter = diag_mean * 1e-9 if jitter == 0.0 else jitter * 10.0
            if jitter > diag_mean * 1e-3:
                eigs = np.linalg.eigvalsh(a)
                raise NumericalError(
                    "covariance not positive definite even with jitter "
                    f"{diag_mean * 1e-3:.3e}; eigenvalue range "
                    f"[{eigs[0]:.3e}, {eigs[-1]:.3e}]"
                ) from None


@dataclass(frozen=True, eq=False)
class PosteriorComponent:
    """Posterior of one additive kernel term."""

    name: str
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True, eq=False)
class Posterior:
    """Posterior at a set of test inputs.

    ``variance_latent`` excludes observation noise; ``variance_noisy`` adds
    it back and is what the default credible bounds use.
    """

    x: np.ndarray
    labels: np.ndarray | None
    mean: np.ndarray
    variance_latent: np.ndarray
    variance_noisy: np.ndarray
    components: tuple[PosteriorComponent, ...] | None = None

    @property
    def sigma_latent(self) -> np.ndarray:
        return np.sqrt(self.variance_latent)

    @property
    def sigma_noisy(self) -> np.ndarray:
        return np.sqrt(self.variance_noisy)

    def bounds(self, n_sigma: float = 2.0, include_noise: bool = True):
        """(lower, upper) credible curves at mean +/- n_sigma standard deviations."""
        sd = self.sigma_noisy if include_noise else self.sigma_latent
        return self.mean - n_sigma * sd, self.mean + n_sigma * sd

    def to_dict(self) -> dict:
        lower, upper = self.bounds()
        out = {
            "x": [float(v) for v in self.x],
            "mean": [float(v) for v in self.mean],
            "sigma_latent": [float(v) for v in self.sigma_latent],
            "sigma_noisy": [float(v) for v in self.sigma_noisy],
            "lower_2sigma": [float(v) for v in lower],
            "upper_2sigma": [float(v) for v in upper],
        }
        if self.labels is not None:
            out["labels"] = [int(v) for v in self.labels]
        if self.components is not None:
            out["components"] = [
                {
                    "name": c.name,
                    "mean": [float(v) for v in c.mean],
                    "sigma": [float(v) for v in np.sqrt(c.variance)],
                }
                for c in self.components
            ]
        return out


def _checked_variance(var: np.ndarray, scale: float) -> np.ndarray:
    """Clamp tiny negative variances from rounding; fail loudly otherwise."""
    floor = -1e-10 * max(1.0, scale)
    if np.any(var < floor):
        raise NumericalError(
            f"posterior variance {var.min():.3e} below tolerance {floor:.3e}"
        )
    return np.clip(var, 0.0, None)


class GpModel:
    """An immutable GP regression model bound to its training data.

    ``labels`` marks multi-output training data; they must then accompany
    every prediction request as well.
    """

    def __init__(
        self,
        kernel: Kernel,
        x,
        y,
        mean: MeanFunction | None = None,
        noise_variance: float = 1e-4,
        labels=None,
    ):
        self.kernel = kernel
        self.mean = mean if mean is not None else Zero()
        self.x = np.asarray(x, dtype=float).copy()
        self.y = np.asarray(y, dtype=float).copy()
        self.labels = None if labels is None else np.asarray(labels, dtype=int).copy()
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise ConfigError("training inputs and targets must be equal-length 1-d")
        if len(self.x) < 1:
            raise ConfigError("at least one training point required")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ConfigError("non-finite training data")
        if self.labels is not None and self.labels.shape != self.x.shape:
            raise ConfigError("labels must match training inputs in length")
        if not (noise_variance > 0 and math.isfinite(noise_variance)):
            raise ConfigError(f"noise variance must be positive, got {noise_variance}")
        self.noise_variance = float(noise_variance)
        for arr in (self.x, self.y) + (() if self.labels is None else (self.labels,)):
            arr.flags.writeable = False
        self._state = None

    # --- constructors -------------------------------------------------------

    @classmethod
    def from_series(cls, series, kernel, mean=None, noise_variance=1e-4):
        if mean is None:
            mean = Constant(value=float(np.mean(series.capacities)))
        return cls(kernel, series.cycles, series.capacities, mean, noise_variance)

    @classmethod
    def for_fleet(cls, fleet, input_kernel, mean=None, noise_variance=1e-4, label_cov=None):
        """Multi-output model over every observation in the fleet.

        The covariance becomes Product(LabelCovariance(m), input_kernel).
        """
        x, y, labels = fleet.labeled_arrays()
        if label_cov is None:
            n_angles = fleet.m * (fleet.m - 1) // 2
            label_cov = LabelCovariance(fleet.m, angles=(math.pi / 4,) * n_angles)
        elif label_cov.m != fleet.m:
            raise ConfigError(
                f"label covariance is for m={label_cov.m}, fleet has m={fleet.m}"
            )
        if mean is None:
            mean = Constant(value=float(np.mean(y)))
        kernel = Product(label_cov, input_kernel)
        return cls(kernel, x, y, mean, noise_variance, labels=labels)

    # --- parameter plumbing ---------------------------------------------------

    def hyperparameters(self) -> Hyperparameters:
        """Kernel parameters, then log noise variance, then mean parameters."""
        kh = self.kernel.hyperparameters()
        names = list(kh.names) + ["noise.variance"]
        kinds = list(kh.kinds) + [LOG_NOISE_VARIANCE]
        values = list(kh.values) + [math.log(self.noise_variance)]
        for local, kind, value in self.mean._param_specs():
            names.append(f"mean.{local}")
            kinds.append(kind)
            values.append(value)
        return Hyperparameters(tuple(names), tuple(kinds), np.array(values))

    def opt_vector(self) -> np.ndarray:
        return self.hyperparameters().values.copy()

    def param_names(self) -> tuple[str, ...]:
        return self.hyperparameters().names

    def param_kinds(self) -> tuple[str, ...]:
        return self.hyperparameters().kinds

    def with_opt_vector(self, values) -> "GpModel":
        values = np.asarray(values, dtype=float)
        nk = self.kernel.n_params()
        expected = nk + 1 + self.mean.n_params()
        if len(values) != expected:
            raise ConfigError(f"expected {expected} parameter values, got {len(values)}")
        kernel = self.kernel.with_hyperparameters(values[:nk])
        log_noise = values[nk]
        if log_noise > 700.0 or np.exp(log_noise) == 0.0:
            raise NumericalError(f"log noise variance {log_noise} leaves the float range")
        mean = self.mean._with_values(iter(values[nk + 1 :]))
        return GpModel(
            kernel,
            self.x,
            self.y,
            mean=mean,
            noise_variance=float(np.exp(log_noise)),
            labels=self.labels,
        )

    # --- inference ---------------------------------------------------------

    def _factorization(self):
        if self._state is None:
            k = self.kernel._gram(self.x, self.labels, self.x, self.labels)
            a = k + self.noise_variance * np.eye(len(self.x))
            chol, jitter = jittered_cholesky(a)
            resid = self.y - self.mean(self.x)
            alpha = cho_solve((chol, True), resid, check_finite=False)
            self._state = (chol, jitter, resid, alpha)
        return self._state

    def nlml(self) -> float:
        """Negative log marginal likelihood of the training data."""
        chol, _, resid, alpha = self._factorization()
        n = len(self.x)
        return float(
            0.5 * resid @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * n * _LOG2PI
        )

    def nlml_value_and_gradients(self) -> tuple[float, np.ndarray]:
        """NLML and its gradient in optimization space (kernel, noise, mean)."""
        k, dks = self.kernel._square_gram_and_grads(self.x, self.labels)
        n = len(self.x)
        a = k + self.noise_variance * np.eye(n)
        chol, _ = jittered_cholesky(a)
        resid = self.y - self.mean(self.x)
        alpha = cho_solve((chol, True), resid, check_finite=False)
        value = float(0.5 * resid @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * n * _LOG2PI)
        kinv = cho_solve((chol, True), np.eye(n), check_finite=False)
        w = kinv - np.outer(alpha, alpha)
        grads = [0.5 * float(np.sum(w * dk)) for dk in dks]
        grads.append(0.5 * self.noise_variance * float(np.trace(w)))
        mean_grads = self.mean.gradients(self.x)
        if mean_grads.shape[1]:
            grads.extend((-(mean_grads.T @ alpha)).tolist())
        return value, np.array(grads)

    def nlml_gradients(self) -> dict[str, float]:
        """Named NLML gradients for every trainable parameter."""
        _, grads = self.nlml_value_and_gradients()
        return dict(zip(self.param_names(), grads.tolist()))

    def _cross_and_prior(self, kernel, x_new, labels_new):
        ks = kernel._gram(x_new, labels_new, self.x, self.labels)
        prior = kernel._gram(x_new, labels_new, x_new, labels_new)
        return ks, prior

    def _require_labels(self, x_new, labels):
        x_new = np.asarray(x_new, dtype=float)
        if self.labels is not None:
            if labels is None:
                raise ConfigError("model was trained on labeled inputs; pass labels")
            labels = np.asarray(labels, dtype=int)
            if labels.shape != x_new.shape:
                raise ConfigError("labels must match prediction inputs in length")
        elif labels is not None:
            raise ConfigError("model was trained without labels")
        return x_new, labels

    def posterior(self, x_new, labels=None) -> Posterior:
        """Posterior mean and variance at new inputs."""
        x_new, labels = self._require_labels(x_new, labels)
        chol, _, _, alpha = self._factorization()
        ks, prior = self._cross_and_prior(self.kernel, x_new, labels)
        mean = self.mean(x_new) + ks @ alpha
        v = solve_triangular(chol, ks.T, lower=True, check_finite=False)
        prior_diag = np.diag(prior).copy()
        var = _checked_variance(prior_diag - np.sum(v * v, axis=0), prior_diag.max(initial=1.0))
        return Posterior(
            x=x_new,
            labels=labels,
            mean=mean,
            variance_latent=var,
            variance_noisy=var + self.noise_variance,
        )

    def decompose_posterior(self, x_new, labels=None) -> Posterior:
        """Posterior split into one component per additive kernel term.

        The observation noise appears as a final implicit component: test
        points carry fresh noise draws, so its mean is zero and its
        variance is the noise variance everywhere.  Component means plus
        the prior mean reproduce the total posterior mean exactly.
        """
        if isinstance(self.kernel, Product):
            raise ContractError(
                "cannot decompose a product kernel into additive components"
            )
        x_new, labels = self._require_labels(x_new, labels)
        chol, _, _, alpha = self._factorization()
        base = self.posterior(x_new, labels)
        terms = sum_terms(self.kernel)
        names = []
        seen: dict[str, int] = {}
        for term in terms:
            token = term._token()
            seen[token] = seen.get(token, 0) + 1
            names.append(token if seen[token] == 1 else f"{token}_{seen[token]}")
        components = []
        for name, term in zip(names, terms):
            ks, prior = self._cross_and_prior(term, x_new, labels)
            mean_j = ks @ alpha
            v = solve_triangular(chol, ks.T, lower=True, check_finite=False)
            prior_diag = np.diag(prior).copy()
            var_j = _checked_variance(
                prior_diag - np.sum(v * v, axis=0), prior_diag.max(initial=1.0)
            )
            components.append(PosteriorComponent(name, mean_j, var_j))
        components.append(
            PosteriorComponent(
                "noise",
                np.zeros(len(x_new)),
                np.full(len(x_new), self.noise_variance),
            )
        )
        return Posterior(
            x=base.x,
            labels=base.labels,
            mean=base.mean,
            variance_latent=base.variance_latent,
            variance_noisy=base.variance_noisy,
            components=tuple(components),
        )

    def sample_posterior(
        self, x_new, n_samples: int, seed: int = 0, labels=None, include_noise: bool = False
    ) -> np.ndarray:
        """Draws from the joint posterior, shape (n_samples, len(x_new))."""
        if n_samples < 0:
            raise ConfigError(f"n_samples must be >= 0, got {n_samples}")
        x_new, labels = self._require_labels(x_new, labels)
        if n_samples == 0:
            return np.zeros((0, len(x_new)))
        chol, _, _, alpha = self._factorization()
        ks, prior = self._cross_and_prior(self.kernel, x_new, labels)
        mean = self.mean(x_new) + ks @ alpha
        v = solve_triangular(chol, ks.T, lower=True, check_finite=False)
        cov = prior - v.T @ v
        if include_noise:
            cov = cov + self.noise_variance * np.eye(len(x_new))
        cov = 0.5 * (cov + cov.T)
        factor, _ = jittered_cholesky(cov + 1e-12 * np.eye(len(x_new)))
        z = np.random.default_rng(seed).standard_normal((len(x_new), n_samples))
        return (mean[:, None] + factor @ z).T
