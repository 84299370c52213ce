"""Hyperparameter training and compound-kernel search.

Training minimizes the negative log marginal likelihood with a quasi-Newton
optimizer (L-BFGS-B, analytic gradients) restarted from a Latin hypercube
of starting points.  Each run is box-constrained to the same data-driven
bounds that seed the starts; see :func:`train` for the rationale.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import kernels as kx
from . import meanfn as mx
from .dataset import CapacitySeries
from .errors import ConfigError, DegenerateInputError, NumericalError, TrainingError
from .gp import LOG_NOISE_VARIANCE, GpModel

_PENALTY = 1e25


@dataclass(frozen=True)
class TrainConfig:
    """Budget and reproducibility knobs for one training run.

    ``lhs_bounds`` is an optional (dim, 2) array of per-parameter low/high
    starting bounds in optimization space (log space for positive
    parameters).  When omitted, data-driven defaults are derived from the
    training set.
    """

    n_restarts: int = 10
    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    seed: int = 0
    lhs_bounds: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ConfigError(f"n_restarts must be >= 1, got {self.n_restarts}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.gradient_tolerance > 0):
            raise ConfigError("gradient_tolerance must be positive")
        if self.lhs_bounds is not None:
            bounds = tuple(tuple(float(v) for v in b) for b in self.lhs_bounds)
            for lo, hi in bounds:
                if not (lo < hi):
                    raise ConfigError(f"bad LHS bound ({lo}, {hi})")
            object.__setattr__(self, "lhs_bounds", bounds)


@dataclass(frozen=True)
class RestartRecord:
    start_nlml: float
    final_nlml: float
    message: str


@dataclass(frozen=True)
class TrainResult:
    model: GpModel
    nlml: float
    restarts: tuple[RestartRecord, ...]

    @property
    def lml(self) -> float:
        return -self.nlml


def _lhs_design(seed: int, n: int, bounds: np.ndarray) -> np.ndarray:
    """Stratified Latin hypercube: one sample per axis bin per dimension."""
    rng = np.random.default_rng(seed)
    dim = len(bounds)
    u = np.empty((n, dim))
    for j in range(dim):
        perm = rng.permutation(n)
        u[:, j] = (perm + rng.uniform(0.0, 1.0, size=n)) / n
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


def lhs_starts(config: TrainConfig, dim: int) -> np.ndarray:
    """n_restarts starting vectors; unit cube when no bounds configured."""
    if dim < 1:
        raise ConfigError(f"dimension must be >= 1, got {dim}")
    if config.lhs_bounds is None:
        bounds = np.tile([0.0, 1.0], (dim, 1))
    else:
        bounds = np.asarray(config.lhs_bounds, dtype=float)
        if bounds.shape != (dim, 2):
            raise ConfigError(
                f"lhs_bounds shape {bounds.shape} does not match dimension {dim}"
            )
    return _lhs_design(config.seed, config.n_restarts, bounds)


def default_lhs_bounds(model: GpModel) -> np.ndarray:
    """Starting bounds scaled to the training data, per parameter kind.

    Length scales and periods scale with the input range, output scales and
    noise with the target standard deviation, mean-function coefficients
    with the observed target spread.
    """
    x, y = model.x, model.y
    x_range = float(x.max() - x.min()) if len(x) > 1 else 1.0
    if x_range <= 0:
        x_range = 1.0
    # densely sampled inputs make shorter length scales identifiable
    spacing = float(np.median(np.diff(np.unique(x)))) if len(np.unique(x)) > 1 else x_range
    shortest = min(0.1 * x_range, 2.0 * spacing)
    y_std = float(np.std(y))
    if y_std <= 0 or not math.isfinite(y_std):
        y_std = max(0.05 * abs(float(np.mean(y))), 1e-3)
    y_spread = float(y.max() - y.min())
    y_spread = max(y_spread, 0.05)
    y_mean = float(np.mean(y))
    bounds = []
    for kind in model.param_kinds():
        if kind == kx.LOG_LENGTH_SCALE:
            bounds.append((math.log(shortest), math.log(10.0 * x_range)))
        elif kind == kx.LOG_WIGGLE:
            bounds.append((math.log(0.25), math.log(10.0)))
        elif kind == kx.LOG_PERIOD:
            bounds.append((math.log(0.1 * x_range), math.log(2.0 * x_range)))
        elif kind == kx.LOG_OUTPUT_SCALE:
            bounds.append((math.log(0.01 * y_std), math.log(10.0 * y_std)))
        elif kind == kx.LOG_NOISE_SCALE:
            bounds.append((math.log(1e-4 * y_std), math.log(0.5 * y_std)))
        elif kind == LOG_NOISE_VARIANCE:
            bounds.append((2.0 * math.log(1e-4 * y_std), 2.0 * math.log(0.5 * y_std)))
        elif kind == kx.ANGLE:
            bounds.append((0.01, math.pi - 0.01))
        elif kind == kx.LOG_TAU:
            bounds.append((math.log(0.1), math.log(10.0)))
        elif kind == mx.MEAN_OFFSET:
            # early prefixes have tiny spread; the offset must still be able
            # to sit a whole amplitude away from the observed window
            half = max(2.0 * y_spread, 0.5 * max(abs(y_mean), 1e-3))
            bounds.append((y_mean - half, y_mean + half))
        elif kind == mx.MEAN_AMPLITUDE:
            amp = max(2.0 * y_spread, max(abs(y_mean), 1e-3))
            bounds.append((-amp, amp))
        elif kind == mx.MEAN_RATE:
            bounds.append((-3.0 / x_range, 3.0 / x_range))
        else:
            raise ConfigError(f"no default bounds for parameter kind {kind!r}")
    return np.array(bounds)


def _objective(model: GpModel):
    dim = len(model.opt_vector())

    def fun(theta):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                candidate = model.with_opt_vector(theta)
                value, grads = candidate.nlml_value_and_gradients()
        except (NumericalError, FloatingPointError, OverflowError, np.linalg.LinAlgError):
            return _PENALTY, np.zeros(dim)
        if not (math.isfinite(value) and np.all(np.isfinite(grads))):
            return _PENALTY, np.zeros(dim)
        return value, grads

    return fun


def train(model: GpModel, config: TrainConfig = TrainConfig(), extra_starts=()) -> TrainResult:
    """Fit hyperparameters by multi-start NLML minimization.

    ``extra_starts`` lets callers add warm starts (for example the previous
    optimum in a rolling evaluation) on top of the Latin hypercube draws.
    The search is box-constrained to the same bounds that seed the starts,
    which keeps hyperparameters in the identifiable region the bounds
    describe (a period longer than the observed window, say, is just an
    expensive way to mimic a smooth kernel).  The returned model is the
    best local optimum found; its NLML never exceeds that of any start.
    """
    if len(model.x) < 2:
        raise DegenerateInputError("training requires at least two points")
    dim = len(model.opt_vector())
    if config.lhs_bounds is not None:
        bounds = np.asarray(config.lhs_bounds, dtype=float)
        if bounds.shape != (dim, 2):
            raise ConfigError(
                f"lhs_bounds shape {bounds.shape} does not match dimension {dim}"
            )
    else:
        bounds = default_lhs_bounds(model)
    starts = list(_lhs_design(config.seed, config.n_restarts, bounds))
    for extra in extra_starts:
        extra = np.asarray(extra, dtype=float)
        if extra.shape == (dim,) and np.all(np.isfinite(extra)):
            starts.append(np.clip(extra, bounds[:, 0], bounds[:, 1]))
    fun = _objective(model)
    records = []
    best_value = math.inf
    best_theta = None
    for start in starts:
        f0, _ = fun(start)
        result = minimize(
            fun,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=list(map(tuple, bounds)),
            options={"maxiter": config.max_iterations, "gtol": config.gradient_tolerance},
        )
        value, theta = float(result.fun), result.x
        if f0 < value:  # never accept a step that lost ground on its start
            value, theta = f0, start
        message = result.message if isinstance(result.message, str) else str(result.message)
        records.append(RestartRecord(float(f0), value, message))
        if value < best_value:
            best_value, best_theta = value, theta
    if best_theta is None or best_value >= _PENALTY / 2:
        raise TrainingError(
            "all restarts failed numerically",
            diagnostics=[
                f"start nlml {r.start_nlml:.6g} -> {r.final_nlml:.6g}: {r.message}"
                for r in records
            ],
        )
    trained = model.with_opt_vector(best_theta)
    return TrainResult(trained, best_value, tuple(records))


# --- compound kernel search ---------------------------------------------------


@dataclass(frozen=True)
class SearchEntry:
    """One trained candidate in a kernel search, ranked by NLML."""

    kernel: str
    nlml: float
    hyperparameters: dict[str, float]

    @property
    def lml(self) -> float:
        return -self.nlml


@dataclass(frozen=True)
class KernelSearchResult:
    entries: tuple[SearchEntry, ...]
    failures: tuple[tuple[str, str], ...] = ()

    @property
    def best(self) -> SearchEntry:
        if not self.entries:
            raise TrainingError("every kernel candidate failed to train")
        return self.entries[0]

    def to_dict(self) -> dict:
        return {
            "ranking": [
                {
                    "kernel": e.kernel,
                    "lml": e.lml,
                    "nlml": e.nlml,
                    "hyperparameters": e.hyperparameters,
                }
                for e in self.entries
            ],
            "failures": [{"kernel": k, "error": msg} for k, msg in self.failures],
        }

    def to_csv_rows(self) -> list[list[str]]:
        import json

        rows = [["kernel", "lml", "hyperparameters"]]
        for e in self.entries:
            rows.append(
                [e.kernel, repr(e.lml), json.dumps(e.hyperparameters, sort_keys=True)]
            )
        return rows


def candidate_pairs(bases) -> list[str]:
    """All unordered pairs (with replacement) of base kernel tokens."""
    bases = [b.strip().upper() for b in bases]
    if not bases:
        raise ConfigError("kernel search needs at least one base kernel")
    for b in bases:
        kx.base_kernel(b)  # validate tokens up front
    return [
        f"{bases[i]}+{bases[j]}"
        for i in range(len(bases))
        for j in range(i, len(bases))
    ]


def model_for_series(
    series_or_xy,
    kernel_expr: str,
    mean_expr: str = "CONST",
    noise_variance: float = 1e-4,
) -> GpModel:
    """Build an untrained single-output model from grammar expressions."""
    if isinstance(series_or_xy, CapacitySeries):
        x, y = series_or_xy.cycles, series_or_xy.capacities
    else:
        x, y = series_or_xy
    kernel = kx.with_data_scales(kx.parse_kernel(kernel_expr), x, y)
    mean = mx.mean_from_token(mean_expr, x, y)
    return GpModel(kernel, x, y, mean=mean, noise_variance=noise_variance)


def _search_one(payload):
    expr, x, y, mean_expr, config = payload
    model = model_for_series((x, y), expr, mean_expr)
    try:
        result = train(model, config, extra_starts=[model.opt_vector()])
    except TrainingError as exc:
        return expr, None, None, str(exc)
    raw = result.model.hyperparameters().raw()
    return expr, float(result.nlml), raw, None


def kernel_search(
    series: CapacitySeries,
    bases=("SE", "MA3", "MA5", "PER"),
    config: TrainConfig = TrainConfig(),
    mean_expr: str = "CONST",
    jobs: int = 1,
) -> KernelSearchResult:
    """Train every pairwise sum of the base kernels and rank by NLML.

    Each candidate gets its own deterministic seed derived from the
    configured seed and its position, so results do not depend on ``jobs``.
    Ties in NLML keep candidate order.
    """
    exprs = candidate_pairs(bases)
    payloads = [
        (expr, series.cycles, series.capacities, mean_expr, replace(config, seed=config.seed + 7919 * i))
        for i, expr in enumerate(exprs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_search_one, payloads))
    else:
        outcomes = [_search_one(p) for p in payloads]
    scored = []
    failures = []
    for idx, (expr, nlml, raw, error) in enumerate(outcomes):
        if error is not None:
            failures.append((expr, error))
        else:
            scored.append((nlml, idx, SearchEntry(expr, nlml, raw)))
    scored.sort(key=lambda item: (item[0], item[1]))
    return KernelSearchResult(
        entries=tuple(entry for _, _, entry in scored), failures=tuple(failures)
    )
