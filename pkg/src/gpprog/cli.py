"""Command line interface.

Subcommands cover the full workflow: fit a single model, search compound
kernels, forecast capacity and end of life from a partial history, run
fixed-horizon lookahead sweeps, and run rolling end-of-life evaluations in
single- or multi-output form.  Every run writes a ``manifest.json`` with
the resolved configuration; re-running the same manifest with --jobs 1
reproduces the output files byte for byte (no timestamps are recorded).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dataset import SplitSpec, load_csv
from .errors import GpprogError, UndefinedMetricError, UsageError
from .kernels import Product, parse_kernel
from .meanfn import mean_from_token, mean_params
from .optimize import TrainConfig, kernel_search, model_for_series, train
from .prognostics import (
    evaluate,
    evaluate_mogp,
    forecast_eol,
    forecast_grid,
    lookahead,
    true_end_of_life,
)

COMMANDS = ("fit", "kernel-search", "forecast", "lookahead", "evaluate", "mogp-evaluate")
DEFAULT_BASES = "SE,MA3,MA5,PER"


@dataclass(frozen=True)
class RunConfig:
    command: str
    data: str
    out: str
    schema: dict | None = None
    kernel: str = "MA5+MA3"
    mean: str = "CONST"
    eol: float = 0.7
    start: float = 0.2
    horizons: tuple[int, ...] = (5, 10, 20, 40)
    restarts: int = 10
    seed: int = 0
    jobs: int = 1
    warm_start: bool = False
    target: str | None = None
    train_cells: tuple[str, ...] = ()
    bases: tuple[str, ...] = ("SE", "MA3", "MA5", "PER")


def _parse_schema(text: str | None) -> dict | None:
    if text is None:
        return None
    mapping = {}
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"--schema entries must look like canonical=actual, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _parse_int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated list of integers") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpprog",
        description="Gaussian process capacity forecasting and end-of-life evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--data", required=True, help="input CSV path")
        p.add_argument("--schema", default=None, help="column mapping, e.g. cycle=cyc")
        p.add_argument("--kernel", default="MA5+MA3", help="kernel expression (SE|MA3|MA5|PER|NOISE joined by +)")
        p.add_argument("--mean", default="CONST", help="mean function (ZERO|CONST|EXPDEG)")
        p.add_argument("--eol", type=float, default=0.7, help="end-of-life capacity threshold")
        p.add_argument("--start", type=float, default=0.2, help="starting fraction of the data")
        p.add_argument("--horizons", default="5,10,20,40", help="lookahead horizons, comma separated")
        p.add_argument("--restarts", type=int, default=10, help="optimizer restarts")
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (1 = deterministic)")
        p.add_argument("--out", default=None, help="output directory (default $GPPROG_OUT or ./gpprog-out)")
        p.add_argument("--warm-start", action="store_true", help="reuse the previous optimum in rolling sweeps")
        p.add_argument("--target", default=None, help="cell id to model")
        p.add_argument("--train-cells", default=None, help="companion cell ids, comma separated")
        p.add_argument("--bases", default=DEFAULT_BASES, help="base kernels for kernel-search")
    return parser


def parse_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    if not Path(args.data).is_file():
        raise UsageError(f"--data file not found: {args.data}")
    try:
        parse_kernel(args.kernel)
    except GpprogError as exc:
        raise UsageError(f"--kernel: {exc}") from None
    if args.mean.strip().upper() not in ("ZERO", "CONST", "EXPDEG"):
        raise UsageError(f"--mean must be ZERO, CONST, or EXPDEG, got {args.mean!r}")
    if not (0.0 < args.eol < 1.0):
        raise UsageError(f"--eol must lie in (0, 1), got {args.eol}")
    if not (0.0 < args.start < 1.0):
        raise UsageError(f"--start must lie in (0, 1), got {args.start}")
    horizons = _parse_int_list(args.horizons, "--horizons")
    if any(h < 1 for h in horizons):
        raise UsageError(f"--horizons must all be >= 1, got {horizons}")
    if args.restarts < 1:
        raise UsageError(f"--restarts must be >= 1, got {args.restarts}")
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    if args.jobs > 1 and args.warm_start:
        raise UsageError("--warm-start chains fits sequentially; drop it or use --jobs 1")
    out = args.out or os.environ.get("GPPROG_OUT") or "gpprog-out"
    train_cells = tuple(
        s.strip() for s in args.train_cells.split(",") if s.strip()
    ) if args.train_cells else ()
    bases = tuple(s.strip().upper() for s in args.bases.split(",") if s.strip())
    if args.command == "mogp-evaluate":
        if args.target is None:
            raise UsageError("mogp-evaluate requires --target")
        if not train_cells:
            raise UsageError("mogp-evaluate requires --train-cells")
    return RunConfig(
        command=args.command,
        data=args.data,
        out=out,
        schema=_parse_schema(args.schema),
        kernel=args.kernel.strip().upper(),
        mean=args.mean.strip().upper(),
        eol=args.eol,
        start=args.start,
        horizons=horizons,
        restarts=args.restarts,
        seed=args.seed,
        jobs=args.jobs,
        warm_start=args.warm_start,
        target=args.target,
        train_cells=train_cells,
        bases=bases,
    )


# --- output helpers -----------------------------------------------------------


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _manifest(config: RunConfig) -> dict:
    args = asdict(config)
    args["horizons"] = list(config.horizons)
    args["train_cells"] = list(config.train_cells)
    args["bases"] = list(config.bases)
    return {
        "arguments": args,
        "versions": {
            "gpprog": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _pick_series(fleet, target: str | None):
    if target is not None:
        return fleet.get(target)
    if fleet.m == 1:
        return fleet.series[0]
    raise UsageError(
        f"data contains cells {list(fleet.cell_ids)}; choose one with --target"
    )


def _model_summary(config: RunConfig, result) -> dict:
    model = result.model
    return {
        "kernel": config.kernel,
        "mean": config.mean,
        "nlml": result.nlml,
        "lml": result.lml,
        "noise_variance": model.noise_variance,
        "hyperparameters": model.hyperparameters().raw(),
        "mean_params": mean_params(model.mean),
        "n_restarts": len(result.restarts),
    }


# --- command implementations ----------------------------------------------------


def _train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(n_restarts=config.restarts, seed=config.seed)


def _cmd_fit(config: RunConfig, outdir: Path) -> None:
    fleet = load_csv(config.data, config.schema)
    series = _pick_series(fleet, config.target)
    model = model_for_series(series, config.kernel, config.mean)
    result = train(model, _train_config(config), extra_starts=[model.opt_vector()])
    _write_json(outdir / "model.json", _model_summary(config, result))


def _cmd_kernel_search(config: RunConfig, outdir: Path) -> None:
    fleet = load_csv(config.data, config.schema)
    series = _pick_series(fleet, config.target)
    result = kernel_search(
        series,
        bases=config.bases,
        config=_train_config(config),
        mean_expr=config.mean,
        jobs=config.jobs,
    )
    _write_json(outdir / "search.json", result.to_dict())
    _write_csv(outdir / "search.csv", result.to_csv_rows())


def _cmd_forecast(config: RunConfig, outdir: Path) -> None:
    fleet = load_csv(config.data, config.schema)
    series = _pick_series(fleet, config.target)
    c = math.ceil(config.start * len(series))
    if c >= len(series):
        raise UsageError(f"--start {config.start} leaves no data to forecast")
    spec = SplitSpec(max(1, c), config.eol)
    prefix_x = series.cycles[: spec.c]
    prefix_y = series.capacities[: spec.c]
    model = model_for_series((prefix_x, prefix_y), config.kernel, config.mean)
    result = train(model, _train_config(config), extra_starts=[model.opt_vector()])
    trained = result.model
    horizon_x = 2.0 * float(series.cycles[-1])
    grid = forecast_grid(
        float(prefix_x[-1]), horizon_x, bool(np.all(series.cycles == np.floor(series.cycles)))
    )
    if isinstance(trained.kernel, Product):
        post = trained.posterior(grid)
    else:
        post = trained.decompose_posterior(grid)
    lower, upper = post.bounds()
    rows = [["x", "mean", "sigma_latent", "sigma_noisy", "lower_2sigma", "upper_2sigma"]]
    for i, x in enumerate(grid):
        rows.append(
            [
                repr(float(x)),
                repr(float(post.mean[i])),
                repr(float(post.sigma_latent[i])),
                repr(float(post.sigma_noisy[i])),
                repr(float(lower[i])),
                repr(float(upper[i])),
            ]
        )
    _write_csv(outdir / "posterior.csv", rows)
    if post.components is not None:
        comp_rows = [["component", "x", "mean", "sigma"]]
        for comp in post.components:
            for i, x in enumerate(grid):
                comp_rows.append(
                    [
                        comp.name,
                        repr(float(x)),
                        repr(float(comp.mean[i])),
                        repr(float(math.sqrt(comp.variance[i]))),
                    ]
                )
        _write_csv(outdir / "components.csv", comp_rows)
    forecast = forecast_eol(trained, spec, horizon_x)
    try:
        observed = true_end_of_life(series, config.eol)
    except UndefinedMetricError:
        observed = None
    payload = forecast.to_dict()
    payload["observed_eol"] = observed
    _write_json(outdir / "eol.json", payload)
    _write_json(outdir / "model.json", _model_summary(config, result))


def _cmd_lookahead(config: RunConfig, outdir: Path) -> None:
    fleet = load_csv(config.data, config.schema)
    series = _pick_series(fleet, config.target)
    result = lookahead(
        series,
        kernel_expr=config.kernel,
        mean_expr=config.mean,
        horizons=config.horizons,
        start_fraction=config.start,
        config=_train_config(config),
        warm_start=config.warm_start,
    )
    _write_json(outdir / "lookahead.json", result.to_dict())
    _write_csv(outdir / "lookahead.csv", result.to_csv_rows())


def _cmd_evaluate(config: RunConfig, outdir: Path) -> None:
    fleet = load_csv(config.data, config.schema)
    series = _pick_series(fleet, config.target)
    report = evaluate(
        series,
        kernel_expr=config.kernel,
        mean_expr=config.mean,
        start_fraction=config.start,
        eol_threshold=config.eol,
        config=_train_config(config),
        warm_start=config.warm_start,
        jobs=config.jobs,
    )
    _write_json(outdir / "report.json", report.to_dict())
    _write_csv(outdir / "report.csv", report.to_csv_rows())


def _cmd_mogp_evaluate(config: RunConfig, outdir: Path) -> None:
    fleet = load_csv(config.data, config.schema)
    missing = [c for c in (*config.train_cells, config.target) if c not in fleet.cell_ids]
    if missing:
        raise UsageError(f"cells {missing} not present in {config.data}")
    report = evaluate_mogp(
        fleet,
        target=config.target,
        train_cells=config.train_cells,
        kernel_expr=config.kernel,
        mean_expr=config.mean,
        start_fraction=config.start,
        eol_threshold=config.eol,
        config=_train_config(config),
        warm_start=config.warm_start,
        jobs=config.jobs,
    )
    _write_json(outdir / "report.json", report.to_dict())
    _write_csv(outdir / "report.csv", report.to_csv_rows())


_IMPLEMENTATIONS = {
    "fit": _cmd_fit,
    "kernel-search": _cmd_kernel_search,
    "forecast": _cmd_forecast,
    "lookahead": _cmd_lookahead,
    "evaluate": _cmd_evaluate,
    "mogp-evaluate": _cmd_mogp_evaluate,
}


def run(config: RunConfig) -> None:
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "manifest.json", _manifest(config))
    _IMPLEMENTATIONS[config.command](config, outdir)


def main(argv=None) -> int:
    try:
        config = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        run(config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GpprogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
