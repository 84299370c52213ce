"""Command line behavior: argument validation, outputs, and determinism."""

import csv
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from gpprog import UsageError, __version__
from gpprog.cli import main, parse_args


def write_cell_csv(path, cells, header=("cell_id", "cycle", "capacity")):
    """cells: {cell_id: (cycles, capacities)} in raw amp-hours."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for cid, (cycles, caps) in cells.items():
            for x, y in zip(cycles, caps):
                writer.writerow([cid, repr(float(x)), repr(float(y))])
    return path


@pytest.fixture()
def single_cell_csv(tmp_path):
    x = np.arange(1.0, 19.0)
    y = 1.9 * (1.0 - 0.024 * (x - 1.0)) + 0.0008 * np.sin(x)
    return str(write_cell_csv(tmp_path / "cell.csv", {"X1": (x, y)}))


@pytest.fixture()
def fleet_csv(tmp_path):
    cells = {}
    for i, cid in enumerate(("F1", "F2", "F3")):
        x = np.arange(1.0, 15.0)
        y = 2.0 * (1.0 - (0.026 + 0.004 * i) * (x - 1.0))
        cells[cid] = (x, y)
    return str(write_cell_csv(tmp_path / "fleet.csv", cells))


def read_tree(outdir):
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}


class TestParseArgs:
    def test_defaults(self, single_cell_csv, monkeypatch):
        monkeypatch.delenv("GPPROG_OUT", raising=False)
        config = parse_args(["fit", "--data", single_cell_csv])
        assert config.command == "fit"
        assert config.kernel == "MA5+MA3"
        assert config.mean == "CONST"
        assert config.horizons == (5, 10, 20, 40)
        assert config.out == "gpprog-out"
        assert config.jobs == 1 and not config.warm_start

    def test_out_resolution_order(self, single_cell_csv, monkeypatch):
        monkeypatch.setenv("GPPROG_OUT", "/tmp/from-env")
        config = parse_args(["fit", "--data", single_cell_csv])
        assert config.out == "/tmp/from-env"
        config = parse_args(["fit", "--data", single_cell_csv, "--out", "explicit"])
        assert config.out == "explicit"

    def test_schema_parsing(self, single_cell_csv):
        config = parse_args(
            ["fit", "--data", single_cell_csv, "--schema", "cycle=k, capacity=q"]
        )
        assert config.schema == {"cycle": "k", "capacity": "q"}
        with pytest.raises(UsageError, match="canonical=actual"):
            parse_args(["fit", "--data", single_cell_csv, "--schema", "cycle"])

    def test_kernel_normalized(self, single_cell_csv):
        config = parse_args(["fit", "--data", single_cell_csv, "--kernel", "ma3+noise"])
        assert config.kernel == "MA3+NOISE"

    def test_train_cells_and_bases_split(self, fleet_csv):
        config = parse_args(
            ["mogp-evaluate", "--data", fleet_csv, "--target", "F2",
             "--train-cells", "F1, F3", "--bases", "se,ma3"]
        )
        assert config.train_cells == ("F1", "F3")
        assert config.bases == ("SE", "MA3")

    @pytest.mark.parametrize(
        "argv_extra, message",
        [
            (["--kernel", "WAT"], "--kernel"),
            (["--mean", "SPLINE"], "--mean"),
            (["--eol", "1.2"], "--eol"),
            (["--start", "0"], "--start"),
            (["--horizons", "5,x"], "--horizons"),
            (["--horizons", "0,5"], "--horizons"),
            (["--restarts", "0"], "--restarts"),
            (["--jobs", "0"], "--jobs"),
            (["--jobs", "2", "--warm-start"], "--warm-start"),
        ],
    )
    def test_invalid_values_rejected(self, single_cell_csv, argv_extra, message):
        with pytest.raises(UsageError, match=message):
            parse_args(["evaluate", "--data", single_cell_csv] + argv_extra)

    def test_missing_data_file(self):
        with pytest.raises(UsageError, match="not found"):
            parse_args(["fit", "--data", "/nonexistent/file.csv"])

    def test_mogp_requires_target_and_train_cells(self, fleet_csv):
        with pytest.raises(UsageError, match="--target"):
            parse_args(["mogp-evaluate", "--data", fleet_csv, "--train-cells", "F1"])
        with pytest.raises(UsageError, match="--train-cells"):
            parse_args(["mogp-evaluate", "--data", fleet_csv, "--target", "F1"])

    def test_unknown_command_exits_two(self, capsys):
        with pytest.raises(SystemExit) as info:
            parse_args(["frobnicate", "--data", "x.csv"])
        assert info.value.code == 2


class TestMainExitCodes:
    def test_usage_error_returns_two(self, capsys):
        assert main(["fit", "--data", "/nonexistent/file.csv"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_runtime_usage_error_returns_two(self, fleet_csv, tmp_path, capsys):
        # multi-cell file without --target is only detectable at run time
        code = main(["fit", "--data", fleet_csv, "--out", str(tmp_path / "o"),
                     "--restarts", "1"])
        assert code == 2
        assert "--target" in capsys.readouterr().err

    def test_domain_error_returns_one(self, tmp_path, capsys):
        # capacity never crosses the threshold: evaluation is undefined
        x = np.arange(1.0, 16.0)
        y = 2.0 * (1.0 - 0.001 * x)
        data = write_cell_csv(tmp_path / "flat.csv", {"N1": (x, y)})
        code = main(["evaluate", "--data", str(data), "--out", str(tmp_path / "o"),
                     "--restarts", "1"])
        assert code == 1
        assert "never crosses" in capsys.readouterr().err


class TestFitCommand:
    def test_outputs_and_manifest(self, single_cell_csv, tmp_path):
        out = tmp_path / "run"
        code = main(["fit", "--data", single_cell_csv, "--out", str(out),
                     "--kernel", "MA5", "--restarts", "2", "--seed", "1"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["arguments"]["command"] == "fit"
        assert manifest["arguments"]["kernel"] == "MA5"
        assert manifest["arguments"]["restarts"] == 2
        assert manifest["versions"]["gpprog"] == __version__
        assert "numpy" in manifest["versions"]
        model = json.loads((out / "model.json").read_text())
        assert model["kernel"] == "MA5"
        assert model["lml"] == -model["nlml"]
        assert math.isfinite(model["nlml"])
        assert model["noise_variance"] > 0
        # raw (non-log) hyperparameters, keyed by qualified names
        assert model["hyperparameters"]["ma5.length_scale"] > 0
        assert model["hyperparameters"]["noise.variance"] == pytest.approx(
            model["noise_variance"]
        )
        assert model["n_restarts"] == 3  # 2 LHS + 1 data-informed start

    def test_rerun_is_bit_identical(self, single_cell_csv, tmp_path):
        out = tmp_path / "run"
        argv = ["fit", "--data", single_cell_csv, "--out", str(out),
                "--kernel", "MA5+MA3", "--restarts", "1", "--jobs", "1"]
        assert main(argv) == 0
        first = read_tree(out)
        assert main(argv) == 0
        assert read_tree(out) == first

    def test_does_not_mutate_input(self, single_cell_csv, tmp_path):
        before = open(single_cell_csv, "rb").read()
        main(["fit", "--data", single_cell_csv, "--out", str(tmp_path / "o"),
              "--restarts", "1"])
        assert open(single_cell_csv, "rb").read() == before


class TestForecastCommand:
    def test_outputs(self, single_cell_csv, tmp_path):
        out = tmp_path / "fc"
        code = main(["forecast", "--data", single_cell_csv, "--out", str(out),
                     "--kernel", "MA5+MA3", "--restarts", "1", "--start", "0.5"])
        assert code == 0
        with open(out / "posterior.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {"x", "mean", "sigma_latent", "sigma_noisy",
                                "lower_2sigma", "upper_2sigma"}
        xs = [float(r["x"]) for r in rows]
        # integer cycle axis: cycle-resolution grid from the training edge
        assert xs[0] == 9.0
        assert xs[-1] <= 2 * 18.0
        assert np.allclose(np.diff(xs), 1.0)
        for r in rows:
            assert float(r["sigma_noisy"]) >= float(r["sigma_latent"])
            assert float(r["lower_2sigma"]) <= float(r["mean"]) <= float(r["upper_2sigma"])
        with open(out / "components.csv") as fh:
            comp_rows = list(csv.DictReader(fh))
        assert {r["component"] for r in comp_rows} == {"MA5", "MA3", "noise"}
        eol = json.loads((out / "eol.json").read_text())
        assert {"c", "current_x", "threshold", "eol_mean", "eol_lower",
                "eol_upper", "observed_eol"} <= set(eol)
        assert eol["threshold"] == 0.7
        assert (out / "model.json").exists()

    def test_start_must_leave_future_data(self, single_cell_csv, tmp_path, capsys):
        code = main(["forecast", "--data", single_cell_csv,
                     "--out", str(tmp_path / "o"), "--start", "0.99"])
        assert code == 2


class TestKernelSearchCommand:
    def test_ranking_outputs(self, single_cell_csv, tmp_path):
        out = tmp_path / "ks"
        code = main(["kernel-search", "--data", single_cell_csv, "--out", str(out),
                     "--bases", "SE,MA3", "--restarts", "1"])
        assert code == 0
        payload = json.loads((out / "search.json").read_text())
        kernels = [e["kernel"] for e in payload["ranking"]]
        assert sorted(kernels) == sorted(["SE+SE", "SE+MA3", "MA3+MA3"])
        lmls = [e["lml"] for e in payload["ranking"]]
        assert lmls == sorted(lmls, reverse=True)
        assert payload["failures"] == []
        with open(out / "search.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["kernel", "lml", "hyperparameters"]
        assert len(rows) == 4


class TestLookaheadCommand:
    def test_outputs(self, single_cell_csv, tmp_path):
        out = tmp_path / "la"
        code = main(["lookahead", "--data", single_cell_csv, "--out", str(out),
                     "--kernel", "MA5", "--horizons", "1,3", "--start", "0.5",
                     "--restarts", "1", "--warm-start"])
        assert code == 0
        payload = json.loads((out / "lookahead.json").read_text())
        assert set(payload["rmse"]) <= {"1", "3"}
        assert payload["n_rows"] > 0
        with open(out / "lookahead.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "c"
        assert len(rows) == payload["n_rows"] + 1


class TestEvaluateCommand:
    def test_outputs(self, single_cell_csv, tmp_path):
        out = tmp_path / "ev"
        code = main(["evaluate", "--data", single_cell_csv, "--out", str(out),
                     "--kernel", "MA5", "--start", "0.55", "--restarts", "1",
                     "--warm-start"])
        assert code == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["cell_id"] == "X1"
        assert payload["threshold"] == 0.7
        assert payload["n_records"] == len(payload["records"])
        assert math.isfinite(payload["rmse_eol"])
        with open(out / "report.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == payload["n_records"] + 1


class TestMogpEvaluateCommand:
    def test_outputs(self, fleet_csv, tmp_path):
        out = tmp_path / "mg"
        code = main(["mogp-evaluate", "--data", fleet_csv, "--out", str(out),
                     "--target", "F2", "--train-cells", "F1", "--kernel", "MA5",
                     "--start", "0.6", "--restarts", "1", "--warm-start"])
        assert code == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["cell_id"] == "F2"
        assert payload["n_records"] >= 1

    def test_unknown_cells_rejected(self, fleet_csv, tmp_path, capsys):
        code = main(["mogp-evaluate", "--data", fleet_csv,
                     "--out", str(tmp_path / "o"), "--target", "F2",
                     "--train-cells", "F9"])
        assert code == 2
        assert "F9" in capsys.readouterr().err


class TestSchemaThroughCli:
    def test_renamed_columns(self, tmp_path):
        x = np.arange(1.0, 16.0)
        y = 1.8 * (1.0 - 0.025 * (x - 1.0))
        data = write_cell_csv(tmp_path / "odd.csv", {"Z": (x, y)},
                              header=("battery", "k", "q"))
        out = tmp_path / "o"
        code = main(["fit", "--data", str(data), "--out", str(out),
                     "--schema", "cell_id=battery,cycle=k,capacity=q",
                     "--kernel", "MA5", "--restarts", "1"])
        assert code == 0
        assert (out / "model.json").exists()


class TestConsoleScript:
    def test_entry_point_runs(self, single_cell_csv, tmp_path):
        exe = shutil.which("gpprog")
        assert exe, "console script not installed"
        result = subprocess.run(
            [exe, "fit", "--data", single_cell_csv, "--out", str(tmp_path / "o"),
             "--kernel", "MA5", "--restarts", "1"],
            capture_output=True, text=True, timeout=120,
        )
        assert result.returncode == 0, result.stderr
        assert (tmp_path / "o" / "model.json").exists()
