"""End-to-end checks of the command pipeline."""

import json
import subprocess
import sys

import numpy as np
import pytest

from stimpute.cli import main
from stimpute.dataio import GridDataset, grid_coords, load_dataset, save_dataset

CONFIG = {
    "field": {"height": 8, "width": 8, "length": 36, "seed": 3},
    "model": {
        "c": 8,
        "n_layers": 1,
        "mlp_hidden": 8,
        "sw_schedule": [[4, 4, 0], [4, 4, 2]],
    },
    "train": {
        "epochs": 2,
        "window_length": 12,
        "window_stride": 12,
        "tile": 8,
        "seed": 1,
    },
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> split -> train once; later tests read the artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "synth")]) == 0
    data = root / "synth" / "dataset.json"
    rc = main(
        [
            "split", "--data", str(data), "--scenario", "mcar",
            "--rate", "0.2", "--seed", "5", "--out", str(root / "split"),
        ]
    )
    assert rc == 0
    split = root / "split" / "split.json"
    rc = main(
        [
            "train", "--config", str(cfg), "--data", str(data),
            "--split", str(split), "--out", str(root / "train"),
        ]
    )
    assert rc == 0
    return {
        "root": root,
        "cfg": cfg,
        "data": data,
        "split": split,
        "train": root / "train",
    }


class TestSynth:
    def test_round_trips_through_dataio(self, pipeline):
        ds = load_dataset(pipeline["data"])
        ds.validate()
        assert (ds.height, ds.width, ds.n_times) == (8, 8, 36)
        assert ds.n_features == 3  # precip + two noise channels
        assert ds.M.all()

    def test_rerun_byte_identical(self, pipeline, tmp_path):
        assert main(
            ["synth", "--config", str(pipeline["cfg"]), "--out", str(tmp_path)]
        ) == 0
        for name in ("dataset.json", "dataset.y.f32", "dataset.x.f32"):
            first = (pipeline["root"] / "synth" / name).read_bytes()
            assert (tmp_path / name).read_bytes() == first

    def test_seed_flag_overrides_config(self, pipeline, tmp_path):
        rc = main(
            [
                "synth", "--config", str(pipeline["cfg"]),
                "--seed", "9", "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        echo = json.loads((tmp_path / "run_config.json").read_text())
        assert echo["field"]["seed"] == 9
        other = (tmp_path / "dataset.y.f32").read_bytes()
        assert other != (pipeline["root"] / "synth" / "dataset.y.f32").read_bytes()

    def test_invalid_spec_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"field": {"phi": 1.5}}))
        rc = main(["synth", "--config", str(bad), "--out", str(tmp_path / "run")])
        assert rc == 2
        assert "AR coefficient" in capsys.readouterr().err


class TestSplit:
    def test_mcar_point_count(self, pipeline):
        points = json.loads(pipeline["split"].read_text())
        # all 8*8*36 cells observed; round half up of 20% of them
        assert len(points) == 461

    def test_same_seed_same_bytes(self, pipeline, tmp_path):
        rc = main(
            [
                "split", "--data", str(pipeline["data"]), "--scenario", "mcar",
                "--rate", "0.2", "--seed", "5", "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        assert (tmp_path / "split.json").read_bytes() == pipeline["split"].read_bytes()

    def test_mnar_hides_whole_slices(self, pipeline, tmp_path):
        rc = main(
            [
                "split", "--data", str(pipeline["data"]), "--scenario", "mnar",
                "--rate", "0.25", "--seed", "2", "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        points = json.loads((tmp_path / "split.json").read_text())
        times = {t for _, t in points}
        assert len(times) == 9  # round(0.25 * 36) slices
        assert len(points) == 9 * 64  # every location at each hidden slice


class TestTrain:
    def test_artifacts(self, pipeline):
        out = pipeline["train"]
        assert (out / "model.ckpt").exists()
        log_lines = (out / "train_log.jsonl").read_text().strip().splitlines()
        assert len(log_lines) == 2
        assert {"epoch", "loss", "lr", "seconds"} <= set(json.loads(log_lines[0]))
        model_cfg = json.loads((out / "model_config.json").read_text())
        assert model_cfg["d_in"] == 6  # 3 covariates plus their indicators
        echo = json.loads((out / "run_config.json").read_text())
        assert echo["command"] == "train"
        assert echo["train"]["epochs"] == 2

    def test_split_flag_required(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", "x.json", "--out", "y"])
        assert exc.value.code == 2

    def test_epochs_flag_overrides_config(self, pipeline, tmp_path):
        rc = main(
            [
                "train", "--config", str(pipeline["cfg"]),
                "--data", str(pipeline["data"]), "--split", str(pipeline["split"]),
                "--epochs", "1", "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        assert len((tmp_path / "train_log.jsonl").read_text().strip().splitlines()) == 1

    def test_rerun_checkpoint_identical(self, pipeline, tmp_path):
        rc = main(
            [
                "train", "--config", str(pipeline["cfg"]),
                "--data", str(pipeline["data"]), "--split", str(pipeline["split"]),
                "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        first = (pipeline["train"] / "model.ckpt").read_bytes()
        assert (tmp_path / "model.ckpt").read_bytes() == first


class TestImpute:
    def test_full_grid_outputs(self, pipeline, tmp_path):
        rc = main(
            [
                "impute", "--data", str(pipeline["data"]),
                "--model", str(pipeline["train"]), "--split", str(pipeline["split"]),
                "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        meta = json.loads((tmp_path / "imputed.json").read_text())
        n = meta["height"] * meta["width"] * meta["length"]
        estimate = np.fromfile(tmp_path / "imputed.f32", dtype="<f4")
        counts = np.fromfile(tmp_path / "counts.f32", dtype="<f4")
        assert estimate.size == n == 8 * 8 * 36
        assert np.isfinite(estimate).all()
        assert counts.size == n and (counts >= 1).all()

    def test_checkpoint_path_accepted(self, pipeline, tmp_path):
        rc = main(
            [
                "impute", "--data", str(pipeline["data"]),
                "--model", str(pipeline["train"] / "model.ckpt"),
                "--out", str(tmp_path),
            ]
        )
        assert rc == 0


class TestEvaluate:
    def test_metrics_and_spatial_map(self, pipeline, tmp_path):
        args = [
            "evaluate", "--data", str(pipeline["data"]),
            "--model", str(pipeline["train"]), "--split", str(pipeline["split"]),
        ]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        report = json.loads((tmp_path / "a" / "metrics.json").read_text())
        assert report["n_eval"] == 461
        assert report["mae"] > 0
        header = (tmp_path / "a" / "spatial_error.csv").read_text().splitlines()[0]
        assert header.startswith("row,col,mae,n")
        # metrics reproduce byte for byte under the same inputs
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "b" / "metrics.json").read_bytes() == (
            tmp_path / "a" / "metrics.json"
        ).read_bytes()

    def test_checkpoint_config_mismatch(self, pipeline, tmp_path, capsys):
        override = tmp_path / "override.json"
        override.write_text(json.dumps({"model": {"c": 16}}))
        rc = main(
            [
                "evaluate", "--config", str(override),
                "--data", str(pipeline["data"]), "--model", str(pipeline["train"]),
                "--split", str(pipeline["split"]), "--out", str(tmp_path / "run"),
            ]
        )
        assert rc == 1
        assert "checkpoint" in capsys.readouterr().err


class TestVariogram:
    def test_csv_and_range(self, pipeline, tmp_path):
        rc = main(
            [
                "variogram", "--data", str(pipeline["data"]),
                "--max-lag", "6", "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        lines = (tmp_path / "variogram.csv").read_text().strip().splitlines()
        assert lines[0] == "lag_km,gamma,pairs"
        # nearest neighbours sit exactly 1 km apart, so the first populated
        # bin is [1, 2) km
        lag, gamma, pairs = lines[1].split(",")
        assert float(lag) == 1.5 and float(gamma) >= 0 and int(pairs) > 0
        assert float(lines[-1].split(",")[0]) <= 6.0
        result = json.loads((tmp_path / "range.json").read_text())
        assert set(result) == {"range_km", "tile_cells", "plateau"}
        assert result["tile_cells"] % 4 == 0


class TestBaseline:
    def test_interp_exact_on_linear_series(self, tmp_path):
        # dyadic slope keeps the float32 storage lossless, so interpolation
        # at an interior hidden point is exact up to rounding
        n, length = 9, 16
        t = np.arange(length, dtype=np.float64)
        y = 0.25 + t * 2.0 ** -7 + np.zeros((n, 1))
        ds = GridDataset(
            height=3, width=3, times=np.arange(length, dtype=np.int64),
            Y=y, M=np.ones((n, length)),
            X=np.zeros((n, length, 0)), Z=np.zeros((n, length, 0)),
            coords=grid_coords(3, 3), cell_size_km=1.0, feature_names=[],
        )
        save_dataset(ds, tmp_path / "linear.json")
        (tmp_path / "split.json").write_text(json.dumps([[0, 3], [4, 8], [8, 14]]))
        rc = main(
            [
                "baseline", "--data", str(tmp_path / "linear.json"),
                "--split", str(tmp_path / "split.json"), "--method", "interp",
                "--out", str(tmp_path / "run"),
            ]
        )
        assert rc == 0
        report = json.loads((tmp_path / "run" / "metrics.json").read_text())
        assert report["mae"] < 1e-9
        assert report["n_eval"] == 3

    @pytest.mark.parametrize("method", ["mean", "mf"])
    def test_other_methods_run(self, pipeline, tmp_path, method):
        rc = main(
            [
                "baseline", "--data", str(pipeline["data"]),
                "--split", str(pipeline["split"]), "--method", method,
                "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["mae"] > 0

    def test_unknown_method_in_config(self, pipeline, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"baseline": {"method": "magic"}}))
        rc = main(
            [
                "baseline", "--config", str(cfg), "--data", str(pipeline["data"]),
                "--split", str(pipeline["split"]), "--out", str(tmp_path / "run"),
            ]
        )
        assert rc == 2
        assert "magic" in capsys.readouterr().err


class TestEntryPoint:
    def test_module_invocation_with_threads(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"field": CONFIG["field"]}))
        proc = subprocess.run(
            [
                sys.executable, "-m", "stimpute", "synth", "--config", str(cfg),
                "--threads", "1", "--out", str(tmp_path / "run"),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "wrote" in proc.stdout
        assert (tmp_path / "run" / "dataset.json").exists()
