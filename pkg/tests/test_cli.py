import json

import numpy as np
import pytest

from plumerom.cli import main
from plumerom.smx import read_smx


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small generate -> train run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    model = root / "model"
    assert main(["generate", "--out", str(data), "--n", "40",
                 "--grid", "41x21", "--seed", "3"]) == 0
    assert main(["train", "--dataset", str(data), "--out", str(model),
                 "--L", "4", "--method", "map", "--seed", "0"]) == 0
    return root, data, model


def test_generate_outputs(pipeline):
    _, data, _ = pipeline
    assert (data / "full.smx").exists()
    assert (data / "half.smx").exists()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["n_snapshots"] == 40
    run_config = json.loads((data / "run_config.json").read_text())
    assert run_config["command"] == "generate"
    assert run_config["config"]["n"] == 40


def test_generate_refuses_nonempty_without_force(pipeline):
    _, data, _ = pipeline
    assert main(["generate", "--out", str(data), "--n", "10",
                 "--grid", "41x21"]) == 3


def test_generate_rerun_byte_identical(pipeline, tmp_path):
    _, data, _ = pipeline
    again = tmp_path / "again"
    assert main(["generate", "--config", str(data / "run_config.json"),
                 "--out", str(again)]) == 0
    assert (again / "full.smx").read_bytes() == (data / "full.smx").read_bytes()
    assert (again / "half.smx").read_bytes() == (data / "half.smx").read_bytes()
    assert (again / "manifest.json").read_text() == (data / "manifest.json").read_text()


def test_train_outputs(pipeline):
    _, _, model = pipeline
    meta = json.loads((model / "model.json").read_text())
    assert meta["method"] == "map"
    assert len(meta["gps"]) == 4
    assert meta["priors_audit"] is not None
    assert (model / "basis.smx").exists()
    assert (model / "gps.bin").exists()


def test_train_split_independent_of_method(pipeline, tmp_path):
    _, data, model = pipeline
    prior_dir = tmp_path / "prior_model"
    assert main(["train", "--dataset", str(data), "--out", str(prior_dir),
                 "--L", "4", "--method", "prior"]) == 0
    a = json.loads((model / "model.json").read_text())["split_manifest"]
    b = json.loads((prior_dir / "model.json").read_text())["split_manifest"]
    assert a["train"]["hash"] == b["train"]["hash"]
    assert a["calibration"]["hash"] == b["calibration"]["hash"]


def test_train_prior_zero_iterations(pipeline, tmp_path):
    _, data, _ = pipeline
    out = tmp_path / "prior2"
    assert main(["train", "--dataset", str(data), "--out", str(out),
                 "--L", "3", "--method", "prior"]) == 0
    meta = json.loads((out / "model.json").read_text())
    assert all(g["diagnostics"]["total_iterations"] == 0 for g in meta["gps"])


def test_train_excessive_L_is_config_error(pipeline, tmp_path):
    _, data, _ = pipeline
    assert main(["train", "--dataset", str(data), "--out", str(tmp_path / "x"),
                 "--L", "400", "--method", "prior"]) == 2


def test_predict_physical_point(pipeline, tmp_path):
    root, _, model = pipeline
    out = tmp_path / "pred"
    assert main(["predict", "--model", str(model), "--out", str(out),
                 "--mu", "5.78,2.79e-2,-1.01,0.830"]) == 0
    field, nx, nz = read_smx(out / "field.smx")
    assert (nx, nz) == (41, 21)
    lines = (out / "coefficients.csv").read_text().splitlines()
    assert lines[0] == "mode,mean,variance"
    assert len(lines) == 5


def test_predict_unit_point(pipeline, tmp_path):
    _, _, model = pipeline
    out = tmp_path / "predu"
    assert main(["predict", "--model", str(model), "--out", str(out),
                 "--unit", "0.5,0.5,0.9,0.9"]) == 0
    config = json.loads((out / "run_config.json").read_text())
    assert config["config"]["unit"] == [0.5, 0.5, 0.9, 0.9]


def test_predict_rejects_obstacle_point(pipeline, tmp_path):
    _, _, model = pipeline
    code = main(["predict", "--model", str(model), "--out", str(tmp_path / "p"),
                 "--mu", "6.0,1e-2,0.5,0.5"])
    assert code == 2


def test_predict_rejects_out_of_bounds(pipeline, tmp_path):
    _, _, model = pipeline
    code = main(["predict", "--model", str(model), "--out", str(tmp_path / "p2"),
                 "--mu", "15.0,1e-2,-1.0,0.8"])
    assert code == 2


def test_evaluate_outputs_and_identity(pipeline, tmp_path):
    _, data, model = pipeline
    out = tmp_path / "eval"
    assert main(["evaluate", "--model", str(model), "--dataset", str(data),
                 "--split", "test", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    local, _, _ = read_smx(out / "q2_local.smx")
    weights, _, _ = read_smx(out / "weights.smx")
    meta = json.loads((model / "model.json").read_text())
    lines = (out / "q2_per_mode.csv").read_text().splitlines()
    assert len(lines) == len(meta["gps"]) + 1
    assert summary["dataset_tag"] == "test"
    # global equals the variance-weighted mean of the stored local values
    from plumerom.rom import q2_global
    assert summary["q2_global"] == pytest.approx(
        q2_global(local[:, 0], weights[:, 0]), abs=1e-10
    )


def test_evaluate_train_split_deterministic(pipeline, tmp_path):
    _, data, model = pipeline
    a, b = tmp_path / "eval_a", tmp_path / "eval_b"
    for out in (a, b):
        assert main(["evaluate", "--model", str(model), "--dataset", str(data),
                     "--split", "train", "--out", str(out)]) == 0
    assert (a / "summary.json").read_text() == (b / "summary.json").read_text()
    assert (a / "q2_local.smx").read_bytes() == (b / "q2_local.smx").read_bytes()


def test_robustness_outputs(pipeline, tmp_path):
    _, data, _ = pipeline
    out = tmp_path / "sweep"
    assert main(["robustness", "--dataset", str(data), "--out", str(out),
                 "--sizes", "12,20", "--method", "prior"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "size,L_opt,q2_global,runtime"
    assert len(lines) == 3
    for size in (12, 20):
        l_opt = int(lines[1 if size == 12 else 2].split(",")[1])
        assert l_opt <= int(round(0.9 * size)) - 1
        assert (out / f"q2_per_mode_{size}.csv").exists()
    assert (out / "q2_by_L.csv").exists()


def test_missing_dataset_is_data_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "m")]) == 3


def test_bad_grid_is_config_error(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "g"),
                 "--n", "10", "--grid", "banana"]) == 2
