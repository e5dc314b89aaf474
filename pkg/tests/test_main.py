from __future__ import annotations

import json
import math

import numpy as np
import pytest

from attack.storage import load_perturbation, save_perturbation
from attack.universal import Perturbation, per_image_perturbation
from dataio.dataset import load_dataset
from entities import HolderPair, PowerSettings
from main import main
from network.layers import Dense, Flatten, Softmax
from network.model import Network
from network.storage import save_network
from tests.fakes import small_network


@pytest.fixture
def model_path(tmp_path):
    return save_network(small_network(seed=3), tmp_path / "model.sfn1")


def _perturb_args(idx_dir, model_path, out_dir, *extra):
    return [
        "perturb",
        "--data", str(idx_dir),
        "--model", str(model_path),
        "--tap", "pool1",
        "--p", "inf",
        "--q", "5",
        "--L", "25",
        "--batch", "8",
        "--seed", "11",
        "--out-dir", str(out_dir),
        *extra,
    ]  # fmt: skip


def test_train_writes_model_report_and_config(idx_dir, tmp_path):
    out = tmp_path / "train"
    args = ["train", "--data", str(idx_dir), "--seed", "7", "--epochs", "1", "--out-dir", str(out)]
    assert main(args) == 0
    report = json.loads((out / "train_report.json").read_text())
    assert report["config"]["train_seed"] == 7
    assert report["version"]
    assert 0.0 <= report["training"]["test_accuracy"] <= 1.0
    first = ((out / "model.sfn1").read_bytes(), (out / "train_report.json").read_bytes())

    assert main(["train", "--config", str(out / "run_config.json")]) == 0
    assert ((out / "model.sfn1").read_bytes(), (out / "train_report.json").read_bytes()) == first


def test_missing_data_directory_exits_with_usage_error(tmp_path, capsys):
    missing = tmp_path / "no-such-dir"
    assert main(["train", "--data", str(missing), "--out-dir", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_perturb_writes_three_artifacts(idx_dir, model_path, tmp_path):
    out = tmp_path / "perturb"
    assert main(_perturb_args(idx_dir, model_path, out)) == 0
    perturbation = load_perturbation(out / "perturbation.sfp1")
    assert perturbation.norm == pytest.approx(25.0)
    assert math.isinf(perturbation.p)
    assert perturbation.meta.provenance["tap"] == "pool1"
    assert perturbation.meta.provenance["batch_seed"] == 11
    report = json.loads((out / "power_report.json").read_text())
    assert report["power"]["history"][-1] == report["power"]["singular_value"]
    assert len(report["power"]["relative_errors"]) == len(report["power"]["history"])
    assert (out / "perturbation.pgm").exists()
    assert (out / "perturbation.pgm.json").exists()


def test_perturb_is_reproducible_from_its_config_for_any_worker_count(idx_dir, model_path, tmp_path):
    out = tmp_path / "perturb"
    assert main(_perturb_args(idx_dir, model_path, out, "--workers", "1")) == 0
    names = ["perturbation.sfp1", "power_report.json", "perturbation.pgm", "run_config.json"]
    first = {name: (out / name).read_bytes() for name in names}
    assert main(["perturb", "--config", str(out / "run_config.json"), "--workers", "4"]) == 0
    assert {name: (out / name).read_bytes() for name in names} == first


def test_per_image_mode_matches_library(idx_dir, model_path, tmp_path):
    out = tmp_path / "single"
    args = _perturb_args(idx_dir, model_path, out)
    args[args.index("--batch") + 1] = "1"
    assert main([*args, "--image-id", "0"]) == 0
    train = load_dataset(idx_dir, "train")
    net = small_network(seed=3)
    expected = per_image_perturbation(net, "pool1", train.images[0], HolderPair(p="inf", q=5), 25.0, PowerSettings(), image_id=0)
    assert np.array_equal(load_perturbation(out / "perturbation.sfp1").epsilon, expected.epsilon)

    assert main([*_perturb_args(idx_dir, model_path, out), "--image-id", "0"]) == 2


def test_invalid_tap_lists_available_taps(idx_dir, model_path, tmp_path, capsys):
    args = _perturb_args(idx_dir, model_path, tmp_path / "bad")
    args[args.index("--tap") + 1] = "block2_pool"
    assert main(args) == 2
    err = capsys.readouterr().err
    assert "block2_pool" in err and "pool1" in err and "conv2" in err


def test_zero_jacobian_is_a_numerical_failure(idx_dir, tmp_path):
    flat = Network([Flatten(), Dense(np.zeros((10, 64)), np.zeros(10), name="dense"), Softmax()], (8, 8, 1))
    path = save_network(flat, tmp_path / "flat.sfn1")
    args = _perturb_args(idx_dir, path, tmp_path / "fail")
    args[args.index("--tap") + 1] = "dense"
    assert main(args) == 3


def test_eval_reports_rates_baselines_and_top_k(idx_dir, model_path, tmp_path):
    out = tmp_path / "perturb"
    assert main(_perturb_args(idx_dir, model_path, out)) == 0
    eval_out = tmp_path / "eval"
    args = [
        "eval",
        "--data", str(idx_dir),
        "--model", str(model_path),
        "--perturbation", str(out / "perturbation.sfp1"),
        "--baseline-seeds", "2",
        "--topk-image", "3",
        "--norms", "0,5,10,15,20,25",
        "--show-images", "0,1",
        "--out-dir", str(eval_out),
    ]  # fmt: skip
    assert main(args) == 0
    report = json.loads((eval_out / "fooling_report.json").read_text())
    assert report["fooling"]["dataset_size"] == 48
    assert len(report["baselines"]) == 2
    assert [flip["image_id"] for flip in report["flips"]] == [0, 1]
    lines = (eval_out / "topk_image_3.csv").read_text().splitlines()
    assert len(lines) == 7
    assert lines[0].startswith("norm,class_1,probability_1")
    assert "random seed 1" in (eval_out / "fooling_report.txt").read_text()


def test_eval_of_zero_perturbation_is_zero(idx_dir, model_path, tmp_path):
    zero = save_perturbation(Perturbation(epsilon=np.zeros((8, 8, 1)), p=math.inf, norm=0.0), tmp_path / "zero.sfp1")
    out = tmp_path / "eval"
    assert main(["eval", "--data", str(idx_dir), "--model", str(model_path), "--perturbation", str(zero), "--out-dir", str(out)]) == 0
    assert json.loads((out / "fooling_report.json").read_text())["fooling"]["fooling_rate"] == 0.0


def test_eval_shape_mismatch_exits_2(idx_dir, model_path, tmp_path):
    wrong = save_perturbation(Perturbation(epsilon=np.zeros((4, 4, 1)), p=math.inf, norm=0.0), tmp_path / "wrong.sfp1")
    args = ["eval", "--data", str(idx_dir), "--model", str(model_path), "--perturbation", str(wrong), "--out-dir", str(tmp_path)]
    assert main(args) == 2


def test_sweep_writes_one_row_per_value(idx_dir, model_path, tmp_path):
    out = tmp_path / "sweep"
    args = _perturb_args(idx_dir, model_path, out)
    args[0] = "sweep"
    assert main([*args, "--sweep", "q", "--values", "1,2,5"]) == 0
    assert len((out / "sweep_q.csv").read_text().splitlines()) == 4
    assert main([*args, "--sweep", "batch", "--values", "2,4,8"]) == 0
    report = json.loads((out / "sweep_batch.json").read_text())
    ids = [point["image_ids"] for point in report["sweep"]["points"]]
    assert ids[2][:4] == ids[1]
    assert main([*args, "--sweep", "q", "--values", ""]) == 2
    assert main([*args, "--sweep", "q", "--values", "5,2"]) == 2


def test_profile_with_fooling(idx_dir, model_path, tmp_path):
    out = tmp_path / "profile"
    args = _perturb_args(idx_dir, model_path, out)
    args[0] = "profile"
    assert main([*args, "--taps", "conv1,pool1", "--with-fooling"]) == 0
    report = json.loads((out / "profile.json").read_text())
    assert [entry["tap"] for entry in report["profile"]] == ["conv1", "pool1"]
    assert [row["tap"] for row in report["taps"]] == ["conv1", "pool1"]


def test_transfer_and_export(idx_dir, model_path, tmp_path):
    out = tmp_path / "perturb"
    assert main(_perturb_args(idx_dir, model_path, out)) == 0
    eps = str(out / "perturbation.sfp1")
    transfer_out = tmp_path / "transfer"
    args = ["transfer", "--data", str(idx_dir), "--models", str(model_path), "--perturbations", eps, "--out-dir", str(transfer_out)]
    assert main(args) == 0
    matrix = json.loads((transfer_out / "transfer.json").read_text())["transfer"]
    assert len(matrix["rates"]) == 1 and len(matrix["rates"][0]) == 1

    export_out = tmp_path / "export"
    assert main(["export", "--perturbation", eps, "--mode", "ppm", "--out-dir", str(export_out)]) == 0
    assert (export_out / "perturbation.ppm").exists()
    sidecar = json.loads((export_out / "perturbation.ppm.json").read_text())
    assert sidecar["source"] == eps
    assert main(["export", "--perturbation", eps, "--mode", "raw", "--out", str(export_out / "copy.sfp1")]) == 0
    assert np.array_equal(load_perturbation(export_out / "copy.sfp1").epsilon, load_perturbation(eps).epsilon)


def test_usage_errors_exit_2(tmp_path):
    assert main(["explode"]) == 2
    assert main(["perturb", "--p", "fast"]) == 2
    assert main(["eval", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["eval", "--data", str(tmp_path)]) == 2
