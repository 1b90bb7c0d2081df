"""End-to-end CLI tests: every command runs in a subprocess, exit codes and
on-disk outputs are checked against the documented contract."""

import hashlib
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from poselift.datagen import load_dataset
from poselift.lifting import load_checkpoint
from poselift.tensorio import read_tensor


def run_cli(*args, env_extra=None):
    env = os.environ.copy()
    env.pop("POSELIFT_THREADS", None)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "poselift.cli", *map(str, args)],
        capture_output=True,
        text=True,
        env=env,
    )


def tree_digest(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    r = run_cli("synth", "--n", 6, "--seed", 5, "--out-dir", d)
    assert r.returncode == 0, r.stderr
    return d


@pytest.fixture(scope="module")
def encoded_dir(tmp_path_factory, dataset_dir):
    d = tmp_path_factory.mktemp("enc")
    r = run_cli(
        "encode", "--dataset", dataset_dir / "samples.jsonl", "--out-dir", d,
        "--grid", "16x16", "--cube-size", 8, "--sigma", 1.5,
    )
    assert r.returncode == 0, r.stderr
    return d


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, dataset_dir):
    d = tmp_path_factory.mktemp("run")
    r = run_cli(
        "train", "--dataset", dataset_dir / "samples.jsonl", "--out-dir", d,
        "--epochs", 3, "--lr", 0.05, "--batch", 4, "--seed", 7,
        "--dropout", 0.1, "--width", 32, "--blocks", 1,
    )
    assert r.returncode == 0, r.stderr
    return d


# ---------------------------------------------------------------- synth


def test_synth_outputs_and_manifest(dataset_dir):
    records = load_dataset(dataset_dir / "samples.jsonl")
    assert len(records) == 6
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["n"] == 6


def test_synth_rerun_is_byte_identical(tmp_path):
    out = tmp_path / "ds"
    args = ("synth", "--n", 4, "--seed", 11, "--out-dir", out)
    assert run_cli(*args).returncode == 0
    before = tree_digest(out)
    shutil.rmtree(out)
    assert run_cli(*args).returncode == 0
    assert tree_digest(out) == before


def test_synth_rejects_nonpositive_n(tmp_path):
    r = run_cli("synth", "--n", 0, "--seed", 1, "--out-dir", tmp_path / "x")
    assert r.returncode == 1


def test_missing_required_flag_is_usage_error(tmp_path):
    assert run_cli("synth", "--n", 3).returncode == 1
    assert run_cli("encode", "--out-dir", tmp_path / "x").returncode == 1


def test_unknown_command_is_usage_error():
    assert run_cli("frobnicate").returncode == 1


# ---------------------------------------------------------------- encode


def test_encode_default_dims(dataset_dir, tmp_path):
    out = tmp_path / "enc64"
    r = run_cli(
        "encode", "--dataset", dataset_dir / "samples.jsonl", "--out-dir", out,
        "--limit", 1,
    )
    assert r.returncode == 0, r.stderr
    assert read_tensor(out / "sample_0000.joints.tensor").shape == (17, 64, 64)
    assert read_tensor(out / "sample_0000.bones.tensor").shape == (16, 64, 64)
    assert read_tensor(out / "sample_0000.volume.tensor").shape == (17, 64, 64, 64)


def test_encode_small_grid_outputs(encoded_dir):
    names = sorted(p.name for p in encoded_dir.glob("*.tensor"))
    assert len(names) == 6 * 3
    assert read_tensor(encoded_dir / "sample_0005.volume.tensor").shape == (17, 8, 16, 16)
    manifest = json.loads((encoded_dir / "encode_manifest.json").read_text())
    assert manifest["n"] == 6
    assert manifest["grid"] == [16, 16]
    assert sorted(manifest["files"]) == names


def test_encode_flag_validation(dataset_dir, tmp_path):
    ds = dataset_dir / "samples.jsonl"
    out = tmp_path / "x"
    assert run_cli("encode", "--dataset", ds, "--out-dir", out, "--cube-size", 1).returncode == 1
    assert run_cli("encode", "--dataset", ds, "--out-dir", out, "--sigma", 0).returncode == 1
    assert run_cli("encode", "--dataset", ds, "--out-dir", out, "--grid", "64").returncode == 1


def test_encode_missing_dataset_is_data_error(tmp_path):
    r = run_cli("encode", "--dataset", tmp_path / "nope.jsonl", "--out-dir", tmp_path / "x")
    assert r.returncode == 2
    assert "not found" in r.stderr


def test_malformed_dataset_reports_line_number(dataset_dir, tmp_path):
    lines = (dataset_dir / "samples.jsonl").read_text().splitlines()
    lines[2] = "{broken"
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    r = run_cli("encode", "--dataset", bad, "--out-dir", tmp_path / "x")
    assert r.returncode == 2
    assert ":3:" in r.stderr


# ---------------------------------------------------------------- decode


def test_decode_roundtrip_outputs(encoded_dir, dataset_dir, tmp_path):
    out = tmp_path / "dec"
    r = run_cli(
        "decode", "--in-dir", encoded_dir, "--out-dir", out,
        "--dataset", dataset_dir / "samples.jsonl",
    )
    assert r.returncode == 0, r.stderr
    for name in ("decoded.jsonl", "decoded.png", "roundtrip.csv", "roundtrip.png",
                 "decode_manifest.json"):
        assert (out / name).exists(), name
    rows = [json.loads(s) for s in (out / "decoded.jsonl").read_text().splitlines()]
    assert len(rows) == 6
    assert np.asarray(rows[0]["uv_grid"]).shape == (17, 2)
    header = (out / "roundtrip.csv").read_text().splitlines()[0]
    assert header == "sample,joint,u_err_px,v_err_px,z_err_mm"


def test_decode_without_dataset_skips_roundtrip(encoded_dir, tmp_path):
    out = tmp_path / "dec"
    r = run_cli("decode", "--in-dir", encoded_dir, "--out-dir", out)
    assert r.returncode == 0, r.stderr
    assert (out / "decoded.jsonl").exists()
    assert not (out / "roundtrip.csv").exists()


def test_decode_empty_dir_is_data_error(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    r = run_cli("decode", "--in-dir", empty, "--out-dir", tmp_path / "x")
    assert r.returncode == 2
    assert "volume.tensor" in r.stderr


def test_decode_rerun_is_byte_identical(encoded_dir, dataset_dir, tmp_path):
    out = tmp_path / "dec"
    args = ("decode", "--in-dir", encoded_dir, "--out-dir", out,
            "--dataset", dataset_dir / "samples.jsonl")
    assert run_cli(*args).returncode == 0
    before = tree_digest(out)
    shutil.rmtree(out)
    assert run_cli(*args).returncode == 0
    assert tree_digest(out) == before


# ---------------------------------------------------------------- train


def test_train_outputs(train_dir):
    for name in ("network.ckpt", "history.csv", "history.png", "train_manifest.json"):
        assert (train_dir / name).exists(), name
    net, extra = load_checkpoint(train_dir / "network.ckpt")
    assert net.n_joints == 17
    assert net.width == 32
    assert extra["seed"] == 7
    assert extra["skeleton"]["root"] == 0
    history = (train_dir / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,lr,train_loss,train_mpjpe"
    assert len(history) == 1 + 3


def test_train_rerun_is_byte_identical(dataset_dir, tmp_path):
    out = tmp_path / "run"
    args = ("train", "--dataset", dataset_dir / "samples.jsonl", "--out-dir", out,
            "--epochs", 2, "--lr", 0.05, "--batch", 4, "--seed", 7,
            "--width", 32, "--blocks", 1)
    assert run_cli(*args).returncode == 0
    before = tree_digest(out)
    shutil.rmtree(out)
    assert run_cli(*args).returncode == 0
    assert tree_digest(out) == before


def test_train_bad_flags_are_usage_errors(dataset_dir, tmp_path):
    ds = dataset_dir / "samples.jsonl"
    out = tmp_path / "x"
    assert run_cli("train", "--dataset", ds, "--out-dir", out, "--epochs", 0).returncode == 1
    assert run_cli("train", "--dataset", ds, "--out-dir", out, "--dropout", 1.5).returncode == 1


def test_train_divergence_is_numerical_error(dataset_dir, tmp_path):
    # a step this size overflows the batch-norm variance, so the first
    # epoch-end prediction check sees non-finite values
    r = run_cli(
        "train", "--dataset", dataset_dir / "samples.jsonl",
        "--out-dir", tmp_path / "x", "--epochs", 2, "--lr", 1e200,
        "--width", 32, "--blocks", 1, "--batch", 4,
    )
    assert r.returncode == 3
    assert "diverged" in r.stderr


# ---------------------------------------------------------------- eval


def test_eval_checkpoint_outputs(dataset_dir, train_dir, tmp_path):
    out = tmp_path / "ev"
    r = run_cli(
        "eval", "--dataset", dataset_dir / "samples.jsonl", "--out-dir", out,
        "--checkpoint", train_dir / "network.ckpt",
    )
    assert r.returncode == 0, r.stderr
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "index,mpjpe_mm,pa_mpjpe_mm,pck3d"
    assert len(lines) == 1 + 6 + 1
    assert lines[-1].startswith("mean,")
    manifest = json.loads((out / "eval_manifest.json").read_text())
    assert manifest["n"] == 6
    assert manifest["normalize_geodesic"] is False
    assert (out / "metrics.png").exists()


def test_eval_perfect_predictions_score_zero(dataset_dir, tmp_path):
    records = load_dataset(dataset_dir / "samples.jsonl")
    pred = tmp_path / "pred.jsonl"
    with open(pred, "w") as fh:
        for rec in records:
            rel = rec.pose3d_camera.coords - rec.pose3d_camera.coords[0]
            fh.write(json.dumps({"coords": rel.tolist()}) + "\n")
    out = tmp_path / "ev"
    r = run_cli("eval", "--dataset", dataset_dir / "samples.jsonl", "--out-dir", out,
                "--pred", pred)
    assert r.returncode == 0, r.stderr
    manifest = json.loads((out / "eval_manifest.json").read_text())
    assert manifest["aggregate"]["mpjpe_mm"] < 1e-9
    assert manifest["aggregate"]["pck3d"] == 1.0


def test_eval_requires_exactly_one_source(dataset_dir, train_dir, tmp_path):
    ds = dataset_dir / "samples.jsonl"
    out = tmp_path / "x"
    assert run_cli("eval", "--dataset", ds, "--out-dir", out).returncode == 1
    assert run_cli(
        "eval", "--dataset", ds, "--out-dir", out,
        "--pred", tmp_path / "p.jsonl", "--checkpoint", train_dir / "network.ckpt",
    ).returncode == 1


def test_eval_prediction_count_mismatch_is_data_error(dataset_dir, tmp_path):
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"coords": np.zeros((17, 3)).tolist()}) + "\n")
    r = run_cli("eval", "--dataset", dataset_dir / "samples.jsonl",
                "--out-dir", tmp_path / "x", "--pred", pred)
    assert r.returncode == 2


def test_eval_malformed_prediction_is_data_error(dataset_dir, tmp_path):
    pred = tmp_path / "pred.jsonl"
    pred.write_text('{"coords": "nope"}\n')
    r = run_cli("eval", "--dataset", dataset_dir / "samples.jsonl",
                "--out-dir", tmp_path / "x", "--pred", pred)
    assert r.returncode == 2
    assert ":1:" in r.stderr


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_pass_output():
    r = run_cli("gradcheck", "--ops", "loss_pose,loss_l3d", "--trials", 3)
    assert r.returncode == 0, r.stderr
    assert "loss_pose" in r.stdout and "PASS" in r.stdout
    assert "all gradients within tolerance" in r.stdout


def test_gradcheck_unknown_op_is_usage_error():
    r = run_cli("gradcheck", "--ops", "loss_bogus")
    assert r.returncode == 1
    assert "unknown gradcheck ops" in r.stderr


def test_gradcheck_sign_flip_is_numerical_error():
    r = run_cli("gradcheck", "--ops", "loss_pose", "--trials", 2, "--inject-sign-flip")
    assert r.returncode == 3
    assert "FAIL" in r.stdout


# ---------------------------------------------------------------- environment


def test_thread_cap_env(tmp_path):
    ok = run_cli("gradcheck", "--ops", "loss_pose", "--trials", 1,
                 env_extra={"POSELIFT_THREADS": "1"})
    assert ok.returncode == 0, ok.stderr
    bad = run_cli("gradcheck", "--ops", "loss_pose", "--trials", 1,
                  env_extra={"POSELIFT_THREADS": "many"})
    assert bad.returncode == 1
    assert "POSELIFT_THREADS" in bad.stderr
