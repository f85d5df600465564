import json
import os
from pathlib import Path

import numpy as np
import pytest

from geolatent.cli import main


def tiny_config(task="classification"):
    doc = {
        "seed": 0,
        "position_mode": "add",
        "tokenizer": {"feature_width": 8, "conv_widths": [4, 4]},
        "banks": {
            "spatial": {"n_freqs": 2, "f_min": 0.5, "f_max": 4.0, "n_angles": 2},
            "temporal": {"n_freqs": 2, "f_min": 0.5, "f_max": 4.0},
            "spectral": {"n_freqs": 2, "f_min": 0.5, "f_max": 4.0},
        },
        "backbone": {"n_latents": 4, "latent_dim": 8, "n_self_layers": 1, "n_heads": 2},
        "planner": {"max_pad": 16},
        "train": {"steps": 4, "lr": 0.001},
    }
    if task == "classification":
        doc["heads"] = [{"head_id": "y", "kind": "classification", "n_classes": 2,
                         "metrics": ["accuracy"]}]
        doc["synth"] = {"task": "classification", "n_samples": 8, "height": 8,
                        "width": 8, "n_bands": 2}
    else:
        doc["heads"] = [{"head_id": "y", "kind": "regression", "output_width": 1,
                         "metrics": ["rmse"]}]
        doc["synth"] = {"task": "regression_timeseries", "n_samples": 8, "height": 8,
                        "width": 8, "n_bands": 2, "timesteps": 2}
    return doc


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(tiny_config()))
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_dataset_and_config_copy(tmp_path, config_path, capsys):
    out = tmp_path / "data"
    code, stdout, _ = run(capsys, "synth", "--config", config_path, "--out", str(out))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["n_samples"] == 8
    assert (out / "manifest.json").exists()
    assert (out / "config.json").exists()


def test_synth_is_byte_deterministic(tmp_path, config_path, capsys):
    for name in ("d1", "d2"):
        assert run(capsys, "synth", "--config", config_path,
                   "--out", str(tmp_path / name))[0] == 0
    d1, d2 = tmp_path / "d1", tmp_path / "d2"
    files1 = sorted(p.name for p in d1.iterdir())
    assert files1 == sorted(p.name for p in d2.iterdir())
    for name in files1:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


# ---------------------------------------------------------------------------
# plan-batches


def test_plan_batches_worked_pair(config_path, capsys):
    code, stdout, _ = run(capsys, "plan-batches", "--config", config_path,
                          "--counts", "100,150", "--max-pad", "50")
    assert code == 0
    payload = json.loads(stdout)
    assert payload["waste_report"]["total_waste"] == 50
    assert payload["waste_report"]["n_batches"] == 1


def test_plan_batches_on_dataset(tmp_path, config_path, capsys):
    out = tmp_path / "data"
    run(capsys, "synth", "--config", config_path, "--out", str(out))
    code, stdout, _ = run(capsys, "plan-batches", "--config", config_path,
                          "--data", str(out))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["waste_report"]["total_waste"] == 0  # one modality, equal counts


# ---------------------------------------------------------------------------
# tokenize


def test_tokenize_dumps_summary(tmp_path, config_path, capsys):
    out = tmp_path / "data"
    run(capsys, "synth", "--config", config_path, "--out", str(out))
    code, stdout, _ = run(capsys, "tokenize", "--config", config_path,
                          "--data", str(out), "--sample-id", "cls_00000")
    assert code == 0
    payload = json.loads(stdout)
    assert payload["n_tokens"] == 2  # 8x8 -> 1x1 grid, 2 bands
    assert len(payload["first_row"]) == payload["width"]


def test_tokenize_unknown_sample_exits_3(tmp_path, config_path, capsys):
    out = tmp_path / "data"
    run(capsys, "synth", "--config", config_path, "--out", str(out))
    code, _, err = run(capsys, "tokenize", "--config", config_path,
                       "--data", str(out), "--sample-id", "nope")
    assert code == 3
    assert json.loads(err)["error"]["kind"] == "data"


# ---------------------------------------------------------------------------
# train / eval


def test_train_then_eval(tmp_path, config_path, capsys):
    data = tmp_path / "data"
    rundir = tmp_path / "run"
    run(capsys, "synth", "--config", config_path, "--out", str(data))
    code, stdout, _ = run(capsys, "train", "--config", config_path,
                          "--data", str(data), "--out", str(rundir))
    assert code == 0
    assert (rundir / "checkpoint" / "params.bin").exists()
    assert (rundir / "loss.csv").read_text().startswith("step,loss")
    assert (rundir / "config.json").exists()

    code, stdout, _ = run(capsys, "eval", "--config", config_path,
                          "--checkpoint", str(rundir / "checkpoint"),
                          "--data", str(data),
                          "--out", str(tmp_path / "eval.json"))
    assert code == 0
    payload = json.loads(stdout)
    metrics = {r["metric"] for r in payload["results"]}
    assert "y/accuracy" in metrics
    assert (tmp_path / "eval.json").exists()


def test_full_pipeline_byte_deterministic(tmp_path, config_path, capsys):
    outputs = []
    for tag in ("a", "b"):
        data = tmp_path / f"data_{tag}"
        rundir = tmp_path / f"run_{tag}"
        run(capsys, "synth", "--config", config_path, "--out", str(data))
        run(capsys, "train", "--config", config_path, "--data", str(data),
            "--out", str(rundir))
        code, stdout, _ = run(capsys, "eval", "--config", config_path,
                              "--checkpoint", str(rundir / "checkpoint"),
                              "--data", str(data),
                              "--out", str(tmp_path / f"eval_{tag}.json"))
        assert code == 0
        outputs.append((
            (rundir / "checkpoint" / "params.bin").read_bytes(),
            (rundir / "checkpoint" / "manifest.json").read_bytes(),
            (tmp_path / f"eval_{tag}.json").read_bytes(),
            (rundir / "loss.csv").read_bytes(),
        ))
    assert outputs[0] == outputs[1]


def test_eval_nan_checkpoint_exits_4(tmp_path, config_path, capsys):
    data = tmp_path / "data"
    rundir = tmp_path / "run"
    run(capsys, "synth", "--config", config_path, "--out", str(data))
    run(capsys, "train", "--config", config_path, "--data", str(data),
        "--out", str(rundir))
    blob_path = rundir / "checkpoint" / "params.bin"
    blob = np.frombuffer(blob_path.read_bytes(), dtype="<f8").copy()
    blob[:] = np.nan
    blob_path.write_bytes(blob.tobytes())
    code, _, err = run(capsys, "eval", "--config", config_path,
                       "--checkpoint", str(rundir / "checkpoint"),
                       "--data", str(data))
    assert code == 4
    assert json.loads(err)["error"]["kind"] == "numerical"


# ---------------------------------------------------------------------------
# grad-check / encode


def test_grad_check_passes(config_path, capsys):
    code, stdout, _ = run(capsys, "grad-check", "--config", config_path,
                          "--tolerance", "1e-4")
    assert code == 0
    payload = json.loads(stdout)
    assert payload["passed"] is True


def test_encode_command_scalar(tmp_path, capsys):
    bank = tmp_path / "bank.json"
    bank.write_text(json.dumps({"mode": "axis_aligned", "n_freqs": 2,
                                "f_min": 1.0, "f_max": 2.0}))
    code, stdout, _ = run(capsys, "encode", "--x", "0", "--dx", "0",
                          "--bank-config", str(bank))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["encoding"] == [0.0, 0.0, 1.0, 1.0]


def test_encode_command_interval(tmp_path, capsys):
    bank = tmp_path / "bank.json"
    bank.write_text(json.dumps({"mode": "axis_aligned", "n_freqs": 1,
                                "f_min": 1.0, "f_max": 2.0}))
    code, stdout, _ = run(capsys, "encode", "--x", "0", "--dx", "0.25",
                          "--bank-config", str(bank))
    payload = json.loads(stdout)
    assert payload["encoding"][1] == pytest.approx(2 / np.pi)


# ---------------------------------------------------------------------------
# error handling


def test_unknown_config_key_exits_2(tmp_path, capsys):
    doc = tiny_config()
    doc["banana"] = 1
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    code, _, err = run(capsys, "synth", "--config", str(p), "--out", str(tmp_path / "d"))
    assert code == 2
    payload = json.loads(err)
    assert payload["error"]["kind"] == "configuration"
    assert "banana" in payload["error"]["message"]


def test_missing_data_dir_exits_3(config_path, capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--config", config_path,
                       "--checkpoint", str(tmp_path / "nope"),
                       "--data", str(tmp_path / "missing"))
    assert code == 3


def test_seed_env_override(tmp_path, config_path, capsys, monkeypatch):
    monkeypatch.setenv("GEOLATENT_SEED", "123")
    out = tmp_path / "d_override"
    run(capsys, "synth", "--config", config_path, "--out", str(out))
    copied = json.loads((out / "config.json").read_text())
    assert copied["seed"] == 123


def test_eval_writes_segmentation_maps(tmp_path, capsys):
    doc = tiny_config()
    doc["heads"] = [{"head_id": "y", "kind": "segmentation", "n_classes": 2,
                     "out_height": 8, "out_width": 8, "metrics": ["dice"]}]
    doc["synth"] = {"task": "segmentation", "n_samples": 6, "height": 8,
                    "width": 8, "n_bands": 2, "n_rects": 1, "rect_snap": 2}
    p = tmp_path / "seg.json"
    p.write_text(json.dumps(doc))
    data = tmp_path / "data"
    rundir = tmp_path / "run"
    assert run(capsys, "synth", "--config", str(p), "--out", str(data))[0] == 0
    assert run(capsys, "train", "--config", str(p), "--data", str(data),
               "--out", str(rundir))[0] == 0
    code, stdout, _ = run(capsys, "eval", "--config", str(p),
                          "--checkpoint", str(rundir / "checkpoint"),
                          "--data", str(data), "--out", str(tmp_path / "eval.json"))
    assert code == 0
    maps = sorted((tmp_path / "segmentation").glob("*.pgm"))
    assert maps, "expected PGM predictions for the segmentation head"
    assert maps[0].read_bytes().startswith(b"P5\n8 8\n")
    assert (tmp_path / "segmentation" / (maps[0].name + ".json")).exists()
