"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py -v` to see the per-criterion
lines and timings. The training criteria (5a-5d) each train from scratch
under the default config for their task and are the slow part of the gate.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from geolatent import config as cfg
from geolatent.backbone import BackboneConfig, encode, init_backbone_params
from geolatent.batch_planner import PlannerConfig, optimal_partition_oracle, plan_batches
from geolatent.datasynth import generate
from geolatent.encoding import (
    UncertainScalar,
    axis_aligned_permutation,
    directional_bank_from_axes,
    fourier_encode_directional,
    fourier_encode_interval,
    fourier_encode_scalar,
    fourier_encode_vector,
    make_frequency_bank,
    FrequencyBank,
)
from geolatent.heads import HeadSpec
from geolatent.metrics import dice, f1, r_squared, rmse
from geolatent.model import GeoModel
from geolatent.numerics import DualTensor, ParamStore
from geolatent.tokenizer import TokenMatrix, pad_tokens
from geolatent.trainer import evaluate, grad_check, train


def report(cid, elapsed, detail):
    print(f"\nACCEPTANCE {cid}: PASS ({elapsed:.1f}s) {detail}")


def run_task(task):
    """Synth -> train -> evaluate under the default config for the task."""
    doc = cfg.default_run_config(task)
    ds = generate(cfg.synth_spec_from(doc))
    model = GeoModel(cfg.model_config_from(doc), [ds.modality],
                     norm_stats={ds.modality.modality_id: (ds.norm_mean, ds.norm_std)})
    train(ds.train_samples, model, cfg.train_config_from(doc))
    results = evaluate(ds.test_samples, model, cfg.metric_names_from(doc))
    return {r.metric: r.value for r in results}


# ---------------------------------------------------------------------------
# criterion 1: Fourier oracle suite


def test_criterion_1_fourier_oracles():
    t0 = time.time()
    rng = np.random.default_rng(2024)

    # closed-form interval encoding vs adaptive quadrature, 1000 random triples
    worst = 0.0
    for _ in range(1000):
        x = rng.uniform(-2.0, 2.0)
        dx = rng.uniform(0.0, 1.5)
        k = rng.uniform(0.05, 10.0)
        bank = FrequencyBank(mode="axis_aligned", frequencies=np.array([k]))
        got = fourier_encode_interval(UncertainScalar(x, dx), bank)
        for idx, trig in enumerate((np.sin, np.cos)):
            if dx == 0.0:
                expected = trig(2 * math.pi * k * x)
            else:
                val, _ = quad(lambda u: trig(2 * math.pi * k * u), x - dx, x + dx,
                              limit=200, epsabs=1e-13, epsrel=1e-13)
                expected = val / (2 * dx)
            worst = max(worst, abs(got[idx] - expected))
    assert worst < 1e-9, f"quadrature disagreement {worst:.2e}"

    # shrinking-interval limit matches the plain encoding
    bank = make_frequency_bank(4, 0.5, 8.0)
    limit_worst = 0.0
    for _ in range(200):
        x = rng.uniform(-2.0, 2.0)
        tight = fourier_encode_interval(UncertainScalar(x, 1e-8), bank)
        limit_worst = max(limit_worst, float(np.max(np.abs(
            tight - fourier_encode_scalar(x, bank)))))
    assert limit_worst < 1e-6

    # directional encoding with axis-aligned vectors reproduces the
    # per-component encoding exactly, through the documented permutation
    for dim in (2, 3):
        dbank = directional_bank_from_axes(bank, dim)
        perm = axis_aligned_permutation(dim, bank.n_frequencies)
        for _ in range(200):
            x = rng.uniform(-1.0, 1.0, size=dim)
            assert np.array_equal(fourier_encode_directional(x, dbank)[perm],
                                  fourier_encode_vector(x, bank))

    elapsed = time.time() - t0
    assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s (budget 10s)"
    report(1, elapsed, f"quadrature max err {worst:.2e}, limit max err {limit_worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 2: end-to-end gradient suite


def test_criterion_2_gradient_suite():
    t0 = time.time()
    from geolatent.datasynth import SynthSpec

    ds = generate(SynthSpec(task="paired_temporal", n_samples=4, seed=0,
                            height=32, width=32, n_bands=2))
    heads = (HeadSpec(head_id="cls", kind="classification", n_classes=3),
             HeadSpec(head_id="reg", kind="regression", output_width=2),
             HeadSpec(head_id="seg", kind="segmentation", n_classes=2,
                      out_height=8, out_width=8))
    model_config = cfg.model_config_from(cfg.default_run_config("classification"))
    model_config = type(model_config)(
        seed=0, feature_width=model_config.feature_width,
        conv_widths=model_config.conv_widths, position_mode="add",
        spatial_bank=model_config.spatial_bank,
        temporal_bank=model_config.temporal_bank,
        spectral_bank=model_config.spectral_bank,
        backbone=model_config.backbone, heads=heads)
    model = GeoModel(model_config, [ds.modality],
                     norm_stats={ds.modality.modality_id: (ds.norm_mean, ds.norm_std)})
    sample = ds.samples[0]
    rng = np.random.default_rng(5)
    sample.target = {
        "cls": {"kind": "classification", "label": 1},
        "reg": {"kind": "regression", "values": np.array([0.3, -0.7])},
        "seg": {"kind": "segmentation", "mask": (rng.random((8, 8)) < 0.4).astype(int)},
    }
    result = grad_check(model, sample, tolerance=1e-4, n_per_group=200, seed=0)
    elapsed = time.time() - t0
    assert result.passed, result.as_dict()
    assert result.n_checked >= 200 * len(result.group_errors)
    assert elapsed < 120.0, f"criterion 2 took {elapsed:.1f}s (budget 2min)"
    report(2, elapsed,
           f"worst rel err {result.worst_rel_err:.2e} over {result.n_checked} coords "
           f"in groups {sorted(result.group_errors)}")


# ---------------------------------------------------------------------------
# criterion 3: padding and permutation invariance


def test_criterion_3_padding_permutation_invariance():
    t0 = time.time()
    config = BackboneConfig()
    store = ParamStore()
    width = 64
    init_backbone_params(store, config, width, seed=3)
    rng = np.random.default_rng(99)
    worst_pad = 0.0
    worst_perm = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 120))
        tokens = TokenMatrix(tokens=DualTensor(rng.normal(size=(n, width))),
                             provenance=np.zeros((n, 4), dtype=np.int32),
                             valid_mask=np.ones(n, dtype=bool))
        base = encode(tokens, store, config).latents.values
        padded = pad_tokens(tokens, n + int(rng.integers(1, 60)))
        out_pad = encode(padded, store, config).latents.values
        worst_pad = max(worst_pad, float(np.max(np.abs(out_pad - base))))
        perm = rng.permutation(n)
        shuffled = TokenMatrix(tokens=DualTensor(tokens.tokens.values[perm]),
                               provenance=tokens.provenance[perm],
                               valid_mask=tokens.valid_mask[perm])
        out_perm = encode(shuffled, store, config).latents.values
        worst_perm = max(worst_perm, float(np.max(np.abs(out_perm - base))))
    elapsed = time.time() - t0
    assert worst_pad < 1e-10, f"padding changed encode by {worst_pad:.2e}"
    assert worst_perm < 1e-12, f"permutation changed encode by {worst_perm:.2e}"
    assert elapsed < 60.0, f"criterion 3 took {elapsed:.1f}s (budget 1min)"
    report(3, elapsed, f"pad max diff {worst_pad:.2e}, perm max diff {worst_perm:.2e}")


# ---------------------------------------------------------------------------
# criterion 4: batch planner


def test_criterion_4_batch_planner():
    t0 = time.time()

    plan = plan_batches([100, 150], PlannerConfig(max_pad=50))
    assert plan.n_batches == 1 and plan.total_waste == 50

    plan = plan_batches([100, 4000], PlannerConfig(max_pad=60))
    assert plan.n_batches == 2 and plan.total_waste == 0  # 3900 padding avoided

    rng = np.random.default_rng(7)
    worst_ratio = 1.0
    for i in range(500):
        n = int(rng.integers(1, 51))
        style = i % 3
        if style == 0:
            counts = rng.integers(0, 4000, size=n)
        elif style == 1:
            centers = rng.integers(0, 4000, size=max(1, n // 8))
            counts = np.clip(rng.choice(centers, size=n)
                             + rng.integers(-40, 41, size=n), 0, None)
        else:
            counts = np.sort(rng.integers(0, 300, size=n))
        max_pad = int(rng.integers(0, 500))
        plan = plan_batches(counts, PlannerConfig(max_pad=max_pad))
        for c in plan.clusters:
            vals = [counts[j] for j in c.indices]
            assert max(vals) - min(vals) <= max_pad
        oracle = optimal_partition_oracle(counts, max_pad)
        assert plan.total_waste >= oracle.total_waste
        if oracle.total_waste > 0:
            worst_ratio = max(worst_ratio, plan.total_waste / oracle.total_waste)
        else:
            assert plan.total_waste == 0
    assert worst_ratio <= 2.0, f"waste ratio {worst_ratio}"
    elapsed = time.time() - t0
    assert elapsed < 30.0, f"criterion 4 took {elapsed:.1f}s (budget 30s)"
    report(4, elapsed, f"500 instances, worst waste ratio vs oracle {worst_ratio:.3f}")


# ---------------------------------------------------------------------------
# criterion 5: synthetic task closure (training from scratch)


def test_criterion_5a_classification():
    t0 = time.time()
    values = run_task("classification")
    elapsed = time.time() - t0
    assert values["y/accuracy"] >= 0.95, values
    assert elapsed < 600.0, f"criterion 5a took {elapsed:.1f}s (budget 10min)"
    report("5a", elapsed, f"test accuracy {values['y/accuracy']:.3f} (>= 0.95)")


def test_criterion_5b_regression_timeseries():
    t0 = time.time()
    doc = cfg.default_run_config("regression_timeseries")
    sigma = doc["synth"]["noise_sigma"]
    values = run_task("regression_timeseries")
    elapsed = time.time() - t0
    assert values["y/rmse"] <= 1.2 * sigma, (values, sigma)
    assert elapsed < 600.0, f"criterion 5b took {elapsed:.1f}s (budget 10min)"
    report("5b", elapsed,
           f"test RMSE {values['y/rmse']:.3f} <= 1.2 sigma = {1.2 * sigma:.3f}")


def test_criterion_5c_segmentation():
    t0 = time.time()
    values = run_task("segmentation")
    elapsed = time.time() - t0
    assert values["y/dice"] >= 0.90, values
    assert elapsed < 600.0, f"criterion 5c took {elapsed:.1f}s (budget 10min)"
    report("5c", elapsed, f"test DICE {values['y/dice']:.3f} (>= 0.90) at 32x32")


def test_criterion_5d_paired_temporal():
    t0 = time.time()
    values = run_task("paired_temporal")
    elapsed = time.time() - t0
    assert values["y/r_squared"] >= 0.9, values
    assert elapsed < 600.0, f"criterion 5d took {elapsed:.1f}s (budget 10min)"
    report("5d", elapsed, f"test R^2 {values['y/r_squared']:.3f} (>= 0.9)")


# ---------------------------------------------------------------------------
# criterion 6: metric identities


def test_criterion_6_metric_identities():
    t0 = time.time()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 400))
        a = rng.random(n) < rng.random()
        b = rng.random(n) < rng.random()
        worst = max(worst, abs(dice(a, b) - f1(a, b)))
    assert worst < 1e-12, f"DICE vs F1 disagreement {worst:.2e}"
    target = rng.normal(size=64)
    assert r_squared(target, target) == 1.0
    elapsed = time.time() - t0
    report(6, elapsed, f"DICE==F1 max diff {worst:.2e}; perfect R^2 == 1 exactly")


# ---------------------------------------------------------------------------
# criterion 7: full-pipeline determinism


def test_criterion_7_pipeline_determinism(tmp_path):
    import json

    from geolatent.cli import main

    t0 = time.time()
    doc = cfg.default_run_config("classification")
    doc["synth"]["n_samples"] = 12
    doc["synth"]["height"] = doc["synth"]["width"] = 16
    doc["train"]["steps"] = 6
    doc["backbone"] = {"n_latents": 8, "latent_dim": 16, "n_self_layers": 1,
                       "n_heads": 2, "mlp_ratio": 2}
    doc["tokenizer"] = {"feature_width": 16, "conv_widths": [8, 8]}
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(doc))

    artifacts = []
    for tag in ("run1", "run2"):
        data = tmp_path / f"data_{tag}"
        out = tmp_path / f"out_{tag}"
        assert main(["synth", "--config", str(config_path), "--out", str(data)]) == 0
        assert main(["train", "--config", str(config_path), "--data", str(data),
                     "--out", str(out)]) == 0
        assert main(["eval", "--config", str(config_path),
                     "--checkpoint", str(out / "checkpoint"), "--data", str(data),
                     "--out", str(tmp_path / f"eval_{tag}.json")]) == 0
        blobs = {}
        for p in sorted(data.iterdir()):
            blobs[f"data/{p.name}"] = p.read_bytes()
        blobs["checkpoint/params.bin"] = (out / "checkpoint" / "params.bin").read_bytes()
        blobs["checkpoint/manifest.json"] = (out / "checkpoint" / "manifest.json").read_bytes()
        blobs["eval.json"] = (tmp_path / f"eval_{tag}.json").read_bytes()
        artifacts.append(blobs)
    assert artifacts[0].keys() == artifacts[1].keys()
    for key in artifacts[0]:
        assert artifacts[0][key] == artifacts[1][key], f"{key} differs between runs"
    elapsed = time.time() - t0
    report(7, elapsed,
           f"{len(artifacts[0])} artifacts byte-identical across two pipeline runs")
