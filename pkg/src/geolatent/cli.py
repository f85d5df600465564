"""Command-line entry point for the full pipeline.

Subcommands: synth, tokenize, plan-batches, train, eval, grad-check,
encode. All structured output is JSON so results diff cleanly in CI.
Every run is reproducible from its config plus seed; output directories
receive a copy of the config that produced them.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical
failure. GEOLATENT_SEED overrides the config seed when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from .batch_planner import plan_batches, waste_report
from .dataio import read_dataset, write_dataset
from .datasynth import generate
from .encoding import (
    UncertainScalar,
    fourier_encode_interval,
    fourier_encode_vector,
    make_frequency_bank,
)
from .errors import ConfigurationError, DataError, GeolatentError, NumericalError
from .model import GeoModel
from .trainer import evaluate, grad_check, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SEED_ENV = "GEOLATENT_SEED"


def _emit(payload: dict, stream=None):
    json.dump(payload, stream or sys.stdout, indent=1, sort_keys=True)
    (stream or sys.stdout).write("\n")


def _fail(code: int, kind: str, message: str) -> int:
    _emit({"error": {"kind": kind, "message": message}}, stream=sys.stderr)
    return code


def _load_config(path: str) -> dict:
    doc = cfg.load_config(path)
    override = os.environ.get(SEED_ENV)
    if override is not None:
        try:
            doc["seed"] = int(override)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {override!r}")
    return doc


def _copy_config(doc: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _build_model(doc: dict, dataset) -> GeoModel:
    model_config = cfg.model_config_from(doc)
    stats = {dataset.modality.modality_id: (dataset.norm_mean, dataset.norm_std)}
    return GeoModel(model_config, [dataset.modality], norm_stats=stats)


def cmd_synth(args) -> int:
    doc = _load_config(args.config)
    spec = cfg.synth_spec_from(doc)
    dataset = generate(spec)
    out = Path(args.out)
    write_dataset(out, dataset)
    _copy_config(doc, out)
    _emit({"dataset": str(out), "n_samples": len(dataset.samples),
           "n_train": len(dataset.train_samples), "n_test": len(dataset.test_samples),
           "task": spec.task})
    return EXIT_OK


def cmd_tokenize(args) -> int:
    doc = _load_config(args.config)
    dataset = read_dataset(args.data)
    model = _build_model(doc, dataset)
    wanted = args.sample_id
    sample = next((s for s in dataset.samples if s.sample_id == wanted), None)
    if sample is None:
        raise DataError(f"sample id {wanted!r} not found in {args.data}")
    tm = model.tokenize(sample)
    values = tm.tokens.values
    _emit({
        "sample_id": wanted,
        "n_tokens": tm.n_tokens,
        "width": tm.width,
        "first_row": [round(float(v), 6) for v in values[0]],
        "last_row": [round(float(v), 6) for v in values[-1]],
        "provenance_first": [int(v) for v in tm.provenance[0]],
        "provenance_last": [int(v) for v in tm.provenance[-1]],
    })
    return EXIT_OK


def cmd_plan_batches(args) -> int:
    doc = _load_config(args.config)
    planner = cfg.planner_config_from(doc)
    if args.max_pad is not None:
        planner = type(planner)(max_pad=args.max_pad, min_pts=planner.min_pts,
                                enforce_budget=planner.enforce_budget,
                                max_cluster_size=planner.max_cluster_size)
    if args.counts:
        counts = [int(v) for v in args.counts.split(",")]
    elif args.data:
        dataset = read_dataset(args.data)
        counts = [s.spec.token_count for s in dataset.samples]
    else:
        raise ConfigurationError("plan-batches needs --data or --counts")
    plan = plan_batches(counts, planner)
    report = waste_report(plan, counts)
    _emit({
        "counts": counts,
        "max_pad": planner.max_pad,
        "clusters": [{"indices": c.indices, "target_len": c.target_len, "waste": c.waste}
                     for c in plan.clusters],
        "waste_report": report,
    })
    return EXIT_OK


def _check_finite(results: list):
    for r in results:
        if not np.isfinite(r.value):
            raise NumericalError(f"metric {r.metric} is not finite")


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    dataset = read_dataset(args.data)
    model = _build_model(doc, dataset)
    train_config = cfg.train_config_from(doc)
    result = train(dataset.train_samples, model, train_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _copy_config(doc, out)
    model.store.save(out / "checkpoint")
    head_ids = sorted(model.head_specs)
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,loss," + ",".join(f"loss_{h}" for h in head_ids) + "\n")
        for (step, loss), (_, per_head) in zip(result.loss_trace, result.per_head_trace):
            cells = [str(step), repr(loss)] + [repr(per_head.get(h, 0.0)) for h in head_ids]
            fh.write(",".join(cells) + "\n")
    _emit({"checkpoint": str(out / "checkpoint"), "steps": len(result.loss_trace),
           "final_loss": result.loss_trace[-1][1], "n_batches": result.plan.n_batches})
    return EXIT_OK


def cmd_eval(args) -> int:
    doc = _load_config(args.config)
    dataset = read_dataset(args.data)
    model = _build_model(doc, dataset)
    model.store.load(args.checkpoint)
    samples = dataset.test_samples or dataset.samples
    results = evaluate(samples, model, cfg.metric_names_from(doc))
    _check_finite(results)
    payload = {"results": [r.as_dict() for r in results], "split": "test"}
    _emit(payload)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        _dump_segmentation_maps(model, samples, out.parent)
    return EXIT_OK


def _dump_segmentation_maps(model: GeoModel, samples, directory: Path):
    """Predicted maps for segmentation heads: PGM per sample + score sidecar."""
    from .heads import write_segmentation_map

    seg_heads = [h for h, s in model.head_specs.items() if s.kind == "segmentation"]
    if not seg_heads:
        return
    map_dir = directory / "segmentation"
    map_dir.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        preds = model.predict(sample)
        for head_id in seg_heads:
            mask = preds[head_id]["mask"]
            classes, counts = np.unique(mask, return_counts=True)
            scores = {f"class_{int(c)}_fraction": float(n) / mask.size
                      for c, n in zip(classes, counts)}
            write_segmentation_map(
                map_dir / f"{sample.sample_id}_{head_id}.pgm", mask, scores)


def cmd_grad_check(args) -> int:
    doc = _load_config(args.config)
    spec = cfg.synth_spec_from(doc)
    dataset = generate(spec)
    model = _build_model(doc, dataset)
    report = grad_check(model, dataset.samples[0], tolerance=args.tolerance)
    _emit(report.as_dict())
    if not report.passed:
        raise NumericalError(
            f"gradient check failed: worst relative error {report.worst_rel_err:.3e} "
            f"at {report.worst_param}")
    return EXIT_OK


def cmd_encode(args) -> int:
    try:
        bank_doc = json.loads(Path(args.bank_config).read_text())
    except OSError as e:
        raise DataError(f"cannot read bank config: {e}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"bank config is not valid JSON: {e}")
    allowed = {"mode", "n_freqs", "f_min", "f_max", "dim", "n_angles"}
    unknown = set(bank_doc) - allowed
    if unknown:
        raise ConfigurationError(f"bank config: unknown keys {sorted(unknown)}")
    bank = make_frequency_bank(
        n_freqs=bank_doc.get("n_freqs", 4),
        f_min=bank_doc.get("f_min", 1.0),
        f_max=bank_doc.get("f_max", 8.0),
        dim=bank_doc.get("dim", 1),
        mode=bank_doc.get("mode", "axis_aligned"),
        n_angles=bank_doc.get("n_angles", 4))
    xs = [float(v) for v in args.x.split(",")]
    dx = args.dx
    if len(xs) == 1:
        enc = fourier_encode_interval(UncertainScalar(xs[0], dx), bank)
    else:
        if dx != 0.0:
            raise ConfigurationError("--dx is only supported for scalar --x")
        enc = fourier_encode_vector(np.asarray(xs), bank)
    _emit({"x": xs, "dx": dx, "encoding": [float(v) for v in enc]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geolatent",
        description="Synthesize data, tokenize, plan batches, train, evaluate, verify.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("tokenize", help="dump one sample's token matrix summary")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample-id", required=True)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("plan-batches", help="cluster samples by token count")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--max-pad", type=int, default=None)
    p.add_argument("--counts", default=None,
                   help="comma-separated token counts instead of --data")
    p.set_defaults(fn=cmd_plan_batches)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grad-check", help="compare gradients against finite differences")
    p.add_argument("--config", required=True)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("encode", help="print Fourier encoding values (debug)")
    p.add_argument("--x", required=True, help="scalar or comma-separated vector")
    p.add_argument("--dx", type=float, default=0.0)
    p.add_argument("--bank-config", required=True)
    p.set_defaults(fn=cmd_encode)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as e:
        return _fail(EXIT_CONFIG, "configuration", str(e))
    except (DataError, FileNotFoundError) as e:
        return _fail(EXIT_DATA, "data", str(e))
    except NumericalError as e:
        return _fail(EXIT_NUMERIC, "numerical", str(e))
    except GeolatentError as e:
        return _fail(EXIT_CONFIG, "invalid-input", str(e))


if __name__ == "__main__":
    sys.exit(main())
