#!/usr/bin/env python3
"""Run one synthetic task under its default config and report metrics/timing."""

import sys
import time

from geolatent import config as cfg
from geolatent.datasynth import generate
from geolatent.model import GeoModel
from geolatent.trainer import evaluate, train


def run_task(task):
    t0 = time.time()
    doc = cfg.default_run_config(task)
    ds = generate(cfg.synth_spec_from(doc))
    model = GeoModel(cfg.model_config_from(doc), [ds.modality],
                     norm_stats={ds.modality.modality_id: (ds.norm_mean, ds.norm_std)})
    result = train(ds.train_samples, model, cfg.train_config_from(doc))
    metrics = evaluate(ds.test_samples, model, cfg.metric_names_from(doc))
    dt = time.time() - t0
    losses = [v for _, v in result.loss_trace]
    print(f"{task}: {dt:.1f}s  steps {len(losses)}  loss {losses[0]:.4f} -> {losses[-1]:.4f}  "
          f"n_train {len(ds.train_samples)} n_test {len(ds.test_samples)}")
    for r in metrics:
        print(f"    {r.metric} = {r.value:.4f}")
    return metrics


if __name__ == "__main__":
    for task in sys.argv[1:]:
        run_task(task)
