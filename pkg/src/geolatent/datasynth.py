"""Deterministic synthetic geospatial datasets with planted, recoverable signal.

Each generator is a pure function of its spec (including the seed) and
plants a rule whose optimal predictor is known analytically, so training
can be verified closed-loop without any external data. Pixel noise is
Gaussian, geolocations are uniform in the unit box, times are uniform in
the unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .encoding import UncertainScalar
from .errors import ConfigurationError, InvalidInputError
from .tokenizer import BandDescriptor, GeoSample, ModalitySpec

TASKS = ("classification", "regression_timeseries", "segmentation", "paired_temporal")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic task; every field participates in determinism."""

    task: str
    n_samples: int
    seed: int = 0
    split: float = 0.75          # train fraction
    height: int = 32
    width: int = 32
    n_bands: int = 3
    timesteps: int = 1
    head_id: str = "y"
    # classification
    class_gap: float = 3.0
    threshold: float = 0.0
    # regression / paired temporal
    noise_sigma: float = 0.1
    coeff_scale: float = 1.0
    # segmentation
    n_rects: int = 3
    rect_snap: int = 4           # rectangle corners snap to this pixel grid
    rect_min_cells: int = 1      # minimum rectangle extent, in snap cells
    contrast: float = 2.0
    pixel_sigma: float = 1.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown synthetic task {self.task!r}")
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be at least 2")
        if not (0.0 < self.split < 1.0):
            raise ConfigurationError("split fraction must lie in (0, 1)")


def _bands(n: int) -> tuple:
    return tuple(BandDescriptor(kind="optical", label=f"B{i:02d}") for i in range(n))


def _metadata(rng: np.random.Generator, timesteps: int, regular_times: bool = False):
    """Random location; times either uniform draws or a regular acquisition grid.

    Tasks whose planted rule is indexed by timestep need the regular grid:
    with per-sample random times the slot identity is invisible to a model
    that only sees time values, and the rule stops being recoverable.
    """
    lat = UncertainScalar(rng.uniform(0.1, 0.9), rng.uniform(0.0, 0.02))
    lon = UncertainScalar(rng.uniform(0.1, 0.9), rng.uniform(0.0, 0.02))
    if regular_times:
        times = (np.arange(timesteps) + 0.5) / timesteps
    else:
        times = np.sort(rng.uniform(0.05, 0.95, size=timesteps))
    time = tuple(UncertainScalar(float(t), rng.uniform(0.0, 0.01)) for t in times)
    return (lat, lon), time


def _finish(spec: SynthSpec, modality: ModalitySpec, samples: list) -> Dataset:
    n_train = max(1, int(round(spec.split * len(samples))))
    n_train = min(n_train, len(samples) - 1)
    splits = {}
    for i, s in enumerate(samples):
        splits[s.sample_id] = "train" if i < n_train else "test"
    # per-band statistics over the train split
    train_values = np.stack([s.values for s in samples[:n_train]])
    mean = train_values.mean(axis=(0, 1, 2, 3))
    std = train_values.std(axis=(0, 1, 2, 3))
    std = np.where(std < 1e-8, 1.0, std)
    return Dataset(modality=modality, samples=samples, norm_mean=mean, norm_std=std,
                   splits=splits)


def gen_classification(spec: SynthSpec) -> Dataset:
    """Binary labels planted on the band-0 mean level.

    A latent class shifts the band-0 level by +/- class_gap / 2 around the
    threshold; other bands are independent noise. With a large gap the rule
    "label = 1 iff band-0 mean exceeds the threshold" holds almost surely;
    at gap 0 labels carry no pixel information and the best accuracy is 0.5.
    """
    if spec.n_bands < 2:
        raise InvalidInputError("classification modality needs at least two bands")
    rng = np.random.default_rng(spec.seed)
    modality = ModalitySpec(modality_id="synth-cls", bands=_bands(spec.n_bands),
                            height=spec.height, width=spec.width, timesteps=1)
    samples = []
    for i in range(spec.n_samples):
        label = int(rng.integers(0, 2))
        level = spec.threshold + (spec.class_gap / 2.0) * (1 if label == 1 else -1)
        values = rng.normal(0.0, spec.pixel_sigma,
                            size=(1, spec.height, spec.width, spec.n_bands))
        values[..., 0] += level
        loc, time = _metadata(rng, 1)
        samples.append(GeoSample(
            spec=modality, values=values, location=loc, time=time,
            target={spec.head_id: {"kind": "classification", "label": label}},
            sample_id=f"cls_{i:05d}"))
    return _finish(spec, modality, samples)


def regression_coefficients(spec: SynthSpec) -> np.ndarray:
    """The planted per-timestep coefficients (known to tests and oracles).

    Positive weights of varying magnitude: the target is a weighted
    aggregate over the series, with the per-slot weighting left to learn.
    """
    rng = np.random.default_rng([spec.seed, 777])
    return spec.coeff_scale * rng.uniform(0.5, 1.5, size=spec.timesteps)


def gen_regression_timeseries(spec: SynthSpec) -> Dataset:
    """Target = sum_t a_t * mean(band 0 at t) + Gaussian noise of known sigma.

    The coefficients apply to the realized per-timestep band-0 means, so the
    least-squares oracle on those means attains RMSE = noise_sigma exactly in
    expectation.
    """
    rng = np.random.default_rng(spec.seed)
    modality = ModalitySpec(modality_id="synth-reg", bands=_bands(spec.n_bands),
                            height=spec.height, width=spec.width,
                            timesteps=spec.timesteps)
    coeffs = regression_coefficients(spec)
    samples = []
    for i in range(spec.n_samples):
        levels = rng.normal(0.0, 1.0, size=spec.timesteps)
        values = rng.normal(0.0, spec.pixel_sigma,
                            size=(spec.timesteps, spec.height, spec.width, spec.n_bands))
        values[:, :, :, 0] += levels[:, None, None]
        realized = values[:, :, :, 0].mean(axis=(1, 2))
        target = float(coeffs @ realized + rng.normal(0.0, spec.noise_sigma))
        loc, time = _metadata(rng, spec.timesteps, regular_times=True)
        samples.append(GeoSample(
            spec=modality, values=values, location=loc, time=time,
            target={spec.head_id: {"kind": "regression", "values": np.array([target])}},
            sample_id=f"reg_{i:05d}"))
    return _finish(spec, modality, samples)


def rectangle_union_mask(rects, height: int, width: int) -> np.ndarray:
    """Binary union mask of (y0, x0, y1, x1) half-open rectangles."""
    mask = np.zeros((height, width), dtype=np.int64)
    for y0, x0, y1, x1 in rects:
        mask[y0:y1, x0:x1] = 1
    return mask


def sample_rectangles(rng: np.random.Generator, spec: SynthSpec) -> list:
    """Axis-aligned rectangles with corners snapped to the rect_snap grid."""
    rects = []
    snap = max(1, spec.rect_snap)
    hq, wq = spec.height // snap, spec.width // snap
    min_cells = max(1, min(spec.rect_min_cells, hq, wq))
    for _ in range(spec.n_rects):
        y0 = int(rng.integers(0, max(1, hq - min_cells + 1)))
        x0 = int(rng.integers(0, max(1, wq - min_cells + 1)))
        y1 = int(rng.integers(y0 + min_cells, hq + 1))
        x1 = int(rng.integers(x0 + min_cells, wq + 1))
        rects.append((y0 * snap, x0 * snap, y1 * snap, x1 * snap))
    return rects


def gen_segmentation(spec: SynthSpec) -> Dataset:
    """Masks are unions of rectangles; band 0 is brighter inside the union."""
    rng = np.random.default_rng(spec.seed)
    modality = ModalitySpec(modality_id="synth-seg", bands=_bands(spec.n_bands),
                            height=spec.height, width=spec.width, timesteps=1)
    samples = []
    for i in range(spec.n_samples):
        rects = sample_rectangles(rng, spec)
        mask = rectangle_union_mask(rects, spec.height, spec.width)
        values = rng.normal(0.0, spec.pixel_sigma,
                            size=(1, spec.height, spec.width, spec.n_bands))
        values[0, :, :, 0] += spec.contrast * mask
        loc, time = _metadata(rng, 1)
        samples.append(GeoSample(
            spec=modality, values=values, location=loc, time=time,
            target={spec.head_id: {"kind": "segmentation", "mask": mask}},
            sample_id=f"seg_{i:05d}"))
    return _finish(spec, modality, samples)


def gen_paired_temporal(spec: SynthSpec) -> Dataset:
    """Two-frame samples whose target is the change in the band-0 level.

    target = mean(band 0, frame 2) - mean(band 0, frame 1) + noise. Swapping
    the frames negates the target, so the temporal encoding is the only way
    to resolve the sign.
    """
    rng = np.random.default_rng(spec.seed)
    modality = ModalitySpec(modality_id="synth-delta", bands=_bands(spec.n_bands),
                            height=spec.height, width=spec.width, timesteps=2)
    samples = []
    for i in range(spec.n_samples):
        levels = rng.normal(0.0, 1.0, size=2)
        values = rng.normal(0.0, spec.pixel_sigma,
                            size=(2, spec.height, spec.width, spec.n_bands))
        values[:, :, :, 0] += levels[:, None, None]
        realized = values[:, :, :, 0].mean(axis=(1, 2))
        target = float(realized[1] - realized[0] + rng.normal(0.0, spec.noise_sigma))
        loc, time = _metadata(rng, 2, regular_times=True)
        samples.append(GeoSample(
            spec=modality, values=values, location=loc, time=time,
            target={spec.head_id: {"kind": "regression", "values": np.array([target])}},
            sample_id=f"delta_{i:05d}"))
    return _finish(spec, modality, samples)


GENERATORS = {
    "classification": gen_classification,
    "regression_timeseries": gen_regression_timeseries,
    "segmentation": gen_segmentation,
    "paired_temporal": gen_paired_temporal,
}


def generate(spec: SynthSpec) -> Dataset:
    return GENERATORS[spec.task](spec)
