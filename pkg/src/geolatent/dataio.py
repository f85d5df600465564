"""Dataset directory format: manifest.json plus one binary blob per sample.

Each sample blob starts with four little-endian uint32 values (T, H, W, L)
followed by the row-major little-endian float32 value tensor. Segmentation
masks use the same layout with T = L = 1. The manifest records the
modality, per-band normalization statistics, the geographic bounding box
and time span used for coordinate normalization, and the sample list with
locations, times, targets, and train/test split tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import UncertainScalar
from .errors import DataError
from .tokenizer import BandDescriptor, GeoSample, ModalitySpec

MANIFEST_NAME = "manifest.json"
_HEADER_DTYPE = "<u4"
_VALUE_DTYPE = "<f4"


@dataclass
class Dataset:
    modality: ModalitySpec
    samples: list
    norm_mean: np.ndarray
    norm_std: np.ndarray
    bounding_box: dict = field(default_factory=lambda: {"lat": [0.0, 1.0], "lon": [0.0, 1.0]})
    time_span: tuple = (0.0, 1.0)
    splits: dict = field(default_factory=dict)  # sample_id -> "train" | "test"

    def subset(self, split: str) -> list:
        return [s for s in self.samples if self.splits.get(s.sample_id) == split]

    @property
    def train_samples(self) -> list:
        return self.subset("train")

    @property
    def test_samples(self) -> list:
        return self.subset("test")


def write_blob(path: Path, values: np.ndarray):
    values = np.asarray(values)
    if values.ndim != 4:
        raise DataError(f"sample tensor must be T x H x W x L, got shape {values.shape}")
    header = np.asarray(values.shape, dtype=_HEADER_DTYPE)
    path.write_bytes(header.tobytes() + values.astype(_VALUE_DTYPE).tobytes(order="C"))


def read_blob(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read sample blob {path}: {e}")
    if len(raw) < 16:
        raise DataError(f"sample blob {path} too short for its header")
    shape = tuple(int(x) for x in np.frombuffer(raw[:16], dtype=_HEADER_DTYPE))
    count = int(np.prod(shape))
    body = np.frombuffer(raw[16:], dtype=_VALUE_DTYPE)
    if body.size != count:
        raise DataError(f"sample blob {path} has {body.size} values, header promises {count}")
    return body.astype(np.float64).reshape(shape)


def _uncertain_to_json(u: UncertainScalar) -> dict:
    return {"value": u.value, "half_width": u.half_width}


def _uncertain_from_json(d: dict) -> UncertainScalar:
    return UncertainScalar(value=float(d["value"]), half_width=float(d["half_width"]))


def _modality_to_json(spec: ModalitySpec) -> dict:
    return {
        "modality_id": spec.modality_id,
        "height": spec.height,
        "width": spec.width,
        "timesteps": spec.timesteps,
        "bands": [
            {"kind": b.kind, "label": b.label, "radiometric_bits": b.radiometric_bits}
            for b in spec.bands
        ],
    }


def modality_from_json(d: dict) -> ModalitySpec:
    bands = tuple(
        BandDescriptor(kind=b["kind"], label=b["label"],
                       radiometric_bits=int(b["radiometric_bits"]))
        for b in d["bands"])
    return ModalitySpec(modality_id=d["modality_id"], bands=bands,
                        height=int(d["height"]), width=int(d["width"]),
                        timesteps=int(d["timesteps"]))


def _target_to_json(target: dict, sample_id: str, directory: Path) -> dict:
    out = {}
    for head_id, payload in sorted(target.items()):
        kind = payload["kind"]
        if kind == "classification":
            out[head_id] = {"kind": kind, "label": int(payload["label"])}
        elif kind == "regression":
            out[head_id] = {"kind": kind,
                            "values": [float(v) for v in np.ravel(payload["values"])]}
        elif kind == "segmentation":
            mask = np.asarray(payload["mask"])
            fname = f"{sample_id}_{head_id}_mask.bin"
            write_blob(directory / fname, mask.astype(np.float64)[None, :, :, None])
            out[head_id] = {"kind": kind, "mask_file": fname}
        else:
            raise DataError(f"unknown target kind {kind!r}")
    return out


def _target_from_json(d: dict, directory: Path) -> dict:
    target = {}
    for head_id, payload in d.items():
        kind = payload["kind"]
        if kind == "classification":
            target[head_id] = {"kind": kind, "label": int(payload["label"])}
        elif kind == "regression":
            target[head_id] = {"kind": kind, "values": np.asarray(payload["values"])}
        elif kind == "segmentation":
            mask = read_blob(directory / payload["mask_file"])[0, :, :, 0]
            target[head_id] = {"kind": kind, "mask": mask.astype(np.int64)}
        else:
            raise DataError(f"unknown target kind {kind!r}")
    return target


def write_dataset(directory, dataset: Dataset):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sample_entries = []
    for s in dataset.samples:
        fname = f"{s.sample_id}.bin"
        write_blob(directory / fname, s.values)
        lat, lon = s.location
        sample_entries.append({
            "id": s.sample_id,
            "file": fname,
            "split": dataset.splits.get(s.sample_id, "train"),
            "location": {"lat": _uncertain_to_json(lat), "lon": _uncertain_to_json(lon)},
            "time": [_uncertain_to_json(t) for t in s.time],
            "target": _target_to_json(s.target, s.sample_id, directory),
        })
    manifest = {
        "format": "geolatent-dataset-v1",
        "modality": _modality_to_json(dataset.modality),
        "normalization": {
            "mean": [float(v) for v in dataset.norm_mean],
            "std": [float(v) for v in dataset.norm_std],
        },
        "bounding_box": dataset.bounding_box,
        "time_span": list(dataset.time_span),
        "samples": sample_entries,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read dataset manifest {manifest_path}: {e}")
    if manifest.get("format") != "geolatent-dataset-v1":
        raise DataError(f"unrecognized dataset format in {directory}")
    modality = modality_from_json(manifest["modality"])
    samples = []
    splits = {}
    for entry in manifest["samples"]:
        values = read_blob(directory / entry["file"])
        loc = (_uncertain_from_json(entry["location"]["lat"]),
               _uncertain_from_json(entry["location"]["lon"]))
        times = tuple(_uncertain_from_json(t) for t in entry["time"])
        target = _target_from_json(entry["target"], directory)
        samples.append(GeoSample(spec=modality, values=values, location=loc,
                                 time=times, target=target, sample_id=entry["id"]))
        splits[entry["id"]] = entry["split"]
    norm = manifest["normalization"]
    return Dataset(modality=modality, samples=samples,
                   norm_mean=np.asarray(norm["mean"], dtype=np.float64),
                   norm_std=np.asarray(norm["std"], dtype=np.float64),
                   bounding_box=manifest["bounding_box"],
                   time_span=tuple(manifest["time_span"]),
                   splits=splits)
