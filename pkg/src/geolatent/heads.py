"""Task heads: pooled classification/regression and per-pixel segmentation.

The pooled head attends a single learned query vector over the latents and
pushes the pooled vector through a two-layer MLP. The segmentation head
builds one query per output pixel from a directional Fourier encoding of
the pixel center, attends each query over the latents, and applies a
shared two-layer MLP per pixel. Heads are independent: each is a pure
function of the latents and its own parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .backbone import AttentionWeights, BackboneConfig, LatentState, multi_head_attention, _load_attention
from .encoding import FrequencyBank, fourier_encode_directional
from .errors import ConfigurationError, InvalidInputError
from .numerics import DualTensor, ParamStore
from .tokenizer import _seeded_normal

HEAD_KINDS = ("classification", "regression", "segmentation")
QUERY_INIT_STD = 0.02


@dataclass(frozen=True)
class HeadSpec:
    head_id: str
    kind: str
    n_classes: int = 0       # classification and segmentation
    output_width: int = 0    # regression
    out_height: int = 0      # segmentation
    out_width: int = 0

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigurationError(f"unknown head kind {self.kind!r}")
        if self.kind == "classification" and self.n_classes < 2:
            raise ConfigurationError("classification needs at least two classes")
        if self.kind == "regression" and self.output_width < 1:
            raise ConfigurationError("regression needs a positive output width")
        if self.kind == "segmentation" and (
                self.n_classes < 2 or self.out_height < 1 or self.out_width < 1):
            raise ConfigurationError("segmentation needs positive map dims and >= 2 classes")

    @property
    def output_dims(self) -> int:
        return self.n_classes if self.kind != "regression" else self.output_width


@dataclass
class HeadParams:
    spec: HeadSpec
    attn: AttentionWeights
    mlp: tuple                       # (w1, b1, w2, b2)
    query: DualTensor | None = None  # pooled heads
    qproj: tuple | None = None       # segmentation heads: (w, b) over pixel encodings
    bank: FrequencyBank | None = None


def init_head_params(store: ParamStore, spec: HeadSpec, config: BackboneConfig,
                     bank: FrequencyBank | None = None, seed: int = 0) -> HeadParams:
    """Create parameters for one head under the 'head.<id>.' prefix."""
    d = config.latent_dim
    prefix = f"head.{spec.head_id}"

    def linear(name, n_in, n_out):
        w = store.add_param(f"{name}.w", _seeded_normal(
            seed, f"{name}.w", (n_in, n_out), 1.0 / math.sqrt(n_in)))
        b = store.add_param(f"{name}.b", np.zeros(n_out))
        return w, b

    for proj in ("q", "v", "o"):
        linear(f"{prefix}.attn.{proj}", d, d)
    # key projection is bias-free, matching the backbone convention
    store.add_param(f"{prefix}.attn.k.w", _seeded_normal(
        seed, f"{prefix}.attn.k.w", (d, d), 1.0 / math.sqrt(d)))
    attn = _load_attention(store, f"{prefix}.attn", config.n_heads)

    hidden = 2 * d
    w1, b1 = linear(f"{prefix}.mlp.1", d, hidden)
    w2, b2 = linear(f"{prefix}.mlp.2", hidden, spec.output_dims)

    query = None
    qproj = None
    if spec.kind in ("classification", "regression"):
        query = store.add_param(f"{prefix}.query", _seeded_normal(
            seed, f"{prefix}.query", (1, d), QUERY_INIT_STD))
    else:
        if bank is None or bank.mode != "directional":
            raise ConfigurationError("segmentation heads need a directional query bank")
        qproj = linear(f"{prefix}.qproj", bank.n_components, d)
    return HeadParams(spec=spec, attn=attn, mlp=(w1, b1, w2, b2), query=query,
                      qproj=qproj, bank=bank)


def _head_mlp(x: DualTensor, weights: tuple) -> DualTensor:
    w1, b1, w2, b2 = weights
    return nm.add(nm.matmul(nm.gelu(nm.add(nm.matmul(x, w1), b1)), w2), b2)


def pooled_head(latents: LatentState, params: HeadParams, spec: HeadSpec) -> DualTensor:
    """Single-query attention pooling over the latents, then the head MLP."""
    if spec.kind not in ("classification", "regression"):
        raise ConfigurationError(f"pooled_head cannot serve kind {spec.kind!r}")
    pooled = multi_head_attention(params.query, latents.latents, None, params.attn)
    out = _head_mlp(pooled, params.mlp)
    return nm.reshape(out, (spec.output_dims,))


_PIXEL_ENCODING_CACHE: dict = {}


def pixel_query_encodings(height: int, width: int, bank: FrequencyBank) -> np.ndarray:
    """Directional encodings of normalized pixel centers, raster order.

    Deterministic per (height, width, bank), so results are cached; callers
    must not mutate the returned array.
    """
    key = (height, width, bank.freq_vectors.tobytes())
    cached = _PIXEL_ENCODING_CACHE.get(key)
    if cached is not None:
        return cached
    enc = np.empty((height * width, bank.n_components))
    for i in range(height):
        for j in range(width):
            center = np.array([(i + 0.5) / height, (j + 0.5) / width])
            enc[i * width + j] = fourier_encode_directional(center, bank)
    _PIXEL_ENCODING_CACHE[key] = enc
    return enc


def segmentation_head(latents: LatentState, params: HeadParams, spec: HeadSpec,
                      bank: FrequencyBank | None = None) -> DualTensor:
    """Per-pixel Fourier queries over the latents; output [H, W, classes]."""
    if spec.kind != "segmentation":
        raise ConfigurationError(f"segmentation_head cannot serve kind {spec.kind!r}")
    bank = bank if bank is not None else params.bank
    enc = pixel_query_encodings(spec.out_height, spec.out_width, bank)
    w, b = params.qproj
    queries = nm.add(nm.matmul(nm.constant(enc), w), b)
    decoded = multi_head_attention(queries, latents.latents, None, params.attn)
    out = _head_mlp(decoded, params.mlp)
    return nm.reshape(out, (spec.out_height, spec.out_width, spec.n_classes))


def multi_head_forward(latents: LatentState, heads) -> dict:
    """Evaluate each (spec, params) pair independently on the same latents."""
    if not heads:
        raise InvalidInputError("need at least one head")
    seen = set()
    outputs = {}
    for spec, params in heads:
        if spec.head_id in seen:
            raise ConfigurationError(f"duplicate head_id {spec.head_id!r}")
        seen.add(spec.head_id)
        if spec.kind == "segmentation":
            outputs[spec.head_id] = segmentation_head(latents, params, spec)
        else:
            outputs[spec.head_id] = pooled_head(latents, params, spec)
    return outputs


# ---------------------------------------------------------------------------
# losses


def cross_entropy_loss(logits: DualTensor, labels) -> DualTensor:
    """Mean negative log-likelihood; logits [n, K] (or [K] for one sample)."""
    if len(logits.shape) == 1:
        logits = nm.reshape(logits, (1, logits.shape[0]))
    labels = np.asarray(labels, dtype=np.intp).ravel()
    n, k = logits.shape
    if labels.shape[0] != n:
        raise InvalidInputError(f"{labels.shape[0]} labels for {n} logit rows")
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidInputError("label outside class range")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    probs = nm.softmax_rows(logits)
    picked = nm.sum_(nm.mul(probs, nm.constant(onehot)), axis=1)
    return nm.neg(nm.mean(nm.log(picked)))


def mse_loss(pred: DualTensor, target) -> DualTensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidInputError(f"prediction shape {pred.shape} != target {target.shape}")
    diff = nm.sub(pred, nm.constant(target))
    return nm.mean(nm.mul(diff, diff))


def segmentation_loss(seg_logits: DualTensor, mask) -> DualTensor:
    """Per-pixel cross-entropy; seg_logits [H, W, K], mask [H, W] of class indices."""
    h, w, k = seg_logits.shape
    mask = np.asarray(mask)
    if mask.shape != (h, w):
        raise InvalidInputError(f"mask shape {mask.shape} != map shape {(h, w)}")
    flat = nm.reshape(seg_logits, (h * w, k))
    return cross_entropy_loss(flat, mask.ravel())


def write_segmentation_map(path, class_map: np.ndarray, scores: dict | None = None):
    """Write a predicted class map as binary PGM plus a JSON score sidecar.

    The PGM stores the class index per pixel (maxval = max class index);
    ``scores`` (e.g. per-class pixel fractions) land in ``<path>.json``.
    """
    import json
    from pathlib import Path

    path = Path(path)
    class_map = np.asarray(class_map)
    if class_map.ndim != 2:
        raise InvalidInputError(f"class map must be 2-D, got shape {class_map.shape}")
    maxval = max(1, int(class_map.max()))
    if maxval > 255:
        raise InvalidInputError("PGM supports at most 256 classes")
    header = f"P5\n{class_map.shape[1]} {class_map.shape[0]}\n{maxval}\n"
    path.write_bytes(header.encode() + class_map.astype(np.uint8).tobytes(order="C"))
    if scores is not None:
        Path(str(path) + ".json").write_text(
            json.dumps(scores, indent=1, sort_keys=True) + "\n")
