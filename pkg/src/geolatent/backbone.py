"""Latent-bottleneck attention trunk.

A learned N x D latent array attends once over the input tokens
(cross-attention with the tokens as keys/values), then a stack of
self-attention layers refines the latents. The same parameters and code
path serve every modality and task; heads only ever see the N x D output.

Blocks are pre-normalization residual: normalize, attend or MLP, add.
Masked token positions receive exactly zero attention weight, which makes
the output invariant to padding and to token order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigurationError, MaskError, ShapeError
from .numerics import DualTensor, ParamStore
from .tokenizer import TokenMatrix, _seeded_normal

LAYER_NORM_EPS = 1e-5
LATENT_INIT_STD = 0.02


@dataclass(frozen=True)
class BackboneConfig:
    n_latents: int = 64
    latent_dim: int = 128
    n_self_layers: int = 4
    n_heads: int = 4
    mlp_ratio: int = 2

    def __post_init__(self):
        if min(self.n_latents, self.latent_dim, self.n_heads, self.mlp_ratio) <= 0:
            raise ConfigurationError("backbone dimensions must be positive")
        if self.n_self_layers < 0:
            raise ConfigurationError("n_self_layers must be non-negative")
        if self.latent_dim % self.n_heads != 0:
            raise ConfigurationError(
                f"latent_dim {self.latent_dim} not divisible by n_heads {self.n_heads}")


@dataclass
class LatentState:
    latents: DualTensor  # [N, D]


@dataclass
class AttentionWeights:
    """Projections for one multi-head attention: queries in D, source in D_src.

    The key projection has no bias: softmax logits are invariant to a
    per-row shift, so a key bias would receive an identically zero gradient.
    """

    wq: DualTensor
    bq: DualTensor
    wk: DualTensor
    wv: DualTensor
    bv: DualTensor
    wo: DualTensor
    bo: DualTensor
    n_heads: int


@dataclass
class BlockWeights:
    """One residual block: (LN, attention, LN, MLP)."""

    q_ln: tuple             # (gain, bias) applied to the queries
    kv_ln: tuple | None     # (gain, bias) for a distinct source, None if source == queries
    attn: AttentionWeights
    mlp_ln: tuple
    mlp: tuple              # (w1, b1, w2, b2)


def multi_head_attention(queries: DualTensor, source: DualTensor, mask,
                         w: AttentionWeights, return_weights: bool = False):
    """Scaled dot-product attention over already-normalized inputs.

    ``mask`` is a boolean vector over source rows (True = attend) or None.
    Masked positions get exactly zero weight. Returns [q, D], plus the
    per-head attention matrices when requested.
    """
    if queries.shape[1] != w.wq.shape[0]:
        raise ShapeError(f"query width {queries.shape[1]} != projection {w.wq.shape[0]}")
    if source.shape[1] != w.wk.shape[0]:
        raise ShapeError(f"source width {source.shape[1]} != projection {w.wk.shape[0]}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (source.shape[0],):
            raise ShapeError(f"mask shape {mask.shape} != source rows {source.shape[0]}")
        if not mask.any():
            raise MaskError("attention source is fully masked")
    d = w.wq.shape[1]
    h = w.n_heads
    dh = d // h
    inv_sqrt = 1.0 / math.sqrt(dh)

    q = nm.add(nm.matmul(queries, w.wq), w.bq)
    k = nm.matmul(source, w.wk)
    v = nm.add(nm.matmul(source, w.wv), w.bv)

    head_outs = []
    attn_maps = []
    for i in range(h):
        cols = slice(i * dh, (i + 1) * dh)
        qi = q[:, cols]
        ki = k[:, cols]
        vi = v[:, cols]
        logits = nm.scale(nm.matmul(qi, nm.transpose(ki)), inv_sqrt)
        a = nm.softmax_rows(logits, mask)
        head_outs.append(nm.matmul(a, vi))
        if return_weights:
            attn_maps.append(a.values.copy())
    merged = nm.concat(head_outs, axis=1) if h > 1 else head_outs[0]
    out = nm.add(nm.matmul(merged, w.wo), w.bo)
    if return_weights:
        return out, np.stack(attn_maps)
    return out


def _ln(x: DualTensor, ln: tuple) -> DualTensor:
    gain, bias = ln
    return nm.layer_normalize(x, gain, bias, eps=LAYER_NORM_EPS)


def _mlp(x: DualTensor, weights: tuple) -> DualTensor:
    w1, b1, w2, b2 = weights
    return nm.add(nm.matmul(nm.gelu(nm.add(nm.matmul(x, w1), b1)), w2), b2)


def attention(queries: DualTensor, source: DualTensor, mask, w: BlockWeights) -> DualTensor:
    """One pre-norm residual attention block followed by its MLP sub-block.

    When ``source is queries`` this is a self-attention block and the query
    normalization is reused for keys/values.
    """
    qn = _ln(queries, w.q_ln)
    sn = qn if source is queries else _ln(source, w.kv_ln)
    x = nm.add(queries, multi_head_attention(qn, sn, mask, w.attn))
    return nm.add(x, _mlp(_ln(x, w.mlp_ln), w.mlp))


def init_backbone_params(store: ParamStore, config: BackboneConfig,
                         token_width: int, seed: int = 0) -> None:
    """Create every backbone parameter under the 'backbone.' prefix."""
    d = config.latent_dim
    r = config.mlp_ratio

    def norm_pair(prefix, width):
        g = store.add_param(f"{prefix}.g", np.ones(width))
        b = store.add_param(f"{prefix}.b", np.zeros(width))
        return (g, b)

    def linear(name, n_in, n_out):
        w = store.add_param(f"{name}.w", _seeded_normal(
            seed, f"{name}.w", (n_in, n_out), 1.0 / math.sqrt(n_in)))
        b = store.add_param(f"{name}.b", np.zeros(n_out))
        return w, b

    store.add_param("backbone.latents", _seeded_normal(
        seed, "backbone.latents", (config.n_latents, d), LATENT_INIT_STD))

    def linear_no_bias(name, n_in, n_out):
        store.add_param(f"{name}.w", _seeded_normal(
            seed, f"{name}.w", (n_in, n_out), 1.0 / math.sqrt(n_in)))

    def block(prefix, src_width, self_block):
        norm_pair(f"{prefix}.q_ln", d)
        if not self_block:
            norm_pair(f"{prefix}.kv_ln", src_width)
        linear(f"{prefix}.attn.q", d, d)
        linear_no_bias(f"{prefix}.attn.k", src_width, d)
        linear(f"{prefix}.attn.v", src_width, d)
        linear(f"{prefix}.attn.o", d, d)
        norm_pair(f"{prefix}.mlp_ln", d)
        linear(f"{prefix}.mlp.1", d, r * d)
        linear(f"{prefix}.mlp.2", r * d, d)

    block("backbone.cross", token_width, self_block=False)
    for i in range(config.n_self_layers):
        block(f"backbone.self{i}", d, self_block=True)
    norm_pair("backbone.final_ln", d)


def _load_attention(store: ParamStore, prefix: str, n_heads: int) -> AttentionWeights:
    return AttentionWeights(
        wq=store.param(f"{prefix}.q.w"), bq=store.param(f"{prefix}.q.b"),
        wk=store.param(f"{prefix}.k.w"),
        wv=store.param(f"{prefix}.v.w"), bv=store.param(f"{prefix}.v.b"),
        wo=store.param(f"{prefix}.o.w"), bo=store.param(f"{prefix}.o.b"),
        n_heads=n_heads)


def _load_block(store: ParamStore, prefix: str, config: BackboneConfig,
                self_block: bool) -> BlockWeights:
    kv_ln = None
    if not self_block:
        kv_ln = (store.param(f"{prefix}.kv_ln.g"), store.param(f"{prefix}.kv_ln.b"))
    return BlockWeights(
        q_ln=(store.param(f"{prefix}.q_ln.g"), store.param(f"{prefix}.q_ln.b")),
        kv_ln=kv_ln,
        attn=_load_attention(store, f"{prefix}.attn", config.n_heads),
        mlp_ln=(store.param(f"{prefix}.mlp_ln.g"), store.param(f"{prefix}.mlp_ln.b")),
        mlp=(store.param(f"{prefix}.mlp.1.w"), store.param(f"{prefix}.mlp.1.b"),
             store.param(f"{prefix}.mlp.2.w"), store.param(f"{prefix}.mlp.2.b")))


def encode(tokens: TokenMatrix, store: ParamStore, config: BackboneConfig) -> LatentState:
    """Cross-attend the learned latent array over tokens, then self-attend."""
    if tokens.n_tokens == 0:
        raise ShapeError("cannot encode an empty token matrix")
    cross = _load_block(store, "backbone.cross", config, self_block=False)
    if tokens.width != cross.attn.wk.shape[0]:
        raise ShapeError(
            f"token width {tokens.width} != backbone expectation {cross.attn.wk.shape[0]}")
    x = attention(store.param("backbone.latents"), tokens.tokens, tokens.valid_mask, cross)
    for i in range(config.n_self_layers):
        blk = _load_block(store, f"backbone.self{i}", config, self_block=True)
        x = attention(x, x, None, blk)
    final = (store.param("backbone.final_ln.g"), store.param("backbone.final_ln.b"))
    return LatentState(latents=_ln(x, final))
