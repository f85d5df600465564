"""Full model assembly: tokenizers + backbone + heads over one parameter store.

One GeoModel owns a ParamStore, a tokenizer registry (conv stacks shared
across modalities by band label), the backbone parameters, and one
parameter set per head. The backbone is a single code path and parameter
set no matter which modality produced the tokens or which head consumes
the latents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .backbone import BackboneConfig, LatentState, encode, init_backbone_params
from .encoding import FrequencyBank, make_frequency_bank
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .heads import (
    HeadParams,
    HeadSpec,
    cross_entropy_loss,
    init_head_params,
    mse_loss,
    multi_head_forward,
    segmentation_loss,
)
from .numerics import DualTensor, ParamStore, Tape
from .tokenizer import (
    GeoSample,
    ModalitySpec,
    PositionalBanks,
    TokenMatrix,
    TokenizerRegistry,
    pad_tokens,
    register_tokenizer,
    tokenize_sample,
)


@dataclass(frozen=True)
class BankConfig:
    n_freqs: int = 4
    f_min: float = 0.5
    f_max: float = 8.0
    n_angles: int = 4  # directional banks only


@dataclass(frozen=True)
class ModelConfig:
    seed: int = 0
    feature_width: int = 64
    conv_widths: tuple = (16, 32)
    position_mode: str = "add"
    spatial_bank: BankConfig = field(default_factory=BankConfig)
    temporal_bank: BankConfig = field(default_factory=lambda: BankConfig(n_freqs=4))
    spectral_bank: BankConfig = field(default_factory=lambda: BankConfig(n_freqs=2, f_max=4.0))
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    heads: tuple = ()


def build_banks(config: ModelConfig) -> PositionalBanks:
    spatial = make_frequency_bank(
        config.spatial_bank.n_freqs, config.spatial_bank.f_min, config.spatial_bank.f_max,
        dim=2, mode="directional", n_angles=config.spatial_bank.n_angles)
    temporal = make_frequency_bank(
        config.temporal_bank.n_freqs, config.temporal_bank.f_min, config.temporal_bank.f_max)
    spectral = make_frequency_bank(
        config.spectral_bank.n_freqs, config.spectral_bank.f_min, config.spectral_bank.f_max)
    return PositionalBanks(spatial=spatial, temporal=temporal, spectral=spectral)


class GeoModel:
    """A trainable model instance bound to one or more modalities."""

    def __init__(self, config: ModelConfig, modalities, norm_stats=None):
        """``modalities`` is a list of ModalitySpec; ``norm_stats`` maps
        modality_id -> (mean, std) arrays, defaulting to identity scaling."""
        self.config = config
        self.store = ParamStore()
        self.banks = build_banks(config)
        self.registry = TokenizerRegistry(
            self.store, feature_width=config.feature_width,
            conv_widths=config.conv_widths, seed=config.seed)
        self.handles = {}
        norm_stats = norm_stats or {}
        token_width = None
        for spec in modalities:
            mean, std = norm_stats.get(spec.modality_id, (None, None))
            handle = register_tokenizer(spec, self.registry, self.banks,
                                        norm_mean=mean, norm_std=std,
                                        position_mode=config.position_mode)
            self.handles[spec.modality_id] = handle
            if token_width is None:
                token_width = handle.token_width
            elif token_width != handle.token_width:
                raise ConfigurationError("modalities disagree on token width")
        if token_width is None:
            raise ConfigurationError("model needs at least one modality")
        self.token_width = token_width
        init_backbone_params(self.store, config.backbone, token_width, seed=config.seed)
        self.head_params: dict[str, HeadParams] = {}
        self.head_specs: dict[str, HeadSpec] = {}
        for spec in config.heads:
            if spec.head_id in self.head_specs:
                raise ConfigurationError(f"duplicate head_id {spec.head_id!r}")
            bank = self.banks.spatial if spec.kind == "segmentation" else None
            self.head_params[spec.head_id] = init_head_params(
                self.store, spec, config.backbone, bank=bank, seed=config.seed)
            self.head_specs[spec.head_id] = spec

    # ------------------------------------------------------------------
    # forward paths

    def tokenize(self, sample: GeoSample) -> TokenMatrix:
        handle = self.handles.get(sample.spec.modality_id)
        if handle is None:
            raise InvalidInputError(f"no tokenizer for modality {sample.spec.modality_id!r}")
        return tokenize_sample(sample, handle)

    def encode_tokens(self, tokens: TokenMatrix) -> LatentState:
        return encode(tokens, self.store, self.config.backbone)

    def forward(self, sample: GeoSample, pad_to: int | None = None) -> dict:
        """Per-head outputs as DualTensors; optionally padded to a cluster length."""
        tokens = self.tokenize(sample)
        if pad_to is not None:
            tokens = pad_tokens(tokens, pad_to)
        latents = self.encode_tokens(tokens)
        heads = [(self.head_specs[h], self.head_params[h]) for h in self.head_specs]
        return multi_head_forward(latents, heads)

    def loss(self, sample: GeoSample, pad_to: int | None = None):
        """Summed loss over the heads that have a target on this sample.

        Returns (scalar DualTensor, {head_id: float loss value}).
        """
        tokens = self.tokenize(sample)
        if pad_to is not None:
            tokens = pad_tokens(tokens, pad_to)
        return self.loss_from_tokens(tokens, sample.target)

    def loss_from_tokens(self, tokens: TokenMatrix, target: dict):
        return self.loss_from_latents(self.encode_tokens(tokens), target)

    def loss_from_latents(self, latents: LatentState, target: dict):
        heads = [(self.head_specs[h], self.head_params[h]) for h in self.head_specs]
        outputs = multi_head_forward(latents, heads)
        total = None
        per_head = {}
        for head_id, out in outputs.items():
            payload = target.get(head_id)
            if payload is None:
                continue
            spec = self.head_specs[head_id]
            if spec.kind == "classification":
                term = cross_entropy_loss(out, [payload["label"]])
            elif spec.kind == "regression":
                term = mse_loss(out, np.ravel(payload["values"]))
            else:
                term = segmentation_loss(out, payload["mask"])
            per_head[head_id] = term.values.item()
            total = term if total is None else nm.add(total, term)
        if total is None:
            raise InvalidInputError("sample has no target for any configured head")
        return total, per_head

    def predict(self, sample: GeoSample) -> dict:
        """Evaluation-mode predictions as plain numpy (no tape, no gradients)."""
        outputs = self.forward(sample)
        preds = {}
        for head_id, out in outputs.items():
            if not np.all(np.isfinite(out.values)):
                raise NumericalError(f"non-finite prediction from head {head_id!r}")
            spec = self.head_specs[head_id]
            if spec.kind == "classification":
                preds[head_id] = {"label": int(np.argmax(out.values)),
                                  "logits": out.values.copy()}
            elif spec.kind == "regression":
                preds[head_id] = {"values": out.values.copy()}
            else:
                preds[head_id] = {"mask": np.argmax(out.values, axis=2),
                                  "logits": out.values.copy()}
        return preds

    # ------------------------------------------------------------------
    # introspection

    def param_groups(self) -> dict:
        """Parameter names grouped by top-level component (tokenizer/backbone/heads)."""
        groups: dict[str, list] = {}
        for name in self.store.params():
            parts = name.split(".")
            key = ".".join(parts[:2]) if parts[0] == "head" else parts[0]
            groups.setdefault(key, []).append(name)
        return groups

    def token_count(self, sample: GeoSample) -> int:
        return sample.spec.token_count
