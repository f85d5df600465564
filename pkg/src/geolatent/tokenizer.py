"""Turn heterogeneous geospatial samples into token matrices.

Each spectral band of each timestep is downsampled by its own stack of
three stride-2 convolutions (bands and timesteps never mix), positional
information for space, time and band index is folded into the feature
width, and the result is flattened in raster order to an
(T * H' * W' * L) x C matrix with per-token provenance.

Conv stacks are registered per band label: two modalities that declare
the same band label share the same parameters.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .encoding import (
    FrequencyBank,
    UncertainScalar,
    fourier_encode_directional_interval,
    fourier_encode_interval,
    fourier_encode_scalar,
)
from .errors import ConfigurationError, InvalidInputError
from .numerics import DualTensor, ParamStore

BAND_KINDS = ("optical", "sar_polarization", "derived")
PAD_PROVENANCE = -1

POSITION_ADD = "add"
POSITION_CONCAT = "concat"


@dataclass(frozen=True)
class BandDescriptor:
    """One spectral channel: a wavelength, polarization mode, or derived layer."""

    kind: str
    label: str
    radiometric_bits: int = 12

    def __post_init__(self):
        if self.kind not in BAND_KINDS:
            raise ConfigurationError(f"unknown band kind {self.kind!r}")
        if self.radiometric_bits <= 0:
            raise ConfigurationError("radiometric_bits must be positive")


@dataclass(frozen=True)
class ModalitySpec:
    """Shape contract for one input modality: T x H x W x L tensors."""

    modality_id: str
    bands: tuple
    height: int
    width: int
    timesteps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(self.bands))
        if len(self.bands) < 1:
            raise ConfigurationError("a modality needs at least one band")
        labels = [b.label for b in self.bands]
        if len(set(labels)) != len(labels):
            raise ConfigurationError("band labels must be unique within a modality")
        if self.height <= 0 or self.width <= 0 or self.timesteps <= 0:
            raise ConfigurationError("modality dimensions must be positive")

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def feature_grid(self) -> tuple:
        """Spatial extent after three stride-2 convolutions."""
        return (math.ceil(self.height / 8), math.ceil(self.width / 8))

    @property
    def token_count(self) -> int:
        hp, wp = self.feature_grid
        return self.timesteps * hp * wp * self.n_bands


@dataclass
class GeoSample:
    """One observation: a value tensor plus geolocation/time metadata and targets."""

    spec: ModalitySpec
    values: np.ndarray
    location: tuple  # (lat, lon) as UncertainScalar in normalized [0, 1] units
    time: tuple      # one UncertainScalar per timestep, normalized
    target: dict = field(default_factory=dict)
    sample_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.spec.timesteps, self.spec.height, self.spec.width, self.spec.n_bands)
        if self.values.shape != expected:
            raise InvalidInputError(
                f"sample values shape {self.values.shape} != modality shape {expected}")
        self.time = tuple(self.time)
        if len(self.time) != self.spec.timesteps:
            raise InvalidInputError("need one time coordinate per timestep")
        lat, lon = self.location
        for c in (lat, lon):
            if not (0.0 <= c.value <= 1.0):
                raise InvalidInputError("normalized coordinates must lie in [0, 1]")


@dataclass
class TokenMatrix:
    """Tokens with provenance (t, h', w', l) and a validity mask.

    Padding rows appended by pad_tokens carry provenance PAD_PROVENANCE and
    a False mask entry.
    """

    tokens: DualTensor
    provenance: np.ndarray
    valid_mask: np.ndarray

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


@dataclass
class ConvStack:
    """Three stride-2, kernel-3 conv layers applied per band per timestep."""

    band_key: str
    widths: tuple
    weights: list  # [(w, b), ...] with w [9 * c_in, c_out]


@dataclass(frozen=True)
class PositionalBanks:
    spatial: FrequencyBank   # directional, 2-D
    temporal: FrequencyBank  # axis-aligned
    spectral: FrequencyBank  # axis-aligned


class TokenizerRegistry:
    """Owns conv stacks keyed by band label and the fixed positional projections."""

    def __init__(self, store: ParamStore, feature_width: int = 64,
                 conv_widths: tuple = (16, 32), seed: int = 0):
        self.store = store
        self.feature_width = feature_width
        self.conv_widths = tuple(conv_widths)
        self.seed = seed
        self._stacks: dict[str, ConvStack] = {}

    def ensure_band(self, label: str) -> ConvStack:
        if label in self._stacks:
            return self._stacks[label]
        widths = (1,) + self.conv_widths + (self.feature_width,)
        layers = []
        for k in range(3):
            c_in, c_out = widths[k], widths[k + 1]
            wname = f"tokenizer.band.{label}.conv{k + 1}.w"
            bname = f"tokenizer.band.{label}.conv{k + 1}.b"
            w = self.store.add_param(wname, _seeded_normal(
                self.seed, wname, (9 * c_in, c_out), 1.0 / math.sqrt(9 * c_in)))
            b = self.store.add_param(bname, np.zeros(c_out))
            layers.append((w, b))
        stack = ConvStack(band_key=label, widths=widths, weights=layers)
        self._stacks[label] = stack
        return stack

    def positional_projection(self, role: str, n_enc: int) -> np.ndarray:
        """Fixed (non-trainable) projection of one encoding family to feature width."""
        name = f"tokenizer.pos.{role}.proj"
        if self.store.has(name):
            proj = self.store.buffer(name)
            if proj.shape[0] != n_enc:
                raise ConfigurationError(
                    f"positional bank for {role!r} changed width after registration")
            return proj
        proj = _seeded_normal(self.seed, name, (n_enc, self.feature_width),
                              1.0 / math.sqrt(n_enc))
        return self.store.add_buffer(name, proj)


@dataclass
class TokenizerHandle:
    """A modality bound to its conv stacks, banks, and normalization statistics."""

    spec: ModalitySpec
    registry: TokenizerRegistry
    banks: PositionalBanks
    stacks: list          # one ConvStack per band, in band order
    norm_mean: np.ndarray
    norm_std: np.ndarray
    position_mode: str = POSITION_ADD

    @property
    def token_width(self) -> int:
        c = self.registry.feature_width
        if self.position_mode == POSITION_CONCAT:
            return (c + self.banks.spatial.n_components
                    + self.banks.temporal.n_components + self.banks.spectral.n_components)
        return c


def _seeded_normal(seed: int, name: str, shape: tuple, std: float) -> np.ndarray:
    digest = hashlib.sha256(name.encode()).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
    return rng.normal(0.0, std, size=shape)


def register_tokenizer(spec: ModalitySpec, registry: TokenizerRegistry,
                       banks: PositionalBanks, norm_mean=None, norm_std=None,
                       position_mode: str = POSITION_ADD) -> TokenizerHandle:
    """Bind a modality to the registry, reusing conv stacks for known band labels."""
    if position_mode not in (POSITION_ADD, POSITION_CONCAT):
        raise ConfigurationError(f"unknown position_mode {position_mode!r}")
    if banks.spatial.mode != "directional":
        raise ConfigurationError("spatial bank must be directional")
    stacks = [registry.ensure_band(b.label) for b in spec.bands]
    if position_mode == POSITION_ADD:
        # materialize the fixed projections now so the store is complete
        # before any checkpoint is read or written
        registry.positional_projection("spatial", banks.spatial.n_components)
        registry.positional_projection("temporal", banks.temporal.n_components)
        registry.positional_projection("spectral", banks.spectral.n_components)
    mean = np.zeros(spec.n_bands) if norm_mean is None else np.asarray(norm_mean, dtype=np.float64)
    std = np.ones(spec.n_bands) if norm_std is None else np.asarray(norm_std, dtype=np.float64)
    if mean.shape != (spec.n_bands,) or std.shape != (spec.n_bands,):
        raise InvalidInputError("normalization statistics need one entry per band")
    if np.any(std <= 0.0):
        raise InvalidInputError("normalization std must be positive")
    return TokenizerHandle(spec=spec, registry=registry, banks=banks, stacks=stacks,
                           norm_mean=mean, norm_std=std, position_mode=position_mode)


_CONV_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _conv_gather_indices(h: int, w: int) -> np.ndarray:
    """Flat indices into the zero-padded [(h+2)*(w+2)] plane for 3x3 stride-2 patches."""
    key = (h, w)
    idx = _CONV_INDEX_CACHE.get(key)
    if idx is not None:
        return idx
    h_out = (h - 1) // 2 + 1
    w_out = (w - 1) // 2 + 1
    rows = []
    for oy in range(h_out):
        for ox in range(w_out):
            for ky in range(3):
                for kx in range(3):
                    rows.append((2 * oy + ky) * (w + 2) + (2 * ox + kx))
    idx = np.asarray(rows, dtype=np.intp)
    _CONV_INDEX_CACHE[key] = idx
    return idx


def _conv3x3_s2(x: DualTensor, w: DualTensor, b: DualTensor) -> DualTensor:
    """One 3x3 stride-2 zero-padded convolution on an [H, W, C_in] tensor."""
    h, wd, c_in = x.shape
    h_out = (h - 1) // 2 + 1
    w_out = (wd - 1) // 2 + 1
    padded = nm.zero_pad2d(x, 1)
    flat = nm.reshape(padded, ((h + 2) * (wd + 2), c_in))
    patches = nm.gather_rows(flat, _conv_gather_indices(h, wd))
    patches = nm.reshape(patches, (h_out * w_out, 9 * c_in))
    y = nm.add(nm.matmul(patches, w), b)
    return nm.reshape(y, (h_out, w_out, w.shape[1]))


def conv_downsample_band(frame, stack: ConvStack) -> DualTensor:
    """Downsample one band frame to [ceil(H/8), ceil(W/8), C] through the stack."""
    if isinstance(frame, DualTensor):
        x = frame
    else:
        x = nm.constant(np.asarray(frame, dtype=np.float64))
    if len(x.shape) != 2:
        raise InvalidInputError(f"band frame must be 2-D, got shape {x.shape}")
    h, w = x.shape
    if h < 8 or w < 8:
        raise InvalidInputError(f"frame {h}x{w} too small for three stride-2 layers")
    x = nm.reshape(x, (h, w, 1))
    for k, (wk, bk) in enumerate(stack.weights):
        x = _conv3x3_s2(x, wk, bk)
        if k < 2:
            x = nm.gelu(x)
    return x


def _positional_matrix(handle: TokenizerHandle, sample: GeoSample) -> np.ndarray:
    """Raw positional encodings per token row, before any projection.

    Row order matches the raster flattening: t outer, then h', w', then l.
    Columns are [spatial | temporal | spectral] encoding blocks.
    """
    spec = handle.spec
    hp, wp = spec.feature_grid
    t_n, l_n = spec.timesteps, spec.n_bands
    banks = handle.banks

    lat, lon = sample.location
    hw = np.array([lat.half_width, lon.half_width])
    spatial = np.empty((hp * wp, banks.spatial.n_components))
    for i in range(hp):
        for j in range(wp):
            center = np.array([lat.value + (i + 0.5) / hp, lon.value + (j + 0.5) / wp])
            spatial[i * wp + j] = fourier_encode_directional_interval(center, hw, banks.spatial)

    temporal = np.stack([fourier_encode_interval(tc, banks.temporal) for tc in sample.time])

    denom = max(l_n - 1, 1)
    spectral = np.stack([fourier_encode_scalar(l / denom, banks.spectral) for l in range(l_n)])

    n = t_n * hp * wp * l_n
    out = np.empty((n, spatial.shape[1] + temporal.shape[1] + spectral.shape[1]))
    s0, s1 = spatial.shape[1], spatial.shape[1] + temporal.shape[1]
    view = out.reshape(t_n, hp * wp, l_n, -1)
    view[:, :, :, :s0] = spatial[None, :, None, :]
    view[:, :, :, s0:s1] = temporal[:, None, None, :]
    view[:, :, :, s1:] = spectral[None, None, :, :]
    return out


def tokenize_sample(sample: GeoSample, handle: TokenizerHandle,
                    banks: PositionalBanks | None = None) -> TokenMatrix:
    """Tokenize one sample: per-band conv features plus positional information.

    ``banks`` defaults to the handle's registered banks; passing a different
    set re-encodes positions without touching the conv path.
    """
    spec = handle.spec
    if sample.spec != spec:
        raise InvalidInputError(
            f"sample modality {sample.spec.modality_id!r} does not match handle "
            f"{spec.modality_id!r}")
    if banks is not None and banks is not handle.banks:
        handle = TokenizerHandle(spec=spec, registry=handle.registry, banks=banks,
                                 stacks=handle.stacks, norm_mean=handle.norm_mean,
                                 norm_std=handle.norm_std, position_mode=handle.position_mode)
    hp, wp = spec.feature_grid
    t_n, l_n = spec.timesteps, spec.n_bands
    c = handle.registry.feature_width

    time_blocks = []
    for t in range(t_n):
        band_maps = []
        for l in range(l_n):
            frame = (sample.values[t, :, :, l] - handle.norm_mean[l]) / handle.norm_std[l]
            fmap = conv_downsample_band(frame, handle.stacks[l])
            band_maps.append(nm.reshape(fmap, (hp * wp, c)))
        # interleave band columns then unroll so rows run (h', w', l)
        block = nm.concat(band_maps, axis=1) if l_n > 1 else band_maps[0]
        time_blocks.append(nm.reshape(block, (hp * wp * l_n, c)))
    features = nm.concat(time_blocks, axis=0) if t_n > 1 else time_blocks[0]

    raw = _positional_matrix(handle, sample)
    if handle.position_mode == POSITION_ADD:
        reg = handle.registry
        p_sp = reg.positional_projection("spatial", handle.banks.spatial.n_components)
        p_t = reg.positional_projection("temporal", handle.banks.temporal.n_components)
        p_l = reg.positional_projection("spectral", handle.banks.spectral.n_components)
        s0 = handle.banks.spatial.n_components
        s1 = s0 + handle.banks.temporal.n_components
        projected = raw[:, :s0] @ p_sp + raw[:, s0:s1] @ p_t + raw[:, s1:] @ p_l
        tokens = nm.add(features, nm.constant(projected))
    else:
        tokens = nm.concat([features, nm.constant(raw)], axis=1)

    provenance = np.empty((t_n * hp * wp * l_n, 4), dtype=np.int32)
    r = 0
    for t in range(t_n):
        for i in range(hp):
            for j in range(wp):
                for l in range(l_n):
                    provenance[r] = (t, i, j, l)
                    r += 1
    valid = np.ones(provenance.shape[0], dtype=bool)
    return TokenMatrix(tokens=tokens, provenance=provenance, valid_mask=valid)


def pad_tokens(tm: TokenMatrix, target_len: int) -> TokenMatrix:
    """Append zero rows up to target_len; padding is masked out and flagged."""
    n = tm.n_tokens
    if target_len < n:
        raise InvalidInputError(f"target_len {target_len} below token count {n}")
    if target_len == n:
        return tm
    k = target_len - n
    tokens = nm.concat([tm.tokens, nm.constant(np.zeros((k, tm.width)))], axis=0)
    provenance = np.concatenate(
        [tm.provenance, np.full((k, 4), PAD_PROVENANCE, dtype=np.int32)], axis=0)
    mask = np.concatenate([tm.valid_mask, np.zeros(k, dtype=bool)])
    return TokenMatrix(tokens=tokens, provenance=provenance, valid_mask=mask)


def token_count(spec: ModalitySpec) -> int:
    return spec.token_count
