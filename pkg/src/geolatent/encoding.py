"""Fourier coordinate encodings with uncertainty-aware interval averaging.

A scalar coordinate maps to sin/cos pairs over a bank of increasing
frequencies. Vectors are encoded per component. Measurement uncertainty
(a half-width around the coordinate) damps each component in closed form
by sin(2*pi*k*dx) / (2*pi*k*dx). Directional banks place frequency
vectors anywhere in the closed first quadrant instead of only on the
axes, so encodings stay expressive along diagonal directions.

All functions here are pure and operate on plain float64 arrays; they are
safe for unrestricted concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidInputError

AXIS_ALIGNED = "axis_aligned"
DIRECTIONAL = "directional"


@dataclass(frozen=True)
class FrequencyBank:
    """An ordered set of encoding frequencies.

    ``axis_aligned`` banks hold one strictly increasing list of positive
    scalar frequencies (cycles per input unit), shared across input
    dimensions. ``directional`` banks hold d-dimensional frequency
    vectors, each in the closed first orthant with at least one strictly
    positive component.
    """

    mode: str
    frequencies: np.ndarray | None = None
    freq_vectors: np.ndarray | None = None

    def __post_init__(self):
        if self.mode == AXIS_ALIGNED:
            if self.frequencies is None or len(self.frequencies) == 0:
                raise ConfigurationError("axis_aligned bank needs at least one frequency")
            freqs = np.asarray(self.frequencies, dtype=np.float64)
            if freqs.ndim != 1:
                raise ConfigurationError("frequencies must be a flat list")
            if np.any(freqs <= 0.0):
                raise ConfigurationError("frequencies must be positive")
            if np.any(np.diff(freqs) <= 0.0):
                raise ConfigurationError("frequencies must be strictly increasing")
            object.__setattr__(self, "frequencies", freqs)
        elif self.mode == DIRECTIONAL:
            if self.freq_vectors is None or len(self.freq_vectors) == 0:
                raise ConfigurationError("directional bank needs at least one frequency vector")
            vecs = np.asarray(self.freq_vectors, dtype=np.float64)
            if vecs.ndim != 2:
                raise ConfigurationError("freq_vectors must be a matrix of row vectors")
            if np.any(vecs < 0.0):
                raise ConfigurationError("frequency vectors must lie in the closed first orthant")
            if np.any(np.all(vecs == 0.0, axis=1)):
                raise ConfigurationError("each frequency vector needs a positive component")
            object.__setattr__(self, "freq_vectors", vecs)
        else:
            raise ConfigurationError(f"unknown bank mode {self.mode!r}")

    @property
    def n_frequencies(self) -> int:
        if self.mode == AXIS_ALIGNED:
            return len(self.frequencies)
        return len(self.freq_vectors)

    @property
    def n_components(self) -> int:
        """Length of the encoding of one scalar (axis-aligned) or one vector (directional)."""
        return 2 * self.n_frequencies

    @property
    def dim(self) -> int | None:
        """Input dimensionality for directional banks, None for axis-aligned ones."""
        if self.mode == DIRECTIONAL:
            return self.freq_vectors.shape[1]
        return None


@dataclass(frozen=True)
class UncertainScalar:
    """A measured coordinate with a symmetric uncertainty half-width."""

    value: float
    half_width: float = 0.0

    def __post_init__(self):
        if self.half_width < 0.0:
            raise InvalidInputError("half_width must be non-negative")


def make_frequency_bank(
    n_freqs: int,
    f_min: float,
    f_max: float,
    dim: int = 1,
    mode: str = AXIS_ALIGNED,
    n_angles: int = 4,
) -> FrequencyBank:
    """Build a bank with geometrically spaced frequency magnitudes.

    Axis-aligned banks are a geometric progression from f_min to f_max
    inclusive. Directional banks (dim=2 only) cross the same magnitude
    progression with n_angles directions evenly spaced over the closed
    first quadrant. For dim != 2, the directional request falls back to
    an axis-aligned bank, whose per-component concatenation covers higher
    dimensions.
    """
    if n_freqs <= 0:
        raise ConfigurationError("n_freqs must be positive")
    if n_angles <= 0:
        raise ConfigurationError("n_angles must be positive")
    if f_min <= 0.0 or f_max <= 0.0:
        raise ConfigurationError("frequency endpoints must be positive")
    if n_freqs > 1 and f_min >= f_max:
        raise ConfigurationError("f_min must be below f_max")
    if n_freqs == 1:
        mags = np.array([f_min], dtype=np.float64)
    else:
        mags = np.geomspace(f_min, f_max, n_freqs)
    if mode == AXIS_ALIGNED or (mode == DIRECTIONAL and dim != 2):
        return FrequencyBank(mode=AXIS_ALIGNED, frequencies=mags)
    if mode != DIRECTIONAL:
        raise ConfigurationError(f"unknown bank mode {mode!r}")
    angles = np.linspace(0.0, math.pi / 2.0, n_angles) if n_angles > 1 else np.array([0.0])
    vecs = np.empty((n_freqs * n_angles, 2), dtype=np.float64)
    for i, m in enumerate(mags):
        for j, a in enumerate(angles):
            vecs[i * n_angles + j] = (m * math.cos(a), m * math.sin(a))
    # cos(pi/2) leaves ~6e-17 residue; clamp so the first-quadrant invariant is exact
    vecs[np.abs(vecs) < 1e-15] = 0.0
    return FrequencyBank(mode=DIRECTIONAL, freq_vectors=vecs)


def _require_axis_aligned(bank: FrequencyBank):
    if bank.mode != AXIS_ALIGNED:
        raise ConfigurationError("operation requires an axis_aligned bank")


def fourier_encode_scalar(x: float, bank: FrequencyBank) -> np.ndarray:
    """Encode a scalar as [sin(2*pi*k_i*x) ... , cos(2*pi*k_i*x) ...]."""
    _require_axis_aligned(bank)
    # parenthesized as 2*pi*(k*x) so the axis-aligned directional reduction
    # is bit-exact, not just close
    phase = 2.0 * math.pi * (bank.frequencies * float(x))
    return np.concatenate([np.sin(phase), np.cos(phase)])


def fourier_encode_vector(x, bank: FrequencyBank) -> np.ndarray:
    """Encode a vector as the concatenation of its per-component scalar encodings."""
    _require_axis_aligned(bank)
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidInputError("cannot encode a zero-dimensional vector")
    return np.concatenate([fourier_encode_scalar(v, bank) for v in x])


def interval_damping(freq, half_width) -> np.ndarray:
    """Closed-form damping of a sinusoid averaged over +/- half_width.

    Equals sin(2*pi*k*dx) / (2*pi*k*dx), continued with 1 at dx = 0.
    np.sinc(z) = sin(pi*z)/(pi*z), so the damping is sinc(2*k*dx).
    """
    return np.sinc(2.0 * np.asarray(freq, dtype=np.float64) * np.asarray(half_width, dtype=np.float64))


def fourier_encode_interval(s: UncertainScalar, bank: FrequencyBank) -> np.ndarray:
    """Average of the scalar encoding over [x - dx, x + dx], in closed form.

    Each sin/cos component keeps its phase at the interval midpoint and is
    scaled by interval_damping(k, dx). The closed form is validated against
    adaptive quadrature in the test suite.
    """
    _require_axis_aligned(bank)
    phase = 2.0 * math.pi * (bank.frequencies * float(s.value))
    damp = interval_damping(bank.frequencies, s.half_width)
    return np.concatenate([np.sin(phase) * damp, np.cos(phase) * damp])


def fourier_encode_directional(x, bank: FrequencyBank) -> np.ndarray:
    """Encode a vector against directional frequency vectors via inner products."""
    if bank.mode != DIRECTIONAL:
        raise ConfigurationError("operation requires a directional bank")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != bank.freq_vectors.shape[1]:
        raise InvalidInputError(
            f"input dimension {x.size} does not match bank dimension {bank.freq_vectors.shape[1]}"
        )
    phase = 2.0 * math.pi * (bank.freq_vectors @ x)
    return np.concatenate([np.sin(phase), np.cos(phase)])


def fourier_encode_directional_interval(x, half_widths, bank: FrequencyBank) -> np.ndarray:
    """Directional encoding averaged over an axis-aligned uncertainty box.

    Uncertainty is independent per input component, so the combined damping
    of a frequency vector k is the product over components j of
    interval_damping(k_j, dx_j). Validated against 2-D quadrature in tests.
    """
    if bank.mode != DIRECTIONAL:
        raise ConfigurationError("operation requires a directional bank")
    x = np.asarray(x, dtype=np.float64).ravel()
    hw = np.asarray(half_widths, dtype=np.float64).ravel()
    if x.size != bank.freq_vectors.shape[1] or hw.size != x.size:
        raise InvalidInputError("input/half_width dimensions must match the bank dimension")
    if np.any(hw < 0.0):
        raise InvalidInputError("half widths must be non-negative")
    phase = 2.0 * math.pi * (bank.freq_vectors @ x)
    damp = np.prod(np.sinc(2.0 * bank.freq_vectors * hw[None, :]), axis=1)
    return np.concatenate([np.sin(phase) * damp, np.cos(phase) * damp])


def directional_bank_from_axes(bank: FrequencyBank, dim: int) -> FrequencyBank:
    """Place an axis-aligned bank's frequencies on the coordinate axes.

    Vector order is axis-major: all frequencies along axis 0, then axis 1,
    and so on. Used to relate the two multi-dimensional encodings.
    """
    _require_axis_aligned(bank)
    m = bank.n_frequencies
    vecs = np.zeros((dim * m, dim), dtype=np.float64)
    for i in range(dim):
        vecs[i * m:(i + 1) * m, i] = bank.frequencies
    return FrequencyBank(mode=DIRECTIONAL, freq_vectors=vecs)


def axis_aligned_permutation(dim: int, n_freqs: int) -> np.ndarray:
    """Index map relating the directional and per-component vector encodings.

    With a directional bank built by directional_bank_from_axes, the
    directional output groups all sines then all cosines, while the
    per-component encoding groups (sines, cosines) per input component.
    Returns perm such that::

        fourier_encode_vector(x, bank) ==
            fourier_encode_directional(x, directional_bank_from_axes(bank, dim))[perm]
    """
    m = n_freqs
    perm = np.empty(2 * dim * m, dtype=np.intp)
    for i in range(dim):
        for j in range(m):
            perm[i * 2 * m + j] = i * m + j            # sine block
            perm[i * 2 * m + m + j] = dim * m + i * m + j  # cosine block
    return perm
