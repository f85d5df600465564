"""Minimal dense-tensor arithmetic with reverse-mode differentiation.

Everything runs in float64 on numpy arrays. A forward pass executed under
an active ``Tape`` records one entry per operation in execution order;
``backward`` walks the entries in exact reverse and accumulates adjoints
into the ``grad`` field of every tensor that requires gradients. Repeated
backward calls accumulate. Without an active tape the same operations run
as plain (and cheaper) array math, which is how evaluation-only forward
passes work.

A ``Tape`` is confined to a single thread; parameters may be read
concurrently by tape-free forward passes.
"""

from __future__ import annotations

import json
import math
import threading
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidInputError, MaskError, ShapeError

_LOCAL = threading.local()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class DualTensor:
    """A float64 array paired with an accumulated-gradient array of the same shape.

    The gradient array materializes (as zeros) on first access, which keeps
    evaluation-only forward passes free of dead allocations.
    """

    __slots__ = ("values", "_grad", "requires_grad", "node_id")

    def __init__(self, values, requires_grad: bool = False):
        # strided views are fine for arithmetic; row-major order is imposed
        # where it matters (reshape semantics, serialization)
        self.values = np.asarray(values, dtype=np.float64)
        self._grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def accumulate_grad(self, g: np.ndarray):
        if self._grad is None:
            self._grad = g.copy()
        else:
            self._grad += g

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return self.values.item()

    def zero_grad(self):
        if self._grad is not None:
            self._grad[...] = 0.0

    def __repr__(self):
        return f"DualTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return slice_(self, key)


def tensor(values, requires_grad: bool = False) -> DualTensor:
    return DualTensor(values, requires_grad=requires_grad)


def constant(values) -> DualTensor:
    return DualTensor(values, requires_grad=False)


def _as_tensor(x) -> DualTensor:
    if isinstance(x, DualTensor):
        return x
    return DualTensor(np.asarray(x, dtype=np.float64))


class _Entry:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations; reverse traversal drives backward."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self._ids: dict[int, int] = {}
        self._tensors: list[DualTensor] = []

    def __enter__(self):
        self._prev = _active_tape()
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = self._prev
        del self._prev
        return False

    def register(self, t: DualTensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = len(self._tensors)
            self._ids[id(t)] = nid
            self._tensors.append(t)
            t.node_id = nid
        return nid

    def record(self, out: DualTensor, parents: tuple, backward_fn):
        for p in parents:
            self.register(p)
        self.register(out)
        self.entries.append(_Entry(out, parents, backward_fn))


def _record(out: DualTensor, parents: tuple, backward_fn) -> DualTensor:
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, parents, backward_fn)
    return out


def backward(loss: DualTensor, tape: Tape):
    """Populate grad for every requires_grad ancestor of a scalar loss.

    Adjoints are computed fresh per call and added into existing grads, so
    repeated calls without zeroing accumulate.
    """
    if loss.values.size != 1:
        raise InvalidInputError(f"loss must be scalar, got shape {loss.shape}")
    tape.register(loss)
    adjoints: dict[int, np.ndarray] = {tape._ids[id(loss)]: np.ones_like(loss.values)}
    for entry in reversed(tape.entries):
        g = adjoints.pop(tape._ids[id(entry.out)], None)
        if g is None:
            continue
        if entry.out.requires_grad:
            entry.out.accumulate_grad(g)
        parent_grads = entry.backward_fn(g)
        for p, pg in zip(entry.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            nid = tape._ids[id(p)]
            prev = adjoints.get(nid)
            # never mutate in place: a backward rule may hand the same array
            # to several parents (e.g. add), so adjoints can alias
            adjoints[nid] = pg if prev is None else prev + pg
    # whatever is left belongs to leaves (inputs and parameters)
    for nid, g in adjoints.items():
        t = tape._tensors[nid]
        if t.requires_grad:
            t.accumulate_grad(g)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast when producing it."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural operations


def add(a: DualTensor, b: DualTensor) -> DualTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = DualTensor(a.values + b.values)
    except ValueError:
        raise ShapeError(f"add shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), bwd)


def sub(a: DualTensor, b: DualTensor) -> DualTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = DualTensor(a.values - b.values)
    except ValueError:
        raise ShapeError(f"sub shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), bwd)


def mul(a: DualTensor, b: DualTensor) -> DualTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = DualTensor(a.values * b.values)
    except ValueError:
        raise ShapeError(f"mul shapes {a.shape} and {b.shape} do not broadcast")
    av, bv = a.values, b.values

    def bwd(g):
        return (_unbroadcast(g * bv, a.shape) if a.requires_grad else None,
                _unbroadcast(g * av, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), bwd)


def neg(x: DualTensor) -> DualTensor:
    out = DualTensor(-x.values)
    return _record(out, (x,), lambda g: (-g,))


def scale(x: DualTensor, s: float) -> DualTensor:
    s = float(s)
    out = DualTensor(x.values * s)
    return _record(out, (x,), lambda g: (g * s,))


def relu(x: DualTensor) -> DualTensor:
    out = DualTensor(np.maximum(x.values, 0.0))
    pos = x.values > 0.0
    return _record(out, (x,), lambda g: (g * pos,))


def gelu(x: DualTensor) -> DualTensor:
    """tanh-form gelu; the gradient differentiates this exact expression."""
    v = x.values
    v2 = v * v
    inner = v2 * v
    inner *= _GELU_A
    inner += v
    inner *= _GELU_C
    t = np.tanh(inner)
    half_one_plus_t = 0.5 * (1.0 + t)
    out = DualTensor(v * half_one_plus_t)

    def bwd(g):
        dinner = (3.0 * _GELU_A) * v2
        dinner += 1.0
        dinner *= _GELU_C
        sech2 = 1.0 - t * t
        sech2 *= dinner
        sech2 *= 0.5 * v
        sech2 += half_one_plus_t
        return (g * sech2,)

    return _record(out, (x,), bwd)


def log(x: DualTensor) -> DualTensor:
    out = DualTensor(np.log(x.values))
    v = x.values
    return _record(out, (x,), lambda g: (g / v,))


def reshape(x: DualTensor, shape) -> DualTensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = DualTensor(x.values.reshape(shape))
    old = x.shape
    return _record(out, (x,), lambda g: (g.reshape(old),))


def transpose(x: DualTensor) -> DualTensor:
    if x.values.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    out = DualTensor(x.values.T)
    return _record(out, (x,), lambda g: (g.T,))


def concat(tensors, axis: int = 0) -> DualTensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise InvalidInputError("concat needs at least one tensor")
    try:
        out = DualTensor(np.concatenate([t.values for t in tensors], axis=axis))
    except ValueError as e:
        raise ShapeError(f"concat: {e}")
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

    return _record(out, tuple(tensors), bwd)


def slice_(x: DualTensor, key) -> DualTensor:
    """Basic slicing (ints and slices only); backward scatters into zeros."""
    out = DualTensor(x.values[key])
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        full[key] = g
        return (full,)

    return _record(out, (x,), bwd)


def sum_(x: DualTensor, axis=None, keepdims: bool = False) -> DualTensor:
    out = DualTensor(x.values.sum(axis=axis, keepdims=keepdims))
    shape = x.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (x,), bwd)


def mean(x: DualTensor, axis=None, keepdims: bool = False) -> DualTensor:
    out = DualTensor(x.values.mean(axis=axis, keepdims=keepdims))
    shape = x.shape
    n = x.size if axis is None else x.values.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _record(out, (x,), bwd)


def matmul(a: DualTensor, b: DualTensor) -> DualTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} are incompatible")
    out = DualTensor(a.values @ b.values)
    av, bv = a.values, b.values

    def bwd(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _record(out, (a, b), bwd)


def softmax_rows(x: DualTensor, mask=None) -> DualTensor:
    """Row-wise softmax over unmasked entries; masked entries are exactly zero.

    ``mask`` is boolean with True marking entries that participate; it may be
    per-row ([m, n]) or shared across rows ([n]).
    """
    v = x.values
    if v.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {v.shape}")
    if mask is None:
        m = v.max(axis=1, keepdims=True)
        e = np.exp(v - m)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = np.broadcast_to(mask, v.shape)
        if mask.shape != v.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match {v.shape}")
        if not mask.any(axis=1).all():
            raise MaskError("softmax_rows: some row is fully masked")
        m = np.where(mask, v, -np.inf).max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, v, m) - m), 0.0)
    y = e / e.sum(axis=1, keepdims=True)
    out = DualTensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), bwd)


def layer_normalize(x: DualTensor, gain: DualTensor, bias: DualTensor, eps: float = 1e-5) -> DualTensor:
    """Per-row standardization followed by an affine map."""
    v = x.values
    if v.ndim != 2:
        raise ShapeError(f"layer_normalize expects a matrix, got shape {v.shape}")
    gain, bias = _as_tensor(gain), _as_tensor(bias)
    mu = v.mean(axis=1, keepdims=True)
    centered = v - mu
    var = (centered ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = DualTensor(xhat * gain.values + bias.values)
    n = v.shape[1]
    gv = gain.values

    def bwd(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gv
            gx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        ggain = (g * xhat).sum(axis=0) if gain.requires_grad else None
        gbias = g.sum(axis=0) if bias.requires_grad else None
        return (gx, ggain, gbias)

    return _record(out, (x, gain, bias), bwd)


def zero_pad2d(x: DualTensor, pad: int) -> DualTensor:
    """Zero-pad the two leading spatial axes of an [H, W, C] tensor."""
    if x.values.ndim != 3:
        raise ShapeError(f"zero_pad2d expects [H, W, C], got shape {x.shape}")
    if pad == 0:
        return x
    out = DualTensor(np.pad(x.values, ((pad, pad), (pad, pad), (0, 0))))
    return _record(out, (x,), lambda g: (g[pad:-pad, pad:-pad, :],))


def gather_rows(x: DualTensor, index: np.ndarray) -> DualTensor:
    """Select rows of a matrix by integer index; duplicates scatter-add in backward."""
    if x.values.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {x.shape}")
    index = np.asarray(index, dtype=np.intp)
    out = DualTensor(x.values[index])
    n = x.shape[0]

    def bwd(g):
        full = np.zeros((n, x.shape[1]), dtype=np.float64)
        np.add.at(full, index, g)
        return (full,)

    return _record(out, (x,), bwd)


def finite_diff_gradient(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat parameter array."""
    if h <= 0.0:
        raise InvalidInputError("finite difference step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(theta)
        flat[i] = orig - h
        fm = f(theta)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# parameter store and checkpoint format

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_BLOB = "params.bin"


class ParamStore:
    """Named collection of learnable tensors plus fixed (non-trainable) buffers."""

    def __init__(self):
        self._params: dict[str, DualTensor] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add_param(self, name: str, values) -> DualTensor:
        if name in self._params or name in self._buffers:
            raise InvalidInputError(f"duplicate parameter name {name!r}")
        t = DualTensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, values) -> np.ndarray:
        if name in self._params or name in self._buffers:
            raise InvalidInputError(f"duplicate buffer name {name!r}")
        arr = np.ascontiguousarray(values, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def param(self, name: str) -> DualTensor:
        return self._params[name]

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def has(self, name: str) -> bool:
        return name in self._params or name in self._buffers

    def params(self) -> dict[str, DualTensor]:
        return dict(self._params)

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def n_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def save(self, directory):
        """Write manifest.json plus one little-endian float64 blob.

        The blob concatenates every entry's row-major values in manifest
        order (names sorted lexicographically), parameters and buffers alike.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = sorted(list(self._params) + list(self._buffers))
        entries = []
        chunks = []
        for name in names:
            trainable = name in self._params
            arr = self._params[name].values if trainable else self._buffers[name]
            entries.append({"name": name, "shape": list(arr.shape), "trainable": trainable})
            chunks.append(arr.astype("<f8").tobytes(order="C"))
        manifest = {"format": "geolatent-checkpoint-v1", "entries": entries}
        (directory / CHECKPOINT_MANIFEST).write_text(
            json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        (directory / CHECKPOINT_BLOB).write_bytes(b"".join(chunks))

    def load(self, directory):
        """Load a checkpoint into this store; names and shapes must match exactly."""
        directory = Path(directory)
        try:
            manifest = json.loads((directory / CHECKPOINT_MANIFEST).read_text())
            blob = (directory / CHECKPOINT_BLOB).read_bytes()
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read checkpoint at {directory}: {e}")
        if manifest.get("format") != "geolatent-checkpoint-v1":
            raise DataError(f"unrecognized checkpoint format in {directory}")
        offset = 0
        seen = set()
        for entry in manifest["entries"]:
            name, shape = entry["name"], tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = blob[offset:offset + 8 * count]
            if len(raw) != 8 * count:
                raise DataError(f"checkpoint blob truncated at entry {name!r}")
            offset += 8 * count
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            if entry["trainable"]:
                if name not in self._params:
                    raise DataError(f"checkpoint parameter {name!r} unknown to this model")
                target = self._params[name]
                if target.shape != shape:
                    raise DataError(f"checkpoint shape {shape} != model shape {target.shape} for {name!r}")
                target.values[...] = arr
            else:
                if name not in self._buffers:
                    raise DataError(f"checkpoint buffer {name!r} unknown to this model")
                if self._buffers[name].shape != shape:
                    raise DataError(f"checkpoint buffer shape mismatch for {name!r}")
                self._buffers[name][...] = arr
            seen.add(name)
        missing = (set(self._params) | set(self._buffers)) - seen
        if offset != len(blob):
            raise DataError("checkpoint blob longer than manifest describes")
        if missing:
            raise DataError(f"checkpoint missing entries: {sorted(missing)[:5]}")
