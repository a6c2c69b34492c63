"""Dense float tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape`.  Outside a
``with Tape():`` block nothing is recorded, which is how inference runs.

Data lives in numpy arrays.  float32 is the default; pass ``dtype=np.float64``
(or build a model in float64) for finite-difference gradient checks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)


# --------------------------------------------------------------------- tape


@dataclass
class Record:
    inputs: tuple
    output: Tensor
    backward: Callable  # g_out -> tuple of input grads (None where not needed)


@dataclass
class Tape:
    """Ordered log of differentiable operations, in execution order."""

    records: list = field(default_factory=list)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.records)


_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape():
    stack = _stack()
    return stack[-1] if stack else None


def _result(data, inputs, backward):
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    tape = current_tape()
    if needs and tape is not None:
        tape.records.append(Record(tuple(inputs), out, backward))
    return out


def backward(loss: Tensor, tape: Tape):
    """Propagate d(loss)/d(x) to every requires_grad tensor recorded on ``tape``.

    Gradients accumulate into ``.grad`` (summed over all uses of a tensor).
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(r.output is loss for r in tape.records):
        raise ValueError("loss was not produced on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    touched = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        out = rec.output
        out.grad = g if out.grad is None else out.grad + g
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                touched[key] = t
    # anything left in grads is a leaf (never an output of a later-recorded op)
    for key, g in grads.items():
        t = touched[key]
        t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------- helpers


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` over broadcast leading (or size-1) axes."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _check_suffix(a, b, op):
    short, long_ = (a, b) if a.ndim <= b.ndim else (b, a)
    if long_.shape[long_.ndim - short.ndim:] != short.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ beyond leading dimensions")


# --------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a, getattr(b, "dtype", None)), as_tensor(b, getattr(a, "dtype", None))
    _check_suffix(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a, getattr(b, "dtype", None)), as_tensor(b, getattr(a, "dtype", None))
    _check_suffix(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a, getattr(b, "dtype", None)), as_tensor(b, getattr(a, "dtype", None))
    _check_suffix(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def scale(a, c: float):
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a):
    keep = a.data > 0

    return _result(np.where(keep, a.data, 0).astype(a.dtype), (a,), lambda g: (g * keep,))


def masked_fill(a, mask, value: float):
    """Replace entries where ``mask`` is False by ``value``; mask broadcasts numpy-style."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, a.data.dtype.type(value))

    def bw(g):
        return (_unbroadcast(np.where(mask, g, 0).astype(g.dtype), a.shape),)

    return _result(out, (a,), bw)


def sum_all(a):
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a):
    n = a.data.size
    return _result(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                   lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


# ----------------------------------------------------------------- shapes


def reshape(a, shape):
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if not axes:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------- algebra


def matmul(a, b):
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``.

    Leading batch dimensions broadcast; the backward pass sums gradients back
    over any dimension that was broadcast.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions not broadcastable: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), bw)


def embedding(weight, ids):
    """Row lookup ``weight[ids]``; backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"id out of range for table with {weight.shape[0]} rows")

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _result(weight.data[ids], (weight,), bw)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), bw)


def log_softmax_array(z, axis=-1):
    """Plain numpy log-softmax, for decoding and scoring outside the tape."""
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps=1e-5):
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _result(out.astype(x.dtype), (x, gain, bias), bw)


def cross_entropy(logits, targets, label_smoothing=0.0, ignore_id=-100):
    """Mean smoothed negative log-likelihood over the non-ignored rows.

    Per row: ``(1 - ls) * -log p[target] + ls * mean_v(-log p[v])``.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, V] logits, got {logits.shape}")
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError("label_smoothing must be in [0, 1)")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"{targets.shape[0]} targets for {n} rows")
    keep = targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("every row is ignored; loss undefined")
    if np.any((targets[keep] < 0) | (targets[keep] >= v)):
        raise IndexError("target id out of range")

    logp = log_softmax_array(logits.data, axis=-1)
    rows = np.nonzero(keep)[0]
    nll = -logp[rows, targets[rows]]
    smooth = -logp[rows].mean(axis=-1)
    ls = label_smoothing
    loss = ((1.0 - ls) * nll + ls * smooth).sum() / count

    def bw(g):
        p = np.exp(logp)
        grad = np.zeros_like(logits.data)
        # d/dz of (1-ls)*nll + ls*smooth = p - (1-ls)*onehot - ls/V
        grad[rows] = p[rows] - ls / v
        grad[rows, targets[rows]] -= 1.0 - ls
        return (grad * (g / count),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def dropout(x, p, rng, training=True):
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        return x
    keep = rng.uniform(x.shape) >= p
    factor = x.dtype.type(1.0 / (1.0 - p))
    m = keep * factor

    return _result(x.data * m, (x,), lambda g: (g * m,))


# --------------------------------------------------------------------- rng

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


class CounterRNG:
    """Counter-based generator: output ``i`` is ``splitmix64(key + i * golden)``.

    The whole state is ``(seed, counter)``, so it serializes trivially and
    produces the same stream on every platform.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed)
        self.counter = int(counter)
        self._key = _splitmix64(np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]

    def state(self):
        return {"seed": self.seed, "counter": self.counter}

    @classmethod
    def from_state(cls, state):
        return cls(state["seed"], state["counter"])

    def bits(self, n: int):
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return _splitmix64(self._key + idx * _GAMMA)

    def uniform(self, shape):
        """Floats in [0, 1) with 53 random bits each."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return u.reshape(shape)

    def normal(self, shape, std=1.0):
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        u1 = 1.0 - self.uniform((half,))  # (0, 1], keeps log finite
        u2 = self.uniform((half,))
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return (z * std).reshape(shape)

    def permutation(self, n: int):
        return np.argsort(self.uniform((n,)), kind="stable")


def parameters_finite(params: Sequence[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
