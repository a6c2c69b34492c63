"""Central finite-difference checks for tape gradients (run in float64)."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(a, b):
    """``||a - b|| / max(||a||, ||b||)``, zero when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(fn, tensors, h=1e-5, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of each tensor.

    ``indices`` optionally maps tensor position -> list of flat indices to
    probe; unprobed entries are reported as NaN.
    """
    out = []
    for pos, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        g = np.full(flat.shape, np.nan)
        probe = range(flat.size) if indices is None or pos not in indices else indices[pos]
        for i in probe:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            g[i] = (fp - fm) / (2 * h)
        out.append(g.reshape(t.shape))
    return out


def tape_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    return [np.zeros(t.shape) if t.grad is None else np.array(t.grad, dtype=np.float64) for t in tensors]


def check_gradients(fn, tensors: list[Tensor], h=1e-5, max_probes=None, seed=0):
    """Return the per-tensor relative error between tape and numeric gradients.

    With ``max_probes`` set, tensors larger than that are checked on a seeded
    random subset of entries.
    """
    analytic = tape_grad(fn, tensors)
    indices = None
    if max_probes is not None:
        rs = np.random.default_rng(seed)
        indices = {}
        for pos, t in enumerate(tensors):
            if t.data.size > max_probes:
                indices[pos] = sorted(rs.choice(t.data.size, size=max_probes, replace=False).tolist())
    numeric = numerical_grad(fn, tensors, h=h, indices=indices)
    errors = []
    for a, n in zip(analytic, numeric):
        sel = ~np.isnan(n)
        errors.append(relative_error(a[sel], n[sel]))
    return errors
