"""Dense math shared by every module: stable activations, RMS, seeded init.

Everything is float64. The RNG is numpy's PCG64 behind ``default_rng`` so a
seed pins an identical stream on every platform.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; same seed, same stream."""
    return np.random.default_rng(seed)


def matvec(w: Array, x: Array) -> Array:
    if w.ndim != 2 or x.ndim != 1:
        raise ValueError(f"matvec expects matrix and vector, got {w.ndim}-d and {x.ndim}-d")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix is {w.shape}, vector has length {x.shape[0]}")
    return w @ x


def sigmoid(v: Array) -> Array:
    """Elementwise logistic, branch-split so neither tail overflows exp."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def silu(v: Array) -> Array:
    return v * sigmoid(v)


def silu_grad(v: Array) -> Array:
    """d/dv [v * sigmoid(v)]."""
    s = sigmoid(v)
    return s * (1.0 + v * (1.0 - s))


def softmax(v: Array) -> Array:
    """Max-subtracted softmax; sums to 1 within 1e-12 for any finite input."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def rms(v: Array) -> float:
    """Root mean square; 0 iff v is the zero vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("rms of empty vector")
    return float(np.sqrt(np.mean(v * v)))


def normal_init(rng: np.random.Generator, rows: int, cols: int, sigma: float) -> Array:
    """i.i.d. normal(0, sigma) matrix; sigma=0 yields exact zeros."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return np.zeros((rows, cols))
    return rng.normal(0.0, sigma, size=(rows, cols))
