"""Activations, losses and a central-difference gradient oracle.

Matrices and vectors are plain float64 numpy arrays. Every function here
is pure.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit

PROB_FLOOR = 1e-12


def sigmoid(x):
    """Logistic sigmoid 1 / (1 + exp(-x)), overflow-free for either sign."""
    out = expit(np.asarray(x, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def softmax(logits):
    """Softmax over the last axis with max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValueError("empty logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.shape[-1]:
        raise IndexError(f"target {target} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[target], PROB_FLOOR)))


def finite_diff_grad(f: Callable[[np.ndarray], float], params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``f`` receives a fresh copy of the parameter vector for every
    evaluation, so it may keep references without side effects.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.zeros_like(p)
    for i in range(p.size):
        hi = p.copy()
        hi[i] += eps
        lo = p.copy()
        lo[i] -= eps
        f_hi = f(hi)
        f_lo = f(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_hi - f_lo) / (2.0 * eps)
    return grad


def relative_error(a, b) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|), zero where both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(b))
    out = np.zeros(np.broadcast(a, b).shape)
    nz = denom > 0
    out[nz] = np.abs(a - b)[nz] / denom[nz]
    return out
