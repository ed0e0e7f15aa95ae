"""Shared test oracles: finite differences and scalar reference recursions."""

from __future__ import annotations

import numpy as np


def finite_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_close_rel(actual: np.ndarray, expected: np.ndarray,
                     rel: float = 1e-4) -> None:
    """|actual - expected| <= rel * max(1, |expected|), elementwise."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    tol = rel * np.maximum(1.0, np.abs(expected))
    err = np.abs(actual - expected)
    assert np.all(err <= tol), (
        f"max abs err {err.max():.3e} exceeds tolerance "
        f"(worst at {np.unravel_index(err.argmax(), err.shape)})")


def adam_scalar_oracle(grad_fn, w0: float, lr: float, steps: int,
                       beta1: float = 0.9, beta2: float = 0.999,
                       eps: float = 1e-8) -> float:
    """Reference Adam recursion on a scalar parameter."""
    w, m, v = w0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w -= lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return w
