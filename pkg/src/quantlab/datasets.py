"""Synthetic datasets standing in for image corpora at desk scale.

Every generator is deterministic given its seed and emits flattened
``patch x patch`` samples in [-1, 1].  ``dataset_grids`` additionally builds
multi-patch fields so token grids carry spatial correlation for the
neighborhood model to exploit.
"""

from __future__ import annotations

import numpy as np

KINDS = ("gaussian-mixture", "synthetic-textures", "binary-shapes")


def make_dataset(kind: str, n: int, seed: int, patch: int = 8,
                 n_components: int = 8, variance: float = 0.05) -> np.ndarray:
    """n samples of the requested kind, shape (n, patch*patch), in [-1, 1]."""
    rng = np.random.default_rng(seed)
    dim = patch * patch
    if kind == "gaussian-mixture":
        means = rng.uniform(-0.8, 0.8, size=(n_components, dim))
        comps = rng.integers(0, n_components, size=n)
        x = means[comps] + rng.normal(0.0, np.sqrt(variance), size=(n, dim))
        return np.clip(x, -1.0, 1.0)
    if kind == "synthetic-textures":
        return _texture_patches(rng, n, patch)
    if kind == "binary-shapes":
        return _shape_patches(rng, n, patch)
    raise ValueError(f"unknown dataset kind {kind!r}; choose from {KINDS}")


def _texture_params(rng: np.random.Generator, n: int):
    """Two superposed sinusoids per sample: 8 independent factors, so the
    sample manifold has enough intrinsic dimension to occupy codebooks with
    up to ~6 quantizer channels."""
    fx = rng.uniform(0.5, 3.0, size=(n, 2))
    fy = rng.uniform(0.5, 3.0, size=(n, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, 2))
    weight = rng.uniform(0.15, 0.85, size=n)
    total = rng.uniform(0.5, 1.0, size=n)
    amp = np.stack([weight * total, (1.0 - weight) * total], axis=1)
    return fx, fy, phase, amp


def _texture_field(fx, fy, phase, amp, ys, xs, patch: int) -> np.ndarray:
    """Sum of sinusoids amp_k * sin(2*pi*(fx_k*y + fy_k*x)/patch + phase_k);
    component amplitudes sum to at most 1, keeping pixels in [-1, 1]."""
    out = 0.0
    for k in range(fx.shape[-1]):
        arg = 2.0 * np.pi * (fx[..., k:k + 1, None] * ys[None, :, None]
                             + fy[..., k:k + 1, None] * xs[None, None, :]) / patch
        out = out + amp[..., k:k + 1, None] * np.sin(arg + phase[..., k:k + 1, None])
    return out


def _texture_patches(rng: np.random.Generator, n: int, patch: int) -> np.ndarray:
    fx, fy, phase, amp = _texture_params(rng, n)
    coords = np.arange(patch, dtype=np.float64)
    field = _texture_field(fx, fy, phase, amp, coords, coords, patch)
    return field.reshape(n, patch * patch)


def _shape_patches(rng: np.random.Generator, n: int, patch: int) -> np.ndarray:
    out = np.full((n, patch, patch), -1.0)
    y0 = rng.integers(0, patch - 1, size=n)
    x0 = rng.integers(0, patch - 1, size=n)
    hs = rng.integers(2, patch, size=n)
    ws = rng.integers(2, patch, size=n)
    for i in range(n):
        out[i, y0[i]:y0[i] + hs[i], x0[i]:x0[i] + ws[i]] = 1.0
    return out.reshape(n, patch * patch)


def dataset_grids(kind: str, n_grids: int, grid_h: int, grid_w: int,
                  seed: int, patch: int = 8) -> np.ndarray:
    """Fields of grid_h x grid_w patches, shape (n_grids, grid_h*grid_w, patch^2).

    Texture fields share one sinusoid across the whole field, so neighboring
    patches are correlated; the other kinds tile independent patches.
    """
    if kind == "synthetic-textures":
        rng = np.random.default_rng(seed)
        fx, fy, phase, amp = _texture_params(rng, n_grids)
        ys = np.arange(grid_h * patch, dtype=np.float64)
        xs = np.arange(grid_w * patch, dtype=np.float64)
        field = _texture_field(fx, fy, phase, amp, ys, xs, patch)
        field = field.reshape(n_grids, grid_h, patch, grid_w, patch)
        return field.transpose(0, 1, 3, 2, 4).reshape(
            n_grids, grid_h * grid_w, patch * patch)
    flat = make_dataset(kind, n_grids * grid_h * grid_w, seed, patch=patch)
    return flat.reshape(n_grids, grid_h * grid_w, patch * patch)
