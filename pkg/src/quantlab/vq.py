"""Vector quantization baseline: learned codebook, nearest-neighbor lookup with
straight-through gradients, and the auxiliary machinery a VQ bottleneck needs
to stay alive (commitment/codebook/entropy losses, EMA updates, splitting of
dead codes Linde-Buzo-Gray style).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ste

CHECKPOINT_MAGIC = b"VQCB"
LAPLACE_EPS = 1e-5


@dataclass
class VqLossWeights:
    """Weights for the three auxiliary losses.

    ``codebook_weight`` and EMA updates are alternative ways to train the
    codebook; runs using EMA should set it to 0.  The entropy term pushes
    assignment frequencies toward uniform.
    """

    commitment_weight: float = 0.25
    codebook_weight: float = 1.0
    entropy_weight: float = 0.1

    def __post_init__(self):
        if min(self.commitment_weight, self.codebook_weight, self.entropy_weight) < 0:
            raise ValueError("loss weights must be nonnegative")


class VqCodebook:
    """Learnable |C| x d codebook plus EMA and usage statistics.

    ``vectors`` is a Tensor so the codebook loss can train it by gradient;
    EMA mode instead rewrites ``vectors.data`` between steps.  ``usage_counts``
    accumulates assignments since the last reset and feeds splitting.
    Lookups are pure given a snapshot; updates (EMA, splitting, usage
    recording) mutate the codebook and must be serialized by the caller.
    """

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise ValueError(f"codebook must be (|C|, d) with both >= 1, got {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("codebook contains non-finite values")
        self.vectors = Tensor(vectors, requires_grad=True)
        # Seeding the EMA stats with the initial vectors (count 1) keeps
        # unassigned codes in place instead of decaying them toward zero.
        self.ema_counts = np.ones(vectors.shape[0], dtype=np.float64)
        self.ema_sums = vectors.copy()
        self.usage_counts = np.zeros(vectors.shape[0], dtype=np.uint64)

    @classmethod
    def initialize(cls, codebook_size: int, dim: int, rng: np.random.Generator) -> "VqCodebook":
        """Uniform init on [-1/sqrt(d), 1/sqrt(d)], scale-matched to unit-ish latents."""
        scale = 1.0 / np.sqrt(dim)
        return cls(rng.uniform(-scale, scale, size=(codebook_size, dim)))

    @property
    def codebook_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def parameter_count(self) -> int:
        return self.codebook_size * self.dim

    def record_usage(self, assignments: np.ndarray) -> None:
        counts = np.bincount(np.asarray(assignments).reshape(-1),
                             minlength=self.codebook_size)
        self.usage_counts += counts.astype(np.uint64)

    def reset_usage(self) -> None:
        self.usage_counts[:] = 0

    # ------------------------------------------------------------------
    # checkpoint format: magic "VQCB", u64 |C|, u64 d (little-endian),
    # then row-major float64 vectors.

    def to_bytes(self) -> bytes:
        header = CHECKPOINT_MAGIC + np.array(
            [self.codebook_size, self.dim], dtype="<u8").tobytes()
        return header + self.vectors.data.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VqCodebook":
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a codebook checkpoint (bad magic)")
        n, d = np.frombuffer(blob[4:20], dtype="<u8")
        vectors = np.frombuffer(blob[20:], dtype="<f8")
        if vectors.size != int(n) * int(d):
            raise ValueError(
                f"checkpoint payload has {vectors.size} floats, expected {int(n) * int(d)}")
        return cls(vectors.reshape(int(n), int(d)).copy())

    def save(self, path) -> None:
        from .fileio import atomic_write_bytes
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "VqCodebook":
        from pathlib import Path
        return cls.from_bytes(Path(path).read_bytes())


def nearest_codes(z: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Index of the Euclidean nearest codeword for each (..., d) vector."""
    flat = z.reshape(-1, vectors.shape[1])
    d2 = (
        (flat * flat).sum(axis=1, keepdims=True)
        - 2.0 * flat @ vectors.T
        + (vectors * vectors).sum(axis=1)
    )
    return d2.argmin(axis=1).astype(np.uint32).reshape(z.shape[:-1])


def vq_quantize(z, cb: VqCodebook):
    """Replace each vector with its nearest codeword.

    Returns ``(quantized, indices)``.  The forward output is exactly a row of
    the codebook; the gradient w.r.t. ``z`` is the identity (straight-through).
    """
    if cb.codebook_size < 1:
        raise ValueError("empty codebook")
    data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if data.shape[-1] != cb.dim:
        raise ValueError(
            f"last dimension must be {cb.dim} to match the codebook, got {data.shape}")
    idx = nearest_codes(data, cb.vectors.data)
    quantized = cb.vectors.data[idx]
    if isinstance(z, Tensor):
        return ste(z, quantized), idx
    return quantized, idx


def vq_losses(z: Tensor, zq: Tensor, assignments: np.ndarray, cb: VqCodebook,
              weights: VqLossWeights, tau: float = 1.0) -> Tensor:
    """Auxiliary VQ loss: commitment + codebook + entropy terms, as one scalar.

    commitment  pulls encoder outputs toward their (frozen) codewords;
    codebook    pulls the selected codewords toward the (frozen) encoder outputs;
    entropy     mean per-sample assignment entropy minus entropy of the mean
                soft assignment, computed from softmax(-||z-c||^2 / tau).
    """
    total = Tensor(0.0)
    if weights.commitment_weight > 0:
        diff = z - zq.stop_gradient()
        total = total + (diff * diff).mean() * weights.commitment_weight
    if weights.codebook_weight > 0:
        rows = cb.vectors.take_rows(np.asarray(assignments, dtype=np.int64))
        diff = rows - z.stop_gradient()
        total = total + (diff * diff).mean() * weights.codebook_weight
    if weights.entropy_weight > 0:
        flat = z.reshape(-1, cb.dim)
        z2 = (flat * flat).sum(axis=-1, keepdims=True)
        c2 = (cb.vectors * cb.vectors).sum(axis=-1)
        cross = flat @ cb.vectors.T
        d2 = z2 - cross * 2.0 + c2
        affinities = (d2 * (-1.0 / tau)).softmax(axis=-1)
        # The 1e-30 floor keeps 0 * log(0) out of fully saturated affinities.
        log_aff = (affinities + 1e-30).log()
        sample_entropy = -(affinities * log_aff).sum(axis=-1).mean()
        mean_aff = affinities.mean(axis=0)
        mean_entropy = -(mean_aff * (mean_aff + 1e-30).log()).sum()
        total = total + (sample_entropy - mean_entropy) * weights.entropy_weight
    return total


def ema_update(cb: VqCodebook, z: np.ndarray, assignments: np.ndarray,
               decay: float, laplace_eps: float = LAPLACE_EPS) -> VqCodebook:
    """Exponential-moving-average codebook update (in place).

    counts <- decay * counts + (1 - decay) * batch counts, likewise for the
    per-code sums; vectors become the smoothed means sums / (counts + eps).
    """
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must be in [0, 1), got {decay}")
    flat = np.asarray(z, dtype=np.float64).reshape(-1, cb.dim)
    idx = np.asarray(assignments).reshape(-1)
    counts = np.bincount(idx, minlength=cb.codebook_size).astype(np.float64)
    sums = np.zeros_like(cb.ema_sums)
    np.add.at(sums, idx, flat)
    cb.ema_counts = decay * cb.ema_counts + (1.0 - decay) * counts
    cb.ema_sums = decay * cb.ema_sums + (1.0 - decay) * sums
    cb.vectors.data = cb.ema_sums / (cb.ema_counts + laplace_eps)[:, None]
    return cb


def split_codebook(cb: VqCodebook, usage_counts: np.ndarray | None = None,
                   noise_scale: float | None = None,
                   rng: np.random.Generator | None = None) -> VqCodebook:
    """Replace every unused code with a noisy copy of the most-used one.

    The donor is split: it keeps its slot but also receives independent noise,
    and its usage mass is halved so successive replacements pick donors
    greedily.  EMA statistics are split alongside to stay consistent.
    """
    if usage_counts is None:
        usage_counts = cb.usage_counts
    usage = np.asarray(usage_counts, dtype=np.float64).copy()
    if usage.shape != (cb.codebook_size,):
        raise ValueError(f"usage_counts must have shape ({cb.codebook_size},)")
    if not np.any(usage > 0):
        raise ValueError("cannot split: every code is unused")
    if noise_scale is None:
        norms = np.linalg.norm(cb.vectors.data, axis=1)
        noise_scale = 1e-3 * float(norms.mean())
    if rng is None:
        rng = np.random.default_rng(0)

    vectors = cb.vectors.data
    for dead in np.flatnonzero(usage == 0):
        donor = int(usage.argmax())
        vectors[dead] = vectors[donor] + rng.normal(0.0, noise_scale, size=cb.dim)
        vectors[donor] = vectors[donor] + rng.normal(0.0, noise_scale, size=cb.dim)
        usage[dead] = usage[donor] / 2.0
        usage[donor] /= 2.0
        cb.ema_counts[dead] = cb.ema_counts[donor] / 2.0
        cb.ema_counts[donor] /= 2.0
        cb.ema_sums[dead] = cb.ema_sums[donor] / 2.0
        cb.ema_sums[donor] /= 2.0
    return cb
