"""Finite scalar quantization: bound each channel, round with straight-through
gradients, and renormalize so every code lives on a fixed grid in [-1, 1]^d.

The implied codebook is the product of the per-channel level sets; codes map
to integer indices through a mixed-radix expansion (``basis``), so no
codebook tensor is ever stored or learned.

Note on ``shift``: the recentering constant for even level counts is
tan(offset / half_l).  An arctanh would make bound(0) land exactly on a grid
midpoint; the two nearly coincide for these small arguments, and tan is the
conventional choice for this quantizer, so tan it is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .autodiff import Tensor, round_half_away, round_ste

EPS = 1e-3

# Recommended level configurations per target codebook size.  The 2^12 entry
# is [7,5,5,5,5] (product 4375, within 7% of 4096); the 4-channel variant
# sometimes quoted has product 875 and misses every reasonable target.
RECOMMENDED_LEVELS: dict[int, tuple[int, ...]] = {
    2 ** 4: (5, 3),
    2 ** 6: (8, 8),
    2 ** 8: (8, 6, 5),
    2 ** 9: (8, 8, 8),
    2 ** 10: (8, 5, 5, 5),
    2 ** 11: (8, 8, 6, 5),
    2 ** 12: (7, 5, 5, 5, 5),
    2 ** 14: (8, 8, 8, 6, 5),
    2 ** 16: (8, 8, 8, 5, 5, 5),
}


@dataclass(frozen=True)
class LevelsSpec:
    """Per-channel level counts plus every derived constant the ops need.

    ``basis`` holds mixed-radix place values (basis[0] = 1, basis[i] is the
    product of all earlier levels).  ``half_l`` and ``offset`` shape the
    bounding function; ``shift`` recenters its argument so that even level
    counts get an asymmetric squish.  ``half_width`` = floor(L/2) is the
    normalization divisor that puts codes on a grid inside [-1, 1].
    """

    levels: tuple[int, ...]
    eps: float = EPS
    basis: np.ndarray = field(init=False, repr=False, compare=False)
    half_l: np.ndarray = field(init=False, repr=False, compare=False)
    offset: np.ndarray = field(init=False, repr=False, compare=False)
    shift: np.ndarray = field(init=False, repr=False, compare=False)
    half_width: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        levels = tuple(int(l) for l in self.levels)
        if len(levels) == 0:
            raise ValueError("levels must be non-empty")
        if any(l < 2 for l in levels):
            raise ValueError(f"every level must be >= 2, got {levels}")
        size = 1
        for l in levels:
            size *= l
        if size > 0xFFFFFFFF:
            raise ValueError(f"codebook size {size} does not fit in uint32")
        object.__setattr__(self, "levels", levels)
        lv = np.asarray(levels, dtype=np.int64)
        basis = np.concatenate(([1], np.cumprod(lv[:-1]))).astype(np.uint64)
        half_l = (lv - 1) * (1.0 - self.eps) / 2.0
        offset = np.where(lv % 2 == 0, 0.5, 0.0)
        shift = np.tan(offset / half_l)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "half_l", half_l)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "half_width", lv // 2)

    @property
    def d(self) -> int:
        return len(self.levels)

    @property
    def codebook_size(self) -> int:
        return int(np.prod(np.asarray(self.levels, dtype=np.uint64)))

    # Plain-text form used by config files and CLI flags, e.g. "8,5,5,5".
    @classmethod
    def from_text(cls, text: str) -> "LevelsSpec":
        try:
            levels = tuple(int(part) for part in text.split(","))
        except ValueError:
            raise ValueError(f"cannot parse levels from {text!r}") from None
        return cls(levels)

    def to_text(self) -> str:
        return ",".join(str(l) for l in self.levels)


def _check_last_dim(shape: tuple, spec: LevelsSpec) -> None:
    if len(shape) == 0 or shape[-1] != spec.d:
        raise ValueError(
            f"last dimension must be {spec.d} (levels {spec.levels}), got shape {shape}")


def bound(z, spec: LevelsSpec):
    """Squash ``z`` channelwise into the open rounding range of the grid.

    Computes tanh(z + shift) * half_l - offset.  Accepts a Tensor (gradient
    flows) or a plain ndarray (fast evaluation path); both produce identical
    forward values.
    """
    if isinstance(z, Tensor):
        _check_last_dim(z.shape, spec)
        return (z + Tensor(spec.shift)).tanh() * Tensor(spec.half_l) - Tensor(spec.offset)
    z = np.asarray(z, dtype=np.float64)
    _check_last_dim(z.shape, spec)
    return np.tanh(z + spec.shift) * spec.half_l - spec.offset


def quantize(z, spec: LevelsSpec):
    """Bound, round (straight-through), and renormalize onto the code grid.

    Forward values land on {(k - half_width) / half_width}; the gradient
    w.r.t. ``z`` is exactly the gradient of ``bound(z) / half_width``.
    """
    hw = spec.half_width.astype(np.float64)
    if isinstance(z, Tensor):
        return round_ste(bound(z, spec)) / Tensor(hw)
    return round_half_away(bound(z, spec)) / hw


def codes_to_indexes(codes, spec: LevelsSpec, tol: float = 1e-9) -> np.ndarray:
    """Map grid codes (..., d) to integer indices via the mixed-radix basis.

    Entries must sit on the normalized grid to within ``tol`` (in code units);
    anything further off raises.
    """
    codes = np.asarray(codes, dtype=np.float64)
    _check_last_dim(codes.shape, spec)
    hw = spec.half_width.astype(np.float64)
    digits_f = codes * hw + hw
    digits = round_half_away(digits_f)
    err = np.abs(digits_f - digits) / hw
    if np.any(err > tol):
        worst = np.unravel_index(np.argmax(err), err.shape)
        raise ValueError(
            f"code entry {codes[worst]!r} at {worst} is off-grid "
            f"(deviation {err[worst]:.3e} > tol {tol})")
    lv = np.asarray(spec.levels, dtype=np.int64)
    if np.any(digits < 0) or np.any(digits >= lv):
        raise ValueError("code entry outside the level range")
    idx = (digits.astype(np.uint64) * spec.basis).sum(axis=-1)
    return idx.astype(np.uint32)


def indexes_to_codes(indexes, spec: LevelsSpec) -> np.ndarray:
    """Inverse of :func:`codes_to_indexes`: indices (...,) to codes (..., d)."""
    idx = np.asarray(indexes)
    if np.any(idx < 0) or np.any(idx.astype(np.uint64) >= spec.codebook_size):
        raise ValueError(
            f"index out of range for codebook of size {spec.codebook_size}")
    idx = idx.astype(np.uint64)[..., np.newaxis]
    lv = np.asarray(spec.levels, dtype=np.uint64)
    digits = (idx // spec.basis) % lv
    hw = spec.half_width.astype(np.float64)
    return (digits.astype(np.float64) - hw) / hw


def implicit_codebook(spec: LevelsSpec, max_size: int = 2 ** 16) -> np.ndarray:
    """Enumerate all codes, shape (codebook_size, d), in index order."""
    size = spec.codebook_size
    if size > max_size:
        raise ValueError(
            f"codebook of size {size} exceeds enumeration guard {max_size}")
    return indexes_to_codes(np.arange(size, dtype=np.uint64), spec)


def recommend_levels(target_size: int) -> LevelsSpec:
    """Level configuration for a target codebook size.

    Tabulated power-of-two targets return the standard configuration; other
    targets fall back to a greedy factorization that keeps every level >= 5
    (smaller levels degrade quality) and lands within 10% of the target.
    """
    target_size = int(target_size)
    if target_size in RECOMMENDED_LEVELS:
        return LevelsSpec(RECOMMENDED_LEVELS[target_size])
    if target_size < 25:
        raise ValueError(
            f"no configuration with at least two channels of >= 5 levels "
            f"reaches target {target_size}; smallest supported target is 25")

    best: tuple[float, tuple[int, ...]] | None = None

    def consider(levels: tuple[int, ...]):
        nonlocal best
        prod = 1
        for l in levels:
            prod *= l
        err = abs(prod - target_size) / target_size
        key = (err, len(levels), levels)
        if best is None or key < (best[0], len(best[1]), best[1]):
            best = (err, levels)

    # Preferred shape: channels drawn from {8,7,6,5}, largest first.
    def search(prefix: tuple[int, ...], lo: int):
        prod = 1
        for l in prefix:
            prod *= l
        if len(prefix) >= 2:
            consider(prefix)
        if len(prefix) == 8 or prod > target_size * 2:
            return
        for l in range(lo, 4, -1):
            search(prefix + (l,), l)

    search((), 8)
    if best is not None and best[0] <= 0.10:
        return LevelsSpec(best[1])

    # Targets in the gaps between {5..8}-products: two channels, levels >= 5.
    for a in range(5, int(np.sqrt(target_size)) + 2):
        b = max(5, int(round(target_size / a)))
        consider(tuple(sorted((a, b), reverse=True)))
    if best is None or best[0] > 0.10:
        raise ValueError(f"no level configuration within 10% of {target_size}")
    return LevelsSpec(best[1])
