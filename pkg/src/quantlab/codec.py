"""Masking schedules, CFG logit combination, and the lossless token-grid codec.

Any model that predicts a distribution over codes can compress a token grid:
walk a deterministic schedule that gradually uncovers positions, and entropy-
code each token under the model's prediction given what is already revealed.
The same cosine schedule drives confidence-based masked sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .rangecoder import CodecError, FREQ_TOTAL, RangeDecoder, RangeEncoder, quantize_freqs

BITSTREAM_MAGIC = b"FSQC"
BITSTREAM_VERSION = 1

# Lower bound on the training masking ratio; guarantees at least 0.45 * S
# masked tokens per step, which stabilizes masked-model training.
R_MIN = 1.0 - math.acos(0.45) * 2.0 / math.pi


@dataclass
class TokenGrid:
    """2-D grid of integer code indices, row-major."""

    height: int
    width: int
    tokens: np.ndarray

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid dims must be positive, got {self.height}x{self.width}")
        tokens = np.asarray(self.tokens)
        if tokens.size != self.height * self.width:
            raise ValueError(
                f"expected {self.height * self.width} tokens, got {tokens.size}")
        if tokens.size and int(tokens.min()) < 0:
            raise ValueError("tokens must be unsigned")
        self.tokens = tokens.reshape(-1).astype(np.uint32)

    def to_2d(self) -> np.ndarray:
        return self.tokens.reshape(self.height, self.width)

    def to_bytes(self) -> bytes:
        head = np.array([self.height, self.width], dtype="<u4").tobytes()
        return head + self.tokens.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TokenGrid":
        if len(blob) < 8:
            raise ValueError("token grid blob too short")
        h, w = (int(v) for v in np.frombuffer(blob[:8], dtype="<u4"))
        tokens = np.frombuffer(blob[8:], dtype="<u4")
        if tokens.size != h * w:
            raise ValueError(f"token grid payload has {tokens.size} tokens, expected {h * w}")
        return cls(h, w, tokens.copy())


@dataclass
class Bitstream:
    """Compressed token grid: header fields plus range-coded payload."""

    token_count: int
    codebook_size: int
    schedule_seed: int
    payload: bytes

    def to_bytes(self) -> bytes:
        head = BITSTREAM_MAGIC + bytes([BITSTREAM_VERSION]) + np.array(
            [self.token_count, self.codebook_size, self.schedule_seed],
            dtype="<u4").tobytes()
        return head + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Bitstream":
        if len(blob) < 17 or blob[:4] != BITSTREAM_MAGIC:
            raise CodecError("not a bitstream (bad magic or truncated header)")
        if blob[4] != BITSTREAM_VERSION:
            raise CodecError(f"unsupported bitstream version {blob[4]}")
        count, size, seed = (int(v) for v in np.frombuffer(blob[5:17], dtype="<u4"))
        return cls(count, size, seed, blob[17:])

    @property
    def bits(self) -> int:
        return 8 * len(self.payload)


@dataclass
class MaskSchedule:
    """Fixed ordered partition of grid positions into reveal groups."""

    height: int
    width: int
    groups: list
    seed: int
    r_min: float = R_MIN

    @property
    def sequence_length(self) -> int:
        return self.height * self.width

    def __post_init__(self):
        if not 0.0 <= self.r_min < 1.0:
            raise ValueError(f"r_min must be in [0, 1), got {self.r_min}")
        flat = np.concatenate([np.asarray(g, dtype=np.int64) for g in self.groups]) \
            if self.groups else np.array([], dtype=np.int64)
        if sorted(flat.tolist()) != list(range(self.sequence_length)):
            raise ValueError("groups must partition the grid positions exactly")


def cosine_mask_count(r: float, s: int) -> int:
    """Number of masked tokens at ratio r: ceil(cos(pi/2 * (1 - r)) * S).

    Evaluated as sin(pi/2 * r), which is identical and exact at r = 0 and 1.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"masking ratio must be in [0, 1], got {r}")
    if s < 1:
        raise ValueError(f"sequence length must be >= 1, got {s}")
    return int(math.ceil(math.sin(math.pi / 2.0 * r) * s))


def sample_masking_ratio(rng: np.random.Generator, r_min: float = R_MIN) -> float:
    """Draw r ~ Uniform[r_min, 1]; with the default bound, N_M >= 0.45 * S."""
    return float(rng.uniform(r_min, 1.0))


def _reveal_counts(s: int, n_steps: int) -> list[int]:
    """Tokens to uncover at each of n_steps, following the cosine schedule."""
    masked = [cosine_mask_count(1.0 - k / n_steps, s) for k in range(n_steps + 1)]
    return [masked[k - 1] - masked[k] for k in range(1, n_steps + 1)]


def deterministic_schedule(height: int, width: int, n_groups: int) -> MaskSchedule:
    """Input-independent reveal schedule with cosine-sized groups.

    Positions are ordered by a fixed permutation seeded from (H, W, n_groups),
    so the same arguments always give the same schedule.
    """
    s = height * width
    if n_groups < 1 or n_groups > s:
        raise ValueError(f"n_groups must be in [1, {s}], got {n_groups}")
    seed = (height * 0x9E3779B1 ^ width * 0x85EBCA77 ^ n_groups * 0xC2B2AE3D) & 0xFFFFFFFF
    perm = np.random.default_rng(seed).permutation(s)
    groups = []
    start = 0
    for count in _reveal_counts(s, n_groups):
        groups.append(perm[start:start + count].copy())
        start += count
    return MaskSchedule(height, width, groups, seed)


def cfg_logits(cond_logits, null_logits, alpha: float):
    """Classifier-free guidance: cond + alpha * (cond - null), elementwise."""
    if isinstance(cond_logits, Tensor) or isinstance(null_logits, Tensor):
        lc = cond_logits if isinstance(cond_logits, Tensor) else Tensor(cond_logits)
        ln = null_logits if isinstance(null_logits, Tensor) else Tensor(null_logits)
        if lc.shape != ln.shape:
            raise ValueError(f"logit shapes differ: {lc.shape} vs {ln.shape}")
        return lc + (lc - ln) * alpha
    lc = np.asarray(cond_logits, dtype=np.float64)
    ln = np.asarray(null_logits, dtype=np.float64)
    if lc.shape != ln.shape:
        raise ValueError(f"logit shapes differ: {lc.shape} vs {ln.shape}")
    return lc + alpha * (lc - ln)


def _softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_grid(grid: TokenGrid, model, sched: MaskSchedule) -> None:
    if (grid.height, grid.width) != (sched.height, sched.width):
        raise CodecError(
            f"grid is {grid.height}x{grid.width} but schedule covers "
            f"{sched.height}x{sched.width}")
    if grid.tokens.size and int(grid.tokens.max()) >= model.codebook_size:
        raise CodecError(
            f"token {int(grid.tokens.max())} out of range for |C|={model.codebook_size}")
    if model.codebook_size >= FREQ_TOTAL:
        raise CodecError(f"|C|={model.codebook_size} too large for 16-bit frequencies")


def compress(grid: TokenGrid, model, sched: MaskSchedule) -> Bitstream:
    """Losslessly encode a token grid under the model, following the schedule."""
    _check_grid(grid, model, sched)
    tokens = grid.tokens.astype(np.int64)
    masked = np.full(sched.sequence_length, -1, dtype=np.int64)
    enc = RangeEncoder()
    for group in sched.groups:
        if len(group) == 0:
            continue
        logits = model.predict_logits(masked.reshape(sched.height, sched.width))
        probs = _softmax(logits.reshape(sched.sequence_length, -1))
        for pos in group:
            p = probs[pos]
            if np.any(p <= 0.0):
                raise CodecError(f"zero-probability symbol at position {int(pos)}")
            freqs = quantize_freqs(p)
            cum = np.concatenate(([0], np.cumsum(freqs)))
            t = int(tokens[pos])
            enc.encode(int(cum[t]), int(cum[t + 1]), FREQ_TOTAL)
        masked[group] = tokens[group]
    return Bitstream(sched.sequence_length, model.codebook_size, sched.seed, enc.finish())


def decompress(bs: Bitstream, model, sched: MaskSchedule) -> TokenGrid:
    """Invert :func:`compress`; raises CodecError on any mismatch or damage."""
    if bs.token_count != sched.sequence_length:
        raise CodecError(
            f"bitstream holds {bs.token_count} tokens, schedule expects "
            f"{sched.sequence_length}")
    if bs.codebook_size != model.codebook_size:
        raise CodecError(
            f"bitstream coded with |C|={bs.codebook_size}, model has "
            f"{model.codebook_size}")
    if bs.schedule_seed != sched.seed:
        raise CodecError("bitstream was coded under a different schedule")
    masked = np.full(sched.sequence_length, -1, dtype=np.int64)
    dec = RangeDecoder(bs.payload)
    for group in sched.groups:
        if len(group) == 0:
            continue
        logits = model.predict_logits(masked.reshape(sched.height, sched.width))
        probs = _softmax(logits.reshape(sched.sequence_length, -1))
        for pos in group:
            freqs = quantize_freqs(probs[pos])
            cum = np.concatenate(([0], np.cumsum(freqs)))
            target = dec.decode_target(FREQ_TOTAL)
            sym = int(np.searchsorted(cum, target, side="right")) - 1
            dec.advance(int(cum[sym]), int(cum[sym + 1]), FREQ_TOTAL)
            masked[pos] = sym
    return TokenGrid(sched.height, sched.width, masked)


def compression_cost(grid: TokenGrid, model, sched: MaskSchedule) -> float:
    """Ideal coded size in bits: sum of -log2 p(token | revealed so far).

    Tracks the actual payload length to within quantization slack; a uniform
    model costs exactly S * log2(|C|).
    """
    _check_grid(grid, model, sched)
    tokens = grid.tokens.astype(np.int64)
    masked = np.full(sched.sequence_length, -1, dtype=np.int64)
    terms = []
    for group in sched.groups:
        if len(group) == 0:
            continue
        logits = model.predict_logits(masked.reshape(sched.height, sched.width))
        probs = _softmax(logits.reshape(sched.sequence_length, -1))
        for pos in group:
            p = float(probs[pos, tokens[pos]])
            if p <= 0.0:
                raise CodecError(f"zero-probability symbol at position {int(pos)}")
            terms.append(-math.log2(p))
        masked[group] = tokens[group]
    return math.fsum(terms)


def masked_sample(model, sched: MaskSchedule, cfg_alpha: float,
                  rng: np.random.Generator, n_steps: int = 12,
                  temperature: float = 1.0, cond=None) -> TokenGrid:
    """Confidence-ordered masked sampling with classifier-free guidance.

    At each step, all masked positions are predicted (CFG-combined logits when
    cfg_alpha != 0), tokens are sampled, and the most confident fraction per
    the cosine schedule is revealed.  At temperature 0 sampling degenerates to
    greedy argmax decoding.  The schedule supplies the grid dimensions;
    positions are chosen by confidence, not by the schedule's fixed groups.
    """
    s = sched.sequence_length
    masked = np.full(s, -1, dtype=np.int64)
    for count in _reveal_counts(s, n_steps):
        if count == 0:
            continue
        grid2d = masked.reshape(sched.height, sched.width)
        logits = model.predict_logits(grid2d, cond=cond)
        if cfg_alpha != 0.0:
            null_logits = model.predict_logits(grid2d, cond=None)
            logits = cfg_logits(logits, null_logits, cfg_alpha)
        logits = logits.reshape(s, -1)
        mask_pos = np.flatnonzero(masked < 0)
        if temperature > 0.0:
            probs = _softmax(logits[mask_pos] / temperature)
            u = rng.random((len(mask_pos), 1))
            draws = (np.cumsum(probs, axis=1) < u).sum(axis=1)
            draws = np.minimum(draws, probs.shape[1] - 1)
        else:
            probs = _softmax(logits[mask_pos])
            draws = logits[mask_pos].argmax(axis=1)
        conf = probs[np.arange(len(mask_pos)), draws]
        order = np.argsort(-conf, kind="stable")
        chosen = order[:count]
        masked[mask_pos[chosen]] = draws[chosen]
    return TokenGrid(sched.height, sched.width, masked)
