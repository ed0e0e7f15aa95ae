"""32-bit range coder with carry propagation, plus 16-bit frequency tables.

The encoder keeps the invariant low + range <= 2^32 until the first byte is
emitted, so a carry always has somewhere to land; carries are resolved by
incrementing the already-emitted byte run in place (a run of 0xFF bytes rolls
over).  Frequencies are quantized so that every symbol keeps nonzero mass and
the table totals exactly 2^16, which bounds the per-symbol overhead and keeps
coded length within a hair of the model cross-entropy.
"""

from __future__ import annotations

import numpy as np

PRECISION = 32
MASK = (1 << PRECISION) - 1
TOP = 1 << (PRECISION - 8)
FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS


class CodecError(ValueError):
    """Raised on malformed bitstreams or invalid coder inputs."""


def quantize_freqs(probs: np.ndarray) -> np.ndarray:
    """Quantize a probability vector to integer frequencies summing to 2^16.

    Every symbol gets at least one unit; the remaining mass is apportioned by
    largest fractional remainder, so the result is deterministic and as close
    to proportional as integer tables allow.
    """
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.size
    if k < 1 or k >= FREQ_TOTAL:
        raise CodecError(f"alphabet size {k} unsupported (must be in [1, {FREQ_TOTAL}))")
    if np.any(probs <= 0.0) or not np.all(np.isfinite(probs)):
        bad = int(np.argmin(probs))
        raise CodecError(f"symbol {bad} has non-positive probability {probs[bad]!r}")
    probs = probs / probs.sum()
    spare = FREQ_TOTAL - k
    raw = probs * spare
    base = np.floor(raw).astype(np.int64)
    short = spare - int(base.sum())
    if short > 0:
        order = np.argsort(base - raw, kind="stable")  # most-underallocated first
        base[order[:short]] += 1
    return (base + 1).astype(np.uint32)


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = MASK
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        """Narrow the interval to [cum_lo, cum_hi) / total."""
        r = self._range // total
        self._low += r * cum_lo
        self._range = (self._range - r * cum_lo) if cum_hi == total else r * (cum_hi - cum_lo)
        if self._low > MASK:
            self._propagate_carry()
            self._low &= MASK
        while self._range < TOP:
            self._out.append((self._low >> 24) & 0xFF)
            self._low = (self._low << 8) & MASK
            self._range <<= 8

    def _propagate_carry(self) -> None:
        i = len(self._out) - 1
        while i >= 0 and self._out[i] == 0xFF:
            self._out[i] = 0
            i -= 1
        if i < 0:
            raise CodecError("range coder carry escaped the stream")
        self._out[i] += 1

    def finish(self) -> bytes:
        for _ in range(4):
            self._out.append((self._low >> 24) & 0xFF)
            self._low = (self._low << 8) & MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, payload: bytes):
        self._data = payload
        self._pos = 0
        self._low = 0
        self._range = MASK
        self._code = 0
        for _ in range(4):
            self._code = (self._code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise CodecError("bitstream truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_target(self, total: int) -> int:
        """Cumulative-frequency coordinate of the next symbol."""
        r = self._range // total
        target = ((self._code - self._low) & MASK) // r
        return min(target, total - 1)

    def advance(self, cum_lo: int, cum_hi: int, total: int) -> None:
        """Consume the symbol spanning [cum_lo, cum_hi); mirrors encode()."""
        r = self._range // total
        self._low = (self._low + r * cum_lo) & MASK
        self._range = (self._range - r * cum_lo) if cum_hi == total else r * (cum_hi - cum_lo)
        while self._range < TOP:
            self._code = ((self._code << 8) | self._next_byte()) & MASK
            self._low = (self._low << 8) & MASK
            self._range <<= 8
