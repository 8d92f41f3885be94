"""Adaptive 32-bit range coder for small integer alphabets.

The coder keeps a 32-bit window (``low``, ``range``) onto the arithmetic
interval and emits the top byte of ``low`` whenever ``range`` falls below
2^24.  Frequencies adapt per symbol: every count starts at 1 and the
running total is capped at 2^16 by halving (floor, minimum 1).  The
encoder and decoder renormalize on identical schedules, so a payload is
always ``renormalizations + 4`` bytes: four tail bytes flush the final
window.

When narrowing pushes ``low`` past 2^32 the overflow belongs to bytes
already emitted; the encoder propagates that carry backward through the
buffered output (incrementing the last byte, rippling across 0xFF runs)
before masking ``low`` back into 32 bits.  The decoder needs no special
case: it tracks ``low`` modulo 2^32 and the mod-2^32 difference
``code - low`` is exact because the window never exceeds 2^32.
"""

from __future__ import annotations

import numpy as np

from .errors import DecodeError, ValidationError

_TOP = 1 << 24
_MASK = 0xFFFFFFFF
_MAX_TOTAL = 1 << 16
_FLUSH_BYTES = 4

MAX_ALPHABET = 1 << 16


class AdaptiveModel:
    """Order-0 frequency model; counts start at 1 and adapt per symbol."""

    __slots__ = ("counts", "total")

    def __init__(self, alphabet_size: int):
        if not (2 <= alphabet_size <= MAX_ALPHABET):
            raise ValidationError(f"alphabet_size must be in [2, {MAX_ALPHABET}]")
        self.counts = [1] * alphabet_size
        self.total = alphabet_size

    def cumulative(self, symbol: int) -> int:
        return sum(self.counts[:symbol])

    def update(self, symbol: int) -> None:
        self.counts[symbol] += 1
        self.total += 1
        if self.total > _MAX_TOTAL:
            self.counts = [max(1, c >> 1) for c in self.counts]
            self.total = sum(self.counts)


def encode_symbols(symbols, alphabet_size: int) -> bytes:
    """Entropy-code an iterable of ints from [0, alphabet_size)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size == 0:
        return b""
    model = AdaptiveModel(alphabet_size)
    counts = model.counts
    low = 0
    rng = _MASK
    out = bytearray()
    for s in symbols.tolist():
        if not 0 <= s < alphabet_size:
            raise ValidationError(f"symbol {s} outside alphabet [0, {alphabet_size})")
        r = rng // model.total
        low += r * sum(counts[:s])
        if low > _MASK:
            i = len(out) - 1
            while out[i] == 0xFF:  # carry ripples across a 0xFF run
                out[i] = 0
                i -= 1
            out[i] += 1
            low &= _MASK
        rng = r * counts[s]
        while rng < _TOP:
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK
            rng <<= 8
        model.update(s)
        counts = model.counts
    for _ in range(_FLUSH_BYTES):
        out.append((low >> 24) & 0xFF)
        low = (low << 8) & _MASK
    return bytes(out)


def decode_symbols(payload: bytes, alphabet_size: int, count: int) -> np.ndarray:
    """Recover exactly ``count`` symbols from an encode_symbols payload."""
    if count < 0:
        raise ValidationError("count must be >= 0")
    if count == 0:
        if payload:
            raise DecodeError("nonempty payload for an empty symbol stream")
        return np.empty(0, dtype=np.int64)
    model = AdaptiveModel(alphabet_size)
    if len(payload) < _FLUSH_BYTES:
        raise DecodeError(f"payload of {len(payload)} bytes is shorter than the 4-byte tail")
    low = 0
    rng = _MASK
    code = int.from_bytes(payload[:4], "big")
    pos = 4
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        r = rng // model.total
        value = ((code - low) & _MASK) // r
        if value >= model.total:
            raise DecodeError(f"corrupt payload: cumulative value {value} at symbol {i}")
        acc = 0
        counts = model.counts
        for s, c in enumerate(counts):
            if acc + c > value:
                break
            acc += c
        low = (low + r * acc) & _MASK
        rng = r * counts[s]
        while rng < _TOP:
            if pos >= len(payload):
                raise DecodeError(f"truncated payload at offset {pos}")
            code = ((code << 8) | payload[pos]) & _MASK
            pos += 1
            low = (low << 8) & _MASK
            rng <<= 8
        model.update(s)
        out[i] = s
    return out
