"""Soft-label compression: simplex quantization, delta coding, framing.

Quantization maps each probability row onto the grid {l / (2^b - 1)}
subject to the row summing to exactly 2^b - 1 grid steps, minimizing L1
distance: scale by 2^b - 1, floor, then hand the missing steps to the
largest fractional parts (ties broken by a seeded uniform draw).  With
b = 1 this collapses to a one-hot vote for the argmax class.

Delta coding (b = 1 only) replaces votes that match a reference message
with symbol 0 and keeps 1-based class ids otherwise, so converged rounds
approach zero-entropy streams.

Framed messages carry a fixed 30-byte big-endian header
``magic "CFDM" | version u8 | mode u8 | round u32 | sender u32 | n u32 |
C u16 | b u8 | flags u8 | payload_len u64`` followed by the payload:
little-endian float32 rows for raw32, or a range-coded symbol stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DecodeError, FormatError, ProtocolError, ShapeError, ValidationError
from .rangecoder import decode_symbols, encode_symbols

MAGIC = b"CFDM"
VERSION = 1
HEADER = struct.Struct(">4sBBIIIHBBQ")
FLAG_FULL = 0x01


class MessageMode(IntEnum):
    RAW32 = 0
    QUANTIZED = 1
    QUANTIZED_DELTA = 2


def check_soft_labels(y: np.ndarray, num_classes: int | None = None) -> np.ndarray:
    """Validate a row-stochastic float matrix and return it as float64."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ShapeError("soft labels must be 2-d with at least two columns")
    if num_classes is not None and y.shape[1] != num_classes:
        raise ShapeError(f"expected {num_classes} columns, got {y.shape[1]}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("soft labels contain non-finite values")
    if y.min(initial=0.0) < -1e-9:
        raise ValidationError("soft labels contain negative probabilities")
    if np.any(np.abs(y.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("soft label rows must sum to 1 within 1e-6")
    return y


@dataclass
class QuantizedLabels:
    """Grid-step counts per class; every row sums to exactly 2^b - 1."""

    n: int
    C: int
    b: int
    grid: np.ndarray

    def __post_init__(self):
        if not 1 <= self.b <= 16:
            raise ValidationError("quantized labels require b in [1, 16]")
        self.grid = np.asarray(self.grid, dtype=np.int32)
        if self.grid.shape != (self.n, self.C):
            raise ShapeError(f"grid shape {self.grid.shape} does not match ({self.n}, {self.C})")
        k = (1 << self.b) - 1
        if self.grid.size:
            if self.grid.min() < 0 or self.grid.max() > k:
                raise ValidationError(f"grid entries must lie in [0, {k}]")
            if np.any(self.grid.sum(axis=1) != k):
                raise ValidationError(f"grid rows must sum to exactly {k}")

    @property
    def class_ids(self) -> np.ndarray:
        """1-based voted class per row; only defined for b = 1."""
        if self.b != 1:
            raise ValidationError("class_ids is only defined for b = 1")
        return self.grid.argmax(axis=1).astype(np.int32) + 1

    def dequantize(self) -> np.ndarray:
        return self.grid.astype(np.float64) / ((1 << self.b) - 1)


@dataclass
class DeltaMessage:
    """Per-row symbols: 0 = same vote as the reference, else 1-based class id."""

    n: int
    C: int
    symbols: np.ndarray
    reference_round: int = 0

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int32)
        if self.symbols.shape != (self.n,):
            raise ShapeError("delta symbols must be 1-d with one entry per row")
        if self.symbols.size and (self.symbols.min() < 0 or self.symbols.max() > self.C):
            raise ValidationError(f"delta symbols must lie in [0, {self.C}]")

    @property
    def is_full(self) -> bool:
        return self.reference_round == 0


def quantize_matrix(y: np.ndarray, b: int, rng=None) -> QuantizedLabels:
    """Quantize every row of a soft-label matrix onto the b-bit grid."""
    y = check_soft_labels(y)
    if not 1 <= b <= 16:
        raise ValidationError("b must be in [1, 16]")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    n, c = y.shape
    k = (1 << b) - 1
    scaled = y * k
    base = np.minimum(np.floor(scaled).astype(np.int64), k)
    frac = scaled - base
    deficit = np.clip(k - base.sum(axis=1), 0, c)
    # Rank entries by descending fractional part; equal fractions are
    # ordered by an independent uniform draw so ties split evenly.
    order = np.lexsort((rng.random((n, c)), -frac), axis=1)
    ranks = np.argsort(order, axis=1)
    grid = base + (ranks < deficit[:, None])
    return QuantizedLabels(n=n, C=c, b=b, grid=grid.astype(np.int32))


def quantize(p: np.ndarray, b: int, rng=None) -> np.ndarray:
    """Quantize a single probability row; returns the int grid row."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeError("quantize expects a 1-d probability row")
    return quantize_matrix(p[None, :], b, rng=rng).grid[0]


def dequantize(q: QuantizedLabels) -> np.ndarray:
    return q.dequantize()


def delta_encode(
    curr: QuantizedLabels, prev: QuantizedLabels | None, reference_round: int | None = None
) -> DeltaMessage:
    """Diff two b=1 messages; without a reference the message is full.

    ``reference_round`` 0 marks a full message, so it is only legal when
    ``prev`` is absent; with a reference it defaults to 1.
    """
    if curr.b != 1:
        raise ValidationError("delta coding is only defined for b = 1")
    ids = curr.class_ids
    if prev is None:
        if reference_round not in (None, 0):
            raise ValidationError("reference_round given without a reference message")
        return DeltaMessage(n=curr.n, C=curr.C, symbols=ids, reference_round=0)
    if reference_round is None:
        reference_round = 1
    elif reference_round == 0:
        raise ValidationError("reference_round 0 marks a full message, but a reference was given")
    if prev.b != 1:
        raise ValidationError("delta reference must use b = 1")
    if (prev.n, prev.C) != (curr.n, curr.C):
        raise ShapeError("delta reference shape does not match current message")
    symbols = np.where(ids == prev.class_ids, 0, ids).astype(np.int32)
    return DeltaMessage(n=curr.n, C=curr.C, symbols=symbols, reference_round=reference_round)


def delta_decode(msg: DeltaMessage, prev: QuantizedLabels | None) -> QuantizedLabels:
    """Reverse delta_encode against the same reference."""
    if msg.is_full:
        if msg.symbols.size and msg.symbols.min() < 1:
            raise DecodeError("full delta message contains unchanged markers")
        ids = msg.symbols
    else:
        if prev is None:
            raise ProtocolError("delta message requires its reference to decode")
        if prev.b != 1:
            raise ValidationError("delta reference must use b = 1")
        if (prev.n, prev.C) != (msg.n, msg.C):
            raise ShapeError("delta reference shape does not match message")
        ids = np.where(msg.symbols == 0, prev.class_ids, msg.symbols)
    grid = np.zeros((msg.n, msg.C), dtype=np.int32)
    if msg.n:
        grid[np.arange(msg.n), ids - 1] = 1
    return QuantizedLabels(n=msg.n, C=msg.C, b=1, grid=grid)


def empirical_entropy(symbols) -> float:
    """Plug-in entropy of a symbol sequence in bits per symbol."""
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise ValidationError("entropy of an empty sequence is undefined")
    _, counts = np.unique(symbols, return_counts=True)
    p = counts / symbols.size
    return float(-np.sum(p * np.log2(p)))


def entropy_code(symbols, alphabet_size: int) -> bytes:
    return encode_symbols(symbols, alphabet_size)


def entropy_decode(payload: bytes, alphabet_size: int, count: int) -> np.ndarray:
    return decode_symbols(payload, alphabet_size, count)


@dataclass
class EncodedMessage:
    """A framed soft-label message ready for byte accounting."""

    mode: MessageMode
    round_no: int
    sender_id: int
    n: int
    C: int
    b: int
    flags: int
    payload: bytes

    def __post_init__(self):
        self.mode = MessageMode(self.mode)
        for name, value, limit in (
            ("round_no", self.round_no, 1 << 32),
            ("sender_id", self.sender_id, 1 << 32),
            ("n", self.n, 1 << 32),
            ("C", self.C, 1 << 16),
            ("b", self.b, 1 << 8),
            ("flags", self.flags, 1 << 8),
        ):
            if not 0 <= value < limit:
                raise ValidationError(f"{name}={value} out of range for the header field")

    @property
    def is_full(self) -> bool:
        return bool(self.flags & FLAG_FULL)

    @property
    def payload_bytes(self) -> int:
        return len(self.payload)

    @property
    def bit_length(self) -> int:
        if self.mode == MessageMode.RAW32:
            return self.n * self.C * 32
        return 8 * len(self.payload)

    @property
    def symbol_count(self) -> int:
        """Number of coded symbols (float32 values count as symbols for raw32)."""
        if self.mode == MessageMode.RAW32:
            return self.n * self.C
        if self.b == 1:
            return self.n
        return self.n * self.C

    def to_bytes(self) -> bytes:
        header = HEADER.pack(
            MAGIC,
            VERSION,
            int(self.mode),
            self.round_no,
            self.sender_id,
            self.n,
            self.C,
            self.b,
            self.flags,
            len(self.payload),
        )
        return header + self.payload


def message_from_bytes(raw: bytes) -> EncodedMessage:
    """Parse a framed message; raises FormatError with a byte offset."""
    if len(raw) < HEADER.size:
        raise FormatError(f"truncated header: {len(raw)} bytes at offset 0")
    magic, version, mode, round_no, sender_id, n, c, b, flags, payload_len = HEADER.unpack(
        raw[: HEADER.size]
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    try:
        mode = MessageMode(mode)
    except ValueError as exc:
        raise FormatError(f"unknown mode {mode} at offset 5") from exc
    if len(raw) != HEADER.size + payload_len:
        raise FormatError(
            f"payload length {len(raw) - HEADER.size} does not match header "
            f"value {payload_len} at offset {HEADER.size - 8}"
        )
    return EncodedMessage(
        mode=mode,
        round_no=round_no,
        sender_id=sender_id,
        n=n,
        C=c,
        b=b,
        flags=flags,
        payload=raw[HEADER.size :],
    )


def wire_round32(y: np.ndarray) -> np.ndarray:
    """Values as a raw32 receiver would see them (float32 transport)."""
    return np.asarray(y, dtype=np.float64).astype("<f4").astype(np.float64)


def encode_upstream(
    curr: QuantizedLabels | None,
    prev: QuantizedLabels | None,
    mode: MessageMode,
    y_raw: np.ndarray | None = None,
    round_no: int = 0,
    sender_id: int = 0,
) -> EncodedMessage:
    """Frame one message in the requested mode.

    raw32 serializes ``y_raw`` as little-endian float32 rows.  quantized
    entropy-codes the grid of ``curr`` (vote ids for b = 1, grid steps
    otherwise).  quantized_delta diffs ``curr`` against ``prev`` first;
    without a reference the message is flagged full.
    """
    mode = MessageMode(mode)
    if mode == MessageMode.RAW32:
        if y_raw is None:
            raise ValidationError("raw32 needs the soft-label matrix")
        y = check_soft_labels(y_raw)
        payload = np.ascontiguousarray(y, dtype="<f4").tobytes()
        return EncodedMessage(
            mode=mode,
            round_no=round_no,
            sender_id=sender_id,
            n=y.shape[0],
            C=y.shape[1],
            b=32,
            flags=FLAG_FULL,
            payload=payload,
        )
    if curr is None:
        raise ValidationError(f"{mode.name} needs quantized labels")
    if mode == MessageMode.QUANTIZED:
        if curr.b == 1:
            symbols = curr.class_ids - 1
            alphabet = curr.C
        else:
            symbols = curr.grid.ravel()
            alphabet = 1 << curr.b
        payload = encode_symbols(symbols, alphabet)
        return EncodedMessage(
            mode=mode,
            round_no=round_no,
            sender_id=sender_id,
            n=curr.n,
            C=curr.C,
            b=curr.b,
            flags=FLAG_FULL,
            payload=payload,
        )
    if curr.b != 1:
        raise ValidationError("quantized_delta requires b = 1")
    dmsg = delta_encode(curr, prev, reference_round=max(0, round_no - 1) if prev is not None else 0)
    payload = encode_symbols(dmsg.symbols, curr.C + 1)
    return EncodedMessage(
        mode=mode,
        round_no=round_no,
        sender_id=sender_id,
        n=curr.n,
        C=curr.C,
        b=1,
        flags=FLAG_FULL if dmsg.is_full else 0,
        payload=payload,
    )


def message_symbols(msg: EncodedMessage) -> np.ndarray:
    """The coded symbol stream of a non-raw message (for entropy stats)."""
    if msg.mode == MessageMode.RAW32:
        raise ValidationError("raw32 messages have no coded symbol stream")
    if msg.mode == MessageMode.QUANTIZED_DELTA:
        return decode_symbols(msg.payload, msg.C + 1, msg.n)
    if msg.b == 1:
        return decode_symbols(msg.payload, msg.C, msg.n)
    return decode_symbols(msg.payload, 1 << msg.b, msg.n * msg.C)


def decode_message(
    msg: EncodedMessage, prev: QuantizedLabels | None = None
) -> np.ndarray | QuantizedLabels:
    """Invert encode_upstream; returns float64 rows for raw32."""
    if msg.mode == MessageMode.RAW32:
        expected = msg.n * msg.C * 4
        if len(msg.payload) != expected:
            raise DecodeError(f"raw32 payload is {len(msg.payload)} bytes, expected {expected}")
        y = np.frombuffer(msg.payload, dtype="<f4").astype(np.float64)
        return y.reshape(msg.n, msg.C)
    if msg.mode == MessageMode.QUANTIZED:
        try:
            if msg.b == 1:
                ids = decode_symbols(msg.payload, msg.C, msg.n).astype(np.int32) + 1
                grid = np.zeros((msg.n, msg.C), dtype=np.int32)
                if msg.n:
                    grid[np.arange(msg.n), ids - 1] = 1
                return QuantizedLabels(n=msg.n, C=msg.C, b=1, grid=grid)
            flat = decode_symbols(msg.payload, 1 << msg.b, msg.n * msg.C)
            return QuantizedLabels(
                n=msg.n, C=msg.C, b=msg.b, grid=flat.reshape(msg.n, msg.C).astype(np.int32)
            )
        except (ValidationError, ShapeError) as exc:
            raise DecodeError(f"payload decodes to an invalid grid: {exc}") from exc
    symbols = decode_symbols(msg.payload, msg.C + 1, msg.n)
    dmsg = DeltaMessage(
        n=msg.n,
        C=msg.C,
        symbols=symbols.astype(np.int32),
        reference_round=0 if msg.is_full else max(msg.round_no - 1, 1),
    )
    return delta_decode(dmsg, prev)
