"""Symmetric two's-complement quantization with bit-exact code packing.

Codes are ``clamp(round(a / scale), -2**(b-1), 2**(b-1) - 1)`` with
``scale = max|a| / (2**(b-1) - 1)`` and rounding half away from zero.
Packed codes store each value as its ``b``-bit two's-complement pattern,
LSB-first within a byte and contiguous across byte boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LengthError, ParameterError
from .tensor import as_matrix

MIN_BITS = 2
MAX_BITS = 8


def check_bits(b) -> int:
    if isinstance(b, bool) or not isinstance(b, (int, np.integer)) or not MIN_BITS <= b <= MAX_BITS:
        raise ParameterError(f"bit-width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {b!r}")
    return int(b)


def code_range(b: int) -> tuple[int, int]:
    return -(1 << (b - 1)), (1 << (b - 1)) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    r = np.floor(ax)
    # ax - r is exact, unlike floor(ax + 0.5) just below one half
    return np.sign(x) * (r + (ax - r >= 0.5))


@dataclass(frozen=True)
class QuantizedTensor:
    """Packed codes plus the metadata needed to reconstruct the matrix.

    With ``granularity="tensor"`` (the default) ``scale`` and ``max_magnitude``
    are floats. With ``granularity="row"`` they are float64 arrays of length
    ``rows``.
    """

    rows: int
    cols: int
    bit_width: int
    scale: float | np.ndarray
    max_magnitude: float | np.ndarray
    codes: bytes
    granularity: str = "tensor"

    @property
    def count(self) -> int:
        return self.rows * self.cols

    def unpacked(self) -> np.ndarray:
        """Codes as an int64 ``rows x cols`` array, validated against the metadata."""
        if len(self.codes) != packed_size(self.count, self.bit_width):
            raise DataError(
                f"packed code length {len(self.codes)} does not match "
                f"{self.count} codes of {self.bit_width} bits"
            )
        tail = (self.count * self.bit_width) % 8
        if tail and self.codes[-1] >> tail:
            raise DataError("non-zero padding bits after the last code")
        codes = unpack_codes(self.codes, self.count, self.bit_width).reshape(self.rows, self.cols)
        zero = np.atleast_1d(np.asarray(self.scale)) == 0
        if self.granularity == "row":
            corrupt = np.any(codes[zero] != 0)
        else:
            corrupt = bool(zero[0]) and np.any(codes != 0)
        if corrupt:
            raise DataError("zero scale with non-zero codes")
        return codes


def packed_size(count: int, b: int) -> int:
    return (count * b + 7) // 8


def pack_codes(codes, b: int) -> bytes:
    b = check_bits(b)
    c = np.asarray(codes, dtype=np.int64).reshape(-1)
    lo, hi = code_range(b)
    if c.size and (c.min() < lo or c.max() > hi):
        raise ParameterError(f"codes must lie in [{lo}, {hi}] for {b}-bit packing")
    if c.size == 0:
        return b""
    patterns = (c & ((1 << b) - 1)).astype(np.uint16)
    bits = ((patterns[:, None] >> np.arange(b, dtype=np.uint16)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_codes(data: bytes, count: int, b: int) -> np.ndarray:
    b = check_bits(b)
    if count < 0:
        raise ParameterError("count must be non-negative")
    if len(data) * 8 < count * b:
        raise LengthError(f"{len(data)} bytes hold fewer than {count} codes of {b} bits")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[: count * b].reshape(count, b).astype(np.int64)
    patterns = (bits << np.arange(b, dtype=np.int64)).sum(axis=1)
    # sign-extend the b-bit pattern
    return patterns - ((patterns >> (b - 1)) << b)


def _scale_for(m: np.ndarray, b: int) -> np.ndarray:
    return m / float((1 << (b - 1)) - 1)


def quantize(a, b: int, granularity: str = "tensor") -> QuantizedTensor:
    """Quantize a finite matrix to ``b``-bit signed codes with one scale per tensor or row."""
    b = check_bits(b)
    a = as_matrix(a).astype(np.float64)
    if granularity == "tensor":
        m = np.array([np.max(np.abs(a))])
    elif granularity == "row":
        m = np.max(np.abs(a), axis=1)
    else:
        raise ParameterError(f"granularity must be 'tensor' or 'row', got {granularity!r}")
    scale = _scale_for(m, b)
    divisor = np.where(scale > 0, scale, 1.0)[:, None]
    lo, hi = code_range(b)
    # all-zero rows divide by 1 and round to zero codes
    q = np.clip(round_half_away(a / divisor), lo, hi)
    if granularity == "row":
        scale_out, m_out = scale, m
    else:
        scale_out, m_out = float(scale[0]), float(m[0])
    return QuantizedTensor(
        rows=a.shape[0],
        cols=a.shape[1],
        bit_width=b,
        scale=scale_out,
        max_magnitude=m_out,
        codes=pack_codes(q.astype(np.int64), b),
        granularity=granularity,
    )


def dequantize(q: QuantizedTensor, dtype=np.float32) -> np.ndarray:
    """Reconstruct ``scale * codes``; pass ``dtype=np.float64`` to skip the float32 rounding."""
    codes = q.unpacked().astype(np.float64)
    if q.granularity == "row":
        out = codes * np.asarray(q.scale, dtype=np.float64)[:, None]
    else:
        out = codes * float(q.scale)
    return np.ascontiguousarray(out, dtype=dtype)


def fake_quantize(a, b: int, granularity: str = "tensor", dtype=np.float32) -> np.ndarray:
    """Quantize then immediately dequantize."""
    return dequantize(quantize(a, b, granularity), dtype=dtype)


def compression_ratio(q: QuantizedTensor, source_bits_per_entry: int = 16) -> float:
    if source_bits_per_entry not in (16, 32):
        raise ParameterError("source_bits_per_entry must be 16 or 32")
    return source_bits_per_entry / q.bit_width
