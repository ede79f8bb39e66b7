"""Septenary (3-bit) exponential weight quantization.

Weights take one of seven levels ``{0, +-0.25, +-0.5, +-1}``.  Each level is
stored as a 3-bit code chosen so that multiplying by the weight needs only
a shift and an optional negation:

    code  level
    000   +1.00
    001   +0.50
    010   +0.25
    111    0
    110   -0.25
    101   -0.50
    100   -1.00

The low two bits are the right-shift amount and bit value 4 is the sign.
Code 3 (``011``) is unused and rejected everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEVELS = (1.0, 0.5, 0.25, 0.0, -0.25, -0.5, -1.0)
CODE_ZERO = 7
VALID_CODES = (0, 1, 2, 4, 5, 6, 7)

_LEVEL_TO_CODE = {1.0: 0, 0.5: 1, 0.25: 2, 0.0: 7, -0.25: 6, -0.5: 5, -1.0: 4}
# index by code; code 3 maps to nan so accidental use is visible
_CODE_TO_LEVEL = np.array([1.0, 0.5, 0.25, np.nan, -1.0, -0.5, -0.25, 0.0])


class QuantizationError(ValueError):
    pass


def quantize(w):
    """Map full-precision weights onto the seven levels.

    ``|w| < 0.25`` goes to zero, values at or beyond +-1 saturate, everything
    else rounds the base-2 exponent to the nearest integer (ties to even).
    The zero band is open so that +-0.25 map to themselves and quantizing a
    septenary weight is a no-op.  Returns floats of the same shape.
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise QuantizationError("cannot quantize non-finite weights")
    mag = np.abs(w)
    with np.errstate(divide="ignore"):
        exponent = np.rint(np.log2(np.where(mag > 0, mag, 1.0)))
    q = np.sign(w) * np.exp2(np.clip(exponent, -2, 0))
    q = np.where(mag < 0.25, 0.0, q)
    q = np.where(w >= 1.0, 1.0, np.where(w <= -1.0, -1.0, q))
    # normalize -0.0 so encode() sees a single zero
    q = q + 0.0
    return float(q) if q.ndim == 0 else q


def encode(level):
    """Level value(s) -> 3-bit code(s)."""
    arr = np.asarray(level, dtype=np.float64)
    flat = arr.ravel()
    out = np.empty(flat.shape, dtype=np.uint8)
    for i, v in enumerate(flat.tolist()):
        try:
            out[i] = _LEVEL_TO_CODE[v + 0.0]
        except KeyError:
            raise QuantizationError(f"{v!r} is not a septenary level") from None
    out = out.reshape(arr.shape)
    return int(out) if out.ndim == 0 else out


def check_codes(codes):
    c = np.asarray(codes)
    if c.size and (np.any(c > 7) or np.any(c < 0) or np.any(c == 3)):
        bad = c[(c > 7) | (c < 0) | (c == 3)].ravel()[0]
        raise QuantizationError(f"invalid septenary code {int(bad)}")
    return c


def decode(code):
    """3-bit code(s) -> level value(s)."""
    c = check_codes(np.asarray(code, dtype=np.int64))
    out = _CODE_TO_LEVEL[c]
    return float(out) if out.ndim == 0 else out


def to_codes(w):
    """Quantize full-precision weights straight to codes."""
    return encode(quantize(w))


def apply_weight(x, code):
    """Multiply ``x`` by the weight behind ``code`` using shifts only.

    Arithmetic right shift, so negative inputs round toward minus infinity.
    The result is not saturated: ``-32768 * -1`` yields 32768, which only
    ever lands in a 32-bit accumulator.
    """
    x = np.asarray(x, dtype=np.int64)
    c = np.asarray(code, dtype=np.int64)
    y = x >> (c & 3)
    y = np.where(c & 4, -y, y)
    y = np.where(c == CODE_ZERO, 0, y)
    return int(y) if y.ndim == 0 else y


@dataclass(frozen=True)
class PackedWeights:
    count: int
    data: bytes

    def __post_init__(self):
        if len(self.data) != packed_size(self.count):
            raise QuantizationError(
                f"{self.count} codes need {packed_size(self.count)} bytes, got {len(self.data)}"
            )


def packed_size(count: int) -> int:
    return (3 * count + 7) // 8


def pack(codes) -> PackedWeights:
    """Concatenate 3-bit codes LSB-first: code i fills payload bits [3i, 3i+3)."""
    c = check_codes(np.asarray(codes, dtype=np.uint8).ravel())
    n = c.size
    bits = ((c[:, None] >> np.arange(3, dtype=np.uint8)) & 1).astype(np.uint8).ravel()
    pad = packed_size(n) * 8 - bits.size
    bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    return PackedWeights(n, np.packbits(bits, bitorder="little").tobytes())


def unpack(packed: PackedWeights | bytes, count: int | None = None) -> np.ndarray:
    """Inverse of :func:`pack`.  Rejects short payloads, stray pad bits and code 3."""
    if isinstance(packed, PackedWeights):
        data, count = packed.data, packed.count
    else:
        data = bytes(packed)
        if count is None:
            raise TypeError("count is required when unpacking raw bytes")
    need = packed_size(count)
    if len(data) < need:
        raise QuantizationError(f"truncated weight payload: expected {need} bytes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data[:need], dtype=np.uint8), bitorder="little")
    if np.any(bits[3 * count:]):
        raise QuantizationError("non-zero pad bits in weight payload")
    trip = bits[: 3 * count].reshape(count, 3)
    codes = (trip[:, 0] | (trip[:, 1] << 1) | (trip[:, 2] << 2)).astype(np.uint8)
    return check_codes(codes)
