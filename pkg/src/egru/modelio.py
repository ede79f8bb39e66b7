"""Model files.

Deployed models (septenary codes) use the compact ``EGRU`` format::

    magic        4s   b"EGRU"
    version      u8   1
    cell         u8   low nibble: 0 egru, 1 gru, 2 rnn
                      bit 4: activation differs from the cell's default
    input_bins   u16
    recurrent1   u16
    recurrent2   u16
    dense        u16
    num_classes  u16
    tensors      3-bit packed codes per tensor, each padded to a whole byte,
                 in ModelParams.named_tensors() order, row-major
    crc32        u32  over everything above

Total size is ``16 + sum(ceil(3 * n / 8)) + 4`` bytes.  All integers are
little-endian.

Float checkpoints use the ``EGRF`` sidecar: the same header layout followed
by a u32-length JSON metadata block, float64 tensors in the same order and a
CRC32 trailer.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from . import cells, quantizer
from .network import ModelConfig, ModelParams, check_params, zero_params

MAGIC = b"EGRU"
FLOAT_MAGIC = b"EGRF"
VERSION = 1
HEADER = struct.Struct("<4sBBHHHHH")
CRC = struct.Struct("<I")
_ALT_ACTIVATION = 0x10


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFormatError):
    pass


class BadVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class LengthError(ModelFormatError):
    pass


class ModelMismatchError(ValueError):
    """Parameters do not fit the configuration they are saved with."""


def _pack_header(magic: bytes, config: ModelConfig) -> bytes:
    kind = cells.CELL_KINDS.index(config.cell_kind)
    if config.activation != cells.DEFAULT_ACTIVATION[config.cell_kind]:
        kind |= _ALT_ACTIVATION
    r1, r2 = config.recurrent_sizes
    return HEADER.pack(magic, VERSION, kind, config.input_bins, r1, r2,
                       config.dense_size, config.num_classes)


def _parse_header(data: bytes, magic: bytes) -> ModelConfig:
    if len(data) < HEADER.size + CRC.size:
        raise LengthError(f"file too short: {len(data)} bytes")
    got_magic, version, kind, bins, r1, r2, dense, classes = HEADER.unpack_from(data)
    if got_magic != magic:
        raise BadMagicError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}, expected {VERSION}")
    (crc,) = CRC.unpack_from(data, len(data) - CRC.size)
    if zlib.crc32(data[:-CRC.size]) != crc:
        raise ChecksumError("CRC mismatch: file is corrupt")
    idx = kind & 0x0F
    if idx >= len(cells.CELL_KINDS) or kind & ~(0x0F | _ALT_ACTIVATION):
        raise ModelFormatError(f"unknown cell byte {kind:#04x}")
    cell_kind = cells.CELL_KINDS[idx]
    activation = cells.DEFAULT_ACTIVATION[cell_kind]
    if kind & _ALT_ACTIVATION:
        activation = next(a for a in cells.ACTIVATIONS if a != activation)
    try:
        return ModelConfig(bins, (r1, r2), dense, classes, cell_kind, activation)
    except ValueError as exc:
        raise ModelFormatError(f"invalid architecture in header: {exc}") from None


def _check(params: ModelParams, config: ModelConfig) -> None:
    try:
        check_params(params, config)
    except ValueError as exc:
        raise ModelMismatchError(str(exc)) from None


def expected_size(config: ModelConfig) -> int:
    shapes = [a.size for a in zero_params(config).arrays()]
    return HEADER.size + sum(quantizer.packed_size(n) for n in shapes) + CRC.size


def save(params: ModelParams, config: ModelConfig) -> bytes:
    """Serialize a deployed (all-septenary) model."""
    if not params.deployed:
        raise ModelMismatchError("save() needs deployed septenary parameters; call deploy() first")
    _check(params, config)
    body = bytearray(_pack_header(MAGIC, config))
    for _, codes in params.named_tensors():
        body += quantizer.pack(codes.ravel()).data
    body += CRC.pack(zlib.crc32(body))
    return bytes(body)


def load(data: bytes) -> tuple[ModelParams, ModelConfig]:
    data = bytes(data)
    config = _parse_header(data, MAGIC)
    want = expected_size(config)
    if len(data) != want:
        raise LengthError(f"expected {want} bytes for this architecture, got {len(data)}")
    template = zero_params(config)
    pos = HEADER.size
    arrays = []
    for _, ref in template.named_tensors():
        n = quantizer.packed_size(ref.size)
        try:
            codes = quantizer.unpack(data[pos:pos + n], ref.size)
        except quantizer.QuantizationError as exc:
            raise ModelFormatError(f"bad weight payload: {exc}") from None
        arrays.append(codes.reshape(ref.shape))
        pos += n
    return template.with_arrays(arrays), config


def save_float(params: ModelParams, config: ModelConfig, metadata: dict | None = None) -> bytes:
    """Serialize full-precision parameters plus JSON metadata."""
    if params.deployed:
        params = params.decode()
    _check(params, config)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    body = bytearray(_pack_header(FLOAT_MAGIC, config))
    body += struct.pack("<I", len(meta)) + meta
    for _, a in params.named_tensors():
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    body += CRC.pack(zlib.crc32(body))
    return bytes(body)


def load_float(data: bytes) -> tuple[ModelParams, ModelConfig, dict]:
    data = bytes(data)
    config = _parse_header(data, FLOAT_MAGIC)
    pos = HEADER.size
    end = len(data) - CRC.size
    if pos + 4 > end:
        raise LengthError("missing metadata block")
    (n_meta,) = struct.unpack_from("<I", data, pos)
    pos += 4
    template = zero_params(config)
    want = pos + n_meta + 8 * sum(a.size for a in template.arrays()) + CRC.size
    if len(data) != want:
        raise LengthError(f"expected {want} bytes for this architecture, got {len(data)}")
    try:
        metadata = json.loads(data[pos:pos + n_meta].decode("utf-8"))
    except ValueError as exc:
        raise ModelFormatError(f"unreadable metadata: {exc}") from None
    pos += n_meta
    arrays = []
    for _, ref in template.named_tensors():
        arrays.append(np.frombuffer(data, dtype="<f8", count=ref.size, offset=pos).reshape(ref.shape).copy())
        pos += 8 * ref.size
    return template.with_arrays(arrays), config, metadata


def read_any(data: bytes):
    """Load either format.  Returns (params, config, metadata-or-None)."""
    data = bytes(data)
    if data[:4] == FLOAT_MAGIC:
        return load_float(data)
    params, config = load(data)
    return params, config, None
