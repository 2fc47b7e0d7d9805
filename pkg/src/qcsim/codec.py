"""Error-bounded block codec for complex double-precision amplitudes.

Pipeline for a lossy block (SolutionC):

1. flush subnormals to zero, truncate every scalar to its leading
   ``sig_bit_count`` bits (truncation toward zero keeps sign and exponent);
2. keep the ``k = ceil(sig_bits / 8)`` leading bytes of each scalar and code
   each one against its predecessor: a 2-bit code records how many leading
   bytes repeat (capped at 3), only the remaining bytes are emitted;
3. feed ``packed codes + emitted bytes`` to a lossless byte codec.

Emitted bytes are grouped by byte position (all first-position bytes, then
all second-position bytes, ...) so the entropy stage sees homogeneous
streams.  SolutionD differs only in scalar order: real parts of the whole
block first, then imaginary parts.
"""
from __future__ import annotations

import enum
import math
import struct
import threading
import zlib
from dataclasses import dataclass

import numpy as np
import zstandard

from .errors import ContractViolation, CorruptionError, FormatError, UnsupportedModeError

MAGIC = b"QCB1"
# magic | codec id | bound mode | bound value | element count | payload length | crc32
HEADER = struct.Struct(">4sBBdQQI")

SIGN_EXP_BITS = {"double": 12, "single": 9}
FORMAT_BITS = {"double": 64, "single": 32}

_EXP_MASK = np.uint64(0x7FF0000000000000)


class BoundMode(enum.IntEnum):
    LOSSLESS = 0
    RELATIVE = 1
    ABSOLUTE = 2


class CodecId(enum.IntEnum):
    LOSSLESS_ONLY = 0
    SOLUTION_C = 1
    SOLUTION_D = 2


@dataclass(frozen=True)
class ErrorBound:
    mode: BoundMode
    value: float = 0.0

    def __post_init__(self):
        if self.mode is not BoundMode.LOSSLESS and not self.value > 0:
            raise ValueError(f"{self.mode.name} bound needs a positive value")
        if self.mode is BoundMode.RELATIVE and not self.value < 1:
            raise ValueError(f"relative bound {self.value} must be below 1")

    @classmethod
    def lossless(cls) -> "ErrorBound":
        return cls(BoundMode.LOSSLESS, 0.0)

    @classmethod
    def relative(cls, delta: float) -> "ErrorBound":
        return cls(BoundMode.RELATIVE, float(delta))

    @classmethod
    def absolute(cls, e: float) -> "ErrorBound":
        return cls(BoundMode.ABSOLUTE, float(e))

    @property
    def delta(self) -> float:
        """Pointwise relative bound, 0 when lossless."""
        return self.value if self.mode is BoundMode.RELATIVE else 0.0

    def __str__(self) -> str:
        if self.mode is BoundMode.LOSSLESS:
            return "lossless"
        return f"{self.mode.name.lower()}:{self.value:g}"


def _floor_log2(x: float) -> int:
    mant, exp = math.frexp(x)  # x = mant * 2**exp, 0.5 <= mant < 1
    return exp - 1


def sig_bit_count(delta: float, precision: str = "double") -> int:
    """Leading bits to keep so truncation honors pointwise relative bound `delta`."""
    if not 0 < delta < 1:
        raise ValueError(f"relative bound must lie in (0, 1), got {delta}")
    if precision not in SIGN_EXP_BITS:
        raise ValueError(f"unknown precision {precision!r}")
    return min(SIGN_EXP_BITS[precision] - _floor_log2(delta), FORMAT_BITS[precision])


def truncate_value(v: float, sig_bits: int, precision: str = "double") -> float:
    """Zero all but the leading `sig_bits` bits of `v`'s IEEE 754 encoding."""
    width = FORMAT_BITS[precision]
    if not 0 < sig_bits <= width:
        raise ValueError(f"sig_bits must be in (0, {width}]")
    fmt, ifmt = (">d", ">Q") if precision == "double" else (">f", ">I")
    (bits,) = struct.unpack(ifmt, struct.pack(fmt, v))
    exp_width = SIGN_EXP_BITS[precision] - 1
    exp_field = (bits >> (width - 1 - exp_width)) & ((1 << exp_width) - 1)
    if exp_field == 0:
        return 0.0
    keep = ((1 << sig_bits) - 1) << (width - sig_bits)
    (out,) = struct.unpack(fmt, struct.pack(ifmt, bits & keep))
    return out


def truncate_array(scalars: np.ndarray, sig_bits: int) -> np.ndarray:
    """Vectorised double-precision truncation (subnormals flushed to zero)."""
    bits = np.ascontiguousarray(scalars, dtype=np.float64).view(np.uint64)
    keep = np.uint64((((1 << sig_bits) - 1) << (64 - sig_bits)) & 0xFFFFFFFFFFFFFFFF)
    out = bits & keep
    out[(bits & _EXP_MASK) == 0] = 0
    return out.view(np.float64)


def _truncate_absolute(scalars: np.ndarray, e: float) -> np.ndarray:
    bits = np.ascontiguousarray(scalars, dtype=np.float64).view(np.uint64)
    exp = ((bits & _EXP_MASK) >> np.uint64(52)).astype(np.int64) - 1023
    mant_bits = exp - _floor_log2(e)
    shift = (52 - np.clip(mant_bits, 0, 52)).astype(np.uint64)
    out = bits & ~((np.uint64(1) << shift) - np.uint64(1))
    out[(mant_bits < 0) | ((bits & _EXP_MASK) == 0)] = 0
    return out.view(np.float64)


def xor_leading_code(prev: bytes, cur: bytes) -> tuple[int, int]:
    """Count of identical leading bytes, capped at 3; returns (code, skip)."""
    same = 0
    for a, b in zip(prev, cur):
        if a != b:
            break
        same += 1
    code = min(same, 3)
    return code, code


# -- lossless byte codecs ------------------------------------------------

_ZSTD_MAGIC = b"\x28\xb5\x2f\xfd"


class ZstdBackend:
    name = "zstd"

    def __init__(self, level: int = 3):
        self.level = level
        self._local = threading.local()

    def compress(self, data: bytes) -> bytes:
        c = getattr(self._local, "c", None)
        if c is None:
            c = self._local.c = zstandard.ZstdCompressor(level=self.level)
        return c.compress(data)


class ZlibBackend:
    name = "zlib"

    def __init__(self, level: int = 6):
        self.level = level

    def compress(self, data: bytes) -> bytes:
        return zlib.compress(data, self.level)


DEFAULT_BACKEND = ZstdBackend()
_dlocal = threading.local()


def _backend_decompress(payload: bytes) -> bytes:
    try:
        if payload[:4] == _ZSTD_MAGIC:
            d = getattr(_dlocal, "d", None)
            if d is None:
                d = _dlocal.d = zstandard.ZstdDecompressor()
            return d.decompress(payload)
        return zlib.decompress(payload)
    except (zstandard.ZstdError, zlib.error) as exc:
        raise CorruptionError(f"lossless stage failed: {exc}") from exc


# -- stream coding -------------------------------------------------------

def _scalar_width(bound: ErrorBound) -> int:
    if bound.mode is BoundMode.RELATIVE:
        return (sig_bit_count(bound.value) + 7) // 8
    return 8


def _encode_stream(bits: np.ndarray, k: int) -> bytes:
    """XOR leading-byte coding of uint64 scalars, top `k` bytes each."""
    rows = bits.astype(">u8").view(np.uint8).reshape(-1, 8)[:, :k]
    prev = np.empty_like(rows)
    prev[0] = 0
    prev[1:] = rows[:-1]
    same = rows == prev
    codes = np.zeros(len(rows), dtype=np.uint8)
    run = np.ones(len(rows), dtype=bool)
    for j in range(min(k, 3)):
        run &= same[:, j]
        codes += run
    planes = [rows[codes <= j, j] for j in range(k)]
    return _pack_codes(codes) + b"".join(p.tobytes() for p in planes)


def _decode_stream(data: bytes, count: int, k: int) -> np.ndarray:
    ncode = (count + 3) // 4
    if len(data) < ncode:
        raise CorruptionError("stream shorter than its code table")
    codes = _unpack_codes(data[:ncode], count)
    body = np.frombuffer(data, dtype=np.uint8, offset=ncode)
    rows = np.zeros((count, 8), dtype=np.uint8)
    index = np.arange(count)
    pos = 0
    for j in range(k):
        emitted = codes <= j
        m = int(np.count_nonzero(emitted))
        if pos + m > len(body):
            raise CorruptionError("stream truncated")
        col = np.zeros(count, dtype=np.uint8)
        col[emitted] = body[pos:pos + m]
        pos += m
        # repeated bytes copy from the latest row that emitted this position
        src = np.maximum.accumulate(np.where(emitted, index, -1))
        rows[:, j] = np.where(src >= 0, col[np.maximum(src, 0)], 0)
    if pos != len(body):
        raise CorruptionError("trailing bytes after stream")
    return rows.view(">u8").ravel().astype(np.uint64)


def _pack_codes(codes: np.ndarray) -> bytes:
    pad = (-len(codes)) % 4
    c = np.concatenate([codes, np.zeros(pad, np.uint8)]).reshape(-1, 4)
    return ((c[:, 0] << 6) | (c[:, 1] << 4) | (c[:, 2] << 2) | c[:, 3]).astype(np.uint8).tobytes()


def _unpack_codes(data: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(data, dtype=np.uint8)
    c = np.stack([(b >> 6) & 3, (b >> 4) & 3, (b >> 2) & 3, b & 3], axis=1).ravel()
    return c[:count]


# -- blocks ---------------------------------------------------------------

@dataclass(frozen=True)
class CompressedBlock:
    codec: CodecId
    bound: ErrorBound
    count: int
    payload: bytes
    checksum: int

    @property
    def nbytes(self) -> int:
        """Serialized size; this is what memory accounting charges."""
        return HEADER.size + len(self.payload)

    def to_bytes(self) -> bytes:
        head = HEADER.pack(MAGIC, int(self.codec), int(self.bound.mode), self.bound.value,
                           self.count, len(self.payload), self.checksum)
        return head + self.payload

    @classmethod
    def read_from(cls, buf: bytes | memoryview, offset: int = 0) -> tuple["CompressedBlock", int]:
        """Parse one block at `offset`; returns the block and the end offset."""
        if len(buf) - offset < HEADER.size:
            raise CorruptionError("truncated block header")
        magic, codec, mode, value, count, length, crc = HEADER.unpack_from(buf, offset)
        if magic != MAGIC:
            raise FormatError(f"bad block magic {magic!r}")
        try:
            codec_id, bound_mode = CodecId(codec), BoundMode(mode)
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
        start = offset + HEADER.size
        if len(buf) - start < length:
            raise CorruptionError("truncated block payload")
        payload = bytes(buf[start:start + length])
        bound = ErrorBound(bound_mode, value)
        return cls(codec_id, bound, count, payload, crc), start + length

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CompressedBlock":
        block, end = cls.read_from(buf)
        if end != len(buf):
            raise CorruptionError("trailing bytes after block")
        return block

    def verify(self) -> None:
        if zlib.crc32(self.payload) != self.checksum:
            raise CorruptionError("block checksum mismatch")


def _as_scalars(values: np.ndarray, codec: CodecId) -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=np.complex128)
    if codec is CodecId.SOLUTION_D:
        return np.concatenate([v.real, v.imag])
    return v.view(np.float64)


def _from_scalars(scalars: np.ndarray, codec: CodecId, count: int) -> np.ndarray:
    if codec is CodecId.SOLUTION_D:
        out = np.empty(count, dtype=np.complex128)
        out.real = scalars[:count]
        out.imag = scalars[count:]
        return out
    return scalars.view(np.complex128)


def quantize(values: np.ndarray, bound: ErrorBound) -> np.ndarray:
    """The lossy stage alone, applied to a complex array."""
    scalars = np.ascontiguousarray(values, dtype=np.complex128).view(np.float64)
    if bound.mode is BoundMode.LOSSLESS:
        return scalars.copy().view(np.complex128)
    if bound.mode is BoundMode.RELATIVE:
        return truncate_array(scalars, sig_bit_count(bound.value)).view(np.complex128)
    return _truncate_absolute(scalars, bound.value).view(np.complex128)


def compress_block(values: np.ndarray, bound: ErrorBound,
                   codec: CodecId = CodecId.SOLUTION_C, backend=None,
                   allow_absolute: bool = False) -> CompressedBlock:
    values = np.ascontiguousarray(values, dtype=np.complex128)
    if values.ndim != 1 or len(values) == 0:
        raise ValueError("expected a non-empty 1-D block")
    if bound.mode is BoundMode.ABSOLUTE and not allow_absolute:
        raise UnsupportedModeError("absolute bounds are only available to standalone tooling")
    backend = backend or DEFAULT_BACKEND
    if codec is CodecId.LOSSLESS_ONLY:
        if bound.mode is not BoundMode.LOSSLESS:
            raise UnsupportedModeError("LOSSLESS_ONLY codec cannot apply a lossy bound")
        stream = values.astype("<c16").tobytes()
    else:
        scalars = _as_scalars(values, codec)
        if bound.mode is BoundMode.LOSSLESS:
            bits = scalars.view(np.uint64)
        else:
            if not np.all(np.isfinite(scalars)):
                raise ValueError("cannot lossy-compress non-finite values")
            if bound.mode is BoundMode.RELATIVE:
                bits = truncate_array(scalars, sig_bit_count(bound.value)).view(np.uint64)
            else:
                bits = _truncate_absolute(scalars, bound.value).view(np.uint64)
        stream = _encode_stream(bits, _scalar_width(bound))
    payload = backend.compress(stream)
    return CompressedBlock(codec, bound, len(values), payload, zlib.crc32(payload))


def decompress_block(cb: CompressedBlock) -> np.ndarray:
    if not cb.payload:
        raise CorruptionError("empty payload")
    cb.verify()
    try:
        codec = CodecId(cb.codec)
    except ValueError as exc:
        raise FormatError(f"unknown codec id {cb.codec}") from exc
    stream = _backend_decompress(cb.payload)
    if codec is CodecId.LOSSLESS_ONLY:
        if len(stream) != 16 * cb.count:
            raise CorruptionError("lossless payload has wrong length")
        return np.frombuffer(stream, dtype="<c16").astype(np.complex128)
    bits = _decode_stream(stream, 2 * cb.count, _scalar_width(cb.bound))
    return _from_scalars(bits.view(np.float64), codec, cb.count)


# -- error analysis ------------------------------------------------------

def _flat(x) -> np.ndarray:
    a = np.asarray(x)
    if np.iscomplexobj(a):
        return np.ascontiguousarray(a, dtype=np.complex128).view(np.float64)
    return a.astype(np.float64, copy=False).ravel()


def pointwise_relative_errors(original, decompressed) -> np.ndarray:
    """|d - d'| / |d| per scalar; zero where d = 0 (which demands d' = 0)."""
    d, dd = _flat(original), _flat(decompressed)
    if d.shape != dd.shape:
        raise ValueError("length mismatch")
    zero = d == 0
    if np.any(dd[zero] != 0):
        raise ContractViolation("a zero scalar decompressed to a non-zero value")
    err = np.zeros_like(d)
    nz = ~zero
    err[nz] = np.abs(d[nz] - dd[nz]) / np.abs(d[nz])
    return err


def max_relative_error(original, decompressed) -> float:
    err = pointwise_relative_errors(original, decompressed)
    return float(err.max()) if err.size else 0.0


def lag1_autocorrelation(errors) -> float:
    x = np.asarray(errors, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-1], x[1:]) / denom)


def error_cdf(normalized: np.ndarray, points: int = 11) -> list[tuple[float, float]]:
    """Empirical CDF of normalized errors sampled at evenly spaced thresholds in [0, 1]."""
    s = np.sort(np.asarray(normalized, dtype=np.float64).ravel())
    grid = np.linspace(0.0, 1.0, points)
    frac = np.searchsorted(s, grid, side="right") / max(len(s), 1)
    return [(float(g), float(f)) for g, f in zip(grid, frac)]
