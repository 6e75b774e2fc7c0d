"""Little-endian binary messages and length-prefixed capture files.

The byte layouts are documented in ``docs/wire.md``. Every message ends with
a CRC-32 of all preceding bytes, so truncations and bit flips are reported
as :class:`~hyperdrive.errors.WireError` subclasses rather than decoded
into garbage.
"""

from __future__ import annotations

import struct
import zlib
from typing import BinaryIO, Iterator, Union

import numpy as np

from .cube import DataCube
from .mosaic import MosaicFrame
from .errors import (
    ChecksumError,
    EncodingError,
    FormatError,
    HyperdriveError,
    InvalidArgumentError,
    LengthError,
    VersionError,
)
from .radiometry import SpectrometerReading
from .sync import TimedMessage

__all__ = [
    "CUBE_MAGIC",
    "SPECTRUM_MAGIC",
    "VERSION",
    "DTYPE_U16",
    "DTYPE_F32",
    "encode_cube",
    "decode_cube",
    "encode_spectrum",
    "decode_spectrum",
    "encode_message",
    "decode_message",
    "read_header",
    "mosaic_to_cube",
    "cube_to_mosaic",
    "cube_header_length",
    "CaptureWriter",
    "write_capture",
    "iter_records",
    "stream_capture_file",
]

CUBE_MAGIC = b"HDC1"
SPECTRUM_MAGIC = b"HDS1"
VERSION = 1

DTYPE_U16 = 0
DTYPE_F32 = 1
_DTYPES = {DTYPE_U16: np.dtype("<u2"), DTYPE_F32: np.dtype("<f4")}
_DTYPE_NAMES = {"u16": DTYPE_U16, "uint16": DTYPE_U16, "f32": DTYPE_F32, "float32": DTYPE_F32}

CUBE_FLAG_QE = 0x01
CUBE_FLAG_MASK = 0x02
CUBE_FLAG_BAND_VALID = 0x04
_CUBE_FLAGS = CUBE_FLAG_QE | CUBE_FLAG_MASK | CUBE_FLAG_BAND_VALID

SPEC_FLAG_HUMIDITY = 0x01
SPEC_FLAG_TEMPERATURE = 0x02
SPEC_FLAG_INTEGRATION = 0x04
_SPEC_FLAGS = SPEC_FLAG_HUMIDITY | SPEC_FLAG_TEMPERATURE | SPEC_FLAG_INTEGRATION

# magic, version, timestamp, height, width, channels, dtype, flags, frame-id length
_CUBE_FIXED = struct.Struct("<4sHQIIIBBB")
# magic, version, timestamp, n, frame-id length
_SPEC_FIXED = struct.Struct("<4sHQHB")
_CRC = struct.Struct("<I")
_LEN = struct.Struct("<I")
_F32 = struct.Struct("<f")

MAX_RECORD = 0xFFFFFFFF


def _dtype_code(dtype) -> int:
    if isinstance(dtype, int) and dtype in _DTYPES:
        return dtype
    if isinstance(dtype, str) and dtype.lower() in _DTYPE_NAMES:
        return _DTYPE_NAMES[dtype.lower()]
    try:
        nd = np.dtype(dtype)
    except TypeError:
        nd = None
    if nd == np.uint16:
        return DTYPE_U16
    if nd == np.float32:
        return DTYPE_F32
    raise InvalidArgumentError(f"unsupported wire dtype {dtype!r}")


def _frame_id_bytes(frame_id: str) -> bytes:
    raw = frame_id.encode("utf-8")
    if len(raw) > 255:
        raise EncodingError("frame id longer than 255 bytes")
    return raw


def _pad_to_8(n: int) -> int:
    return (-n) % 8


def cube_header_length(channels: int, flags: int = 0, frame_id_len: int = 0,
                       height: int = 0, width: int = 0) -> int:
    """Bytes preceding the payload, including alignment padding."""
    n = _CUBE_FIXED.size + frame_id_len + 8 * channels
    if flags & CUBE_FLAG_QE:
        n += 4 * channels
    if flags & CUBE_FLAG_BAND_VALID:
        n += channels
    if flags & CUBE_FLAG_MASK:
        n += (height * width + 7) // 8
    return n + _pad_to_8(n)


def encode_cube(cube: DataCube, dtype="f32", include_mask: bool = None) -> bytes:
    """Serialize a cube; identical cubes always produce identical bytes.

    The validity mask and band-validity flags are only written when they
    carry information (some entry is ``False``) unless ``include_mask`` is
    given explicitly.
    """
    code = _dtype_code(dtype)
    wire_dtype = _DTYPES[code]
    h, w, c = cube.data.shape
    data = cube.data
    if code == DTYPE_U16:
        d = np.asarray(data)
        if d.size:
            if d.dtype.kind == "f" and not np.all(np.isfinite(d)):
                raise EncodingError("u16 encoding requires finite values")
            if d.min() < 0 or d.max() > 65535:
                raise EncodingError("value overflow: u16 encoding requires values in [0, 65535]")
            if d.dtype.kind == "f" and np.any(d != np.round(d)):
                raise EncodingError("u16 encoding requires integral values")
    payload = np.ascontiguousarray(data, dtype=wire_dtype)

    flags = 0
    if cube.qe is not None:
        flags |= CUBE_FLAG_QE
    if include_mask is None:
        include_mask = not bool(np.all(cube.validity_mask))
    if include_mask:
        flags |= CUBE_FLAG_MASK
    if not bool(np.all(cube.band_valid)):
        flags |= CUBE_FLAG_BAND_VALID
    fid = _frame_id_bytes(cube.frame_id)

    parts = [
        _CUBE_FIXED.pack(CUBE_MAGIC, VERSION, int(cube.timestamp_ns), h, w, c, code, flags, len(fid)),
        fid,
        np.asarray(cube.wavelengths_nm, dtype="<f4").tobytes(),
        np.asarray(cube.fwhm_nm, dtype="<f4").tobytes(),
    ]
    if flags & CUBE_FLAG_QE:
        parts.append(np.asarray(cube.qe, dtype="<f4").tobytes())
    if flags & CUBE_FLAG_BAND_VALID:
        parts.append(np.asarray(cube.band_valid, dtype=np.uint8).tobytes())
    if flags & CUBE_FLAG_MASK:
        parts.append(np.packbits(np.asarray(cube.validity_mask, dtype=bool).ravel()).tobytes())
    head_len = sum(len(p) for p in parts)
    parts.append(b"\x00" * _pad_to_8(head_len))
    parts.append(payload.tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def _check_envelope(buf, magic: bytes, fixed: struct.Struct):
    if len(buf) < fixed.size:
        raise LengthError(f"message of {len(buf)} bytes is shorter than the fixed header")
    head = fixed.unpack_from(buf, 0)
    if head[0] != magic:
        raise FormatError(f"bad magic {bytes(head[0])!r}, expected {magic!r}")
    if head[1] != VERSION:
        raise VersionError(f"unsupported version {head[1]}")
    return head


def _check_total(buf, expected_body: int):
    total = expected_body + _CRC.size
    if len(buf) < total:
        raise LengthError(f"message truncated: {len(buf)} bytes, header declares {total}")
    if len(buf) > total:
        raise LengthError(f"{len(buf) - total} trailing bytes after declared message end")
    (crc,) = _CRC.unpack_from(buf, expected_body)
    if zlib.crc32(memoryview(buf)[:expected_body]) != crc:
        raise ChecksumError("CRC-32 mismatch")


def read_header(buf) -> dict:
    """Parse and validate header fields of any message without decoding data."""
    buf = memoryview(buf).cast("B") if not isinstance(buf, (bytes, bytearray)) else buf
    if len(buf) < 4:
        raise LengthError("message shorter than its magic")
    magic = bytes(buf[:4])
    if magic == CUBE_MAGIC:
        _, ver, ts, h, w, c, code, flags, flen = _check_envelope(buf, CUBE_MAGIC, _CUBE_FIXED)
        off = _CUBE_FIXED.size
        if len(buf) < off + flen:
            raise LengthError("message truncated inside frame id")
        return {
            "type": "cube", "version": ver, "timestamp_ns": ts, "height": h, "width": w,
            "channels": c, "dtype": {0: "u16", 1: "f32"}.get(code, f"?{code}"), "flags": flags,
            "frame_id": bytes(buf[off : off + flen]).decode("utf-8", "replace"),
            "bytes": len(buf),
        }
    if magic == SPECTRUM_MAGIC:
        _, ver, ts, n, flen = _check_envelope(buf, SPECTRUM_MAGIC, _SPEC_FIXED)
        off = _SPEC_FIXED.size
        if len(buf) < off + flen:
            raise LengthError("message truncated inside frame id")
        return {
            "type": "spectrum", "version": ver, "timestamp_ns": ts, "n": n,
            "frame_id": bytes(buf[off : off + flen]).decode("utf-8", "replace"),
            "bytes": len(buf),
        }
    raise FormatError(f"bad magic {magic!r}")


def decode_cube(buf) -> DataCube:
    """Validate and decode a cube message.

    The payload array is a read-only view into ``buf``; no copy is made.
    """
    _, _, ts, h, w, c, code, flags, flen = _check_envelope(buf, CUBE_MAGIC, _CUBE_FIXED)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if flags & ~_CUBE_FLAGS:
        raise FormatError(f"unknown flag bits 0x{flags:02x}")
    dt = _DTYPES[code]
    head_len = cube_header_length(c, flags, flen, h, w)
    body_len = head_len + h * w * c * dt.itemsize
    _check_total(buf, body_len)

    off = _CUBE_FIXED.size
    try:
        frame_id = bytes(buf[off : off + flen]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("frame id is not valid UTF-8") from exc
    off += flen
    wl = np.frombuffer(buf, "<f4", c, off).astype(float)
    off += 4 * c
    fwhm = np.frombuffer(buf, "<f4", c, off).astype(float)
    off += 4 * c
    qe = band_valid = mask = None
    if flags & CUBE_FLAG_QE:
        qe = np.frombuffer(buf, "<f4", c, off).astype(float)
        off += 4 * c
    if flags & CUBE_FLAG_BAND_VALID:
        band_valid = np.frombuffer(buf, np.uint8, c, off).astype(bool)
        off += c
    if flags & CUBE_FLAG_MASK:
        nbytes = (h * w + 7) // 8
        bits = np.frombuffer(buf, np.uint8, nbytes, off)
        mask = np.unpackbits(bits, count=h * w).astype(bool).reshape(h, w)
    data = np.frombuffer(buf, dt, h * w * c, head_len).reshape(h, w, c)
    try:
        return DataCube(data, wl, fwhm, ts, mask, band_valid, qe, frame_id)
    except InvalidArgumentError as exc:
        raise FormatError(f"invalid cube metadata: {exc}") from exc


def encode_spectrum(reading: SpectrometerReading) -> bytes:
    n = len(reading.wavelengths_nm)
    if n < 1:
        raise InvalidArgumentError("spectrum message needs at least one sample")
    if n > 0xFFFF:
        raise EncodingError("spectrum longer than 65535 samples")
    fid = _frame_id_bytes(reading.device)
    flags = 0
    extras = []
    for bit, value in ((SPEC_FLAG_HUMIDITY, reading.humidity_pct),
                       (SPEC_FLAG_TEMPERATURE, reading.temperature_c),
                       (SPEC_FLAG_INTEGRATION, reading.integration_time_us)):
        if value is not None:
            flags |= bit
            extras.append(_F32.pack(value))
    body = b"".join([
        _SPEC_FIXED.pack(SPECTRUM_MAGIC, VERSION, int(reading.timestamp_ns), n, len(fid)),
        fid,
        np.asarray(reading.wavelengths_nm, dtype="<f4").tobytes(),
        np.asarray(reading.counts, dtype="<f4").tobytes(),
        bytes([flags]),
        *extras,
    ])
    return body + _CRC.pack(zlib.crc32(body))


def decode_spectrum(buf) -> SpectrometerReading:
    _, _, ts, n, flen = _check_envelope(buf, SPECTRUM_MAGIC, _SPEC_FIXED)
    if n < 1:
        raise FormatError("spectrum message declares zero samples")
    flags_off = _SPEC_FIXED.size + flen + 8 * n
    if len(buf) < flags_off + 1:
        raise LengthError(f"message truncated: {len(buf)} bytes, need at least {flags_off + 1}")
    flags = buf[flags_off]
    if flags & ~_SPEC_FLAGS:
        raise FormatError(f"unknown flag bits 0x{flags:02x}")
    n_extra = bin(flags).count("1")
    _check_total(buf, flags_off + 1 + 4 * n_extra)

    off = _SPEC_FIXED.size
    try:
        device = bytes(buf[off : off + flen]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("frame id is not valid UTF-8") from exc
    off += flen
    wl = np.frombuffer(buf, "<f4", n, off).astype(float)
    counts = np.frombuffer(buf, "<f4", n, off + 4 * n).astype(float)
    off = flags_off + 1
    extra = {}
    for bit, name in ((SPEC_FLAG_HUMIDITY, "humidity_pct"),
                      (SPEC_FLAG_TEMPERATURE, "temperature_c"),
                      (SPEC_FLAG_INTEGRATION, "integration_time_us")):
        if flags & bit:
            extra[name] = _F32.unpack_from(buf, off)[0]
            off += 4
    try:
        return SpectrometerReading(wl, counts, ts, device=device, **extra)
    except InvalidArgumentError as exc:
        raise FormatError(f"invalid spectrum contents: {exc}") from exc


def mosaic_to_cube(frame: MosaicFrame) -> DataCube:
    """Wrap a raw mosaic frame as a one-channel cube tagged with its pattern id."""
    return DataCube(frame.values[..., None], [0.0], [0.0], frame.timestamp_ns, frame_id=frame.pattern_id)


def cube_to_mosaic(cube: DataCube) -> MosaicFrame:
    if cube.channels != 1:
        raise FormatError(f"mosaic message must have one channel, got {cube.channels}")
    return MosaicFrame(cube.data[..., 0], cube.timestamp_ns, cube.frame_id)


# frame ids whose one-channel cubes carry raw mosaic frames
MOSAIC_IDS = ("vnir", "swir")


def encode_message(obj, dtype="f32") -> bytes:
    if isinstance(obj, MosaicFrame):
        return encode_cube(mosaic_to_cube(obj), dtype)
    if isinstance(obj, DataCube):
        return encode_cube(obj, dtype)
    if isinstance(obj, SpectrometerReading):
        return encode_spectrum(obj)
    raise InvalidArgumentError(f"cannot encode {type(obj).__name__}")


def decode_message(buf) -> Union[DataCube, SpectrometerReading]:
    if len(buf) < 4:
        raise LengthError("message shorter than its magic")
    magic = bytes(buf[:4])
    if magic == CUBE_MAGIC:
        return decode_cube(buf)
    if magic == SPECTRUM_MAGIC:
        return decode_spectrum(buf)
    raise FormatError(f"bad magic {magic!r}")


def to_timed(obj) -> TimedMessage:
    """Stream id comes from the cube frame id or the spectrometer device name."""
    if isinstance(obj, DataCube):
        if obj.frame_id in MOSAIC_IDS and obj.channels == 1:
            return TimedMessage(obj.frame_id, int(obj.timestamp_ns), cube_to_mosaic(obj))
        return TimedMessage(obj.frame_id, int(obj.timestamp_ns), obj)
    return TimedMessage(obj.device, int(obj.timestamp_ns), obj)


# --------------------------------------------------------------------------- capture files


class CaptureWriter:
    """Append length-prefixed messages to a capture file."""

    def __init__(self, path, mode: str = "wb"):
        self._fh: BinaryIO = open(path, mode)
        self.count = 0

    def write(self, message) -> None:
        raw = message if isinstance(message, (bytes, bytearray)) else encode_message(message)
        if len(raw) > MAX_RECORD:
            raise EncodingError("message too large for a capture record")
        self._fh.write(_LEN.pack(len(raw)))
        self._fh.write(raw)
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_capture(path, messages) -> int:
    with CaptureWriter(path) as w:
        for m in messages:
            w.write(m)
        return w.count


def iter_records(path) -> Iterator[tuple[int, bytes]]:
    """Yield ``(offset, message_bytes)`` one record at a time.

    Raises :class:`LengthError` naming the record offset if the file ends
    inside a record.
    """
    with open(path, "rb") as fh:
        offset = 0
        while True:
            prefix = fh.read(_LEN.size)
            if not prefix:
                return
            if len(prefix) < _LEN.size:
                raise LengthError(f"truncated length prefix at offset {offset}", offset)
            (n,) = _LEN.unpack(prefix)
            body = fh.read(n)
            if len(body) < n:
                raise LengthError(
                    f"record at offset {offset} declares {n} bytes, only {len(body)} present",
                    offset,
                )
            yield offset, body
            del body  # drop our reference before reading the next record
            offset += _LEN.size + n


def stream_capture_file(path) -> Iterator[TimedMessage]:
    """Replay a capture file as timed messages without loading it whole."""
    for offset, body in iter_records(path):
        try:
            obj = decode_message(body)
        except HyperdriveError as exc:
            if isinstance(exc, LengthError) and exc.offset is None:
                exc.offset = offset
            raise
        msg = to_timed(obj)
        del obj, body
        yield msg
        del msg
