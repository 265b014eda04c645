"""Bitstream container (SCBS format).

Fixed 32-byte header, an optional 12-byte color payload, five u32 stream
lengths, then the five range-coded streams back to back. Little endian.

    offset  size  field
    0       4     magic "SCBS"
    4       2     format version (1)
    6       4     original width in pixels
    10      4     original height in pixels
    14      8     model id (weight store digest)
    22      2     denoising timestep index
    24      2     flags: bit 0 = color payload present, bit 1 = tiled encode
    26      6     reserved, written as zero
    32      12    color payload if flag set: u16 quantized mean R,G,B then std R,G,B
    +       20    stream lengths: hyper, then groups 1..4
    +       ...   stream bytes in the same order

Color statistics quantize to 16 bits per value: q = floor(v*(2^16-1) + 0.5)
over the [0,1] domain, decoded as q/(2^16-1). The payload is exactly 96
bits per image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import ContainerError

MAGIC = b"SCBS"
VERSION = 1
MODEL_ID_LEN = 8
HEADER_LEN = 32
COLOR_PAYLOAD_LEN = 12
STREAM_COUNT = 5

FLAG_COLOR = 1 << 0
FLAG_TILED = 1 << 1
_KNOWN_FLAGS = FLAG_COLOR | FLAG_TILED

_STAT_SCALE = (1 << 16) - 1


def quantize_stat(value: float) -> int:
    """Quantize one color statistic from [0,1] to a 16-bit code."""
    v = min(max(float(value), 0.0), 1.0)
    return min(int(v * _STAT_SCALE + 0.5), _STAT_SCALE)


def dequantize_stat(code: int) -> float:
    if not 0 <= code <= _STAT_SCALE:
        raise ContainerError(f"color stat code {code} out of 16-bit range")
    return code / _STAT_SCALE


@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    model_id: bytes
    timestep: int
    color_present: bool
    tiled: bool

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContainerError("image extents must be at least 1x1")
        if self.width > 0xFFFFFFFF or self.height > 0xFFFFFFFF:
            raise ContainerError("image extents exceed u32")
        if len(self.model_id) != MODEL_ID_LEN:
            raise ContainerError(f"model id must be {MODEL_ID_LEN} bytes")
        if not 0 <= self.timestep <= 0xFFFF:
            raise ContainerError("timestep index exceeds u16")


@dataclass(frozen=True)
class ParsedContainer:
    header: ContainerHeader
    color_codes: tuple[int, ...] | None  # 6 u16s: mean RGB then std RGB
    streams: tuple[bytes, ...]  # hyper, group1..group4


def write_container(
    header: ContainerHeader,
    color_codes: tuple[int, ...] | None,
    streams: tuple[bytes, ...],
) -> bytes:
    if len(streams) != STREAM_COUNT:
        raise ContainerError(f"container needs {STREAM_COUNT} streams")
    if header.color_present != (color_codes is not None):
        raise ContainerError("color flag does not match payload presence")
    flags = (FLAG_COLOR if header.color_present else 0) | (
        FLAG_TILED if header.tiled else 0
    )
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<II", header.width, header.height)
    out += header.model_id
    out += struct.pack("<HH", header.timestep, flags)
    out += b"\x00" * 6
    if color_codes is not None:
        if len(color_codes) != 6 or any(not 0 <= c <= _STAT_SCALE for c in color_codes):
            raise ContainerError("color payload must be six 16-bit codes")
        out += struct.pack("<6H", *color_codes)
    for stream in streams:
        out += struct.pack("<I", len(stream))
    for stream in streams:
        out += stream
    return bytes(out)


def parse_container(data: bytes) -> ParsedContainer:
    """Strict parse; any malformation raises ContainerError naming the offset."""

    def need(offset: int, count: int, what: str) -> bytes:
        if offset + count > len(data):
            raise ContainerError(
                f"truncated container: {what} needs {count} bytes at offset {offset}"
            )
        return data[offset : offset + count]

    if need(0, 4, "magic") != MAGIC:
        raise ContainerError("not a container (bad magic at offset 0)")
    (version,) = struct.unpack("<H", need(4, 2, "version"))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} at offset 4")
    width, height = struct.unpack("<II", need(6, 8, "extents"))
    model_id = need(14, MODEL_ID_LEN, "model id")
    timestep, flags = struct.unpack("<HH", need(22, 4, "timestep and flags"))
    if flags & ~_KNOWN_FLAGS:
        raise ContainerError(f"unknown flag bits 0x{flags:04x} at offset 24")
    need(26, 6, "reserved bytes")

    pos = HEADER_LEN
    color_codes = None
    if flags & FLAG_COLOR:
        color_codes = struct.unpack("<6H", need(pos, COLOR_PAYLOAD_LEN, "color payload"))
        pos += COLOR_PAYLOAD_LEN

    lengths = struct.unpack(
        f"<{STREAM_COUNT}I", need(pos, 4 * STREAM_COUNT, "stream lengths")
    )
    pos += 4 * STREAM_COUNT
    streams = []
    for i, length in enumerate(lengths):
        streams.append(need(pos, length, f"stream {i}"))
        pos += length
    if pos != len(data):
        raise ContainerError(f"{len(data) - pos} trailing bytes at offset {pos}")

    header = ContainerHeader(
        width=width,
        height=height,
        model_id=model_id,
        timestep=timestep,
        color_present=bool(flags & FLAG_COLOR),
        tiled=bool(flags & FLAG_TILED),
    )
    return ParsedContainer(header=header, color_codes=color_codes, streams=tuple(streams))
