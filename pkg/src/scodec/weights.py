"""Binary weight store (SCWT format).

Layout, little endian throughout:

    magic "SCWT" | version u16 | config_len u32 | config utf-8 bytes
    | param_count u32 | params... | digest 8 bytes

Each parameter record is

    name_len u16 | name utf-8 | dtype u8 | rank u8 | extents u32*rank
    | payload float32*numel

dtype 0 is the only defined value (float32, little endian). Parameters are
stored sorted by name (bytewise). The trailing digest is the first 8 bytes
of SHA-256 over the config bytes followed by every parameter record's
name, dtype, rank, extents and payload in that same sorted order; it doubles
as the model identity stamped into bitstream containers.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from collections.abc import Mapping

import numpy as np

from .errors import WeightFormatError, WeightSchemaError

MAGIC = b"SCWT"
VERSION = 1
DIGEST_LEN = 8
_DTYPE_F32 = 0


def _param_record_bytes(name: str, value: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    if len(name_b) > 0xFFFF:
        raise WeightFormatError(f"parameter name too long: {name[:40]}...")
    head = struct.pack(
        f"<H{len(name_b)}sBB{value.ndim}I",
        len(name_b),
        name_b,
        _DTYPE_F32,
        value.ndim,
        *value.shape,
    )
    return head + value.astype("<f4", copy=False).tobytes()


def _digest_record_bytes(name: str, value: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    head = struct.pack(f"<{len(name_b)}sBB{value.ndim}I", name_b, _DTYPE_F32, value.ndim, *value.shape)
    return head + value.astype("<f4", copy=False).tobytes()


def _check_param(name: str, value: np.ndarray) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype != np.float32:
        raise WeightFormatError(f"parameter {name!r} must be float32")
    if not 1 <= arr.ndim <= 4:
        raise WeightFormatError(f"parameter {name!r} must have rank 1..4")
    if arr.size == 0:
        raise WeightFormatError(f"parameter {name!r} is empty")
    return np.ascontiguousarray(arr)


def compute_model_id(params: Mapping[str, np.ndarray], config_text: str) -> bytes:
    """First 8 bytes of the SHA-256 over config and sorted parameter records."""
    h = hashlib.sha256()
    h.update(config_text.encode("utf-8"))
    for name in sorted(params):
        h.update(_digest_record_bytes(name, _check_param(name, params[name])))
    return h.digest()[:DIGEST_LEN]


class WeightStore:
    """Named float32 parameter arrays plus the config text they were built for."""

    def __init__(self, params: Mapping[str, np.ndarray], config_text: str):
        self._params = {name: _check_param(name, params[name]) for name in sorted(params)}
        self.config_text = config_text
        self.model_id = compute_model_id(self._params, config_text)

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def get(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        """Fetch one parameter, enforcing the shape the network expects."""
        try:
            value = self._params[name]
        except KeyError:
            raise WeightSchemaError(f"weight store is missing parameter {name!r}") from None
        if value.shape != tuple(shape):
            raise WeightSchemaError(
                f"parameter {name!r} has shape {value.shape}, expected {tuple(shape)}"
            )
        return value

    def raw(self) -> dict[str, np.ndarray]:
        return dict(self._params)


def save_weights(store: WeightStore, path: str | os.PathLike) -> bytes:
    """Write the store atomically (temp file then rename). Returns the model id."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    config_b = store.config_text.encode("utf-8")
    blob += struct.pack("<I", len(config_b))
    blob += config_b
    blob += struct.pack("<I", len(store))
    for name in store.names():
        blob += _param_record_bytes(name, store.get(name, store.raw()[name].shape))
    blob += store.model_id

    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".scwt.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return store.model_id


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFormatError(
                f"truncated weight file: needed {n} bytes for {what} at offset {self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path: str | os.PathLike) -> WeightStore:
    """Parse and verify a weight file. Digest mismatch raises WeightFormatError."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise WeightFormatError("not a weight file (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    (config_len,) = r.unpack("<I", "config length")
    config_text = r.take(config_len, "config text").decode("utf-8")
    (count,) = r.unpack("<I", "parameter count")

    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        if name in params:
            raise WeightFormatError(f"duplicate parameter {name!r}")
        (dtype, rank) = r.unpack("<BB", "dtype and rank")
        if dtype != _DTYPE_F32:
            raise WeightFormatError(f"parameter {name!r} has unsupported dtype {dtype}")
        if not 1 <= rank <= 4:
            raise WeightFormatError(f"parameter {name!r} has invalid rank {rank}")
        extents = r.unpack(f"<{rank}I", "extents")
        if any(e < 1 for e in extents):
            raise WeightFormatError(f"parameter {name!r} has a zero extent")
        numel = 1
        for e in extents:
            numel *= e
        payload = r.take(4 * numel, f"payload of {name!r}")
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(extents).copy()

    digest = r.take(DIGEST_LEN, "digest")
    if r.pos != len(data):
        raise WeightFormatError(f"{len(data) - r.pos} trailing bytes after digest")
    names = list(params)
    if names != sorted(names):
        raise WeightFormatError("parameters are not sorted by name")
    store = WeightStore(params, config_text)
    if store.model_id != digest:
        raise WeightFormatError("weight digest mismatch, file is corrupt")
    return store
