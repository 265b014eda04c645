"""Carry-less byte-oriented range coder.

32-bit low/range state, 16-bit frequency totals. Renormalization emits the
top byte whenever the top bytes of low and low+range agree (XOR test) and
otherwise, when range has shrunk below 2^16, truncates range to the
distance to the next 2^16 boundary (-low mod 2^16) so no carry propagation
is ever needed. The encoder flushes four bytes of low at the end; the
decoder primes its code register with four bytes. All arithmetic is modulo
2^32, which this implementation applies through explicit masking.

Integer coding tables only. A table covers a contiguous symbol support plus
one final escape bucket; escaped symbols are followed by their value coded
as a raw 16-bit offset (symbol + 32768) under a uniform table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodingError, DecodeError

MASK = 0xFFFFFFFF
TOP = 1 << 24
BOT = 1 << 16
TOTAL = 1 << 16
RAW_OFFSET = 1 << 15
FLUSH_BYTES = 4


class RangeEncoder:
    """Streaming encoder. encode() per symbol interval, then finish() once."""

    def __init__(self):
        self._low = 0
        self._range = MASK
        self._out = bytearray()
        self._finished = False

    def encode(self, cum_low: int, cum_high: int, total: int = TOTAL) -> None:
        """Narrow the interval to [cum_low, cum_high) out of total."""
        if self._finished:
            raise CodingError("encoder already finished")
        if not (0 <= cum_low < cum_high <= total) or total > BOT:
            raise CodingError(
                f"invalid interval [{cum_low}, {cum_high}) of {total}"
            )
        r = self._range // total
        self._low = (self._low + r * cum_low) & MASK
        self._range = r * (cum_high - cum_low)

        low, rng = self._low, self._range
        out = self._out
        while True:
            if (low ^ ((low + rng) & MASK)) < TOP:
                pass
            elif rng < BOT:
                rng = (-low) & (BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        self._low, self._range = low, rng

    def finish(self) -> bytes:
        """Flush the remaining state. The stream is always at least 4 bytes."""
        if self._finished:
            raise CodingError("encoder already finished")
        self._finished = True
        low = self._low
        for _ in range(FLUSH_BYTES):
            self._out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK
        return bytes(self._out)


class RangeDecoder:
    """Streaming decoder over one finished byte stream."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = MASK
        self._code = 0
        self._mid_symbol = False
        for _ in range(FLUSH_BYTES):
            self._code = ((self._code << 8) | self._next_byte()) & MASK

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise DecodeError("compressed stream truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_freq(self, total: int = TOTAL) -> int:
        """Current cumulative-frequency value; must be followed by decode_update."""
        if self._mid_symbol:
            raise CodingError("decode_freq called twice without decode_update")
        if not 1 <= total <= BOT:
            raise CodingError(f"invalid total {total}")
        self._range //= total
        value = ((self._code - self._low) & MASK) // self._range
        if value >= total:
            raise DecodeError("corrupt stream: cumulative value outside table")
        self._mid_symbol = True
        return value

    def decode_update(self, cum_low: int, cum_high: int, total: int = TOTAL) -> None:
        """Consume the symbol whose interval is [cum_low, cum_high) out of total."""
        if not self._mid_symbol:
            raise CodingError("decode_update without a preceding decode_freq")
        if not 0 <= cum_low < cum_high <= total:
            raise CodingError(f"invalid interval [{cum_low}, {cum_high}) of {total}")
        self._mid_symbol = False
        self._low = (self._low + self._range * cum_low) & MASK
        self._range *= cum_high - cum_low

        low, rng, code = self._low, self._range, self._code
        while True:
            if (low ^ ((low + rng) & MASK)) < TOP:
                pass
            elif rng < BOT:
                rng = (-low) & (BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & MASK
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        self._low, self._range, self._code = low, rng, code


@dataclass(frozen=True)
class CdfTable:
    """Integer cumulative table over an inclusive symbol support plus escape.

    cum has length (support size + 2): one bucket per in-support symbol and
    a final escape bucket. cum[0] == 0, cum[-1] == TOTAL, strictly
    increasing (every bucket holds at least one count).
    """

    support: tuple[int, int]
    cum: np.ndarray

    def __post_init__(self):
        lo, hi = self.support
        buckets = hi - lo + 2
        cum = np.asarray(self.cum, dtype=np.int64)
        if lo > hi:
            raise CodingError("empty symbol support")
        if cum.shape != (buckets + 1,):
            raise CodingError(f"cum must have {buckets + 1} entries, got {cum.shape}")
        if cum[0] != 0 or cum[-1] != TOTAL:
            raise CodingError("cum must start at 0 and end at the 16-bit total")
        if not (np.diff(cum) > 0).all():
            raise CodingError("every bucket needs a positive count")
        object.__setattr__(self, "cum", cum)

    @property
    def escape_bucket(self) -> int:
        return self.support[1] - self.support[0] + 1


class CdfRows:
    """A batch of per-element tables sharing one support.

    cum is an int64 matrix, one row per element, each row a valid CdfTable
    cum vector. Used on the hot path so per-element tables need not be
    wrapped in objects.
    """

    def __init__(self, support: tuple[int, int], cum: np.ndarray):
        lo, hi = support
        buckets = hi - lo + 2
        cum = np.asarray(cum, dtype=np.int64)
        if cum.ndim != 2 or cum.shape[1] != buckets + 1:
            raise CodingError(f"cum rows must have {buckets + 1} columns")
        if (cum[:, 0] != 0).any() or (cum[:, -1] != TOTAL).any():
            raise CodingError("cum rows must span [0, TOTAL]")
        if not (np.diff(cum, axis=1) > 0).all():
            raise CodingError("every bucket needs a positive count")
        self.support = (int(lo), int(hi))
        self.cum = cum

    def __len__(self) -> int:
        return self.cum.shape[0]

    def table(self, i: int) -> CdfTable:
        return CdfTable(self.support, self.cum[i])


def _row_iter(tables, count: int):
    """Yield (support, cum_row) per position for any accepted table form."""
    if isinstance(tables, CdfTable):
        for _ in range(count):
            yield tables.support, tables.cum
    elif isinstance(tables, CdfRows):
        if len(tables) != count:
            raise CodingError(f"need {count} tables, got {len(tables)}")
        for i in range(count):
            yield tables.support, tables.cum[i]
    else:
        seq = list(tables)
        if len(seq) != count:
            raise CodingError(f"need {count} tables, got {len(seq)}")
        for t in seq:
            yield t.support, t.cum


def encode_stream(symbols, tables) -> bytes:
    """Encode integer symbols against per-position tables.

    Symbols outside a table's support are escape coded: the escape bucket
    followed by the symbol as a raw 16-bit value, which bounds the symbol
    range to [-32768, 32767].
    """
    symbols = np.asarray(symbols)
    if symbols.ndim != 1:
        raise CodingError("encode_stream expects a flat symbol array")
    enc = RangeEncoder()
    for value, (support, cum) in zip(symbols.tolist(), _row_iter(tables, len(symbols))):
        lo, hi = support
        if lo <= value <= hi:
            b = value - lo
            enc.encode(int(cum[b]), int(cum[b + 1]))
        else:
            b = hi - lo + 1
            enc.encode(int(cum[b]), int(cum[b + 1]))
            raw = value + RAW_OFFSET
            if not 0 <= raw < TOTAL:
                raise CodingError(f"symbol {value} outside escapable range")
            enc.encode(raw, raw + 1)
    return enc.finish()


def decode_stream(data: bytes, tables, count: int) -> np.ndarray:
    """Decode count symbols; exact inverse of encode_stream."""
    dec = RangeDecoder(data)
    out = np.empty(count, dtype=np.int32)
    for i, (support, cum) in enumerate(_row_iter(tables, count)):
        lo, hi = support
        value = dec.decode_freq()
        b = int(np.searchsorted(cum, value, side="right")) - 1
        dec.decode_update(int(cum[b]), int(cum[b + 1]))
        if b == hi - lo + 1:
            raw = dec.decode_freq()
            dec.decode_update(raw, raw + 1)
            out[i] = raw - RAW_OFFSET
        else:
            out[i] = lo + b
    return out
