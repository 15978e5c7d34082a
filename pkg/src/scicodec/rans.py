"""Reference rANS range coder.

Pure-Python, bit-exact, and deliberately scalar: this module is the
normative definition of the payload byte format. The optional native
coder must reproduce these bytes exactly (see ``conformance/``).

Coder parameters (fixed for format version 1):

* 32-bit state, 8-bit renormalization, lower bound ``L = 1 << 23``.
* 16-bit probability precision: every table's frequencies sum to 65536.
* Symbols are encoded in reverse so the decoder runs forward.
* The final state is flushed as 4 little-endian bytes at the *front* of
  the payload, followed by the renormalization bytes in decode order.
* Values outside a table's regular range are sent as the table's escape
  symbol followed by the value as 4 raw bytes (two's-complement int32,
  little-endian, each byte coded with a uniform 256-ary distribution).

An empty message is therefore exactly 4 bytes (the flushed initial state),
and a decoder must land back on the initial state with no bytes left over;
anything else is treated as corruption.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass, field

PRECISION = 16
TOTAL_FREQ = 1 << PRECISION
RANS_L = 1 << 23
_STATE_MASK = 0xFFFFFFFF
_BYTE_FREQ = 256  # uniform frequency of one raw byte symbol
_RAW_VALUE_BYTES = 4


class CodingError(ValueError):
    """Raised on invalid tables, contexts, or corrupt streams."""


@dataclass(frozen=True)
class CdfTable:
    """Quantized cumulative distribution for one coding context.

    ``freqs`` lists the frequency of each regular symbol followed by the
    escape symbol; ``offset`` is the integer value of the first regular
    symbol. ``cum`` has one more entry than ``freqs`` and ends at 65536.
    """

    offset: int
    freqs: tuple[int, ...]
    cum: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.freqs) < 2:
            raise CodingError("table needs at least one regular symbol plus escape")
        if any(f < 1 for f in self.freqs):
            raise CodingError("every symbol frequency must be >= 1")
        if len(self.cum) != len(self.freqs) + 1 or self.cum[0] != 0:
            raise CodingError("malformed cumulative array")
        for i, f in enumerate(self.freqs):
            if self.cum[i + 1] - self.cum[i] != f:
                raise CodingError("cumulative array inconsistent with frequencies")
        if self.cum[-1] != TOTAL_FREQ:
            raise CodingError(f"frequencies must sum to {TOTAL_FREQ}")

    @property
    def num_regular(self) -> int:
        return len(self.freqs) - 1

    @property
    def escape_index(self) -> int:
        return len(self.freqs) - 1

    def index_for(self, value: int) -> int:
        """Symbol index for ``value``; the escape index if out of range."""
        i = value - self.offset
        if 0 <= i < self.num_regular:
            return i
        return self.escape_index

    def symbol_at_slot(self, slot: int) -> int:
        """Symbol index whose cumulative range contains ``slot``."""
        return bisect_right(self.cum, slot) - 1


def make_table(offset: int, freqs: list[int] | tuple[int, ...]) -> CdfTable:
    """Build a CdfTable from raw frequencies (escape included, sum 65536)."""
    freqs = tuple(int(f) for f in freqs)
    cum = [0]
    for f in freqs:
        cum.append(cum[-1] + f)
    return CdfTable(offset=int(offset), freqs=freqs, cum=tuple(cum))


def quantize_probabilities(probs, escape_mass: float) -> tuple[int, ...]:
    """Turn bin probabilities into integer frequencies summing to 65536.

    Largest-remainder apportionment with a per-symbol floor of 1: every
    unpinned frequency lands within one count of its ideal p * 65536.
    Raises if there is not enough mass to give each symbol its floor.
    """
    ideal = [float(p) * TOTAL_FREQ for p in probs] + [max(float(escape_mass), 0.0) * TOTAL_FREQ]
    n = len(ideal)
    if n > TOTAL_FREQ:
        raise CodingError("too many symbols for 16-bit precision; widen the table")
    freqs = [max(1, int(x)) for x in ideal]
    diff = TOTAL_FREQ - sum(freqs)
    if diff > 0:
        by_remainder = sorted(range(n), key=lambda i: ideal[i] - freqs[i], reverse=True)
        while diff > 0:
            for i in by_remainder:
                freqs[i] += 1
                diff -= 1
                if diff == 0:
                    break
    elif diff < 0:
        by_overshoot = sorted(range(n), key=lambda i: freqs[i] - ideal[i], reverse=True)
        while diff < 0:
            progressed = False
            for i in by_overshoot:
                if freqs[i] > 1:
                    freqs[i] -= 1
                    diff += 1
                    progressed = True
                    if diff == 0:
                        break
            if not progressed:
                raise CodingError("probability mass too thin to normalize; widen the table")
    return tuple(freqs)


def _ops_for(values, context_indices, tables) -> list[tuple[int, int]]:
    """Expand (value, context) pairs into (start, freq) ops in decode order."""
    ops: list[tuple[int, int]] = []
    for value, ctx in zip(values, context_indices, strict=True):
        if not 0 <= ctx < len(tables):
            raise CodingError(f"context index {ctx} out of range")
        t = tables[ctx]
        idx = t.index_for(value)
        ops.append((t.cum[idx], t.freqs[idx]))
        if idx == t.escape_index:
            u = int(value) & 0xFFFFFFFF
            for shift in range(0, 32, 8):
                b = (u >> shift) & 0xFF
                ops.append((b << 8, _BYTE_FREQ))
    return ops


def encode_symbols(values, context_indices, tables: list[CdfTable]) -> bytes:
    """Entropy-code integer ``values``, one CDF table per context index."""
    ops = _ops_for(values, context_indices, tables)
    state = RANS_L
    tail = bytearray()
    for start, freq in reversed(ops):
        x_max = ((RANS_L >> PRECISION) << 8) * freq
        while state >= x_max:
            tail.append(state & 0xFF)
            state >>= 8
        state = ((state // freq) << PRECISION) + (state % freq) + start
    if state > _STATE_MASK:
        raise CodingError("rANS state overflow")  # unreachable by construction
    tail.reverse()
    return struct.pack("<I", state) + bytes(tail)


def decode_symbols(data: bytes, context_indices, tables: list[CdfTable]) -> list[int]:
    """Exact inverse of :func:`encode_symbols`.

    Raises :class:`CodingError` on truncated or otherwise corrupt streams.
    """
    if len(data) < 4:
        raise CodingError("stream shorter than the flushed coder state")
    state = struct.unpack_from("<I", data, 0)[0]
    pos = 4

    def read_byte() -> int:
        nonlocal pos
        if pos >= len(data):
            raise CodingError("stream exhausted mid-decode")
        b = data[pos]
        pos += 1
        return b

    def pull(start: int, freq: int):
        nonlocal state
        slot = state & (TOTAL_FREQ - 1)
        state = freq * (state >> PRECISION) + slot - start
        while state < RANS_L:
            state = (state << 8) | read_byte()

    out: list[int] = []
    for ctx in context_indices:
        if not 0 <= ctx < len(tables):
            raise CodingError(f"context index {ctx} out of range")
        t = tables[ctx]
        slot = state & (TOTAL_FREQ - 1)
        idx = t.symbol_at_slot(slot)
        pull(t.cum[idx], t.freqs[idx])
        if idx == t.escape_index:
            u = 0
            for shift in range(0, 32, 8):
                slot = state & (TOTAL_FREQ - 1)
                b = slot >> 8
                pull(b << 8, _BYTE_FREQ)
                u |= b << shift
            value = u - (1 << 32) if u >= (1 << 31) else u
            out.append(value)
        else:
            out.append(t.offset + idx)
    if state != RANS_L:
        raise CodingError("decoder did not return to the initial state; stream corrupt")
    if pos != len(data):
        raise CodingError(f"{len(data) - pos} trailing bytes after decode; stream corrupt")
    return out


def table_bits(values, context_indices, tables: list[CdfTable]) -> float:
    """Information content of ``values`` under the tables, in bits.

    Escapes are charged their escape-symbol cost plus 32 raw bits; this is
    the quantity the coded length is benchmarked against.
    """
    import math

    bits = 0.0
    for value, ctx in zip(values, context_indices, strict=True):
        t = tables[ctx]
        idx = t.index_for(value)
        bits += PRECISION - math.log2(t.freqs[idx])
        if idx == t.escape_index:
            bits += 32.0
    return bits
