"""Integer arithmetic coder over 32-bit state, plus bit-level I/O.

Encoder and decoder keep [low, high] as 32-bit integers and renormalize a
bit at a time: when the top bits of low and high agree the bit is emitted
(or consumed) and the window shifts; when the near-top bits pinch together
an underflow counter defers the carry until the next emitted bit resolves
it. finish() flushes one disambiguating bit; the decoder treats everything
past the end of the payload as zero bits.

Cumulative frequency tables are supplied per symbol by the caller, which
keeps the coder independent of any particular probability model. The total
must stay below MAX_TOTAL so that every symbol keeps a nonzero slice of the
coding range.
"""

from __future__ import annotations

from .errors import CodingError

STATE_BITS = 32
FULL_MASK = (1 << STATE_BITS) - 1
HALF_MASK = 1 << (STATE_BITS - 1)
QUARTER_MASK = 1 << (STATE_BITS - 2)
MAX_TOTAL = (1 << (STATE_BITS - 2)) + 2


class BitWriter:
    """Accumulates single bits MSB-first into bytes, tracking the exact bit
    count before padding."""

    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._n = 0
        self.bit_count = 0

    def write(self, bit: int) -> None:
        self._acc = (self._acc << 1) | (bit & 1)
        self._n += 1
        self.bit_count += 1
        if self._n == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._n = 0

    def getvalue(self) -> bytes:
        """The bits written so far, zero-padded to a byte boundary."""
        out = bytearray(self._bytes)
        if self._n:
            out.append(self._acc << (8 - self._n))
        return bytes(out)


class BitReader:
    """Serves bits MSB-first from a byte string; past the end it returns an
    endless run of zeros, which is the convention the coder's flush relies
    on."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def read(self) -> int:
        byte_index = self._pos >> 3
        if byte_index >= len(self._data):
            return 0
        bit = (self._data[byte_index] >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return bit


class RangeEncoder:
    def __init__(self, out: BitWriter):
        self.out = out
        self.low = 0
        self.high = FULL_MASK
        self.pending = 0
        self.finished = False

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        """Narrow the range to the slice [cum_lo, cum_hi) of total."""
        if self.finished:
            raise CodingError("encoder already flushed")
        if not 0 <= cum_lo < cum_hi <= total:
            raise CodingError(
                f"bad frequency slice [{cum_lo}, {cum_hi}) of total {total}"
            )
        if total > MAX_TOTAL:
            raise CodingError(f"frequency total {total} exceeds {MAX_TOTAL}")
        span = self.high - self.low + 1
        self.high = self.low + (span * cum_hi) // total - 1
        self.low = self.low + (span * cum_lo) // total
        while True:
            if self.low & HALF_MASK == self.high & HALF_MASK:
                bit = (self.low >> (STATE_BITS - 1)) & 1
                self.out.write(bit)
                inverse = bit ^ 1
                for _ in range(self.pending):
                    self.out.write(inverse)
                self.pending = 0
            elif self.low & ~self.high & QUARTER_MASK:
                # low in second quarter, high in third: defer a carry bit and
                # expand the middle half of the interval
                self.pending += 1
                self.low -= QUARTER_MASK
                self.high -= QUARTER_MASK
            else:
                break
            self.low = (self.low << 1) & FULL_MASK
            self.high = ((self.high << 1) & FULL_MASK) | 1

    def finish(self) -> None:
        """Flush: one bit (plus any deferred carries) pins the final value
        inside the range once the decoder pads with zeros."""
        if self.finished:
            return
        self.finished = True
        self.out.write(1)
        for _ in range(self.pending):
            self.out.write(0)
        self.pending = 0


class RangeDecoder:
    def __init__(self, bits: BitReader):
        self.bits = bits
        self.low = 0
        self.high = FULL_MASK
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | bits.read()

    def decode_target(self, total: int) -> int:
        """The frequency-scale value the next symbol's slice must contain."""
        if total > MAX_TOTAL:
            raise CodingError(f"frequency total {total} exceeds {MAX_TOTAL}")
        span = self.high - self.low + 1
        return ((self.code - self.low + 1) * total - 1) // span

    def consume(self, cum_lo: int, cum_hi: int, total: int) -> None:
        """Mirror of RangeEncoder.encode for the symbol just identified."""
        if not 0 <= cum_lo < cum_hi <= total:
            raise CodingError(
                f"bad frequency slice [{cum_lo}, {cum_hi}) of total {total}"
            )
        span = self.high - self.low + 1
        self.high = self.low + (span * cum_hi) // total - 1
        self.low = self.low + (span * cum_lo) // total
        while True:
            if self.low & HALF_MASK == self.high & HALF_MASK:
                pass
            elif self.low & ~self.high & QUARTER_MASK:
                self.code -= QUARTER_MASK
                self.low -= QUARTER_MASK
                self.high -= QUARTER_MASK
            else:
                break
            self.low = (self.low << 1) & FULL_MASK
            self.high = ((self.high << 1) & FULL_MASK) | 1
            self.code = ((self.code << 1) & FULL_MASK) | self.bits.read()
