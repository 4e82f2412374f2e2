"""Adaptive entropy coding of quantized latent codes.

Each latent dimension gets its own frequency table over a shared integer
alphabet. Tables start uniform with add-1 smoothing (every symbol counts
once) and are bumped after each coded symbol; encoder and decoder apply the
identical update schedule, so the two stay synchronized without any side
information beyond the header. Symbols are interleaved dimension-major per
feature: feature 0 dims 0..M-1, then feature 1, and so on.

The serialized container (magic ``FCB1``) carries the producing model id,
the code count and width, the alphabet bounds, and the exact payload bit
count ahead of the byte-padded payload. Rates derive from payload_bits
alone; headers are deliberately excluded so that rate comparisons measure
the code itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .binio import ByteReader, ByteWriter, atomic_write_bytes
from .errors import CodingError, ConfigError, FormatError, ShapeError
from .rangecoder import BitReader, BitWriter, RangeDecoder, RangeEncoder

BITSTREAM_MAGIC = b"FCB1"
BITSTREAM_VERSION = 1

DEFAULT_MIN_SYMBOL = -20
DEFAULT_MAX_SYMBOL = 20


@dataclass(frozen=True)
class SymbolAlphabet:
    """Closed integer interval [min_symbol, max_symbol] of codable values."""

    min_symbol: int = DEFAULT_MIN_SYMBOL
    max_symbol: int = DEFAULT_MAX_SYMBOL

    def __post_init__(self):
        if self.max_symbol < self.min_symbol:
            raise ConfigError(
                f"empty alphabet: [{self.min_symbol}, {self.max_symbol}]"
            )
        for bound in (self.min_symbol, self.max_symbol):
            if not -32768 <= bound <= 32767:
                raise ConfigError(f"alphabet bound {bound} does not fit in int16")

    @property
    def size(self) -> int:
        return self.max_symbol - self.min_symbol + 1

    @classmethod
    def for_clip_range(cls, r_clip: float) -> "SymbolAlphabet":
        """Alphabet covering every value a clipped-and-rounded latent can
        take, [-round(r_clip), round(r_clip)]."""
        bound = int(np.floor(r_clip + 0.5))
        return cls(-bound, bound)

    @classmethod
    def covering(cls, codes: np.ndarray) -> "SymbolAlphabet":
        """Smallest alphabet containing every symbol in ``codes``."""
        if codes.size == 0:
            return cls(0, 0)
        lo = int(codes.min())
        hi = int(codes.max())
        return cls(lo, hi)


class AdaptiveModel:
    """Per-dimension adaptive frequency tables with add-1 smoothing.

    ``cum[d, i]`` is the cumulative count of symbols with index < i in
    dimension d. Initialization is uniform (each symbol counts once) and
    update() adds one to the coded symbol's count.
    """

    def __init__(self, alphabet: SymbolAlphabet, width: int):
        if width < 1:
            raise ShapeError(f"model width must be >= 1, got {width}")
        self.alphabet = alphabet
        self.width = width
        base = np.arange(alphabet.size + 1, dtype=np.int64)
        self.cum = np.tile(base, (width, 1))

    def total(self, dim: int) -> int:
        return int(self.cum[dim, -1])

    def update(self, dim: int, index: int) -> None:
        self.cum[dim, index + 1 :] += 1


@dataclass
class FeatureBitstream:
    """Entropy-coded latent block plus the header needed to decode it."""

    model_id: str
    count: int
    width: int
    alphabet: SymbolAlphabet
    payload_bits: int
    payload: bytes
    # sum of -log2 p under the adaptive model at coding time; set by
    # ac_encode, not serialized, None when loaded from a file
    model_cost_bits: float | None = field(default=None, compare=False)


def _codes_as_matrix(codes, width: int | None = None) -> np.ndarray:
    a = np.asarray(codes)
    if a.ndim == 1:
        a = a[np.newaxis, :]
    if a.ndim != 2:
        raise ShapeError(f"codes must be (N, M), got ndim={a.ndim}")
    if not np.issubdtype(a.dtype, np.integer):
        if a.size and not np.all(a == np.round(a)):
            raise CodingError("codes must be integer-valued")
        a = a.astype(np.int64)
    if width is not None and a.shape[1] != width:
        raise ShapeError(f"codes width {a.shape[1]} does not match {width}")
    return a.astype(np.int64)


def ac_encode(codes, alphabet: SymbolAlphabet, model_id: str = "") -> FeatureBitstream:
    """Entropy-code an (N, M) block of integer symbols.

    A symbol outside the alphabet raises CodingError naming the feature and
    dimension. The returned bitstream records the exact number of payload
    bits (the zero padding to a byte boundary is excluded) and the adaptive
    model's ideal code length for the whole block.
    """
    matrix = _codes_as_matrix(codes)
    n, width = matrix.shape
    if n and (matrix.min() < alphabet.min_symbol or matrix.max() > alphabet.max_symbol):
        outside = np.argwhere(
            (matrix < alphabet.min_symbol) | (matrix > alphabet.max_symbol)
        )[0]
        raise CodingError(
            f"symbol {matrix[tuple(outside)]} at feature {outside[0]}, "
            f"dimension {outside[1]} is outside alphabet "
            f"[{alphabet.min_symbol}, {alphabet.max_symbol}]"
        )

    writer = BitWriter()
    encoder = RangeEncoder(writer)
    model = AdaptiveModel(alphabet, width)
    indices = matrix - alphabet.min_symbol
    cost = 0.0
    cum = model.cum
    for row in indices:
        for d in range(width):
            idx = int(row[d])
            lo = int(cum[d, idx])
            hi = int(cum[d, idx + 1])
            total = int(cum[d, -1])
            encoder.encode(lo, hi, total)
            cost -= math.log2((hi - lo) / total)
            cum[d, idx + 1 :] += 1
    encoder.finish()
    return FeatureBitstream(
        model_id=model_id,
        count=n,
        width=width,
        alphabet=alphabet,
        payload_bits=writer.bit_count,
        payload=writer.getvalue(),
        model_cost_bits=cost,
    )


def ac_decode(bitstream: FeatureBitstream) -> np.ndarray:
    """Recover the (N, M) symbol block from a bitstream. Exact inverse of
    ac_encode for an uncorrupted payload."""
    n, width = bitstream.count, bitstream.width
    alphabet = bitstream.alphabet
    out = np.empty((n, width), dtype=np.int64)
    if n == 0:
        return out
    model = AdaptiveModel(alphabet, width)
    cum = model.cum
    decoder = RangeDecoder(BitReader(bitstream.payload))
    for i in range(n):
        for d in range(width):
            total = int(cum[d, -1])
            target = decoder.decode_target(total)
            idx = int(np.searchsorted(cum[d], target, side="right")) - 1
            decoder.consume(int(cum[d, idx]), int(cum[d, idx + 1]), total)
            out[i, d] = idx
            cum[d, idx + 1 :] += 1
    out += alphabet.min_symbol
    return out


@dataclass
class RateReport:
    """Payload size normalized per feature and per feature dimension."""

    payload_bits: int
    count: int
    bits_per_feature: float
    bits_per_dim: float


def measure_rate(bitstream: FeatureBitstream, feature_dim: int) -> RateReport:
    """Rate of a bitstream relative to the original feature dimension.

    bits_per_dim divides by the dimension of the features that produced the
    codes, not the latent width, so rates are comparable across codecs with
    different latent sizes.
    """
    if feature_dim < 1:
        raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
    if bitstream.count == 0:
        return RateReport(bitstream.payload_bits, 0, 0.0, 0.0)
    per_feature = bitstream.payload_bits / bitstream.count
    return RateReport(
        payload_bits=bitstream.payload_bits,
        count=bitstream.count,
        bits_per_feature=per_feature,
        bits_per_dim=per_feature / feature_dim,
    )


def write_bitstream(bitstream: FeatureBitstream, path: str) -> None:
    atomic_write_bytes(path, bitstream_to_bytes(bitstream))


def bitstream_to_bytes(bitstream: FeatureBitstream) -> bytes:
    expected_len = (bitstream.payload_bits + 7) // 8
    if len(bitstream.payload) != expected_len:
        raise ConfigError(
            f"payload is {len(bitstream.payload)} bytes but payload_bits "
            f"{bitstream.payload_bits} requires {expected_len}"
        )
    w = ByteWriter()
    w.raw(BITSTREAM_MAGIC)
    w.u16(BITSTREAM_VERSION)
    w.short_str(bitstream.model_id)
    w.u32(bitstream.count)
    w.u16(bitstream.width)
    w.i16(bitstream.alphabet.min_symbol)
    w.i16(bitstream.alphabet.max_symbol)
    w.u64(bitstream.payload_bits)
    w.raw(bitstream.payload)
    return w.getvalue()


def read_bitstream(path: str) -> FeatureBitstream:
    with open(path, "rb") as fh:
        blob = fh.read()
    return bitstream_from_bytes(blob, source=path)


def bitstream_from_bytes(blob: bytes, source: str = "") -> FeatureBitstream:
    r = ByteReader(blob, source=source)
    r.expect_magic(BITSTREAM_MAGIC)
    version = r.u16("version")
    if version != BITSTREAM_VERSION:
        raise FormatError(
            f"unsupported bitstream version {version}", offset=4, source=source
        )
    model_id = r.short_str("model id")
    count = r.u32("code count")
    width = r.u16("code width")
    if width == 0:
        raise r.fail("code width must be positive")
    min_symbol = r.i16("alphabet min")
    max_symbol = r.i16("alphabet max")
    if max_symbol < min_symbol:
        raise r.fail(f"empty alphabet [{min_symbol}, {max_symbol}]")
    payload_bits = r.u64("payload bits")
    payload = r.read((payload_bits + 7) // 8, "payload")
    r.expect_end()
    return FeatureBitstream(
        model_id=model_id,
        count=count,
        width=width,
        alphabet=SymbolAlphabet(min_symbol, max_symbol),
        payload_bits=payload_bits,
        payload=payload,
    )
