"""Scalar-quantization baseline codec.

Quantizes every feature component with a shared step size derived from an
integer quality parameter,

    q_step = 2 ** ((qp - 4) / 6 - 10)

using a floor quantizer, c = floor(f / q_step), and midtread-free
dequantization f = c * q_step. The floor (rather than round) is kept
exactly, including its negative-side bias, so reconstruction satisfies
0 <= f - f_sq < q_step componentwise.

The quantized symbols run through the same adaptive entropy coder as the
learned codecs, with the alphabet fitted to the observed symbol range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entropy import (
    FeatureBitstream,
    RateReport,
    SymbolAlphabet,
    ac_decode,
    ac_encode,
    measure_rate,
)
from .errors import ConfigError

QP_SWEEP_DEFAULT = (4, 22, 40, 58, 64)


def qstep_from_qp(qp: int) -> float:
    """Step size for an integer quality parameter; qp 4 gives 2**-10 and
    each +6 doubles the step."""
    if not isinstance(qp, (int, np.integer)):
        raise ConfigError(f"qp must be an integer, got {qp!r}")
    return float(2.0 ** ((qp - 4) / 6.0 - 10.0))


def sq_quantize(features, qp: int) -> np.ndarray:
    """Floor-quantize features to integer symbols at the step for ``qp``."""
    q = qstep_from_qp(qp)
    f = np.asarray(features, dtype=np.float64)
    return np.floor(f / q).astype(np.int64)


def sq_dequantize(codes, qp: int) -> np.ndarray:
    """Map symbols back to feature space: f = c * q_step."""
    q = qstep_from_qp(qp)
    return np.asarray(codes, dtype=np.float64) * q


@dataclass
class SqCodingResult:
    qp: int
    bitstream: FeatureBitstream
    rate: RateReport
    reconstructed: np.ndarray


def sq_code_features(features, qp: int, model_id: str | None = None) -> SqCodingResult:
    """Quantize, entropy-code, decode, and dequantize a feature block.

    The reconstruction is produced from the decoded bitstream, not from the
    quantizer output, so the reported rate and the reconstruction always
    describe the same bytes. Symbol ranges that overflow the int16 alphabet
    header field raise ConfigError suggesting a larger qp.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ConfigError(f"expected an (N, D) feature block, got ndim={f.ndim}")
    codes = sq_quantize(f, qp)
    if codes.size and not (-32768 <= codes.min() and codes.max() <= 32767):
        raise ConfigError(
            f"qp {qp} produces symbols outside the int16 alphabet range; "
            f"use a larger qp for this data"
        )
    alphabet = SymbolAlphabet.covering(codes)
    bitstream = ac_encode(codes, alphabet, model_id=model_id or f"SQ{qp}")
    decoded = ac_decode(bitstream)
    return SqCodingResult(
        qp=int(qp),
        bitstream=bitstream,
        rate=measure_rate(bitstream, f.shape[1]),
        reconstructed=sq_dequantize(decoded, qp),
    )
