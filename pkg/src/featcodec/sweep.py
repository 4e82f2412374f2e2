"""Rate-accuracy sweeps across compression pipelines.

A pipeline takes a feature block and produces a reconstruction plus the
bitstream whose size is charged for it. Reconstructions always come from
decoding the actual bitstream, so a pipeline can never report a rate for
bytes it did not round-trip. Each pipeline becomes one row of the sweep:
its measured rate (bits per feature and per feature dimension) and the
verification quality (cross-validated accuracy, ROC AUC, EER) of its
reconstructions against a shared pair list. An uncompressed reference row
is always included with an infinite-rate placeholder.

Rows are ordered by pipeline label so repeated runs emit identical CSVs.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .binio import atomic_write_text
from .codec import FeatureCodec
from .enhance import LatentEnhancer, SqEnhancer
from .entropy import (
    FeatureBitstream,
    SymbolAlphabet,
    ac_decode,
    ac_encode,
    measure_rate,
    write_bitstream,
)
from .errors import ConfigError
from .metrics import VerificationPairs, eer, kfold_accuracy, pair_scores, roc_auc
from .sq import sq_code_features

SWEEP_CSV_HEADER = "label,bits_per_dim,bits_per_feature,accuracy,auc,eer"
RAW_LABEL = "raw"


@dataclass
class RatePoint:
    """One row of a sweep: rate and verification quality for a pipeline."""

    label: str
    bits_per_dim: float
    bits_per_feature: float
    accuracy: float
    auc: float
    eer: float


class CodecPipeline:
    """Learned codec end to end: encode, entropy-code, decode the stream,
    reconstruct."""

    def __init__(self, model: FeatureCodec):
        self.model = model
        self.label = f"codec-{model.model_id}"

    def run(self, data: np.ndarray) -> tuple[np.ndarray, FeatureBitstream]:
        codes = self.model.encode(data, mode="infer")
        alphabet = SymbolAlphabet.for_clip_range(self.model.r_clip)
        bitstream = ac_encode(codes, alphabet, model_id=self.model.model_id)
        decoded = ac_decode(bitstream)
        return self.model.decode(decoded), bitstream


class EnhancedCodecPipeline:
    """Low-rate bitstream decoded through an enhancer and a high-rate
    decoder; the rate charged is exactly the low-rate stream's."""

    def __init__(
        self, low: FeatureCodec, enhancer: LatentEnhancer, high: FeatureCodec
    ):
        if enhancer.source_model_id != low.model_id:
            raise ConfigError(
                f"enhancer was trained from {enhancer.source_model_id!r}, "
                f"not {low.model_id!r}"
            )
        if enhancer.target_model_id != high.model_id:
            raise ConfigError(
                f"enhancer targets {enhancer.target_model_id!r}, "
                f"not {high.model_id!r}"
            )
        self.low = low
        self.enhancer = enhancer
        self.high = high
        self.label = f"codec-{low.model_id}-enhanced"

    def run(self, data: np.ndarray) -> tuple[np.ndarray, FeatureBitstream]:
        codes = self.low.encode(data, mode="infer")
        alphabet = SymbolAlphabet.for_clip_range(self.low.r_clip)
        bitstream = ac_encode(codes, alphabet, model_id=self.low.model_id)
        decoded = ac_decode(bitstream)
        enhanced = self.enhancer.enhance(decoded.astype(np.float64))
        return self.high.decode(enhanced), bitstream


class SqPipeline:
    """Scalar-quantization baseline at one quality parameter."""

    def __init__(self, qp: int):
        self.qp = int(qp)
        self.label = f"sq-qp{self.qp:02d}"

    def run(self, data: np.ndarray) -> tuple[np.ndarray, FeatureBitstream]:
        result = sq_code_features(data, self.qp)
        return result.reconstructed, result.bitstream


class SqEnhancedPipeline:
    """Scalar quantization followed by the trained residual corrector."""

    def __init__(self, enhancer: SqEnhancer):
        self.enhancer = enhancer
        self.qp = enhancer.qp
        self.label = f"sq-qp{self.qp:02d}-enhanced"

    def run(self, data: np.ndarray) -> tuple[np.ndarray, FeatureBitstream]:
        result = sq_code_features(data, self.qp)
        return self.enhancer.apply(result.reconstructed), result.bitstream


def run_sweep(
    features,
    pairs: VerificationPairs,
    pipelines,
    folds: int = 10,
    seed: int = 42,
    csv_path: str | None = None,
    streams_dir: str | None = None,
) -> list[RatePoint]:
    """Evaluate every pipeline plus the uncompressed reference.

    Returns rate points sorted by label. With csv_path the table is written
    with six-decimal fields; with streams_dir each pipeline's bitstream is
    saved as <label>.fcb for byte-level comparison between runs.
    """
    data = np.asarray(getattr(features, "data", features), dtype=np.float64)
    labels = [p.label for p in pipelines]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"pipeline labels are not unique: {sorted(labels)}")
    if RAW_LABEL in labels:
        raise ConfigError(f"pipeline label {RAW_LABEL!r} is reserved")

    def quality(recon: np.ndarray) -> tuple[float, float, float]:
        scores = pair_scores(recon, pairs)
        acc = kfold_accuracy(scores, pairs.same, k=folds, seed=seed).accuracy
        return acc, roc_auc(scores, pairs.same), eer(scores, pairs.same)

    acc, auc, err = quality(data)
    points = [RatePoint(RAW_LABEL, float("inf"), float("inf"), acc, auc, err)]

    if streams_dir is not None:
        os.makedirs(streams_dir, exist_ok=True)
    for pipeline in pipelines:
        recon, bitstream = pipeline.run(data)
        rate = measure_rate(bitstream, data.shape[1])
        acc, auc, err = quality(recon)
        points.append(
            RatePoint(
                label=pipeline.label,
                bits_per_dim=rate.bits_per_dim,
                bits_per_feature=rate.bits_per_feature,
                accuracy=acc,
                auc=auc,
                eer=err,
            )
        )
        if streams_dir is not None:
            write_bitstream(bitstream, os.path.join(streams_dir, f"{pipeline.label}.fcb"))

    points.sort(key=lambda p: p.label)
    if csv_path is not None:
        atomic_write_text(csv_path, sweep_csv(points))
    return points


def sweep_csv(points: list[RatePoint]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER.split(","))
    for p in points:
        writer.writerow(
            [
                p.label,
                "%.6f" % p.bits_per_dim,
                "%.6f" % p.bits_per_feature,
                "%.6f" % p.accuracy,
                "%.6f" % p.auc,
                "%.6f" % p.eer,
            ]
        )
    return out.getvalue()
