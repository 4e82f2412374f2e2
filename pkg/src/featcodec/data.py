"""Feature-set containers, file formats, and synthetic benchmark data.

The binary feature format (magic ``FEA1``) stores float32 row-major data
with optional uint32 labels; a header-free CSV form is accepted as a
fallback for interchange (first columns are the feature values, a final
``label`` column is recognized by header). All multi-byte fields are
little-endian.

The synthetic generator mimics the geometry of L2-normalized embedding
vectors: identities are uniform directions on the unit sphere, samples add
isotropic Gaussian within-identity noise and are renormalized. With the
default within-class sigma the verification problem is separable but not
trivially so, which is what a rate-accuracy sweep needs.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .binio import ByteReader, ByteWriter, atomic_write_bytes
from .errors import ConfigError, FormatError, ProtocolError, ShapeError
from .metrics import VerificationPairs

FEATURE_MAGIC = b"FEA1"
FEATURE_VERSION = 1


@dataclass
class FeatureSet:
    """N feature vectors of a common dimension, optionally labeled.

    ``data`` is (N, D) float; float64 is accepted in memory but the binary
    format stores float32, so writing narrows wider data. ``labels`` is an
    optional (N,) uint32 array of source identities.
    """

    data: np.ndarray
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ShapeError(f"feature data must be 2-D, got ndim={self.data.ndim}")
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        bad = np.argwhere(~np.isfinite(self.data))
        if len(bad):
            r, c = bad[0]
            raise ConfigError(f"non-finite feature value at row {r}, column {c}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint32)
            if self.labels.shape != (self.data.shape[0],):
                raise ShapeError(
                    f"labels shape {self.labels.shape} does not match "
                    f"{self.data.shape[0]} rows"
                )

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def gen_synthetic(
    n_identities: int = 200,
    per_identity: int = 50,
    dim: int = 128,
    within_sigma: float = 0.15,
    seed: int = 42,
) -> FeatureSet:
    """Draw a labeled synthetic feature set.

    Identity means are isotropic Gaussian draws normalized onto the unit
    sphere; each sample adds N(0, sigma^2 I) noise to its identity mean and
    is renormalized. Every returned row therefore has unit norm (to float64
    precision) and components in [-1, 1]. Identical arguments give an
    identical set.
    """
    if n_identities < 1 or per_identity < 1 or dim < 2:
        raise ConfigError(
            f"need n_identities >= 1, per_identity >= 1, dim >= 2; got "
            f"{n_identities}, {per_identity}, {dim}"
        )
    if within_sigma < 0:
        raise ConfigError(f"within_sigma must be >= 0, got {within_sigma}")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_identities, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    samples = np.repeat(means, per_identity, axis=0)
    samples = samples + rng.normal(scale=within_sigma, size=samples.shape) if within_sigma else samples
    norms = np.linalg.norm(samples, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ConfigError("degenerate draw produced a zero vector; change the seed")
    samples /= norms
    labels = np.repeat(np.arange(n_identities, dtype=np.uint32), per_identity)
    return FeatureSet(samples, labels, source=f"synthetic(seed={seed})")


def write_features(features: FeatureSet, path: str) -> None:
    """Write a feature set; ``.csv`` paths get the text form, anything else
    the FEA1 binary form (data narrowed to float32)."""
    if path.lower().endswith(".csv"):
        atomic_write_bytes(path, _features_to_csv(features))
        return
    w = ByteWriter()
    w.raw(FEATURE_MAGIC)
    w.u16(FEATURE_VERSION)
    w.u32(features.count)
    w.u16(features.dim)
    w.u8(1 if features.labels is not None else 0)
    w.array_f32(features.data)
    if features.labels is not None:
        w.array_u32(features.labels)
    atomic_write_bytes(path, w.getvalue())


def read_features(path: str) -> FeatureSet:
    """Read a feature set written by write_features, dispatching on the
    ``.csv`` extension. Malformed binary input raises FormatError with the
    failing byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if path.lower().endswith(".csv"):
        return _features_from_csv(blob, source=path)
    r = ByteReader(blob, source=path)
    r.expect_magic(FEATURE_MAGIC)
    version = r.u16("version")
    if version != FEATURE_VERSION:
        raise FormatError(
            f"unsupported feature-file version {version}", offset=4, source=path
        )
    count = r.u32("row count")
    dim = r.u16("dimension")
    if dim == 0:
        raise r.fail("dimension must be positive")
    flags = r.u8("flags")
    if flags > 1:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", offset=11, source=path)
    data = r.array_f32((count, dim), "feature rows")
    labels = r.array_u32(count, "labels") if flags & 1 else None
    r.expect_end()
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        row, col = bad[0]
        raise FormatError(
            f"non-finite feature value at row {row}, column {col}", source=path
        )
    return FeatureSet(data, labels, source=path)


def _features_to_csv(features: FeatureSet) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = [f"f{i}" for i in range(features.dim)]
    if features.labels is not None:
        header.append("label")
    writer.writerow(header)
    # 9 significant digits round-trip float32 exactly through decimal text
    fmt = "%.9g" if features.data.dtype == np.float32 else "%.17g"
    for i in range(features.count):
        row = [fmt % v for v in features.data[i]]
        if features.labels is not None:
            row.append(str(int(features.labels[i])))
        writer.writerow(row)
    return out.getvalue().encode("utf-8")


def _features_from_csv(blob: bytes, source: str) -> FeatureSet:
    text = blob.decode("utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty CSV", source=source)
    header = rows[0]
    has_labels = bool(header) and header[-1].strip().lower() == "label"
    dim = len(header) - (1 if has_labels else 0)
    if dim < 1:
        raise FormatError("CSV header declares no feature columns", source=source)
    data = np.empty((len(rows) - 1, dim), dtype=np.float32)
    labels = np.empty(len(rows) - 1, dtype=np.uint32) if has_labels else None
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise FormatError(
                f"CSV row {i + 1} has {len(row)} fields, expected {len(header)}",
                source=source,
            )
        try:
            data[i] = [float(v) for v in row[:dim]]
            if has_labels:
                labels[i] = int(row[dim])
        except ValueError as exc:
            raise FormatError(f"CSV row {i + 1}: {exc}", source=source) from None
    if not np.all(np.isfinite(data)):
        row, col = np.argwhere(~np.isfinite(data))[0]
        raise FormatError(
            f"non-finite feature value at row {row}, column {col}", source=source
        )
    return FeatureSet(data, labels, source=source)


def gen_pairs(
    features: FeatureSet, n_pos: int, n_neg: int, seed: int = 42
) -> VerificationPairs:
    """Sample verification pairs from a labeled feature set.

    Positive pairs join two distinct rows of one identity, negative pairs
    join rows of two different identities; no unordered pair repeats.
    Raises ProtocolError when the set cannot supply the requested counts.
    """
    if features.labels is None:
        raise ProtocolError("pair generation needs a labeled feature set")
    if n_pos < 0 or n_neg < 0:
        raise ConfigError("pair counts must be non-negative")
    labels = features.labels
    rng = np.random.default_rng(seed)

    by_identity: dict[int, np.ndarray] = {
        int(v): np.flatnonzero(labels == v) for v in np.unique(labels)
    }
    n = features.count
    max_pos = sum(len(idx) * (len(idx) - 1) // 2 for idx in by_identity.values())
    max_neg = n * (n - 1) // 2 - max_pos
    if n_pos > max_pos:
        raise ProtocolError(f"requested {n_pos} positive pairs, only {max_pos} exist")
    if n_neg > max_neg:
        raise ProtocolError(f"requested {n_neg} negative pairs, only {max_neg} exist")

    seen: set[tuple[int, int]] = set()
    index_a: list[int] = []
    index_b: list[int] = []
    same: list[bool] = []

    eligible = [idx for idx in by_identity.values() if len(idx) >= 2]
    draws = 0
    cap = 1000 * (n_pos + n_neg) + 1000
    while len(same) < n_pos:
        group = eligible[rng.integers(len(eligible))]
        a, b = rng.choice(group, size=2, replace=False)
        key = (min(a, b), max(a, b))
        draws += 1
        if draws > cap:
            raise ProtocolError("pair sampling failed to converge; lower the counts")
        if key in seen:
            continue
        seen.add(key)
        index_a.append(int(a))
        index_b.append(int(b))
        same.append(True)
    negatives = 0
    while negatives < n_neg:
        a, b = rng.integers(n, size=2)
        draws += 1
        if draws > cap:
            raise ProtocolError("pair sampling failed to converge; lower the counts")
        if a == b or labels[a] == labels[b]:
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        index_a.append(int(a))
        index_b.append(int(b))
        same.append(False)
        negatives += 1
    return VerificationPairs(np.array(index_a), np.array(index_b), np.array(same))


def write_pairs(pairs: VerificationPairs, path: str) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["index_a", "index_b", "same"])
    for a, b, s in zip(pairs.index_a, pairs.index_b, pairs.same):
        writer.writerow([int(a), int(b), int(s)])
    atomic_write_bytes(path, out.getvalue().encode("utf-8"))


def read_pairs(path: str) -> VerificationPairs:
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["index_a", "index_b", "same"]:
        raise FormatError(
            "pairs CSV must start with header index_a,index_b,same", source=path
        )
    try:
        table = np.array([[int(a), int(b), int(s)] for a, b, s in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"pairs CSV: {exc}", source=path) from None
    if len(table) == 0:
        table = table.reshape(0, 3)
    return VerificationPairs(table[:, 0], table[:, 1], table[:, 2].astype(bool))


@dataclass
class DimStats:
    """Histogram and moments of one feature dimension."""

    dim: int
    mean: float
    std: float
    edges: np.ndarray
    counts: np.ndarray


def dim_stats(features: FeatureSet, dims, bins: int = 50) -> list[DimStats]:
    """Per-dimension histograms over the observed value range plus mean and
    standard deviation. Bin counts for each dimension sum to N."""
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    out = []
    for d in dims:
        if not 0 <= d < features.dim:
            raise ShapeError(f"dimension {d} outside [0, {features.dim})")
        column = features.data[:, d].astype(np.float64)
        counts, edges = np.histogram(column, bins=bins)
        out.append(
            DimStats(
                dim=int(d),
                mean=float(column.mean()),
                std=float(column.std()),
                edges=edges,
                counts=counts,
            )
        )
    return out


def write_dim_stats(stats: list[DimStats], path: str) -> None:
    """One CSV row per histogram bin: dim, mean, std, bin_lo, bin_hi, count."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["dim", "mean", "std", "bin_lo", "bin_hi", "count"])
    for s in stats:
        for lo, hi, c in zip(s.edges[:-1], s.edges[1:], s.counts):
            writer.writerow(
                [s.dim, "%.6f" % s.mean, "%.6f" % s.std, "%.6g" % lo, "%.6g" % hi, int(c)]
            )
    atomic_write_bytes(path, out.getvalue().encode("utf-8"))
