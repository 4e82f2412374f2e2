"""Verification-style evaluation of feature quality.

A verification trial scores a pair of feature vectors and thresholds the
score to decide "same source or not". Features are L2-normalized before
scoring and the score is the negated squared Euclidean distance, so scores
live in [-4, 0] with 0 meaning identical directions.

Threshold selection follows the usual cross-validated protocol: for each of
k folds, the threshold that maximizes accuracy on the other k-1 folds is
chosen (ties resolved toward the lowest threshold) and applied to the
held-out fold. Candidate thresholds are the midpoints between consecutive
distinct sorted scores plus sentinels at both infinities, so every
achievable labeling is reachable.

roc_auc is the Mann-Whitney statistic (ties count one half), computed from
a single sort. eer sweeps all distinct thresholds and linearly interpolates
where the false-positive and false-negative rates cross; when the scores
are oriented backwards (AUC < 0.5) the orientation is flipped first so the
reported value lands in [0, 0.5].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeatureError, ProtocolError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class VerificationPairs:
    """Row-index pairs with same-source labels for verification trials."""

    index_a: np.ndarray
    index_b: np.ndarray
    same: np.ndarray

    def __post_init__(self):
        self.index_a = np.asarray(self.index_a, dtype=np.int64)
        self.index_b = np.asarray(self.index_b, dtype=np.int64)
        self.same = np.asarray(self.same, dtype=bool)
        if not (len(self.index_a) == len(self.index_b) == len(self.same)):
            raise ShapeError(
                f"pair columns disagree in length: {len(self.index_a)}, "
                f"{len(self.index_b)}, {len(self.same)}"
            )
        if np.any(self.index_a == self.index_b):
            bad = int(np.flatnonzero(self.index_a == self.index_b)[0])
            raise ProtocolError(f"pair {bad} references the same row on both sides")

    def __len__(self) -> int:
        return len(self.same)


def normalize_rows(data: np.ndarray) -> np.ndarray:
    """L2-normalize each row; a zero-norm row raises DegenerateFeatureError."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got ndim={data.ndim}")
    norms = np.linalg.norm(data, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if len(zero):
        raise DegenerateFeatureError(
            f"row {int(zero[0])} has zero norm and cannot be L2-normalized"
        )
    return data / norms[:, np.newaxis]


def pair_scores(data: np.ndarray, pairs: VerificationPairs) -> np.ndarray:
    """Score every pair as the negated squared distance between the
    L2-normalized rows. Identical directions score 0, antipodal -4."""
    unit = normalize_rows(data)
    n = unit.shape[0]
    for name, idx in (("index_a", pairs.index_a), ("index_b", pairs.index_b)):
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise ShapeError(f"{name} contains indices outside [0, {n})")
    diff = unit[pairs.index_a] - unit[pairs.index_b]
    return -np.einsum("ij,ij->i", diff, diff)


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ShapeError(
            f"scores and labels must be matching 1-D arrays, got "
            f"{scores.shape} and {labels.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise ProtocolError("scores contain non-finite values")
    return scores, labels


def _require_both_classes(labels: np.ndarray, where: str) -> None:
    if labels.all() or not labels.any():
        raise ProtocolError(f"{where} contains only one class")


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct sorted scores, with -inf and
    +inf sentinels so "accept all" and "reject all" are always candidates."""
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([-np.inf], mids, [np.inf]))


def threshold_accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    """Fraction of trials classified correctly when scores >= threshold
    predict "same"."""
    predicted = scores >= threshold
    return float(np.mean(predicted == labels))


@dataclass
class KfoldResult:
    accuracy: float
    fold_accuracies: list[float] = field(default_factory=list)
    fold_thresholds: list[float] = field(default_factory=list)


def kfold_accuracy(
    scores,
    labels,
    k: int = 10,
    seed: int = 42,
    folds: list[np.ndarray] | None = None,
) -> KfoldResult:
    """Cross-validated verification accuracy.

    Pairs are partitioned into k folds (a seeded permutation split unless
    explicit fold index arrays are given). For each fold the threshold is
    picked to maximize accuracy over the union of the remaining folds, then
    scored on the held-out fold; the result is the mean held-out accuracy.

    Every training split must contain both classes, otherwise the protocol
    is meaningless and a ProtocolError is raised.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n = len(scores)
    if folds is None:
        if k < 2:
            raise ProtocolError(f"k must be >= 2, got {k}")
        if n < k:
            raise ProtocolError(f"cannot split {n} pairs into {k} folds")
        perm = np.random.default_rng(seed).permutation(n)
        folds = np.array_split(perm, k)
    else:
        folds = [np.asarray(f, dtype=np.int64) for f in folds]
        flat = np.concatenate(folds) if folds else np.array([], dtype=np.int64)
        if len(flat) != n or len(np.unique(flat)) != n:
            raise ProtocolError("explicit folds must partition the pair indices")

    result = KfoldResult(accuracy=0.0)
    for i, held_out in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[held_out] = False
        train_scores = scores[train_mask]
        train_labels = labels[train_mask]
        _require_both_classes(train_labels, f"training split for fold {i}")
        cands = candidate_thresholds(train_scores)
        # accuracy for every candidate at once; argmax takes the lowest
        # threshold on ties because candidates are ascending
        correct = (train_scores[np.newaxis, :] >= cands[:, np.newaxis]) == train_labels
        best = int(np.argmax(correct.mean(axis=1)))
        threshold = float(cands[best])
        result.fold_thresholds.append(threshold)
        result.fold_accuracies.append(
            threshold_accuracy(scores[held_out], labels[held_out], threshold)
        )
    result.accuracy = float(np.mean(result.fold_accuracies))
    return result


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Equal positive and negative scores contribute one half. Computed from a
    single sort with average ranks for ties, so it matches the quadratic
    pairwise count exactly while staying O(n log n).
    """
    scores, labels = _check_scores_labels(scores, labels)
    _require_both_classes(labels, "label set")
    n = len(scores)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    group_start = np.r_[True, sorted_scores[1:] != sorted_scores[:-1]]
    firsts = np.flatnonzero(group_start)
    counts = np.diff(np.r_[firsts, n])
    # mean of ranks first+1 .. first+count (1-based)
    group_rank = firsts + (counts + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = group_rank[np.cumsum(group_start) - 1]
    pos = int(labels.sum())
    neg = n - pos
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def eer(scores, labels, orient: bool = True) -> float:
    """Equal error rate: the common value of the false-positive and
    false-negative rates where they cross.

    The sweep visits every distinct score as a threshold (plus a reject-all
    sentinel) and interpolates linearly between adjacent operating points
    when the two rates cross strictly between them. With orient=True (the
    default) a backwards scorer (AUC < 0.5) is flipped first, so the result
    lies in [0, 0.5]; orient=False reports the raw crossing value.
    """
    scores, labels = _check_scores_labels(scores, labels)
    _require_both_classes(labels, "label set")
    if orient and roc_auc(scores, labels) < 0.5:
        logger.warning("score orientation flipped for EER: AUC < 0.5")
        scores = -scores

    pos_sorted = np.sort(scores[labels])
    neg_sorted = np.sort(scores[~labels])
    n_pos = len(pos_sorted)
    n_neg = len(neg_sorted)
    # operating points at t = -inf, each distinct score, +inf; predictions
    # are "same" when score >= t, so fpr falls and fnr rises with t
    thresholds = np.concatenate(([-np.inf], np.unique(scores), [np.inf]))
    fpr = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / n_neg
    fnr = np.searchsorted(pos_sorted, thresholds, side="left") / n_pos
    diff = fpr - fnr

    exact = np.flatnonzero(diff == 0.0)
    if len(exact):
        return float(fpr[exact[0]])
    # diff starts at +1, ends at -1, and is non-increasing; find the sign change
    i = int(np.flatnonzero(diff < 0.0)[0])
    d_prev = diff[i - 1]
    d_next = diff[i]
    alpha = d_prev / (d_prev - d_next)
    return float(fpr[i - 1] + alpha * (fpr[i] - fpr[i - 1]))
