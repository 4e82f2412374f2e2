"""Slow reference implementations used to cross-check the fast paths.

Everything here is written for obviousness, not speed: quadratic loops,
exhaustive sweeps, no shared code with the package. Tests freeze values
computed by these oracles and also run them live against the
implementation on randomized inputs.
"""

from __future__ import annotations

import numpy as np


def auc_pairwise(scores, labels) -> float:
    """Fraction of (positive, negative) score pairs ordered correctly,
    ties counting one half. O(n_pos * n_neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def error_rates(scores, labels, threshold) -> tuple[float, float]:
    """(false positive rate, false negative rate) when score >= threshold
    predicts "same"."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    predicted = scores >= threshold
    fpr = float(np.mean(predicted[~labels]))
    fnr = float(np.mean(~predicted[labels]))
    return fpr, fnr


def eer_sweep(scores, labels) -> float:
    """Exhaustive threshold sweep for the equal error rate.

    Visits every operating point (-inf, each distinct score, +inf) in
    order, looks for an exact FPR = FNR hit, otherwise interpolates
    linearly on the segment where FPR - FNR changes sign. No orientation
    flip; callers handle backwards scorers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    thresholds = [-np.inf] + sorted(set(scores.tolist())) + [np.inf]
    points = [error_rates(scores, labels, t) for t in thresholds]
    for fpr, fnr in points:
        if fpr == fnr:
            return fpr
    for (fpr_a, fnr_a), (fpr_b, fnr_b) in zip(points, points[1:]):
        d_a = fpr_a - fnr_a
        d_b = fpr_b - fnr_b
        if d_a > 0.0 > d_b:
            alpha = d_a / (d_a - d_b)
            return fpr_a + alpha * (fpr_b - fpr_a)
    raise AssertionError("no crossing found; labels must be single-class")


def kfold_exhaustive(scores, labels, folds) -> float:
    """Mean held-out accuracy with the threshold chosen per fold by brute
    force: every midpoint between consecutive distinct training scores
    plus both infinities, scanned in ascending order, first maximum kept."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    accuracies = []
    for held_out in folds:
        held_out = np.asarray(held_out, dtype=np.int64)
        train = np.setdiff1d(np.arange(len(scores)), held_out)
        distinct = sorted(set(scores[train].tolist()))
        candidates = [-np.inf]
        candidates += [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
        candidates += [np.inf]
        best_t = None
        best_acc = -1.0
        for t in candidates:
            acc = float(np.mean((scores[train] >= t) == labels[train]))
            if acc > best_acc:
                best_acc = acc
                best_t = t
        accuracies.append(
            float(np.mean((scores[held_out] >= best_t) == labels[held_out]))
        )
    return float(np.mean(accuracies))
