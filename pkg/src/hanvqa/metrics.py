"""Evaluation measures: rank correlation between attention maps and
consensus answer accuracy."""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined (an input map is constant)."""


def rank_vector(values) -> np.ndarray:
    """Fractional (average) ranks, 1-based, rank 1 for the smallest value.

    Tied values all receive the mean of the positions they cover.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ContractError("rank_vector: values must be finite")
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # mean of positions i..j, 1-based
        i = j + 1
    return ranks


def spearman(pred, ref, denom: str = "standard") -> float:
    """Rank correlation of two equal-length maps.

    Tie-free inputs use the closed form 1 - 6*sum(d^2)/(n*(n^2-1));
    with ties the coefficient is the Pearson correlation of the
    fractional rank vectors.  ``denom="grid"`` divides the d^2 sum by
    n - sqrt(n) instead, a normalization used by some grid-attention
    evaluations; it is not bounded to [-1, 1] and is provided for
    comparison runs only.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    r = np.asarray(ref, dtype=np.float64).reshape(-1)
    if p.size != r.size:
        raise ContractError(f"spearman: lengths differ ({p.size} vs {r.size})")
    n = p.size
    if n < 2:
        raise ContractError("spearman needs at least two cells")
    if np.all(p == p[0]) or np.all(r == r[0]):
        raise UndefinedCorrelationError("correlation undefined for a constant map")
    rp, rr = rank_vector(p), rank_vector(r)
    if denom == "grid":
        side = math.isqrt(n)
        if side * side != n:
            raise ContractError(f"grid denominator needs a square length, got {n}")
        d2 = float(np.sum((rp - rr) ** 2))
        return 1.0 - 6.0 * d2 / (n - side)
    if denom != "standard":
        raise ContractError(f"unknown denominator {denom!r}")
    ties = np.unique(rp).size != n or np.unique(rr).size != n
    if not ties:
        d2 = float(np.sum((rp - rr) ** 2))
        return 1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    dp, dr = rp - rp.mean(), rr - rr.mean()
    return float(np.dot(dp, dr) / math.sqrt(np.dot(dp, dp) * np.dot(dr, dr)))


def mean_rank_correlation(pred, annotator_maps, denom: str = "standard") -> float:
    """Mean of spearman(pred, map) over the annotator maps."""
    if not len(annotator_maps):
        raise ContractError("mean_rank_correlation: no annotator maps")
    return float(np.mean([spearman(pred, m, denom=denom) for m in annotator_maps]))


def normalize_answer(text: str) -> str:
    return text.strip().lower()


def consensus_accuracy(pred: str, votes) -> float:
    """min(#votes matching the prediction / 3, 1)."""
    if not votes:
        raise ContractError("consensus_accuracy: empty vote multiset")
    target = normalize_answer(pred)
    count = sum(1 for v in votes if normalize_answer(v) == target)
    return min(count / 3.0, 1.0)


def mean_and_sem(values) -> tuple[float, float]:
    """Sample mean and standard error of the mean (0 for n < 2)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ContractError("mean_and_sem: no values")
    mean = float(v.mean())
    sem = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return mean, sem
