"""Ranking metrics and reference baselines for bias-discovery evaluation."""

from __future__ import annotations

import numpy as np

from .model import softmax


def precision_at_k(ranked, truth, k):
    """Fraction of the top-k ranked items whose truth flag is set.

    Lists shorter than k are scored over their full length; the effective k
    is returned alongside so truncation is visible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = np.asarray(truth, dtype=bool)
    top = list(ranked)[:k]
    if not top:
        return 0.0, 0
    return float(np.mean(truth[top])), len(top)


def r_precision(ranked, truth):
    """precision_at_k with k equal to the number of flagged items overall."""
    truth = np.asarray(truth, dtype=bool)
    total = int(truth.sum())
    if total == 0:
        raise ValueError("no flagged items; R-precision undefined")
    return precision_at_k(ranked, truth, total)


def baseline_random(n_images, seed=0):
    """Uniform random ordering of the pooled image rows."""
    rng = np.random.default_rng((seed, 0xBA5E))
    return rng.permutation(n_images).tolist()


def baseline_confidence(static_logits):
    """Images sorted by max static-sequence softmax probability, descending;
    ties resolve to the lower image row."""
    conf = softmax(np.asarray(static_logits, dtype=np.float64)).max(axis=1)
    return np.lexsort((np.arange(len(conf)), -conf)).tolist()
