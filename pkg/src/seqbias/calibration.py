"""Confidence calibration via temperature scaling.

The temperature divides logits before the softmax; it is fitted by minimizing
mean negative log-likelihood on held-out logits with a golden-section search.
Scaling never changes the argmax, only the confidence.
"""

from __future__ import annotations

import numpy as np

from .model import softmax

T_BOUNDS = (0.05, 20.0)
T_TOL = 1e-3

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def nll(logits, labels, temperature=1.0):
    p = softmax(np.asarray(logits, dtype=np.float64) / temperature)
    picked = p[np.arange(len(labels)), np.asarray(labels)]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def fit_temperature(logits, labels, bounds=T_BOUNDS, tol=T_TOL):
    """Golden-section minimization of validation NLL over the temperature.

    Flat objectives (e.g. constant logits) resolve to the lower bound by
    convention.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if len(logits) == 0:
        raise ValueError("empty validation logits")
    if len(np.unique(labels)) < 2:
        raise ValueError("temperature fit needs at least 2 classes present")
    lo, hi = bounds
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = nll(logits, labels, c), nll(logits, labels, d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = nll(logits, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = nll(logits, labels, d)
    t = 0.5 * (a + b)
    # prefer the lower bound whenever it is at least as good (flat objective)
    if nll(logits, labels, lo) <= nll(logits, labels, t) + 1e-12:
        return lo
    return float(t)
