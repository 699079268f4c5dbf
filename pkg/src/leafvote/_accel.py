"""Numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and ``LEAFVOTE_NUMBA``
is not set to ``0``. Both paths are always importable so they can be
compared against each other (see ``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LEAFVOTE_NUMBA", "1") != "0"


# ---------------------------------------------------------------- numpy path


def weighted_vote_numpy(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    return np.tensordot(weights, stack, axes=1) / total


def argmax_rows_numpy(values: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, which is the tie-break we want
    return np.argmax(values, axis=1).astype(np.int64)


def confusion_counts_numpy(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    flat = truth * n_classes + pred
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes).astype(np.int64)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def weighted_vote_numba(stack, weights):
        m, n, c = stack.shape
        total = 0.0
        for i in range(m):
            total += weights[i]
        out = np.empty((n, c))
        for r in range(n):
            for k in range(c):
                acc = 0.0
                for i in range(m):
                    acc += weights[i] * stack[i, r, k]
                out[r, k] = acc / total
        return out

    @njit(cache=True)
    def argmax_rows_numba(values):
        n, c = values.shape
        out = np.empty(n, dtype=np.int64)
        for r in range(n):
            best = 0
            best_val = values[r, 0]
            for k in range(1, c):
                if values[r, k] > best_val:
                    best_val = values[r, k]
                    best = k
            out[r] = best
        return out

    @njit(cache=True)
    def confusion_counts_numba(truth, pred, n_classes):
        out = np.zeros((n_classes, n_classes), dtype=np.int64)
        for i in range(truth.shape[0]):
            out[truth[i], pred[i]] += 1
        return out

else:  # pragma: no cover
    weighted_vote_numba = weighted_vote_numpy
    argmax_rows_numba = argmax_rows_numpy
    confusion_counts_numba = confusion_counts_numpy


def weighted_vote(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Return ``sum_i w_i * stack[i] / sum_i w_i`` for an (M, N, C) stack."""
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if USE_NUMBA:
        return weighted_vote_numba(stack, weights)
    return weighted_vote_numpy(stack, weights)


def argmax_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest column index."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if USE_NUMBA:
        return argmax_rows_numba(values)
    return argmax_rows_numpy(values)


def confusion_counts(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    truth = np.ascontiguousarray(truth, dtype=np.int64)
    pred = np.ascontiguousarray(pred, dtype=np.int64)
    if USE_NUMBA:
        return confusion_counts_numba(truth, pred, int(n_classes))
    return confusion_counts_numpy(truth, pred, int(n_classes))
