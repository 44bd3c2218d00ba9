"""Numba-accelerated kernels.

Same contracts as np_kernels; see that module for the record layout fed to
FNV-1a. All hash arithmetic stays in uint64 (mixing signed ints into uint64
expressions would silently promote to float64 under numba's numpy-style
casting, so shift amounts and masks are materialized as uint64 constants).
"""

from __future__ import annotations

import numpy as np
from numba import njit

FNV_OFFSET = np.uint64(14695981039346656037)
FNV_PRIME = np.uint64(1099511628211)
SECTION_SEPARATOR = 0xFF

_SEP = np.uint64(SECTION_SEPARATOR)
_BYTE = np.uint64(0xFF)
_EIGHT = np.uint64(8)
_TOP = np.uint64(56)


@njit(cache=True, nogil=True)
def _feed_u64(state, value):
    shift = _TOP
    for _ in range(8):
        state = (state ^ ((value >> shift) & _BYTE)) * FNV_PRIME
        shift = shift - _EIGHT
    return state


@njit(cache=True, nogil=True)
def wl_label_chain(labels0, pred_indptr, pred_idx, succ_indptr, succ_idx, iterations):
    n = labels0.shape[0]
    chain = np.empty((iterations + 1, n), dtype=np.uint64)
    chain[0, :] = labels0
    for h in range(iterations):
        current = chain[h]
        for v in range(n):
            state = FNV_OFFSET
            state = _feed_u64(state, current[v])
            preds = np.sort(current[pred_idx[pred_indptr[v] : pred_indptr[v + 1]]])
            for k in range(preds.shape[0]):
                state = _feed_u64(state, preds[k])
            state = (state ^ _SEP) * FNV_PRIME
            succs = np.sort(current[succ_idx[succ_indptr[v] : succ_indptr[v + 1]]])
            for k in range(succs.shape[0]):
                state = _feed_u64(state, succs[k])
            chain[h + 1, v] = state
    return chain


@njit(cache=True, nogil=True)
def sgd_epoch(w, X, y, order, lam, eta0, t_start, b):
    t0 = 1.0 / (lam * eta0)
    t = t_start
    d = w.shape[0]
    for k in range(order.shape[0]):
        i = order[k]
        eta = 1.0 / (lam * (t + t0))
        s = 0.0
        for j in range(d):
            s += X[i, j] * w[j]
        margin = y[i] * (s + b)
        scale = 1.0 - eta * lam
        for j in range(d):
            w[j] = w[j] * scale
        if margin < 1.0:
            a = eta * y[i]
            for j in range(d):
                w[j] = w[j] + a * X[i, j]
            b = b + a
        t += 1
    return b, t
