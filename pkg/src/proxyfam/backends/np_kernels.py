"""Pure-numpy fallback kernels.

The WL refinement hash is FNV-1a over a per-node byte record

    own-label hash (8B big-endian)
    || sorted predecessor hashes (8B big-endian each)
    || separator byte
    || sorted successor hashes (8B big-endian each)

Computing that per node in Python is too slow, so this backend packs every
node's record into one padded byte matrix and advances all FNV states in
lockstep, one byte column at a time, masking out nodes whose record has
ended. All arithmetic is uint64 and wraps exactly like the numba kernel.
"""

from __future__ import annotations

import numpy as np

FNV_OFFSET = np.uint64(14695981039346656037)
FNV_PRIME = np.uint64(1099511628211)

# Byte inserted between the predecessor and successor hash runs of the
# refinement record; disambiguates where one section ends.
SECTION_SEPARATOR = 0xFF


def _be_bytes(a: np.ndarray) -> np.ndarray:
    """Big-endian byte expansion of a uint64 array, shape (len, 8)."""
    return a.astype(">u8").view(np.uint8).reshape(-1, 8)


def _fnv_rows(records: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """FNV-1a over each row of a padded byte matrix, honoring row lengths."""
    n = records.shape[0]
    state = np.full(n, FNV_OFFSET, dtype=np.uint64)
    for col in range(records.shape[1]):
        live = lengths > col
        if not live.any():
            break
        mixed = state[live] ^ records[live, col].astype(np.uint64)
        state[live] = mixed * FNV_PRIME
    return state


def wl_label_chain(
    labels0: np.ndarray,
    pred_indptr: np.ndarray,
    pred_idx: np.ndarray,
    succ_indptr: np.ndarray,
    succ_idx: np.ndarray,
    iterations: int,
) -> np.ndarray:
    """Refine node labels for the given number of iterations.

    Returns a uint64 array of shape (iterations + 1, n) whose row h holds
    every node's label at iteration h (row 0 is ``labels0`` unchanged).
    """
    n = labels0.shape[0]
    chain = np.empty((iterations + 1, n), dtype=np.uint64)
    chain[0] = labels0
    if n == 0 or iterations == 0:
        return chain

    deg_in = np.diff(pred_indptr)
    deg_out = np.diff(succ_indptr)
    lengths = 8 + 8 * deg_in + 1 + 8 * deg_out
    width = int(lengths.max())

    # Scatter targets into the flat byte matrix are fixed across iterations.
    byte_off = np.arange(8, dtype=np.int64)
    rows_in = np.repeat(np.arange(n, dtype=np.int64), deg_in)
    within_in = np.arange(pred_idx.shape[0], dtype=np.int64) - np.repeat(
        pred_indptr[:-1], deg_in
    )
    flat_in = (
        (rows_in * width + 8 + 8 * within_in)[:, None] + byte_off[None, :]
    ).ravel()
    rows_out = np.repeat(np.arange(n, dtype=np.int64), deg_out)
    within_out = np.arange(succ_idx.shape[0], dtype=np.int64) - np.repeat(
        succ_indptr[:-1], deg_out
    )
    succ_start = np.repeat(9 + 8 * deg_in, deg_out)
    flat_out = (
        (rows_out * width + succ_start + 8 * within_out)[:, None] + byte_off[None, :]
    ).ravel()

    records = np.zeros((n, width), dtype=np.uint8)
    flat = records.reshape(-1)
    flat[np.arange(n, dtype=np.int64) * width + 8 + 8 * deg_in] = SECTION_SEPARATOR

    current = labels0
    for h in range(iterations):
        records[:, :8] = _be_bytes(current)
        pred_vals = current[pred_idx]
        order = np.lexsort((pred_vals, rows_in))
        flat[flat_in] = _be_bytes(pred_vals[order]).ravel()
        succ_vals = current[succ_idx]
        order = np.lexsort((succ_vals, rows_out))
        flat[flat_out] = _be_bytes(succ_vals[order]).ravel()
        current = _fnv_rows(records, lengths)
        chain[h + 1] = current
    return chain


def sgd_epoch(
    w: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    order: np.ndarray,
    lam: float,
    eta0: float,
    t_start: int,
    b: float,
) -> tuple[float, int]:
    """One SGD pass over ``order``; mutates w in place, returns (b, t).

    Update per sample i at global step t, with eta_t = 1/(lam*(t + t0)) and
    t0 = 1/(lam*eta0): scale w by (1 - eta*lam), then add eta*y_i*x_i and
    bump the (unregularized) bias when the hinge margin is violated.
    """
    t0 = 1.0 / (lam * eta0)
    t = t_start
    for i in order:
        eta = 1.0 / (lam * (t + t0))
        margin = y[i] * (float(X[i] @ w) + b)
        w *= 1.0 - eta * lam
        if margin < 1.0:
            a = eta * y[i]
            w += a * X[i]
            b += a
        t += 1
    return b, t
