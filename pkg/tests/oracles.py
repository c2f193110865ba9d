"""Independent oracles: brute-force implementations the library code never shares."""

from __future__ import annotations

import math

import numpy as np


def dense_matvec(dense: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dense @ x


def spmv_loop(row_ptr, col_idx, values, x) -> np.ndarray:
    """Plain double-loop CSR product, sequential left-to-right per row."""
    n = len(row_ptr) - 1
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(int(row_ptr[i]), int(row_ptr[i + 1])):
            acc += float(values[k]) * float(x[col_idx[k]])
        y[i] = acc
    return y


def reference_cg(row_ptr, col_idx, values, b, tol, max_iter):
    """Textbook conjugate gradient, written independently of the library solver.

    Uses the same conventions (x0 = 0, recurrence residual, relative
    residual recorded after the x-update) with a loop-based spmv.
    """
    n = len(b)
    x = np.zeros(n)
    r = np.array(b, dtype=float)
    p = r.copy()
    rr = float(np.dot(r, r))
    bnorm = math.sqrt(rr)
    if bnorm == 0.0:
        return x, 0, True
    iters = 0
    converged = False
    while iters < max_iter:
        Ap = spmv_loop(row_ptr, col_idx, values, p)
        pAp = float(np.dot(p, Ap))
        alpha = rr / pAp
        x += alpha * p
        r += (-alpha) * Ap
        rr_new = float(np.dot(r, r))
        iters += 1
        if math.sqrt(rr_new) / bnorm <= tol:
            converged = True
            break
        beta = rr_new / rr
        p *= beta
        p += r
        rr = rr_new
    return x, iters, converged


def balanced_split(total: int, devices: int) -> list[int]:
    """Fair division by dealing items one at a time to the least-loaded device.

    Starting from zero with lowest-index tie-break, least-loaded dealing
    is round-robin dealing, so item i lands on device i mod D; counting
    the deal stays independent of any closed-form chunk arithmetic.
    """
    used = min(devices, total)
    if total <= 512:
        counts = [0] * used
        for _ in range(total):
            counts[counts.index(min(counts))] += 1
        return counts
    return np.bincount(np.arange(total) % used, minlength=used).tolist()
