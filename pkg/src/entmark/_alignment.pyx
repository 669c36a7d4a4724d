# cython: boundscheck=False, wraparound=False, initializedcheck=False
# cython: cdivision=True, language_level=3
"""Compiled block-alignment search; see _alignment_py for the contract.

The floating-point operations and their per-element order are kept identical
to the NumPy fallback (initial window accumulated in l order, then one
subtract and one add per step), so the two backends agree bit for bit.
"""

import numpy as np


def min_block_cost(costs, k):
    """Returns (min cost, text start i, key offset j); ties take the
    row-major smallest (i, j)."""
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    cdef double[:, ::1] m = costs
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t length = m.shape[1]
    cdef Py_ssize_t kk = k
    if n < 1:
        raise ValueError("need at least one key element")
    if kk < 1 or kk > length:
        raise ValueError("block length k must be in 1..text length")
    cdef Py_ssize_t n_starts = length - kk + 1
    s_arr = np.zeros(n)
    cdef double[::1] s = s_arr
    cdef Py_ssize_t i, j, j0, l, row, off, idx
    cdef double v
    cdef double best
    cdef Py_ssize_t best_i = 0, best_j = 0

    for l in range(kk):
        row = l % n
        for j0 in range(n):
            idx = j0 + row
            if idx >= n:
                idx -= n
            s[j0] += m[idx, l]

    best = s[0]
    for j in range(n):
        v = s[j]
        if v < best:
            best = v
            best_j = j

    for i in range(1, n_starts):
        row = (i - 1) % n
        off = (i - 1 + kk) % n
        for j0 in range(n):
            idx = j0 + row
            if idx >= n:
                idx -= n
            v = s[j0] - m[idx, i - 1]
            idx = j0 + off
            if idx >= n:
                idx -= n
            s[j0] = v + m[idx, i - 1 + kk]
        off = i % n
        for j in range(n):
            idx = j - off
            if idx < 0:
                idx += n
            v = s[idx]
            if v < best:
                best = v
                best_i = i
                best_j = j

    return best, best_i, best_j
