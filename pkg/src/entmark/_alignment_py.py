"""NumPy implementation of the block-alignment search.

Given the per-pair cost contributions ``costs[j, i]`` (key position j against
text position i), finds the minimum over all text-block starts i and key
offsets j of

    D(i, j) = sum_{l=0}^{k-1} costs[(j + l) % n, i + l]

with wraparound key indexing, via a sliding-window walk along each wrapped
diagonal. The compiled twin in ``_alignment.pyx`` performs the identical
floating-point operations in the identical per-element order, so both
backends return bit-identical values.
"""

import numpy as np


def min_block_cost(costs: np.ndarray, k: int):
    """Returns (min cost, text start i, key offset j); ties take the
    row-major smallest (i, j)."""
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    n, length = costs.shape
    if n < 1:
        raise ValueError("need at least one key element")
    if not 1 <= k <= length:
        raise ValueError("block length k must be in 1..text length")
    n_starts = length - k + 1
    s = np.zeros(n)
    for l in range(k):
        s += np.roll(costs[:, l], -l)
    rows = np.empty((n_starts, n))
    rows[0] = s
    for i in range(1, n_starts):
        s = s - np.roll(costs[:, i - 1], -(i - 1))
        s = s + np.roll(costs[:, i - 1 + k], -(i - 1 + k))
        rows[i] = np.roll(s, i)
    flat = int(np.argmin(rows))
    return float(rows.flat[flat]), flat // n, flat % n
