"""Independent oracles used by the tests: these deliberately avoid the code
paths they check."""

import itertools

import numpy as np


def brute_force_assignment(cost):
    """Minimum-cost one-to-one assignment by exhaustive search over injections."""
    c = np.asarray(cost, dtype=np.float64)
    n, m = c.shape
    if n == 0 or m == 0:
        return [], 0.0
    best_pairs, best_total = None, np.inf
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            total = sum(c[i, j] for i, j in enumerate(cols))
            if total < best_total - 1e-15:
                best_total = total
                best_pairs = [(i, j) for i, j in enumerate(cols)]
    else:
        for rows in itertools.permutations(range(n), m):
            total = sum(c[i, j] for j, i in enumerate(rows))
            if total < best_total - 1e-15:
                best_total = total
                best_pairs = [(i, j) for j, i in enumerate(rows)]
    return sorted(best_pairs), best_total


def dp_levenshtein(a, b):
    """Full-matrix dynamic program, written independently of the library."""
    n, m = len(a), len(b)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
                d[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
            )
    return int(d[n, m])


def spearman_rho(xs, ys):
    """Spearman rank correlation, tie-free inputs assumed."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    rx = np.argsort(np.argsort(xs))
    ry = np.argsort(np.argsort(ys))
    n = len(xs)
    if n < 2:
        return 1.0
    d = rx - ry
    return 1.0 - 6.0 * float((d * d).sum()) / (n * (n * n - 1))


def count_components(mask, eight_connected=True):
    """Connected components of a boolean raster by flood fill."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    if eight_connected:
        steps = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    else:
        steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    count = 0
    h, w = mask.shape
    for i0, j0 in zip(*np.nonzero(mask)):
        if seen[i0, j0]:
            continue
        count += 1
        stack = [(int(i0), int(j0))]
        seen[i0, j0] = True
        while stack:
            i, j = stack.pop()
            for di, dj in steps:
                ni, nj = i + di, j + dj
                if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                    seen[ni, nj] = True
                    stack.append((ni, nj))
    return count
