"""Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Assignment:
    matched_pairs: tuple[tuple[int, int], ...]
    cost_matrix: np.ndarray

    @property
    def total_cost(self) -> float:
        total = 0.0
        for i, j in self.matched_pairs:
            total += float(self.cost_matrix[i, j])
        return total


def _solve_square(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """O(n^3) shortest augmenting path. Returns (col_of_row, optimal cost)."""
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    inf = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv, inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    total = float(sum(cost[i, col_of_row[i]] for i in range(n)))
    return col_of_row, total


def _pad_square(cost: np.ndarray) -> np.ndarray:
    r, c = cost.shape
    n = max(r, c)
    padded = np.zeros((n, n))
    padded[:r, :c] = cost
    return padded


def hungarian(cost) -> Assignment:
    """Optimal assignment of size ``min(rows, cols)``.

    Among equal-cost optima the lexicographically smallest list of
    ``(row, col)`` pairs (sorted by row) is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if cost.size == 0:
        return Assignment((), cost.reshape(cost.shape))
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = cost.shape
    padded = _pad_square(cost)
    _, best = _solve_square(padded)
    tol = 1e-12 * max(1.0, abs(best), float(np.abs(cost).max()) * padded.shape[0])

    # Greedy lexicographic refinement: fix each row to the smallest column that
    # still admits an optimal completion. Dummy columns (>= cols) mean "unmatched".
    free_rows = list(range(padded.shape[0]))
    free_cols = list(range(padded.shape[0]))
    fixed_cost = 0.0
    pairs = []
    for i in range(rows):
        free_rows.remove(i)
        for j in sorted(free_cols):
            rest_cols = [c for c in free_cols if c != j]
            sub = padded[np.ix_(free_rows, rest_cols)]
            _, sub_best = _solve_square(sub)
            if fixed_cost + padded[i, j] + sub_best <= best + tol:
                fixed_cost += padded[i, j]
                free_cols = rest_cols
                if j < cols:
                    pairs.append((i, j))
                break
        else:  # pragma: no cover - an optimal completion always exists
            raise RuntimeError("assignment refinement failed")
    return Assignment(tuple(pairs), cost)
