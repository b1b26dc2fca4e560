"""Minimum-cost linear assignment (Hungarian method with dual potentials)."""

from __future__ import annotations

import numpy as np


def linear_assignment(cost) -> tuple[np.ndarray, np.ndarray]:
    """Solve min sum cost[i, col[i]] over injective row -> column maps.

    Rectangular inputs are allowed; every row of the smaller dimension is
    assigned. Returns ``(rows, cols)`` sorted by row, like
    ``scipy.optimize.linear_sum_assignment``.

    Each row is inserted with one shortest augmenting path search over the
    reduced costs (Dijkstra with potentials), vectorized over columns.
    Ties go to an unassigned column when there is one, otherwise to the
    lowest index, so results are deterministic.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost contains non-finite entries")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    if n == m:
        # column reduction lets most rows land on a zero reduced-cost column
        # in one step; rectangular problems need v <= 0 on free columns
        v[1:] = c.min(axis=0)
    p = np.zeros(m + 1, np.int64)  # p[j]: row (1-based) holding column j, 0 if free
    way = np.zeros(m + 1, np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            delta = cand.min()
            ties = np.flatnonzero(cand == delta)
            # prefer an unassigned column among equal candidates; identical
            # rows would otherwise walk every tied assigned column first
            open_ties = ties[p[ties + 1] == 0]
            j1 = int(open_ties[0] if len(open_ties) else ties[0]) + 1
            cols = np.flatnonzero(used)
            u[p[cols]] += delta
            v[cols] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = np.full(n, -1, np.int64)
    assigned = np.flatnonzero(p[1:]) + 1
    col_of_row[p[assigned] - 1] = assigned - 1
    rows = np.arange(n)
    if transposed:
        order = np.argsort(col_of_row)
        return col_of_row[order], rows[order]
    return rows, col_of_row
