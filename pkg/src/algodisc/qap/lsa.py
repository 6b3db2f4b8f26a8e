"""Linear sum assignment by shortest augmenting paths, with a lexicographic tie-break."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _augment(cost):
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    shortest = np.empty(n)
    path = np.full(n, -1)
    col4row = np.full(n, -1)
    row4col = np.full(n, -1)
    sr = np.zeros(n, dtype=np.bool_)
    sc = np.zeros(n, dtype=np.bool_)
    remaining = np.empty(n, dtype=np.int64)
    for cur in range(n):
        min_val = 0.0
        num_remaining = n
        for it in range(n):
            remaining[it] = n - it - 1
        sr[:] = False
        sc[:] = False
        shortest[:] = np.inf
        sink = -1
        i = cur
        while sink == -1:
            index = -1
            lowest = np.inf
            sr[i] = True
            for it in range(num_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = True
            num_remaining -= 1
            remaining[index] = remaining[num_remaining]
        u[cur] += min_val
        for i in range(n):
            if sr[i] and i != cur:
                u[i] += min_val - shortest[col4row[i]]
        for j in range(n):
            if sc[j]:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            nxt = col4row[i]
            col4row[i] = j
            j = nxt
            if i == cur:
                break
    return col4row, u, v


@njit(cache=True)
def _lex_smallest(tight, col4row):
    """Reroute a perfect matching of the tight graph to the lexicographically smallest one."""
    n = tight.shape[0]
    col4row = col4row.copy()
    row4col = np.empty(n, dtype=np.int64)
    for i in range(n):
        row4col[col4row[i]] = i
    col_fixed = np.zeros(n, dtype=np.bool_)
    seen = np.zeros(n, dtype=np.bool_)
    prev_row = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            if col_fixed[j] or not tight[i, j]:
                continue
            if col4row[i] == j:
                break
            # can the row holding j move along tight edges so that column
            # col4row[i] is released for someone else?
            target = col4row[i]
            r = row4col[j]
            seen[:] = False
            seen[j] = True
            head, tail = 0, 1
            queue[0] = r
            found = False
            while head < tail and not found:
                a = queue[head]
                head += 1
                for b in range(n):
                    if seen[b] or col_fixed[b] or not tight[a, b]:
                        continue
                    seen[b] = True
                    prev_row[b] = a
                    if b == target:
                        found = True
                        break
                    queue[tail] = row4col[b]
                    tail += 1
            if found:
                b = target
                while True:
                    a = prev_row[b]
                    old = col4row[a]
                    col4row[a] = b
                    row4col[b] = a
                    b = old
                    if a == r:
                        break
                col4row[i] = j
                row4col[j] = i
                break
        col_fixed[col4row[i]] = True
    return col4row


def lsa(cost) -> np.ndarray:
    """Minimum-cost assignment ``row i -> column perm[i]``.

    Among optimal assignments the lexicographically smallest mapping is
    returned, so the all-ones matrix gives the identity.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"square cost matrix required, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # reductions keep the dual values near zero whatever the offset of the data
    reduced = cost - cost.min(axis=1, keepdims=True)
    reduced = reduced - reduced.min(axis=0, keepdims=True)
    col4row, u, v = _augment(reduced)
    scale = max(1.0, float(np.abs(reduced).max()))
    tight = reduced - u[:, None] - v[None, :] <= 1e-12 * n * scale
    perm = _lex_smallest(tight, col4row)
    idx = np.arange(n)
    if cost[idx, perm].sum() > cost[idx, col4row].sum():
        # near-ties inside the tolerance band must not cost optimality
        return col4row
    return perm


def lsa_cost(cost) -> float:
    cost = np.asarray(cost, dtype=float)
    perm = lsa(cost)
    return float(cost[np.arange(cost.shape[0]), perm].sum())
