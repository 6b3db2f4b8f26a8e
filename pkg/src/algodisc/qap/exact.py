"""Exact QAP methods: exhaustive enumeration and Gilmore-Lawler branch-and-bound."""

from __future__ import annotations

import time

import numpy as np
from numba import njit

from .instance import QapInstance, qap_loss
from .lsa import _augment, lsa

BRUTE_FORCE_MAX_N = 10


@njit(cache=True)
def _enumerate(F, D, C):
    n = F.shape[0]
    p = np.arange(n)
    best = p.copy()
    best_loss = np.inf
    while True:
        s = 0.0
        for i in range(n):
            pi = p[i]
            s += C[i, pi]
            for j in range(n):
                s += F[i, j] * D[pi, p[j]]
        if s < best_loss:
            best_loss = s
            best[:] = p
        # next permutation in lexicographic order
        k = n - 2
        while k >= 0 and p[k] >= p[k + 1]:
            k -= 1
        if k < 0:
            break
        m = n - 1
        while p[m] <= p[k]:
            m -= 1
        p[k], p[m] = p[m], p[k]
        p[k + 1:] = p[k + 1:][::-1].copy()
    return best, best_loss


def brute_force(inst: QapInstance) -> np.ndarray:
    """Lexicographically first optimal permutation, by enumerating all n! of them."""
    if inst.n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force is limited to n <= {BRUTE_FORCE_MAX_N}, got n={inst.n}")
    best, _ = _enumerate(inst.F, inst.D, inst.C)
    return best


def brute_force_optimum(inst: QapInstance) -> float:
    return qap_loss(inst, brute_force(inst))


def certify(inst: QapInstance) -> QapInstance:
    return inst.with_optimum(brute_force_optimum(inst), "brute-force")


@njit(cache=True)
def _gl_matrix(F, D, C, assigned, loc_of, free_fac, free_loc):
    """Lower-bound cost of placing each free facility at each free location.

    Interactions with already placed facilities are exact; interactions among
    free facilities are bounded by the minimal scalar product of the
    remaining flow and distance rows (opposite sorting).
    """
    u = free_fac.shape[0]
    na = assigned.shape[0]
    L = np.empty((u, u))
    fs = np.empty((u, max(u - 1, 1)))
    ds = np.empty((u, max(u - 1, 1)))
    for a in range(u):
        i = free_fac[a]
        t = 0
        for b in range(u):
            if b != a:
                fs[a, t] = -F[i, free_fac[b]]
                t += 1
        if u > 1:
            fs[a, :u - 1] = -np.sort(fs[a, :u - 1])
        k = free_loc[a]
        t = 0
        for b in range(u):
            if b != a:
                ds[a, t] = D[k, free_loc[b]]
                t += 1
        if u > 1:
            ds[a, :u - 1] = np.sort(ds[a, :u - 1])
    for a in range(u):
        i = free_fac[a]
        for c in range(u):
            k = free_loc[c]
            s = C[i, k] + F[i, i] * D[k, k]
            for t in range(na):
                j = assigned[t]
                lj = loc_of[j]
                s += F[i, j] * D[k, lj] + F[j, i] * D[lj, k]
            for t in range(u - 1):
                s += fs[a, t] * ds[c, t]
            L[a, c] = s
    return L


@njit(cache=True)
def _fixed_cost(F, D, C, assigned, loc_of):
    s = 0.0
    for a in range(assigned.shape[0]):
        i = assigned[a]
        s += C[i, loc_of[i]]
        for b in range(assigned.shape[0]):
            j = assigned[b]
            s += F[i, j] * D[loc_of[i], loc_of[j]]
    return s


@njit(cache=True)
def _node_bound(F, D, C, assigned, loc_of, free_fac, free_loc):
    fixed = _fixed_cost(F, D, C, assigned, loc_of)
    if free_fac.shape[0] == 0:
        return fixed, np.empty((0, 0))
    L = _gl_matrix(F, D, C, assigned, loc_of, free_fac, free_loc)
    reduced = L - L.min()
    col4row, _, _ = _augment(reduced)
    s = 0.0
    for a in range(free_fac.shape[0]):
        s += L[a, col4row[a]]
    return fixed + s, L


def gilmore_lawler_bound(inst: QapInstance) -> float:
    n = inst.n
    empty = np.zeros(0, dtype=np.int64)
    bound, _ = _node_bound(inst.F, inst.D, inst.C, empty, np.full(n, -1), np.arange(n), np.arange(n))
    return float(bound)


def branch_and_bound(inst: QapInstance, time_limit: float = 60.0,
                     incumbent: np.ndarray | None = None) -> tuple[np.ndarray, float, bool]:
    """Depth-first assignment of facilities 0, 1, ... with Gilmore-Lawler pruning.

    Returns ``(best permutation, lower bound, completed)``.  When the search
    finishes inside ``time_limit`` the permutation is optimal and the bound
    equals its loss; otherwise the bound is the root bound.
    """
    if not time_limit > 0:
        raise ValueError("time_limit must be positive")
    F, D, C = inst.F, inst.D, inst.C
    n = inst.n
    deadline = time.perf_counter() + time_limit
    root_bound, L0 = _node_bound(F, D, C, np.zeros(0, dtype=np.int64), np.full(n, -1),
                                 np.arange(n), np.arange(n))
    if incumbent is None:
        incumbent = lsa(L0)
    best = np.asarray(incumbent, dtype=np.int64).copy()
    best_loss = qap_loss(inst, best)
    eps = 1e-9 * max(1.0, abs(best_loss))
    loc_of = np.full(n, -1, dtype=np.int64)
    used = np.zeros(n, dtype=bool)
    completed = True
    nodes = 0

    def recurse(depth: int) -> bool:
        nonlocal best, best_loss, nodes
        nodes += 1
        if nodes % 64 == 0 and time.perf_counter() > deadline:
            return False
        assigned = np.arange(depth, dtype=np.int64)
        free_fac = np.arange(depth, n, dtype=np.int64)
        free_loc = np.flatnonzero(~used).astype(np.int64)
        bound, L = _node_bound(F, D, C, assigned, loc_of, free_fac, free_loc)
        if bound >= best_loss - eps:
            return True
        if depth == n:
            best, best_loss = loc_of.copy(), qap_loss(inst, loc_of)
            return True
        # children in order of their row of the bound matrix
        for c in np.argsort(L[0], kind="stable"):
            k = free_loc[c]
            loc_of[depth] = k
            used[k] = True
            ok = recurse(depth + 1)
            used[k] = False
            loc_of[depth] = -1
            if not ok:
                return False
        return True

    completed = recurse(0)
    bound = best_loss if completed else float(min(root_bound, best_loss))
    return best, float(bound), completed

