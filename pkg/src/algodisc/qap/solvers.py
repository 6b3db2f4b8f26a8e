"""Continuous relaxations, projections and local-search heuristics for the QAP.

Permutations are mapping arrays ``perm[i] = location of facility i``.  The
doubly stochastic relaxation works on n x n matrices.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numba import njit

from .instance import QapInstance, perm_matrix, qap_gradient, qap_loss
from .lsa import lsa

PROJECTIONS = ("l2", "steepest", "best_of_both")
KOPT_VARIANTS = ("2opt", "3opt", "p2opt", "p3opt")


def _tol(inst: QapInstance) -> float:
    scale = np.abs(inst.F).sum() * np.abs(inst.D).max() + np.abs(inst.C).sum()
    return 1e-12 * max(1.0, float(scale))


# ---------------------------------------------------------------------------
# relaxation


def interpolate(Q, S, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    Q, S = np.asarray(Q, dtype=float), np.asarray(S, dtype=float)
    if gamma == 0.0:
        return Q.copy()
    if gamma == 1.0:
        return S.copy()
    return (1.0 - gamma) * Q + gamma * S


def default_schedule(k_max: int) -> list[float]:
    return [2.0 / (2.0 + k) for k in range(k_max)]


def frank_wolfe(inst: QapInstance, P0, schedule: Sequence[float] | None = None,
                k_max: int | None = None) -> np.ndarray:
    """Conditional gradient on the Birkhoff polytope; returns ``P_{k_max}``."""
    if schedule is None:
        k_max = 30 if k_max is None else k_max
        schedule = default_schedule(k_max)
    else:
        k_max = len(schedule) if k_max is None else k_max
        if k_max > len(schedule):
            raise ValueError(f"k_max={k_max} exceeds schedule length {len(schedule)}")
    P = np.asarray(P0, dtype=float)
    if P.ndim == 1:
        P = perm_matrix(P)
    for k in range(k_max):
        S = perm_matrix(lsa(qap_gradient(inst, P)))
        P = interpolate(P, S, float(schedule[k]))
    return P


def frank_wolfe_line_search(inst: QapInstance, P0, k_max: int = 30) -> tuple[np.ndarray, list[float]]:
    """Frank-Wolfe with the exact minimizing step along each direction.

    The objective restricted to a segment is a quadratic in the step, so the
    best step in [0, 1] has a closed form.  Returns the final iterate and the
    steps taken.
    """
    P = np.asarray(P0, dtype=float)
    if P.ndim == 1:
        P = perm_matrix(P)
    steps = []
    for _ in range(k_max):
        G = qap_gradient(inst, P)
        S = perm_matrix(lsa(G))
        R = S - P
        a = float((inst.F * (R @ inst.D @ R.T)).sum())
        b = float((G * R).sum())
        if a > 0:
            g = min(1.0, max(0.0, -b / (2 * a)))
        else:
            g = 1.0 if a + b < 0 else 0.0
        steps.append(g)
        P = interpolate(P, S, g)
    return P, steps


def project_to_permutation(inst: QapInstance, P, mode: str = "best_of_both") -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if mode == "l2":
        return lsa(-P)
    if mode == "steepest":
        return lsa(qap_gradient(inst, P))
    if mode == "best_of_both":
        a, b = lsa(-P), lsa(qap_gradient(inst, P))
        return b if qap_loss(inst, b) < qap_loss(inst, a) else a
    raise ValueError(f"unknown projection mode {mode!r}; expected one of {PROJECTIONS}")


# ---------------------------------------------------------------------------
# delta evaluation


@njit(cache=True)
def _delta(F, D, C, p, q, idx, m):
    """Loss change from p to q when only positions idx[:m] differ."""
    n = p.shape[0]
    total = 0.0
    for t in range(m):
        a = idx[t]
        qa, pa = q[a], p[a]
        s = C[a, qa] - C[a, pa]
        for k in range(n):
            s += F[a, k] * (D[qa, q[k]] - D[pa, p[k]]) + F[k, a] * (D[q[k], qa] - D[p[k], pa])
        for u in range(m):
            b = idx[u]
            s -= F[a, b] * (D[qa, q[b]] - D[pa, p[b]])
        total += s
    return total


@njit(cache=True)
def _swap_delta(F, D, C, p, i, j, q, idx):
    q[:] = p
    q[i], q[j] = p[j], p[i]
    idx[0], idx[1] = i, j
    return _delta(F, D, C, p, q, idx, 2)


@njit(cache=True)
def _best_swap(F, D, C, p):
    n = p.shape[0]
    q = p.copy()
    idx = np.empty(3, dtype=np.int64)
    bi, bj, best = -1, -1, np.inf
    for i in range(n - 1):
        for j in range(i + 1, n):
            d = _swap_delta(F, D, C, p, i, j, q, idx)
            if d < best:
                bi, bj, best = i, j, d
    return bi, bj, best


@njit(cache=True)
def _two_opt(F, D, C, p, max_iters, tol):
    p = p.copy()
    it = 0
    while it < max_iters:
        i, j, d = _best_swap(F, D, C, p)
        if i < 0 or not d < -tol:
            break
        p[i], p[j] = p[j], p[i]
        it += 1
    return p, it


@njit(cache=True)
def _three_opt(F, D, C, p, max_iters, tol):
    n = p.shape[0]
    p = p.copy()
    q = p.copy()
    idx = np.empty(3, dtype=np.int64)
    best_q = p.copy()
    it = 0
    while it < max_iters:
        bi, bj, best = _best_swap(F, D, C, p)
        if bi >= 0:
            best_q[:] = p
            best_q[bi], best_q[bj] = p[bj], p[bi]
        for i in range(n - 2):
            for j in range(i + 1, n - 1):
                for k in range(j + 1, n):
                    idx[0], idx[1], idx[2] = i, j, k
                    for rot in range(2):
                        q[:] = p
                        if rot == 0:
                            q[i], q[j], q[k] = p[j], p[k], p[i]
                        else:
                            q[i], q[j], q[k] = p[k], p[i], p[j]
                        d = _delta(F, D, C, p, q, idx, 3)
                        if d < best:
                            best = d
                            best_q[:] = q
        if not best < -tol:
            break
        p[:] = best_q
        it += 1
    return p, it


@njit(cache=True)
def _reverse_into(q, p, i, j):
    q[:] = p
    for k in range(i, j + 1):
        q[k] = p[j + i - k]


@njit(cache=True)
def _p_two_opt(F, D, C, p, max_iters, tol):
    n = p.shape[0]
    p = p.copy()
    q = p.copy()
    idx = np.arange(n)
    it = 0
    while it < max_iters:
        bi, bj, best = -1, -1, np.inf
        for i in range(n - 1):
            for j in range(i + 1, n):
                _reverse_into(q, p, i, j)
                d = _delta(F, D, C, p, q, idx[i:j + 1], j - i + 1)
                if d < best:
                    bi, bj, best = i, j, d
        if bi < 0 or not best < -tol:
            break
        _reverse_into(q, p, bi, bj)
        p[:] = q
        it += 1
    return p, it


@njit(cache=True)
def _p_three_opt(F, D, C, p, max_iters, tol):
    n = p.shape[0]
    p = p.copy()
    q = p.copy()
    r = p.copy()
    best_q = p.copy()
    idx = np.arange(n)
    it = 0
    while it < max_iters:
        best = np.inf
        for i in range(n - 2):
            for j in range(i + 1, n - 1):
                _reverse_into(q, p, i, j)
                for k in range(j + 1, n):
                    _reverse_into(r, q, j, k)
                    d = _delta(F, D, C, p, r, idx[i:k + 1], k - i + 1)
                    if d < best:
                        best = d
                        best_q[:] = r
        if not best < -tol:
            break
        p[:] = best_q
        it += 1
    return p, it


def _mats(inst: QapInstance):
    return inst.F, inst.D, inst.C


def best_swap(inst: QapInstance, x) -> tuple[np.ndarray, float]:
    """The best transposition neighbour of ``x`` and its loss change."""
    x = np.asarray(x, dtype=np.int64)
    i, j, d = _best_swap(*_mats(inst), x)
    y = x.copy()
    y[i], y[j] = x[j], x[i]
    return y, float(d)


def two_swap_best(inst: QapInstance, x, inner: Callable[[np.ndarray], np.ndarray] | None = None,
                  include_self: bool = True) -> np.ndarray:
    """Apply ``inner`` to every transposition neighbour of ``x`` and keep the best result.

    With ``inner`` the identity this is the single best 2-swap.  ``x`` itself
    competes too (so a local optimum is a fixed point); ties keep the earliest
    candidate in the order x, (0, 1), (0, 2), ...
    """
    x = np.asarray(x, dtype=np.int64)
    n = x.size
    if inner is None:
        y, d = best_swap(inst, x)
        return y if (d < -_tol(inst) or not include_self) else x.copy()
    cands = [x] if include_self else []
    for i in range(n - 1):
        for j in range(i + 1, n):
            y = x.copy()
            y[i], y[j] = x[j], x[i]
            cands.append(y)
    best, best_loss = None, np.inf
    for y in cands:
        z = inner(y)
        loss = qap_loss(inst, z)
        if loss < best_loss:
            best, best_loss = z, loss
    return best


def k_opt(inst: QapInstance, x, variant: str = "2opt", max_iters: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if variant not in KOPT_VARIANTS:
        raise ValueError(f"unknown k-opt variant {variant!r}")
    if max_iters is None:
        max_iters = 1 << 30
    n = x.size
    if variant == "3opt" and n < 3:
        variant = "2opt"
    if variant == "p3opt" and n < 3:
        variant = "p2opt"
    kernel = {"2opt": _two_opt, "3opt": _three_opt, "p2opt": _p_two_opt, "p3opt": _p_three_opt}[variant]
    y, _ = kernel(*_mats(inst), x, int(max_iters), _tol(inst))
    return y


def multistart_two_opt(inst: QapInstance, evaluations: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Restart 2-opt from random permutations until ``evaluations`` swap evaluations are spent.

    One best-swap sweep costs n(n-1)/2 evaluations.  Returns the best
    permutation and the evaluations actually used (at least one sweep).
    """
    n = inst.n
    sweep = max(1, n * (n - 1) // 2)
    best, best_loss, used = None, np.inf, 0
    while best is None or evaluations - used >= sweep:
        x = rng.permutation(n).astype(np.int64)
        max_iters = max(0, (evaluations - used) // sweep - 1)
        y, it = _two_opt(*_mats(inst), x, max_iters, _tol(inst))
        used += (it + 1) * sweep
        loss = qap_loss(inst, y)
        if loss < best_loss:
            best, best_loss = y, loss
    return best, used


# ---------------------------------------------------------------------------
# simulated annealing


@njit(cache=True)
def _anneal(F, D, C, p, pairs, u, T0, eps, loss0):
    p = p.copy()
    best = p.copy()
    q = p.copy()
    idx = np.empty(2, dtype=np.int64)
    cur = loss0
    best_loss = loss0
    T = T0
    for k in range(pairs.shape[0]):
        i, j = pairs[k, 0], pairs[k, 1]
        d = _swap_delta(F, D, C, p, i, j, q, idx)
        if d < 0 or u[k] < np.exp(-d / T):
            p[i], p[j] = p[j], p[i]
            cur += d
            if cur < best_loss:
                best_loss = cur
                best[:] = p
        T *= 1.0 - eps
    return best


def simulated_annealing(inst: QapInstance, x, m: int, rng: np.random.Generator,
                        T0: float | None = None, eps: float = 1e-4) -> np.ndarray:
    """``m`` swap proposals under the geometric schedule ``T0 (1 - eps)^k``; best-ever state."""
    x = np.asarray(x, dtype=np.int64)
    if m < 0:
        raise ValueError("m must be nonnegative")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    n = x.size
    loss0 = qap_loss(inst, x)
    if T0 is None:
        T0 = max(abs(loss0), 1.0) / n
    if T0 <= 0:
        raise ValueError("T0 must be positive")
    if m == 0:
        return x.copy()
    i = rng.integers(0, n, size=m)
    j = (i + rng.integers(1, n, size=m)) % n
    pairs = np.stack([i, j], axis=1).astype(np.int64)
    u = rng.random(m)
    best = _anneal(*_mats(inst), x, pairs, u, float(T0), float(eps), loss0)
    # the running loss drifts in floating point; never report a worse state than the input
    return best if qap_loss(inst, best) <= loss0 else x.copy()


# ---------------------------------------------------------------------------
# orthogonal relaxation


def qr_q(M: np.ndarray) -> np.ndarray:
    """Q factor with the diagonal of R made nonnegative, so the factor is unique."""
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def orthogonal_descent(inst: QapInstance, x0, variant: str = "op", k_max: int = 50,
                       momentum: float = 0.9, normalize: bool = True) -> np.ndarray:
    """Gradient steps on the orthogonal group, retracted by the QR factor.

    ``x <- Q[x - g_k G]`` with ``g_k = 0.5 * 0.95^k``; ``oc`` replaces the raw
    step by a heavy-ball velocity.  With ``normalize`` the gradient is scaled
    to Frobenius norm sqrt(n) (the norm of a permutation matrix) so the step
    size is relative to the instance scale.  The final iterate is projected
    with the best-of-both rule.
    """
    if variant not in ("op", "oc"):
        raise ValueError(f"unknown variant {variant!r}")
    x = np.asarray(x0, dtype=float)
    if x.ndim == 1:
        x = perm_matrix(x)
    n = x.shape[0]
    if not np.allclose(x @ x.T, np.eye(n), atol=1e-8):
        raise ValueError("x0 must be orthogonal")
    vel = np.zeros_like(x)
    for k in range(k_max):
        G = qap_gradient(inst, x)
        if normalize:
            g = np.linalg.norm(G)
            G = G * (np.sqrt(n) / g) if g > 0 else G
        step = 0.5 * 0.95 ** k * G
        if variant == "oc":
            vel = momentum * vel + step
            step = vel
        M = x - step
        if not np.isfinite(M).all():
            raise FloatingPointError("non-finite iterate in orthogonal descent")
        x = qr_q(M)
    return project_to_permutation(inst, x, "best_of_both")


# ---------------------------------------------------------------------------
# manually designed tokens


def gibbs_weights(losses, beta: float) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ValueError("empty ensemble")
    if not np.isfinite(beta) or beta < 0:
        raise ValueError("beta must be finite and nonnegative")
    w = np.exp(-beta * (losses - losses.min()))
    return w / w.sum()


def gibbs_average(values, losses, beta: float):
    """``sum v_i exp(-beta L_i) / sum exp(-beta L_i)``, for scalars or arrays."""
    w = gibbs_weights(losses, beta)
    values = np.asarray(values, dtype=float)
    if len(values) != w.size:
        raise ValueError("values and losses differ in length")
    return np.tensordot(w, values, axes=1)


def gibbs_perm_average(inst: QapInstance, xs, beta: float) -> np.ndarray:
    if len(xs) == 0:
        raise ValueError("empty ensemble")
    mats = [perm_matrix(x) if np.ndim(x) == 1 else np.asarray(x, dtype=float) for x in xs]
    return gibbs_average(mats, [qap_loss(inst, m) for m in mats], beta)


def bias_matrix(y_beta, x0) -> np.ndarray:
    y_beta = np.asarray(y_beta, dtype=float)
    return y_beta * (1.0 - y_beta) * np.asarray(x0, dtype=float)


def bias_loss(inst: QapInstance, y_beta, x0, gamma_b: float) -> QapInstance:
    """Instance whose loss is ``L(x) + gamma_b Tr(x^T T)`` with ``T = y(1-y) x0``."""
    T = bias_matrix(y_beta, x0)
    return inst.with_linear(inst.C + gamma_b * T)


def perturbed_starts(x, rng: np.random.Generator, count: int = 10) -> list[np.ndarray]:
    """``U_i x_i + (1 - U_i) x`` for uniform permutations ``x_i`` and ``U_i ~ U[0, 1]``."""
    X = perm_matrix(x) if np.ndim(x) == 1 else np.asarray(x, dtype=float)
    n = X.shape[0]
    out = []
    for _ in range(count):
        xi = perm_matrix(rng.permutation(n))
        u = rng.random()
        out.append(u * xi + (1.0 - u) * X)
    return out


def psp(inst: QapInstance, x, inner: Callable[[np.ndarray], np.ndarray], rng: np.random.Generator,
        count: int = 10) -> np.ndarray:
    best, best_loss = None, np.inf
    for y in perturbed_starts(x, rng, count):
        z = inner(y)
        loss = qap_loss(inst, z)
        if loss < best_loss:
            best, best_loss = z, loss
    return best
