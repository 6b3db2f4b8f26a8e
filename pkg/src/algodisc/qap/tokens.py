"""Token languages for the QAP.

States are either permutations (int mapping arrays, kind ``perm``), doubly
stochastic matrices (``ds``) or arbitrary real matrices (``matrix``), with
``perm`` < ``ds`` < ``matrix`` in the kind order.  Only permutations are
scored, except in the step-size language where every iterate is scored by
its best-of-both projection.
"""

from __future__ import annotations

import dataclasses
import statistics
import time
from typing import Callable

import numpy as np

from ..lang import ANY, Combinator, ExecContext, Language, Primitive, Token, Vocabulary
from .instance import perm_matrix, qap_gradient, qap_loss
from .lsa import lsa
from .solvers import (
    bias_loss,
    frank_wolfe,
    gibbs_average,
    interpolate,
    k_opt,
    orthogonal_descent,
    perturbed_starts,
    project_to_permutation,
    simulated_annealing,
)

KINDS = {"matrix": None, "ds": "matrix", "perm": "ds"}

FOR_ITERATIONS = 50
PU_SAMPLES = 10
PSP_SAMPLES = 10
REFERENCE_N = 12
SCHEDULE_VALUES = tuple(float(g) for g in np.linspace(0.0, 1.0, 20))

# Integer cost units (1 unit ~ 10 microseconds) measured by ``profile_costs``
# at n = 12 and frozen so that traces do not depend on the machine.
COSTS = {
    "ID": 1, "GRAD": 2, "LSA": 5, "NE": 1, "BEST": 16, "FW": 220,
    "SA": 100, "FW_L2": 220, "FW_SD": 210, "2OPT": 20, "3OPT": 90, "P2OPT": 30, "P3OPT": 110,
    "OP": 460, "OC": 460, "GAMMA": 7,
}
OVERHEAD = {"FOR": 1, "RU": 1, "PU": 2, "2SWAP": 2, "PSP": 2, "GIBBS": 3, "BIAS": 4}


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x)
    return perm_matrix(x) if x.ndim == 1 else x.astype(float, copy=False)


def _score(problem, state) -> float:
    return qap_loss(problem, state)


def _perm_loss(problem, state, kind):
    return qap_loss(problem, state) if kind == "perm" else None


# ---------------------------------------------------------------------------
# combinator signatures


def _iterate_kinds(inner: Token, language: Language, k: str, times: int) -> str | None:
    cur = k
    for _ in range(times):
        nxt = inner.out_kind(cur, language)
        if nxt is None:
            return None
        if nxt == cur:
            break
        cur = nxt
    return cur


def _for_sig(times):
    def sig(inner, language):
        out = []
        for k in language.kinds:
            end = _iterate_kinds(inner, language, k, times)
            if end is not None:
                out.append((k, end))
        return tuple(out)
    return sig


def _ru_sig(inner, language):
    return tuple((k, "matrix") for k in language.kinds if inner.out_kind(k, language) is not None)


def _pu_sig(inner, language):
    if inner.out_kind("perm", language) != "perm":
        return ()
    return tuple((k, "perm") for k in language.kinds)


def _swap_sig(inner, language):
    if inner.out_kind("perm", language) != "perm":
        return ()
    return (("perm", "perm"),)


def _psp_sig(inner, language):
    if inner.out_kind("ds", language) != "perm":
        return ()
    return (("ds", "perm"),)


def _gibbs_sig(inner, language):
    if inner.out_kind("ds", language) != "perm":
        return ()
    return (("ds", "ds"),)


def _bias_sig(inner, language):
    return tuple((k, o) for k in ("ds", "perm")
                 if (o := inner.out_kind(k, language)) is not None)


# ---------------------------------------------------------------------------
# combinator semantics


def _argmin(problem, results):
    best, best_loss = None, np.inf
    for z in results:
        loss = _score(problem, z)
        if loss < best_loss:
            best, best_loss = z, loss
    return best


def _for(times):
    def apply(run_inner, state, kind, ctx):
        for it in range(times):
            state, kind = run_inner(state, ctx.at(it), kind)
        return state
    return apply


def _ru(run_inner, state, kind, ctx):
    out, _ = run_inner(state, ctx.at(0), kind)
    return as_matrix(state) + as_matrix(out)


def _pu(samples):
    def apply(run_inner, state, kind, ctx):
        rng = ctx.rng()
        n = ctx.problem.n
        starts = [rng.permutation(n) for _ in range(samples)]
        return _argmin(ctx.problem, (run_inner(y, ctx.at(i), "perm")[0] for i, y in enumerate(starts)))
    return apply


def _two_swap(run_inner, state, kind, ctx):
    x = np.asarray(state)
    n = x.size
    cands = [x]
    for i in range(n - 1):
        for j in range(i + 1, n):
            y = x.copy()
            y[i], y[j] = x[j], x[i]
            cands.append(y)
    return _argmin(ctx.problem, (run_inner(y, ctx.at(t), "perm")[0] for t, y in enumerate(cands)))


def _psp(run_inner, state, kind, ctx):
    ys = perturbed_starts(state, ctx.rng(), PSP_SAMPLES)
    return _argmin(ctx.problem, (run_inner(y, ctx.at(i), "ds")[0] for i, y in enumerate(ys)))


GIBBS_BETA = 20.0
BIAS_STRENGTH = 0.1


def _relative_losses(losses):
    losses = np.asarray(losses, dtype=float)
    return (losses - losses.min()) / max(abs(losses.min()), 1.0)


def _gibbs_ensemble(run_inner, state, ctx):
    ys = perturbed_starts(state, ctx.rng(), PSP_SAMPLES)
    zs = [run_inner(y, ctx.at(i), "ds")[0] for i, y in enumerate(ys)]
    losses = [_score(ctx.problem, z) for z in zs]
    return gibbs_average([as_matrix(z) for z in zs], _relative_losses(losses), GIBBS_BETA), losses


def _gibbs(run_inner, state, kind, ctx):
    return _gibbs_ensemble(run_inner, state, ctx)[0]


def _bias(run_inner, state, kind, ctx):
    y_beta, losses = _gibbs_ensemble(run_inner, state, ctx.at(0))
    gamma = BIAS_STRENGTH * max(abs(min(losses)), 1.0) / ctx.problem.n
    biased = bias_loss(ctx.problem, y_beta, as_matrix(state), gamma)
    sub = dataclasses.replace(ctx.at(1), problem=biased)
    return run_inner(state, sub, kind)[0]


# ---------------------------------------------------------------------------
# plain primitives


def _grad(x, ctx):
    return qap_gradient(ctx.problem, as_matrix(x))


def _lsa(x, ctx):
    return lsa(as_matrix(x))


def _ne(x, ctx):
    return -as_matrix(x)


def _best(x, ctx):
    return project_to_permutation(ctx.problem, as_matrix(x), "best_of_both")


def _fw(x, ctx):
    return frank_wolfe(ctx.problem, as_matrix(x), k_max=30)


def _prim(name, fn, sig, cost=None):
    return Primitive(name, fn, sig, COSTS[name] if cost is None else cost)


def _comb(name, apply, sig, multiplier):
    return Combinator(name, apply, sig, OVERHEAD[name], multiplier)


def low_level_language(n_ref: int = REFERENCE_N, for_iterations: int = FOR_ITERATIONS) -> Language:
    """ID, GRAD, LSA, NE with the FOR, RU, PU and 2SWAP combinators."""
    prims = [
        _prim("ID", lambda x, ctx: x, ((ANY, ANY),)),
        _prim("GRAD", _grad, (("matrix", "matrix"),)),
        _prim("LSA", _lsa, (("matrix", "perm"),)),
        _prim("NE", _ne, (("matrix", "matrix"),)),
    ]
    combs = [
        _comb("FOR", _for(for_iterations), _for_sig(for_iterations), for_iterations),
        _comb("RU", _ru, _ru_sig, 1),
        _comb("PU", _pu(PU_SAMPLES), _pu_sig, PU_SAMPLES),
        _comb("2SWAP", _two_swap, _swap_sig, n_ref * (n_ref - 1) // 2 + 1),
    ]
    return Language("qap-low", KINDS, "perm", {p.name: p for p in prims}, {c.name: c for c in combs},
                    _perm_loss, {("NE", "NE"): "ID", ("ID", "ID"): "ID"})


def manual_language(n_ref: int = REFERENCE_N) -> Language:
    """The low-level set plus FW, BEST and the PSP, GIBBS and BIAS combinators."""
    base = low_level_language(n_ref)
    prims = dict(base.primitives)
    prims["BEST"] = _prim("BEST", _best, (("matrix", "perm"),))
    prims["FW"] = _prim("FW", _fw, (("ds", "ds"),))
    combs = dict(base.combinators)
    combs["PSP"] = _comb("PSP", _psp, _psp_sig, PSP_SAMPLES)
    combs["GIBBS"] = _comb("GIBBS", _gibbs, _gibbs_sig, PSP_SAMPLES)
    combs["BIAS"] = _comb("BIAS", _bias, _bias_sig, PSP_SAMPLES + 1)
    return Language("qap-manual", KINDS, "perm", prims, combs, _perm_loss, dict(base.equivalences))


def sa_steps(n: int) -> int:
    return 200 * n


def high_level_language() -> Language:
    """Complete heuristics acting on permutations."""
    perm = (("perm", "perm"),)

    def sa(x, ctx):
        return simulated_annealing(ctx.problem, x, sa_steps(ctx.problem.n), ctx.rng())

    def fw(mode):
        def run(x, ctx):
            return project_to_permutation(ctx.problem, frank_wolfe(ctx.problem, as_matrix(x), k_max=30), mode)
        return run

    def kopt(variant, capped):
        def run(x, ctx):
            return k_opt(ctx.problem, x, variant, ctx.problem.n if capped else None)
        return run

    def orth(variant):
        return lambda x, ctx: orthogonal_descent(ctx.problem, as_matrix(x), variant)

    prims = [
        _prim("SA", sa, perm),
        _prim("FW_L2", fw("l2"), perm),
        _prim("FW_SD", fw("steepest"), perm),
        _prim("2OPT", kopt("2opt", False), perm),
        _prim("3OPT", kopt("3opt", True), perm),
        _prim("P2OPT", kopt("p2opt", False), perm),
        _prim("P3OPT", kopt("p3opt", True), perm),
        _prim("OP", orth("op"), perm),
        _prim("OC", orth("oc"), perm),
    ]
    return Language("qap-high", KINDS, "perm", {p.name: p for p in prims}, {}, _perm_loss)


def gamma_token_id(i: int) -> str:
    return f"G{i:02d}"


def _schedule_loss(problem, state, kind):
    return qap_loss(problem, project_to_permutation(problem, state, "best_of_both"))


def schedule_language(values=SCHEDULE_VALUES) -> Language:
    """One Frank-Wolfe step per token, each with a fixed step size."""

    def step(g):
        def run(P, ctx):
            S = perm_matrix(lsa(qap_gradient(ctx.problem, P)))
            return interpolate(P, S, g)
        return run

    prims = [_prim(gamma_token_id(i), step(g), (("ds", "ds"),), COSTS["GAMMA"]) for i, g in enumerate(values)]
    return Language("qap-schedule", {"ds": None}, "ds", {p.name: p for p in prims}, {}, _schedule_loss)


def schedule_vocabulary(values=SCHEDULE_VALUES) -> Vocabulary:
    return Vocabulary.from_language(schedule_language(values), with_stop=False)


# ---------------------------------------------------------------------------
# cost calibration


def profile_costs(language: Language, n: int = REFERENCE_N, runs: int = 32, unit: float = 1e-5,
                  seed: int = 0, timer: Callable[[], float] = time.perf_counter) -> dict[str, int]:
    """Median wall time of each plain primitive over ``runs`` calls, in integer units."""
    from .instance import generate_cqap

    inst = generate_cqap(max(n, 4), seed)
    rng = np.random.default_rng(seed)
    out = {}
    for name, prim in language.primitives.items():
        src = prim.signature[0][0]
        times = []
        for r in range(runs):
            x = rng.permutation(inst.n)
            if src == "ds" and language.start_kind == "ds":
                x = np.full((inst.n, inst.n), 1.0 / inst.n)
            ctx = ExecContext(inst, language, (seed, r))
            t0 = timer()
            prim.fn(x, ctx)
            times.append(timer() - t0)
        out[name] = max(1, round(statistics.median(times) / unit))
    return out
