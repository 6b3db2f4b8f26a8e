"""Grover circuit verification and discovery runs.

Verification simulates the standard and optimized circuits, compares their
outcome distributions and writes circuit files plus a gate tally.
Discovery trains a model on GroverGame self-play and then searches for a
gate sequence against a fresh hidden target in each of several seeded runs,
choosing each move greedily by visit count.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, replace

import numpy as np

from ..quantum import (apply_gate, basis_state, expand_program, format_circuit, format_tally, gate_cap,
                       grover_iterations, hamming_signs, optimized_circuit, probabilities, run_circuit,
                       standard_circuit, states_equal_up_to_phase, success_probability, tally_rows)
from ..search import run_search
from .config import ExperimentConfig
from .discover import build_domain, run_discover
from .io import write_text

EQUIVALENCE_COLUMNS = ("n", "target", "k", "p_standard", "p_optimized", "max_probability_diff",
                       "equal_up_to_phase", "equal_up_to_parity_sign")
DISCOVERY_COLUMNS = ("run", "n", "target", "length", "cap", "success_probability", "success", "gates")
EXHAUSTIVE_TARGETS = 64


def verification_targets(n: int) -> list[int]:
    """Every target for small registers, a fixed spread of targets above that."""
    N = 2 ** n
    if N <= EXHAUSTIVE_TARGETS:
        return list(range(N))
    return sorted({0, 1, N // 3, N // 2, N - 1})


@dataclass(frozen=True)
class Equivalence:
    n: int
    target: int
    k: int
    p_standard: float
    p_optimized: float
    max_probability_diff: float
    equal_up_to_phase: bool
    equal_up_to_parity_sign: bool


def compare_circuits(n: int, w: int, tol: float = 1e-9) -> Equivalence:
    k = grover_iterations(n)
    s = run_circuit(basis_state(n), standard_circuit(n, w, k))
    o = run_circuit(basis_state(n), optimized_circuit(n, w, k))
    diff = float(np.max(np.abs(probabilities(s) - probabilities(o))))
    return Equivalence(n, w, k, success_probability(s, w), success_probability(o, w), diff,
                       states_equal_up_to_phase(s, o, tol),
                       states_equal_up_to_phase(s, hamming_signs(n) * o, tol))


def format_equivalence(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EQUIVALENCE_COLUMNS)
    for r in rows:
        w.writerow([r.n, r.target, r.k, f"{r.p_standard:.12g}", f"{r.p_optimized:.12g}",
                    f"{r.max_probability_diff:.3e}", int(r.equal_up_to_phase), int(r.equal_up_to_parity_sign)])
    return buf.getvalue()


def verify(cfg: ExperimentConfig, out: str) -> dict:
    g = cfg.grover
    rows = [compare_circuits(n, w, g.tol) for n in g.sizes for w in verification_targets(n)]
    circuits = os.path.join(out, "circuits")
    os.makedirs(circuits, exist_ok=True)
    for n in g.sizes:
        write_text(os.path.join(circuits, f"n{n}_standard.txt"), format_circuit(standard_circuit(n, 0)))
        write_text(os.path.join(circuits, f"n{n}_optimized.txt"), format_circuit(optimized_circuit(n, 0)))
    write_text(os.path.join(out, "tally.csv"), format_tally(tally_rows(g.sizes)))
    write_text(os.path.join(out, "equivalence.csv"), format_equivalence(rows))
    return {"checks": len(rows),
            "distributions_equal": all(r.max_probability_diff <= g.tol for r in rows),
            "equal_up_to_phase": all(r.equal_up_to_phase for r in rows),
            "equal_up_to_parity_sign": all(r.equal_up_to_parity_sign for r in rows),
            "min_success": min(min(r.p_standard, r.p_optimized) for r in rows)}


@dataclass(frozen=True)
class DiscoveryRun:
    run: int
    n: int
    target: int
    gates: tuple[str, ...]
    cap: int
    success_probability: float
    success: bool


def play(n: int, gates, target: int, cap: int, tol: float) -> DiscoveryRun:
    """Play ``gates`` against ``target``; stop at the first success or at the cap."""
    a, played, p = basis_state(n), [], 0.0
    for gate in gates[:cap]:
        a = apply_gate(a, gate, target if gate == "ORACLE" else None)
        played.append(gate)
        p = success_probability(a, target)
        if p >= 1.0 - tol:
            break
    return DiscoveryRun(0, n, target, tuple(played), cap, p, p >= 1.0 - tol)


def discover(cfg: ExperimentConfig, out: str, resume: bool = False) -> tuple[dict, list[DiscoveryRun]]:
    state = run_discover(cfg, os.path.join(out, "discover"), resume=resume)
    domain = build_domain(cfg, state.vocab)
    greedy = replace(cfg.search, temperature_moves=0)
    runs = []
    for i in range(cfg.grover.runs):
        rng = np.random.default_rng([cfg.seed, i, 0x6A])
        problem = domain.sample_problem(rng)
        res = run_search(problem, domain, state.params, greedy, seed=(cfg.seed, i))
        gates = expand_program(domain.vocab, res.best_program)
        runs.append(replace(play(problem.n, gates, problem.target, gate_cap(problem.n), domain.tol), run=i))
    write_text(os.path.join(out, "discovered.csv"), format_discovery(runs))
    rate = sum(r.success for r in runs) / len(runs) if runs else 0.0
    return {"runs": len(runs), "success_rate": rate}, runs


def format_discovery(runs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DISCOVERY_COLUMNS)
    for r in runs:
        w.writerow([r.run, r.n, r.target, len(r.gates), r.cap, f"{r.success_probability:.12g}", int(r.success),
                    " ".join(r.gates)])
    return buf.getvalue()


def run_grover(cfg: ExperimentConfig, out: str, resume: bool = False) -> dict:
    summary = {}
    if cfg.grover.mode in ("verify", "both"):
        summary["verify"] = verify(cfg, out)
    if cfg.grover.mode in ("discover", "both"):
        summary["discover"], _ = discover(cfg, out, resume)
    return summary
