"""Benchmarks of discovered programs against classical QAP baselines.

Heuristic baselines get equal objective-evaluation budgets.  One simulated
annealing step and one transposition evaluation each count as one
evaluation.  A discovered program's compute is measured in token cost units;
the SA token performs 2n annealing steps per cost unit, so a clp run that
spends ``U`` units is matched by ``2 n U`` evaluations for SA and 2-opt.
"""

from __future__ import annotations

import logging
import time
from typing import Sequence

import numpy as np

from ..lang import Vocabulary, execute
from ..model import Params
from ..qap.domain import LANGUAGES, QapDomain, relative_gap
from ..qap.exact import BRUTE_FORCE_MAX_N, branch_and_bound, brute_force
from ..qap.instance import QapInstance, qap_loss
from ..qap.solvers import frank_wolfe, multistart_two_opt, project_to_permutation, simulated_annealing
from ..search import UniformNet, run_search
from .config import ConfigError, ExperimentConfig
from .discover import qap_instances
from .report import ResultRow

log = logging.getLogger(__name__)

HEURISTICS = ("sa", "2opt")


class MethodUnavailable(ConfigError):
    pass


def evaluations_per_unit(n: int) -> int:
    return 2 * n


def default_evaluations(n: int) -> int:
    return 2000 * n


def plan(cfg: ExperimentConfig, instances: Sequence[QapInstance]) -> list[tuple[QapInstance, str, int]]:
    """The (instance, method, seed) jobs to run, duplicates dropped with a warning."""
    b = cfg.benchmark
    by_name = {inst.name: inst for inst in instances}
    wanted = [(inst.name, m, s) for inst in instances for m in b.methods for s in b.seeds]
    for req in b.requests:
        if len(req) != 3:
            raise ConfigError(f"benchmark.requests entries are [instance, method, seed], got {req!r}")
        name, m, s = req
        if name not in by_name:
            raise ConfigError(f"benchmark.requests: unknown instance {name!r}")
        wanted.append((name, m, int(s)))
    jobs, seen = [], set()
    for key in wanted:
        if key in seen:
            log.warning("duplicate benchmark request %s ignored", key)
            continue
        seen.add(key)
        inst = by_name[key[0]]
        if key[1] not in ("clp", "sa", "bb", "fw", "2opt", "brute"):
            raise ConfigError(f"unknown method {key[1]!r}")
        if key[1] == "brute" and inst.n > BRUTE_FORCE_MAX_N:
            raise MethodUnavailable(f"brute force is unavailable for n={inst.n} > {BRUTE_FORCE_MAX_N} ({inst.name})")
        jobs.append((inst, key[1], key[2]))
    jobs.sort(key=lambda j: (j[0].n, j[0].name, j[2], j[1] != "clp", j[1]))
    return jobs


def _start(inst: QapInstance, seed: int) -> tuple[np.ndarray, np.random.Generator]:
    rng = np.random.default_rng([seed, inst.n, 0xB3])
    return rng.permutation(inst.n), rng


class ClpRunner:
    """Runs a fixed program, or discovers one with tree search, on each instance."""

    def __init__(self, cfg: ExperimentConfig):
        b = cfg.benchmark
        language = LANGUAGES[cfg.language]().language
        if b.vocab:
            with open(cfg.path(b.vocab)) as f:
                self.vocab = Vocabulary.from_catalog(language, f.read())
        else:
            self.vocab = LANGUAGES[cfg.language]()
        self.params = Params.load(cfg.path(b.checkpoint)) if b.checkpoint else None
        if self.params is not None and self.params.vocab_size != len(self.vocab):
            raise ConfigError("benchmark.checkpoint does not match the vocabulary size")
        self.program = self.vocab.parse_program(b.program) if b.program else None
        self.cfg = cfg

    def run(self, inst: QapInstance, seed: int) -> tuple[float, int]:
        """Returns (loss, cost units spent)."""
        search = self.cfg.search
        if self.program is not None:
            best, spent = np.inf, 0
            for e in range(search.ensemble_size):
                x, _ = _start(inst, seed * 1000 + e)
                tr = execute(self.vocab, self.program, x, problem=inst, budget=search.budget,
                             seed=(seed, e), depth_penalty=search.depth_penalty)
                best = min(best, tr.best_loss)
                spent += sum(tr.costs)
            return float(best), spent
        dom = QapDomain(self.vocab, instances=[inst])
        net = self.params if self.params is not None else UniformNet((seed, inst.n))
        res = run_search(inst, dom, net, search, seed=seed)
        return float(res.best_loss), int(res.spent)


def run_method(inst: QapInstance, method: str, seed: int, evaluations: int, cfg: ExperimentConfig,
               clp: ClpRunner | None = None) -> tuple[float, int | None]:
    x0, rng = _start(inst, seed)
    if method == "sa":
        return qap_loss(inst, simulated_annealing(inst, x0, evaluations, rng)), evaluations
    if method == "2opt":
        y, used = multistart_two_opt(inst, evaluations, rng)
        return qap_loss(inst, y), used
    if method == "fw":
        P = frank_wolfe(inst, np.full((inst.n, inst.n), 1.0 / inst.n))
        return qap_loss(inst, project_to_permutation(inst, P, "best_of_both")), None
    if method == "bb":
        perm, _, completed = branch_and_bound(inst, time_limit=cfg.benchmark.bb_time_limit)
        if not completed:
            log.warning("branch and bound hit its time limit on %s", inst.name)
        return qap_loss(inst, perm), None
    if method == "brute":
        return qap_loss(inst, brute_force(inst)), None
    if method == "clp":
        loss, spent = clp.run(inst, seed)
        return loss, spent * evaluations_per_unit(inst.n)
    raise ConfigError(f"unknown method {method!r}")


def run_benchmark(cfg: ExperimentConfig, instances: Sequence[QapInstance] | None = None) -> list[ResultRow]:
    if cfg.domain != "qap":
        raise ConfigError("benchmark needs the qap domain")
    instances = list(instances) if instances is not None else qap_instances(cfg)
    jobs = plan(cfg, instances)
    clp = ClpRunner(cfg) if any(m == "clp" for _, m, _ in jobs) else None
    matched: dict[tuple[str, int], int] = {}
    rows = []
    for inst, method, seed in jobs:
        evals = cfg.benchmark.evaluations or matched.get((inst.name, seed)) or default_evaluations(inst.n)
        t0 = time.perf_counter()
        loss, used = run_method(inst, method, seed, evals, cfg, clp)
        wall = time.perf_counter() - t0
        if method == "clp" and cfg.benchmark.evaluations is None:
            matched[(inst.name, seed)] = max(1, used)
        bk = inst.known_optimum
        gap = None if bk is None else relative_gap(loss, bk)
        rows.append(ResultRow(inst.name, inst.n, method, seed, float(loss), bk, gap,
                              wall if cfg.benchmark.record_time else None, used))
    return rows
