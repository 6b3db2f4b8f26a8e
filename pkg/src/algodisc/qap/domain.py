"""The QAP as a search domain: instance sampling, initial states and rewards."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..lang import Grammar, Vocabulary
from .exact import BRUTE_FORCE_MAX_N, branch_and_bound, brute_force_optimum
from .instance import QapInstance, generate_cqap, generate_pqap, qap_loss
from .solvers import k_opt, simulated_annealing
from .tokens import high_level_language, low_level_language, manual_language, schedule_vocabulary

GENERATORS = {"cqap": generate_cqap, "pqap": generate_pqap}


def random_loss_mean(inst: QapInstance) -> float:
    """Expected loss of a uniformly random permutation (closed form)."""
    n = inst.n
    F, D = inst.F, inst.D
    off_f = F.sum() - np.trace(F)
    off_d = D.sum() - np.trace(D)
    return float(off_f * off_d / (n * (n - 1)) + np.trace(F) * np.trace(D) / n + inst.C.sum() / n)


def relative_gap(loss: float, best: float) -> float:
    return (loss - best) / max(abs(best), 1.0)


def qap_domain_reward(loss: float, best: float, gap_scale: float = 0.5) -> float:
    """1 at the optimum, falling linearly to -1 at a relative gap of ``2 * gap_scale``."""
    return float(np.clip(1.0 - relative_gap(loss, best) / gap_scale, -1.0, 1.0))


def baseline_best(inst: QapInstance, seed: int = 0, restarts: int = 4) -> float:
    """Best of multi-start 2-opt and simulated annealing runs."""
    rng = np.random.default_rng([seed, inst.n])
    best = np.inf
    for _ in range(restarts):
        x = rng.permutation(inst.n)
        best = min(best, qap_loss(inst, k_opt(inst, x, "2opt")))
        y = simulated_annealing(inst, x, 2000 * inst.n, rng)
        best = min(best, qap_loss(inst, k_opt(inst, y, "2opt")))
    return float(best)


BRANCH_AND_BOUND_MAX_N = 12


def with_best_known(inst: QapInstance, seed: int = 0, time_limit: float = 30.0,
                    exact_max_n: int = BRANCH_AND_BOUND_MAX_N) -> QapInstance:
    """Attach a reference optimum.

    In order of preference: the generator's, brute force for n <= 10, a
    branch-and-bound run that finishes within ``time_limit`` (tried only up to
    ``exact_max_n``), and finally the best baseline loss.
    """
    if inst.known_optimum is not None:
        return inst
    if inst.n <= BRUTE_FORCE_MAX_N:
        return inst.with_optimum(brute_force_optimum(inst), "brute-force")
    best = baseline_best(inst, seed)
    if time_limit > 0 and inst.n <= exact_max_n:
        perm, _, completed = branch_and_bound(inst, time_limit=time_limit, incumbent=None)
        if completed:
            return inst.with_optimum(qap_loss(inst, perm), "branch-and-bound")
    return inst.with_optimum(best, "baseline")


@dataclass
class QapDomain:
    """Samples instances of the given sizes and scores programs by optimality gap."""

    vocab: Vocabulary
    sizes: Sequence[int] = (12,)
    generator: str = "cqap"
    seeds: Sequence[int] | None = None
    instances: Sequence[QapInstance] | None = None
    name: str = "qap"
    hide_loss: bool = False
    gap_scale: float = 0.5
    grammar: Grammar = field(init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not self.gap_scale > 0:
            raise ValueError("gap_scale must be positive")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        self.grammar = Grammar(self.vocab)

    def with_vocab(self, vocab: Vocabulary) -> "QapDomain":
        out = QapDomain(vocab, self.sizes, self.generator, self.seeds, self.instances, self.name,
                        self.hide_loss, self.gap_scale)
        out._cache = self._cache
        return out

    def instance(self, n: int, seed: int) -> QapInstance:
        key = (self.generator, n, seed)
        if key not in self._cache:
            self._cache[key] = with_best_known(GENERATORS[self.generator](n, seed), seed)
        return self._cache[key]

    def sample_problem(self, rng: np.random.Generator) -> QapInstance:
        if self.instances:
            return self.instances[int(rng.integers(len(self.instances)))]
        n = int(rng.choice(list(self.sizes)))
        seed = int(rng.choice(list(self.seeds))) if self.seeds is not None else int(rng.integers(0, 2 ** 31 - 1))
        return self.instance(n, seed)

    def initial_states(self, problem: QapInstance, rng: np.random.Generator, count: int) -> list:
        if self.vocab.language.start_kind == "ds":
            return [np.full((problem.n, problem.n), 1.0 / problem.n) for _ in range(count)]
        return [rng.permutation(problem.n) for _ in range(count)]

    def size(self, problem: QapInstance) -> int:
        return problem.n

    def loss_scale(self, problem: QapInstance) -> float:
        return max(abs(random_loss_mean(problem)), 1.0)

    def reward(self, problem: QapInstance, loss: float, program) -> float:
        return qap_domain_reward(loss, problem.known_optimum, self.gap_scale)

    def is_solved(self, problem, loss) -> bool:
        return False

    def max_actions(self, problem) -> int | None:
        return None


LANGUAGES: dict[str, Callable[[], Vocabulary]] = {
    "low": lambda: Vocabulary.from_language(low_level_language()),
    "high": lambda: Vocabulary.from_language(high_level_language()),
    "manual": lambda: Vocabulary.from_language(manual_language()),
    "schedule": schedule_vocabulary,
}


def make_qap_domain(language: str = "low", **kw) -> QapDomain:
    if language not in LANGUAGES:
        raise ValueError(f"unknown QAP language {language!r}; expected one of {sorted(LANGUAGES)}")
    return QapDomain(LANGUAGES[language](), **kw)
