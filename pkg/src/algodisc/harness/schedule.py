"""Searching Frank-Wolfe step-size schedules with tree search.

Each token of the schedule vocabulary is one Frank-Wolfe step with a fixed
step size from 20 equidistant values in [0, 1].  The search composes a
schedule of fixed horizon starting from the barycenter.  A schedule is
judged by the projected loss of its last iterate.  Leaves are scored by
completing their prefix with random step sizes (a rollout), and the best
complete schedule evaluated anywhere in the search is reported and compared
with the default ``2/(2+k)`` schedule and with exact line search.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..qap.domain import QapDomain, with_best_known
from ..qap.instance import QapInstance, perm_matrix, qap_gradient, qap_loss
from ..qap.lsa import lsa
from ..qap.solvers import default_schedule, frank_wolfe_line_search, interpolate, project_to_permutation
from ..qap.tokens import COSTS, SCHEDULE_VALUES, schedule_vocabulary
from ..search import Search, SearchConfig, UniformNet
from .config import ConfigError, ExperimentConfig

COMPARISON_COLUMNS = ("instance", "n", "horizon", "searched", "default", "line_search", "schedule")
TRACE_COLUMNS = ("instance", "method", "k", "gamma", "loss")
ARMS = ("searched", "default", "line_search")
SCHEDULE_GAP_SCALE = 2.0


def barycenter(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


def projected_loss(inst: QapInstance, P: np.ndarray) -> float:
    return qap_loss(inst, project_to_permutation(inst, P, "best_of_both"))


def fw_step(inst: QapInstance, P: np.ndarray, gamma: float) -> np.ndarray:
    return interpolate(P, perm_matrix(lsa(qap_gradient(inst, P))), float(gamma))


def replay(inst: QapInstance, gammas: Sequence[float]) -> list[float]:
    """Projected loss after each step of the schedule, starting from the barycenter."""
    P = barycenter(inst.n)
    out = []
    for g in gammas:
        P = fw_step(inst, P, g)
        out.append(projected_loss(inst, P))
    return out


class ScheduleDomain(QapDomain):
    """Scores a schedule prefix by one random completion to the full horizon.

    Prefix iterates are cached, so each tree node costs one step plus its
    rollout.  The best complete schedule seen is kept in ``best``.
    """

    def __init__(self, inst: QapInstance, horizon: int, seed: int = 0, gap_scale: float = SCHEDULE_GAP_SCALE):
        super().__init__(schedule_vocabulary(), instances=[inst], gap_scale=gap_scale)
        self.horizon = horizon
        self.seed = seed
        self.gamma = {self.vocab.ids[i]: g for i, g in enumerate(SCHEDULE_VALUES)}
        self.index = {t: i for i, t in enumerate(self.vocab.ids)}
        self._iterates: dict[tuple[str, ...], np.ndarray] = {(): barycenter(inst.n)}
        self.best: tuple[float, tuple[str, ...]] | None = None

    def iterate(self, inst: QapInstance, program: tuple[str, ...]) -> np.ndarray:
        if program not in self._iterates:
            P = self.iterate(inst, program[:-1])
            self._iterates[program] = fw_step(inst, P, self.gamma[program[-1]])
        return self._iterates[program]

    def rollout(self, inst: QapInstance, program: tuple[str, ...]) -> tuple[float, tuple[str, ...]]:
        rng = np.random.default_rng([self.seed, len(program), *(self.index[t] for t in program)])
        tail = tuple(self.vocab.ids[int(i)] for i in rng.integers(len(SCHEDULE_VALUES), size=self.horizon - len(program)))
        P = self.iterate(inst, program)
        for t in tail:
            P = fw_step(inst, P, self.gamma[t])
        return projected_loss(inst, P), program + tail

    def reward(self, problem: QapInstance, loss: float, program) -> float:
        final, full = self.rollout(problem, tuple(program))
        if self.best is None or (final, full) < self.best:
            self.best = (final, full)
        return super().reward(problem, final, program)


@dataclass(frozen=True)
class ScheduleResult:
    instance: str
    n: int
    horizon: int
    schedule: tuple[float, ...]
    losses: dict[str, list[float]]
    gammas: dict[str, list[float]]

    def final(self, arm: str) -> float:
        return self.losses[arm][-1]


def schedule_search_config(horizon: int, simulations: int, c_puct: float) -> SearchConfig:
    return SearchConfig(simulations=simulations, c_puct=c_puct, ensemble_size=1, beta=0.0,
                        budget=horizon * (COSTS["GAMMA"] + 1), depth_penalty=1, discount=0.0,
                        max_depth=horizon, temperature_moves=0)


def search_schedule(inst: QapInstance, horizon: int, simulations: int = 200, c_puct: float = 1.5,
                    seed: int = 0) -> ScheduleResult:
    if horizon < 1:
        raise ConfigError("schedule horizon must be at least 1")
    if inst.known_optimum is None:
        inst = with_best_known(inst, seed)
    domain = ScheduleDomain(inst, horizon, seed)
    cfg = schedule_search_config(horizon, simulations, c_puct)
    Search(inst, domain, UniformNet((seed, inst.n)), cfg, seed=(seed, inst.n)).run()
    gammas = [domain.gamma[t] for t in domain.best[1]]
    default = default_schedule(horizon)
    _, line = frank_wolfe_line_search(inst, barycenter(inst.n), horizon)
    return ScheduleResult(inst.name, inst.n, horizon, tuple(gammas),
                          {"searched": replay(inst, gammas), "default": replay(inst, default),
                           "line_search": replay(inst, line)},
                          {"searched": gammas, "default": default, "line_search": list(line)})


def format_comparison(results: Sequence[ScheduleResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for r in results:
        w.writerow([r.instance, r.n, r.horizon, *(f"{r.final(a):.10g}" for a in ARMS),
                    " ".join(f"{g:.6g}" for g in r.schedule)])
    return buf.getvalue()


def format_traces(results: Sequence[ScheduleResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in results:
        for arm in ARMS:
            for k, (g, loss) in enumerate(zip(r.gammas[arm], r.losses[arm])):
                w.writerow([r.instance, arm, k, f"{g:.10g}", f"{loss:.10g}"])
    return buf.getvalue()


def run_schedule_search(cfg: ExperimentConfig, instances: Sequence[QapInstance]) -> list[ScheduleResult]:
    if cfg.domain != "qap":
        raise ConfigError("schedule-search needs the qap domain")
    s = cfg.schedule
    return [search_schedule(inst, s.horizon, s.simulations, s.c_puct, cfg.seed) for inst in instances]
