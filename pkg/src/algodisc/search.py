"""Ensemble Monte Carlo tree search over token chains.

Every node stands for a token prefix.  Each time a simulation passes through
a node, a fresh batch of candidate states is pushed through the prefix and
their losses are recorded there; the node's loss estimate is the Gibbs
average of everything it has recorded.  Selection is PUCT with priors from a
policy/value model, and every action is charged against a compute budget.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .lang import STOP, ExecContext, Grammar, Token, Vocabulary, run_token
from .model import FeatureSequence, Params, Sample, encode_state, predict_batch


class Domain(Protocol):
    name: str
    vocab: Vocabulary
    grammar: Grammar
    hide_loss: bool

    def sample_problem(self, rng: np.random.Generator) -> Any: ...

    def initial_states(self, problem, rng: np.random.Generator, count: int) -> list: ...

    def size(self, problem) -> int: ...

    def loss_scale(self, problem) -> float: ...

    def reward(self, problem, loss: float, program: Sequence[str]) -> float: ...

    def is_solved(self, problem, loss: float) -> bool: ...

    def max_actions(self, problem) -> int | None: ...


@dataclass
class SearchConfig:
    simulations: int = 64
    c_puct: float = 1.5
    ensemble_size: int = 8
    beta: float = 10.0
    budget: int = 1000
    depth_penalty: int = 1
    discount: float = 0.2
    temperature: float = 1.0
    temperature_moves: int = 4
    virtual_loss: float = 1.0
    parallel: int = 1
    max_depth: int = 63
    value_mix: float = 0.5

    def __post_init__(self):
        for name in ("simulations", "c_puct", "ensemble_size", "budget", "temperature",
                     "parallel", "max_depth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta", "depth_penalty", "discount", "temperature_moves", "virtual_loss"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.value_mix <= 1.0:
            raise ValueError("value_mix must lie in [0, 1]")
        if not 1 <= self.ensemble_size <= 64:
            raise ValueError("ensemble_size must lie in [1, 64]")


# ---------------------------------------------------------------------------
# Gibbs averaging


def gibbs_loss(losses: Iterable[float], beta: float) -> float:
    """``sum L_i exp(-beta L_i) / sum exp(-beta L_i)``, shifted by the minimum for stability."""
    arr = np.sort(np.asarray(list(losses), dtype=float))
    if arr.size == 0:
        raise ValueError("no losses recorded")
    w = np.exp(-beta * (arr - arr[0]))
    val = float((w * arr).sum() / w.sum())
    return min(max(val, float(arr[0])), float(arr[-1]))


def reward(domain_reward: float, used: float, total: float, discount: float) -> float:
    frac = used / total if total > 0 else 0.0
    return float(min(1.0, max(-1.0, domain_reward - discount * frac)))


# ---------------------------------------------------------------------------
# tree


class SearchNode:
    def __init__(self, path: tuple[int, ...], kind: str, pending: str | None, remaining: int,
                 parent: "SearchNode | None" = None, step_cost: int = 0, token: Token | None = None):
        self.path = path
        self.kind = kind
        self.pending = pending
        self.remaining = remaining
        self.parent = parent
        self.step_cost = step_cost
        self.token = token
        self.children: dict[int, SearchNode] = {}
        self.priors: np.ndarray | None = None
        self.legal: np.ndarray | None = None
        self.N = 0
        self.W = 0.0
        self.losses: list[float] = []
        self.ensemble: list[tuple[Any, float]] = []
        self.best_loss = math.inf
        self.best_state = None
        self.terminal = False
        self.bad = False
        self.stopped = False
        self.solved = False
        self._gibbs: float | None = None
        self.beta = 0.0

    @property
    def depth(self) -> int:
        return len(self.path)

    @property
    def expanded(self) -> bool:
        return self.priors is not None

    @property
    def Q(self) -> float:
        return self.W / self.N if self.N else 0.0

    def record(self, state, loss: float) -> None:
        self.ensemble.append((state, loss))
        self.losses.append(loss)
        self._gibbs = None
        if loss < self.best_loss:
            self.best_loss, self.best_state = loss, state

    @property
    def gibbs_loss(self) -> float:
        if self._gibbs is None:
            self._gibbs = gibbs_loss(self.losses, self.beta)
        return self._gibbs

    def lineage(self) -> list["SearchNode"]:
        out, node = [], self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]


def puct_select(node: SearchNode, c: float) -> int | None:
    """``argmax Q(a) + c p(a) sqrt(N) / (1 + N(a))`` over legal actions; ties to the lowest id."""
    if node.legal is None or not node.legal.any():
        return None
    sqrt_n = math.sqrt(max(node.N, 1))
    best, best_score = None, -math.inf
    for a in np.flatnonzero(node.legal):
        child = node.children.get(int(a))
        n, q = (child.N, child.Q) if child is not None else (0, 0.0)
        score = q + c * node.priors[a] * sqrt_n / (1 + n)
        if score > best_score:
            best, best_score = int(a), score
    return best


# ---------------------------------------------------------------------------
# evaluators


class UniformNet:
    """Uniform priors over legal actions and no value estimate.

    With a ``seed`` the priors get a relative jitter of about 1e-9, so that
    exact ties between actions break at random instead of by token order.
    """

    has_value = False

    def __init__(self, seed: int | Sequence[int] | None = None):
        self.rng = None if seed is None else np.random.default_rng(seed)

    def evaluate(self, features: Sequence[FeatureSequence], masks: np.ndarray):
        masks = np.asarray(masks, dtype=float)
        p = masks / masks.sum(1, keepdims=True)
        if self.rng is not None:
            p = p * (1.0 + 1e-9 * self.rng.random(p.shape))
            p = p / p.sum(1, keepdims=True)
        return p, np.zeros(len(masks))


class ModelNet:
    has_value = True

    def __init__(self, params: Params):
        self.params = params

    def evaluate(self, features, masks):
        return predict_batch(self.params, features, masks)


def as_net(net):
    if net is None:
        return UniformNet()
    if isinstance(net, Params):
        return ModelNet(net)
    return net


# ---------------------------------------------------------------------------
# search


@dataclass
class _Member:
    state: Any
    kind: str
    ctx: ExecContext
    pos: int
    best_loss: float
    failed: bool = False


@dataclass
class MoveRecord:
    features: FeatureSequence
    target: np.ndarray
    action: int
    mask: np.ndarray


@dataclass
class SearchResult:
    best_program: list[str]
    best_loss: float
    program: list[str]
    final_loss: float
    reward: float
    used: int
    moves: list[MoveRecord]
    simulations: int
    best_trace: list[float] = field(default_factory=list)
    final_best_loss: float = math.inf
    spent: int = 0


class _Trace:
    """Per-action view of a node's ancestry, in the layout :func:`encode_state` expects."""

    def __init__(self, node: SearchNode, budget: int):
        chain = node.lineage()
        self.initial_loss = chain[0].gibbs_loss if chain[0].losses else None
        self.losses = [n.gibbs_loss if n.losses else None for n in chain[1:]]
        self.costs = [n.step_cost for n in chain[1:]]
        self.remaining = [n.remaining for n in chain[1:]]
        self.budget = budget


class Search:
    def __init__(self, problem, domain: Domain, net, config: SearchConfig, seed: int | Sequence[int] = 0):
        self.problem = problem
        self.domain = domain
        self.vocab = domain.vocab
        self.grammar = domain.grammar
        self.lang = self.vocab.language
        self.net = as_net(net)
        self.config = config
        self.seed = (int(seed),) if np.isscalar(seed) else tuple(int(s) for s in seed)
        self.ids = self.vocab.ids
        self.scale = max(float(domain.loss_scale(problem)), 1e-12)
        self.beta = config.beta / self.scale
        cap = domain.max_actions(problem)
        self.max_depth = min(config.max_depth, cap) if cap is not None else config.max_depth
        self.sim_count = 0
        self.spent = 0
        self.root = self._node((), self.lang.start_kind, None, config.budget, None, 0, None)
        self.best_node: SearchNode | None = None
        self.best_history: list[float] = []

    # nodes -------------------------------------------------------------------
    def _node(self, path, kind, pending, remaining, parent, cost, token) -> SearchNode:
        node = SearchNode(path, kind, pending, remaining, parent, cost, token)
        node.beta = self.beta
        node.legal = self._legal(node)
        if not node.legal.any() or len(path) >= self.max_depth:
            node.terminal = True
        return node

    def _legal(self, node: SearchNode) -> np.ndarray:
        mask = np.zeros(len(self.ids), dtype=bool)
        if node.terminal:
            return mask
        pen = self.config.depth_penalty
        g = self.grammar
        real = False
        for tid in g.legal_successors(node.kind, node.pending):
            tok = self.vocab[tid]
            if tok.kind == STOP:
                mask[self.vocab.index(tid)] = True
                continue
            if tok.is_special:
                ok = any(g.step_cost(tid, t) + pen <= node.remaining
                         for t in g.legal_successors(node.kind, tid))
            else:
                ok = g.step_cost(node.pending, tid) + pen <= node.remaining
            if ok:
                mask[self.vocab.index(tid)] = True
                real = True
        if not real:
            # nothing affordable is left: the program is over
            mask[:] = False
        return mask

    def _child(self, node: SearchNode, a: int) -> SearchNode:
        child = node.children.get(a)
        if child is not None:
            return child
        tid = self.ids[a]
        tok = self.vocab[tid]
        pen = self.config.depth_penalty
        if tok.kind == STOP:
            child = self._node(node.path + (a,), node.kind, None, max(0, node.remaining - pen), node, 0, None)
            child.terminal, child.stopped = True, True
            child.legal[:] = False
        elif tok.is_special:
            child = self._node(node.path + (a,), node.kind, tid, node.remaining, node, 0, None)
        else:
            bound = self.grammar.bound(node.pending, tid) if node.pending else tok
            out = bound.out_kind(node.kind, self.lang)
            child = self._node(node.path + (a,), out, None, node.remaining - bound.cost - pen, node,
                               bound.cost, bound)
        node.children[a] = child
        return child

    def program(self, node: SearchNode) -> list[str]:
        return [self.ids[a] for a in node.path]

    # execution ---------------------------------------------------------------
    def _fresh_batch(self, sim: int) -> list[_Member]:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed[0], spawn_key=(*self.seed[1:], sim, 1 << 20)))
        states = self.domain.initial_states(self.problem, rng, self.config.ensemble_size)
        out = []
        for e, s in enumerate(states):
            ctx = ExecContext(self.problem, self.lang, (*self.seed, sim, e))
            loss = self.lang.loss(self.problem, s, self.lang.start_kind)
            out.append(_Member(s, self.lang.start_kind, ctx, 0, math.inf if loss is None else loss))
        return out

    def _advance(self, batch: list[_Member], node: SearchNode) -> None:
        tok = node.token
        if tok is None:
            return
        for m in batch:
            if m.failed:
                continue

            def consider(s, k, m=m):
                loss = self.lang.loss(self.problem, s, k)
                if loss is not None:
                    if not math.isfinite(loss):
                        raise FloatingPointError(loss)
                    m.best_loss = min(m.best_loss, loss)

            self.spent += tok.cost
            try:
                m.state, m.kind = run_token(self.vocab, tok, m.state, m.kind, m.ctx, m.pos, consider)
                consider(m.state, m.kind)
            except FloatingPointError:
                m.failed = True
            m.pos += tok.width

    def _record(self, node: SearchNode, batch: list[_Member]) -> None:
        if any(m.failed for m in batch):
            node.bad = node.terminal = True
            node.legal[:] = False
        for m in batch:
            if not m.failed and math.isfinite(m.best_loss):
                node.record(m.state, m.best_loss)
        if node.losses and self.domain.is_solved(self.problem, node.best_loss):
            node.solved = node.terminal = True
            node.legal[:] = False
        if node.losses and (self.best_node is None or node.best_loss < self.best_node.best_loss):
            self.best_node = node

    # evaluation --------------------------------------------------------------
    def features(self, node: SearchNode) -> FeatureSequence:
        summary = {"n": self.domain.size(self.problem),
                   "gibbs_loss": node.gibbs_loss if node.losses else 0.0,
                   "loss_scale": self.scale, "hide_loss": self.domain.hide_loss}
        return encode_state(list(node.path), _Trace(node, self.config.budget), summary)

    def terminal_value(self, node: SearchNode) -> float:
        if node.bad or not node.losses:
            return -1.0
        dom = self.domain.reward(self.problem, node.gibbs_loss, self.program(node))
        return reward(dom, self.config.budget - node.remaining, self.config.budget, self.config.discount)

    def leaf_value(self, node: SearchNode, net_value: float) -> float:
        """Blend the network's value with the reward of stopping at ``node``.

        Without a value head (uniform priors) only the stopping reward is used.
        """
        if node.bad:
            return -1.0
        if not node.losses:
            return net_value if getattr(self.net, "has_value", True) else 0.0
        now = self.terminal_value(node)
        if not getattr(self.net, "has_value", True):
            return now
        lam = self.config.value_mix
        return lam * net_value + (1.0 - lam) * now

    # simulations -------------------------------------------------------------
    def _descend(self, start: SearchNode, sim: int) -> tuple[list[SearchNode], SearchNode]:
        batch = self._fresh_batch(sim)
        node = self.root
        self._record(node, batch)
        visited = [node]
        prefix = start.path
        while True:
            if node.depth < len(prefix):
                a = prefix[node.depth]
            else:
                if node.terminal or not node.expanded:
                    break
                a = puct_select(node, self.config.c_puct)
                if a is None:
                    node.terminal = True
                    break
            child = self._child(node, a)
            self._advance(batch, child)
            self._record(child, batch)
            node = child
            visited.append(node)
        return visited, node

    def simulate(self, start: SearchNode | None = None) -> None:
        """Run ``config.parallel`` simulations from ``start`` (batched leaf evaluation)."""
        start = start or self.root
        vl = self.config.virtual_loss
        paths = []
        for _ in range(self.config.parallel):
            visited, leaf = self._descend(start, self.sim_count)
            self.sim_count += 1
            for n in visited:
                n.N += 1
                n.W -= vl
            paths.append((visited, leaf))
        pending = [(i, leaf) for i, (_, leaf) in enumerate(paths) if not leaf.terminal and not leaf.expanded]
        values = {}
        if pending:
            uniq = {}
            for i, leaf in pending:
                uniq.setdefault(id(leaf), leaf)
            leaves = list(uniq.values())
            masks = np.stack([leaf.legal for leaf in leaves])
            pri, val = self.net.evaluate([self.features(leaf) for leaf in leaves], masks)
            for leaf, p, v in zip(leaves, pri, val):
                leaf.priors = np.asarray(p, dtype=float)
                values[id(leaf)] = self.leaf_value(leaf, float(v))
        for visited, leaf in paths:
            v = self.terminal_value(leaf) if leaf.terminal else values.get(id(leaf), leaf.Q)
            for n in visited:
                n.N -= 1
                n.W += vl
            backup(visited, v)
        self.best_history.append(self.best_node.best_loss if self.best_node else math.inf)

    def choose(self, node: SearchNode, move: int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        counts = np.zeros(len(self.ids))
        for a, ch in node.children.items():
            counts[a] = ch.N
        counts = counts * node.legal
        if counts.sum() == 0:
            counts = node.legal.astype(float)
        target = counts / counts.sum()
        if move < self.config.temperature_moves:
            w = counts ** (1.0 / self.config.temperature)
            a = int(rng.choice(len(w), p=w / w.sum()))
        else:
            a = int(np.argmax(counts))
        return a, target

    def run(self) -> SearchResult:
        cfg = self.config
        move_rng = np.random.default_rng(np.random.SeedSequence(self.seed[0], spawn_key=(*self.seed[1:], 1 << 21)))
        node = self.root
        moves: list[MoveRecord] = []
        while not node.terminal:
            rounds = max(1, math.ceil(cfg.simulations / cfg.parallel))
            for _ in range(rounds):
                self.simulate(node)
            if node.terminal:
                break
            a, target = self.choose(node, len(moves), move_rng)
            moves.append(MoveRecord(self.features(node), target, a, node.legal.copy()))
            node = self._child(node, a)
            if not node.losses:
                self.simulate(node)
        if not node.losses:
            self.simulate(node)
        best = self.best_node
        best_prog = _trim(self.program(best), self.vocab) if best is not None else []
        final = node.gibbs_loss if node.losses else math.inf
        used = cfg.budget - node.remaining
        value = self.terminal_value(node) if node.terminal or node.losses else -1.0
        return SearchResult(best_prog, best.best_loss if best else math.inf, self.program(node), final,
                            value, used, moves, self.sim_count, list(self.best_history), node.best_loss, self.spent)


def backup(visited: Sequence[SearchNode], value: float) -> None:
    for n in visited:
        n.N += 1
        n.W += value


def _trim(program: list[str], vocab: Vocabulary) -> list[str]:
    out = list(program)
    while out and vocab[out[-1]].is_special:
        out.pop()
    return out


def run_search(problem, domain: Domain, net, config: SearchConfig, seed=0) -> SearchResult:
    return Search(problem, domain, net, config, seed).run()


# ---------------------------------------------------------------------------
# self-play and episode records


@dataclass
class Episode:
    steps: list[MoveRecord]
    reward: float
    used: int
    program: list[str]
    best_program: list[str]
    best_loss: float
    problem_id: str = ""

    def samples(self) -> list[Sample]:
        return [Sample(s.features, s.target, self.reward, s.mask) for s in self.steps]


def self_play(domain: Domain, net, config: SearchConfig, episodes: int, seed=0,
              corpus: list[list[str]] | None = None) -> list[Episode]:
    """Play ``episodes`` searches on freshly sampled problems.

    Played programs are appended to ``corpus`` when one is given.
    """
    root = np.random.SeedSequence(seed if np.isscalar(seed) else list(seed))
    out = []
    for e in range(episodes):
        ss = np.random.SeedSequence(root.entropy, spawn_key=(*root.spawn_key, e))
        rng = np.random.default_rng(ss)
        problem = domain.sample_problem(rng)
        sub = int(rng.integers(0, 2 ** 31 - 1))
        res = run_search(problem, domain, net, config, seed=sub)
        out.append(Episode(res.moves, res.reward, res.used, res.program, res.best_program, res.best_loss,
                           getattr(problem, "name", "")))
        if corpus is not None and res.program:
            corpus.append(list(res.program))
    return out


EPISODE_FORMAT = "algodisc-episodes"
EPISODE_VERSION = 1


def _episode_doc(ep: Episode) -> dict:
    return {
        "reward": ep.reward, "used": ep.used, "program": ep.program,
        "best_program": ep.best_program,
        "best_loss": ep.best_loss if math.isfinite(ep.best_loss) else None,
        "problem_id": ep.problem_id,
        "steps": [{"actions": s.features.actions.tolist(), "numeric": s.features.numeric.tolist(),
                   "target": s.target.tolist(), "action": s.action,
                   "mask": np.flatnonzero(s.mask).tolist()} for s in ep.steps],
    }


def append_episodes(path: str | os.PathLike, episodes: Sequence[Episode]) -> None:
    """Append to a JSON-lines record file whose first line is a versioned header."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a") as f:
        if new:
            f.write(json.dumps({"format": EPISODE_FORMAT, "version": EPISODE_VERSION}) + "\n")
        for ep in episodes:
            f.write(json.dumps(_episode_doc(ep)) + "\n")


def read_episodes(path: str | os.PathLike) -> list[Episode]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        return []
    head = json.loads(lines[0])
    if head.get("format") != EPISODE_FORMAT or head.get("version") != EPISODE_VERSION:
        raise ValueError(f"{path}: not a version-{EPISODE_VERSION} episode file")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        d = json.loads(line)
        steps = []
        for s in d["steps"]:
            target = np.asarray(s["target"], dtype=float)
            mask = np.zeros(len(target), dtype=bool)
            mask[s["mask"]] = True
            feats = FeatureSequence(np.asarray(s["actions"], dtype=np.int64),
                                    np.asarray(s["numeric"], dtype=float).reshape(-1, 4))
            steps.append(MoveRecord(feats, target, int(s["action"]), mask))
        best = d["best_loss"]
        out.append(Episode(steps, float(d["reward"]), int(d["used"]), d["program"], d["best_program"],
                           math.inf if best is None else float(best), d.get("problem_id", "")))
    return out
