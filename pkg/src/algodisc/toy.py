"""Small scalar domains for exercising the search, the grammar and the merge rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lang import ANY, Combinator, Grammar, Language, Primitive, Vocabulary


@dataclass(frozen=True)
class ToyProblem:
    target: float
    start: float = 0.0
    name: str = "toy"


def _repeat(times):
    def apply(run_inner, state, kind, ctx):
        for i in range(times):
            state, kind = run_inner(state, ctx.at(i), kind)
        return state
    return apply


def _same_kind(inner, language):
    return tuple((k, k) for k in language.kinds if inner.out_kind(k, language) == k)


def toy_language() -> Language:
    """Scalar states; loss is the distance to the problem's target."""
    num = (("num", "num"),)
    prims = [
        Primitive("ID", lambda x, ctx: x, ((ANY, ANY),), 1),
        Primitive("A", lambda x, ctx: x + 1.0, num, 1),
        Primitive("B", lambda x, ctx: 2.0 * x, num, 2),
        Primitive("NEG", lambda x, ctx: -x, num, 1),
        Primitive("NOISE", lambda x, ctx: x + float(ctx.rng().normal()), num, 1),
    ]
    combs = [Combinator("REP", _repeat(3), _same_kind, 1, 3)]
    return Language("toy", {"num": None}, "num", {p.name: p for p in prims}, {c.name: c for c in combs},
                    lambda problem, x, kind: abs(float(x) - problem.target),
                    {("NEG", "NEG"): "ID", ("ID", "ID"): "ID"})


def choice_language(k: int = 5, good: int = 2) -> Language:
    """``k`` tokens; only token ``good`` reaches loss 0, the rest give loss 1."""
    num = (("num", "num"),)
    prims = [Primitive(f"T{i}", (lambda x, ctx, i=i: 0.0 if i == good else 1.0), num, 1) for i in range(k)]
    return Language(f"choice{k}", {"num": None}, "num", {p.name: p for p in prims}, {},
                    lambda problem, x, kind: abs(float(x) - problem.target))


@dataclass
class ToyDomain:
    vocab: Vocabulary
    targets: tuple[float, ...] = (5.0,)
    start: float = 1.0
    actions: int | None = None
    name: str = "toy"
    hide_loss: bool = False
    grammar: Grammar = field(init=False)

    def __post_init__(self):
        self.grammar = Grammar(self.vocab)

    def sample_problem(self, rng):
        return ToyProblem(float(rng.choice(self.targets)), self.start)

    def initial_states(self, problem, rng, count):
        return [problem.start] * count

    def size(self, problem):
        return 1

    def loss_scale(self, problem):
        return 1.0

    def reward(self, problem, loss, program):
        return float(np.clip(1.0 - 2.0 * loss, -1.0, 1.0))

    def is_solved(self, problem, loss):
        return False

    def max_actions(self, problem):
        return self.actions

    def with_vocab(self, vocab: Vocabulary) -> "ToyDomain":
        return ToyDomain(vocab, self.targets, self.start, self.actions, self.name, self.hide_loss)


def toy_domain(**kw) -> ToyDomain:
    return ToyDomain(Vocabulary.from_language(toy_language()), **kw)


def choice_domain(k: int = 5, good: int = 2) -> ToyDomain:
    return ToyDomain(Vocabulary.from_language(choice_language(k, good), with_stop=False),
                     targets=(0.0,), start=1.0, actions=1, name="choice")
