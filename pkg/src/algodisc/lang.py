"""Computational tokens, the composition grammar and the budgeted executor.

A program is a flat sequence of token ids.  Plain tokens transform a state,
special tokens (combinators such as FOR or RU) take exactly the next plain
token as their argument, and STOP ends the program.  Fusing adjacent tokens
(see :mod:`algodisc.abpe`) produces new plain tokens whose ids spell out their
definition, e.g. ``LSA->GRAD`` or ``FOR(RU(LSA->GRAD))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

PLAIN = "plain"
SPECIAL = "special"
STOP = "stop"
STOP_ID = "STOP"

ANY = "*"


class GrammarError(ValueError):
    """A token chain violates the grammar; ``position`` is the offending index."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"position {position}: {reason}")
        self.position = position
        self.reason = reason


class ExecutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: Callable[[Any, "ExecContext"], Any]
    signature: tuple[tuple[str, str], ...]
    cost: int


@dataclass(frozen=True)
class Combinator:
    """A special primitive acting on one inner token.

    ``apply(run_inner, state, kind, ctx)`` calls ``run_inner(state, sub_ctx, kind)``
    (which returns ``(state, kind)``) with sub-contexts derived from ``ctx`` via
    :meth:`ExecContext.at`, and returns the resulting state.
    ``signature(inner, language)`` returns the bound token's kind signature
    (empty when the inner token is not admissible).
    """

    name: str
    apply: Callable[..., Any]
    signature: Callable[["Token", "Language"], tuple[tuple[str, str], ...]]
    overhead: int
    multiplier: int


@dataclass(frozen=True)
class Language:
    """Semantics shared by every vocabulary of one domain."""

    name: str
    kinds: Mapping[str, str | None]
    start_kind: str
    primitives: Mapping[str, Primitive]
    combinators: Mapping[str, Combinator]
    loss: Callable[[Any, Any, str], float | None]
    equivalences: Mapping[tuple[str, str], str] = field(default_factory=dict)

    def lineage(self, kind: str) -> list[str]:
        out = []
        while kind is not None:
            out.append(kind)
            kind = self.kinds.get(kind)
        return out

    def is_subkind(self, kind: str, parent: str) -> bool:
        return parent in self.lineage(kind)


@dataclass(frozen=True)
class Token:
    id: str
    kind: str
    domain: str
    cost: int
    definition: tuple
    signature: tuple[tuple[str, str], ...] = ()
    width: int = 1

    @property
    def is_plain(self) -> bool:
        return self.kind == PLAIN

    @property
    def is_special(self) -> bool:
        return self.kind == SPECIAL

    def out_kind(self, kind: str, language: Language) -> str | None:
        if not self.is_plain:
            return None
        for k in language.lineage(kind):
            for src, dst in self.signature:
                if src == ANY:
                    return kind
                if src == k:
                    return dst
        return None


def _compose_signature(a: Token, b: Token, language: Language) -> tuple[tuple[str, str], ...]:
    sig = []
    for k in language.kinds:
        mid = a.out_kind(k, language)
        if mid is None:
            continue
        out = b.out_kind(mid, language)
        if out is not None:
            sig.append((k, out))
    return tuple(sig)


class Vocabulary:
    """An ordered, immutable token set over one :class:`Language`.

    The integer index of a token (its position in insertion order) is its
    action id for the search and the policy network; it never changes as the
    vocabulary grows.
    """

    def __init__(self, language: Language, tokens: Iterable[Token]):
        self.language = language
        self._tokens: dict[str, Token] = {}
        for t in tokens:
            if t.id in self._tokens:
                raise ValueError(f"duplicate token id {t.id!r}")
            self._tokens[t.id] = t
        self._index = {tid: i for i, tid in enumerate(self._tokens)}
        self._transient: dict[str, Token] = {}

    @classmethod
    def from_language(cls, language: Language, *, with_stop: bool = True) -> "Vocabulary":
        tokens = []
        for p in language.primitives.values():
            tokens.append(Token(p.name, PLAIN, language.name, p.cost, ("prim", p.name), p.signature))
        for c in language.combinators.values():
            tokens.append(Token(c.name, SPECIAL, language.name, c.overhead, ("comb", c.name)))
        if with_stop:
            tokens.append(Token(STOP_ID, STOP, language.name, 0, ("stop",)))
        return cls(language, tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, tid: str) -> bool:
        return tid in self._tokens

    def __iter__(self):
        return iter(self._tokens.values())

    def __getitem__(self, tid: str) -> Token:
        try:
            return self._tokens[tid]
        except KeyError:
            pass
        if tid in self._transient:
            return self._transient[tid]
        return self.parse_token(tid)

    @property
    def ids(self) -> list[str]:
        return list(self._tokens)

    def index(self, tid: str) -> int:
        return self._index[tid]

    def extend(self, tokens: Iterable[Token]) -> "Vocabulary":
        return Vocabulary(self.language, [*self._tokens.values(), *tokens])

    # composition -----------------------------------------------------------
    def bind(self, special: Token | str, inner: Token | str) -> Token:
        """Bind a special token to its single plain argument."""
        s = self[special] if isinstance(special, str) else special
        x = self[inner] if isinstance(inner, str) else inner
        if not s.is_special:
            raise GrammarError(0, f"{s.id} is not a special token")
        if not x.is_plain:
            raise GrammarError(1, f"{x.id} cannot be the argument of {s.id}")
        comb = self.language.combinators[s.definition[1]]
        sig = comb.signature(x, self.language)
        if not sig:
            raise GrammarError(1, f"{x.id} has no admissible kinds under {s.id}")
        tid = f"{s.id}({x.id})"
        if tid in self._tokens:
            return self._tokens[tid]
        tok = Token(tid, PLAIN, self.language.name, comb.overhead + comb.multiplier * x.cost,
                    ("bind", s.id, x.id), sig, s.width + x.width)
        self._transient.setdefault(tid, tok)
        return tok

    def compose(self, left: Token | str, right: Token | str) -> Token:
        a = self[left] if isinstance(left, str) else left
        b = self[right] if isinstance(right, str) else right
        if not (a.is_plain and b.is_plain):
            raise GrammarError(0, f"cannot fuse {a.id} and {b.id}")
        sig = _compose_signature(a, b, self.language)
        if not sig:
            raise GrammarError(1, f"{b.id} cannot follow {a.id}")
        tid = f"{a.id}->{b.id}"
        if tid in self._tokens:
            return self._tokens[tid]
        tok = Token(tid, PLAIN, self.language.name, a.cost + b.cost, ("merge", a.id, b.id), sig,
                    a.width + b.width)
        self._transient.setdefault(tid, tok)
        return tok

    def parse_token(self, text: str) -> Token:
        """Resolve a structural id such as ``FOR(RU(LSA GRAD))``."""
        text = text.strip()
        if text in self._tokens:
            return self._tokens[text]
        parts = _split_top(text, "->")
        if len(parts) == 1:
            parts = _split_top(text, None)
        if len(parts) > 1:
            tok = self.parse_token(parts[0])
            for p in parts[1:]:
                tok = self.compose(tok, self.parse_token(p))
            return tok
        if text.endswith(")") and "(" in text:
            head, inner = text.split("(", 1)
            if head in self._tokens:
                return self.bind(self._tokens[head], self.parse_token(inner[:-1]))
        raise KeyError(f"unknown token {text!r}")

    # programs ---------------------------------------------------------------
    def parse_program(self, text: str) -> list[str]:
        return [self[t].id for t in _split_top(text, None) if t]

    def resolve(self, program: Sequence[str]) -> list[Token]:
        """Group each special token with its argument; drops a trailing STOP."""
        out: list[Token] = []
        pending = None
        for tid in program:
            tok = self[tid]
            if tok.kind == STOP:
                break
            if tok.is_special:
                pending = tok
                continue
            out.append(self.bind(pending, tok) if pending is not None else tok)
            pending = None
        return out

    # catalog ------------------------------------------------------------------
    def to_catalog(self) -> str:
        rows = []
        for t in self._tokens.values():
            d = t.definition
            if d[0] == "prim":
                definition = {"primitive": d[1]}
            elif d[0] == "comb":
                definition = {"combinator": d[1]}
            elif d[0] == "merge":
                definition = {"merge": [d[1], d[2]]}
            elif d[0] == "bind":
                definition = {"bind": [d[1], d[2]]}
            else:
                definition = {"stop": True}
            rows.append({"id": t.id, "kind": t.kind, "cost": t.cost, "width": t.width,
                         "signature": [list(p) for p in t.signature], "definition": definition})
        doc = {"format": "algodisc-token-catalog", "version": 1,
               "language": self.language.name, "tokens": rows}
        return json.dumps(doc, indent=1)

    @classmethod
    def from_catalog(cls, language: Language, text: str) -> "Vocabulary":
        doc = json.loads(text)
        if doc.get("format") != "algodisc-token-catalog" or doc.get("version") != 1:
            raise ValueError("not a version-1 token catalog")
        if doc["language"] != language.name:
            raise ValueError(f"catalog is for language {doc['language']!r}")
        vocab = cls.from_language(language, with_stop=False)
        base = {t.id for t in vocab}
        extra = []
        for row in doc["tokens"]:
            if row["id"] in base:
                continue
            d = row["definition"]
            if "stop" in d:
                extra.append(Token(STOP_ID, STOP, language.name, 0, ("stop",)))
                continue
            probe = vocab.extend(extra)
            if "merge" in d:
                tok = probe.compose(*d["merge"])
            elif "bind" in d:
                tok = probe.bind(*d["bind"])
            else:
                raise ValueError(f"unknown primitive {row['id']!r} for {language.name}")
            if tok.id != row["id"]:
                raise ValueError(f"catalog id {row['id']!r} does not match definition {tok.id!r}")
            extra.append(tok)
        return vocab.extend(extra)


def _split_top(text: str, sep: str | None) -> list[str]:
    """Split on ``sep`` (or whitespace) outside parentheses."""
    parts, depth, cur, i = [], 0, [], 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if depth == 0 and (text.startswith(sep, i) if sep else ch.isspace()):
            parts.append("".join(cur))
            cur = []
            i += len(sep) if sep else 1
            continue
        cur.append(ch)
        i += 1
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


# ---------------------------------------------------------------------------
# grammar


class Grammar:
    """Legal successor sets derived from a vocabulary's kind signatures."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.language = vocab.language
        self._cache: dict[tuple[str, str | None], tuple[str, ...]] = {}
        self._bound: dict[tuple[str, str], Token | None] = {}

    @property
    def start_kind(self) -> str:
        return self.language.start_kind

    def bound(self, special: str, inner: str) -> Token | None:
        key = (special, inner)
        if key not in self._bound:
            try:
                self._bound[key] = self.vocab.bind(special, inner)
            except GrammarError:
                self._bound[key] = None
        return self._bound[key]

    def step(self, kind: str, pending: str | None, tid: str) -> tuple[str, str | None] | None:
        """Advance the (kind, pending-special) context by one token, or None if illegal."""
        tok = self.vocab[tid]
        if tok.kind == STOP:
            return None if pending else (kind, None)
        if tok.is_special:
            if pending is not None:
                return None
            return (kind, tid) if self.legal_successors(kind, tid) else None
        if pending is not None:
            b = self.bound(pending, tid)
            out = b.out_kind(kind, self.language) if b is not None else None
        else:
            out = tok.out_kind(kind, self.language)
        return None if out is None else (out, None)

    def legal_successors(self, kind: str, pending: str | None = None) -> tuple[str, ...]:
        key = (kind, pending)
        if key in self._cache:
            return self._cache[key]
        legal = []
        for tok in self.vocab:
            if pending is not None:
                if tok.is_plain:
                    b = self.bound(pending, tok.id)
                    if b is not None and b.out_kind(kind, self.language) is not None:
                        legal.append(tok.id)
            elif tok.kind == STOP:
                legal.append(tok.id)
            elif tok.is_plain:
                if tok.out_kind(kind, self.language) is not None:
                    legal.append(tok.id)
            elif self.legal_successors(kind, tok.id):
                legal.append(tok.id)
        self._cache[key] = tuple(legal)
        return self._cache[key]

    def step_cost(self, pending: str | None, tid: str) -> int:
        """Cost charged when ``tid`` is appended in this context (0 for specials and STOP)."""
        tok = self.vocab[tid]
        if not tok.is_plain:
            return 0
        if pending is not None:
            return self.bound(pending, tid).cost
        return tok.cost


def check_chain(grammar: Grammar, seq: Sequence[str], kind: str | None = None) -> GrammarError | None:
    """Return the first violation in ``seq`` or None when the chain is legal."""
    kind = grammar.start_kind if kind is None else kind
    pending_at = None
    pending = None
    stopped = False
    for pos, tid in enumerate(seq):
        if stopped:
            return GrammarError(pos, "token after STOP")
        try:
            tok = grammar.vocab[tid]
        except (KeyError, GrammarError):
            return GrammarError(pos, f"unknown token {tid!r}")
        if tok.kind == STOP:
            if pending is not None:
                return GrammarError(pending_at, f"special token {pending} has no argument")
            stopped = True
            continue
        if tok.is_special and pending is not None:
            return GrammarError(pos, f"special token {tid} cannot be the argument of {pending}")
        nxt = grammar.step(kind, pending, tid)
        if nxt is None:
            return GrammarError(pos, f"{tid} is not legal on a {kind!r} state"
                                + (f" under {pending}" if pending else ""))
        if tok.is_special:
            pending, pending_at = tid, pos
        else:
            kind, pending = nxt
    if pending is not None:
        return GrammarError(pending_at, f"special token {pending} has no argument")
    return None


def validate_chain(grammar: Grammar, seq: Sequence[str], kind: str | None = None) -> None:
    err = check_chain(grammar, seq, kind)
    if err is not None:
        raise err


def bind_special(vocab: Vocabulary, special: Token | str, inner: Token | str) -> Token:
    return vocab.bind(special, inner)


# ---------------------------------------------------------------------------
# execution


@dataclass(frozen=True)
class ExecContext:
    """Problem data plus a position in the seed tree.

    Every stochastic primitive draws from ``ctx.rng()``, which depends only on
    the key, so identical keys give identical streams regardless of how the
    program was tokenised.
    """

    problem: Any
    language: Language
    key: tuple[int, ...]

    def at(self, *k: int) -> "ExecContext":
        return ExecContext(self.problem, self.language, self.key + tuple(int(x) for x in k))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.key[0], spawn_key=self.key[1:]))

    def loss(self, state, kind: str) -> float | None:
        return self.language.loss(self.problem, state, kind)


def _require_finite(tid: str, value) -> None:
    """Raise ``FloatingPointError`` when a numeric state has overflowed."""
    if isinstance(value, (float, np.floating)) or (
            isinstance(value, np.ndarray) and value.dtype.kind in "fc"):
        if not np.isfinite(value).all():
            raise FloatingPointError(f"{tid} produced a non-finite state")


def run_token(vocab: Vocabulary, tok: Token, state, kind: str, ctx: ExecContext, pos: int = 0,
              observe: Callable[[Any, str], None] | None = None):
    """Apply one plain token; returns ``(state, kind)``."""
    d = tok.definition
    lang = vocab.language
    out = tok.out_kind(kind, lang)
    if out is None:
        raise ExecutionError(f"{tok.id} cannot act on a {kind!r} state")
    if d[0] == "prim":
        with np.errstate(over="ignore", invalid="ignore"):
            result = lang.primitives[d[1]].fn(state, ctx.at(pos))
        _require_finite(tok.id, result)
        return result, out
    if d[0] == "merge":
        left, right = vocab[d[1]], vocab[d[2]]
        state, kind = run_token(vocab, left, state, kind, ctx, pos, observe)
        if observe is not None:
            observe(state, kind)
        return run_token(vocab, right, state, kind, ctx, pos + left.width, observe)
    if d[0] == "bind":
        special, inner = vocab[d[1]], vocab[d[2]]
        comb = lang.combinators[special.definition[1]]

        def run_inner(s, c, k):
            return run_token(vocab, inner, s, k, c, 0)

        return comb.apply(run_inner, state, kind, ctx.at(pos)), out
    raise ExecutionError(f"{tok.id} is not executable")


@dataclass
class ExecutionTrace:
    steps: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    costs: list[int] = field(default_factory=list)
    remaining: list[int] = field(default_factory=list)
    initial_loss: float | None = None
    final_state: Any = None
    best_loss: float | None = None
    last_state: Any = None
    last_kind: str | None = None
    budget: int = 0
    final_budget: int = 0
    stopped: bool = False
    truncated: bool = False
    failed: bool = False
    failed_step: int | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def used(self) -> int:
        return self.budget - self.final_budget


def execute(vocab: Vocabulary, program: Sequence[str], state, *, problem=None, budget: int,
            seed: int | Sequence[int] = 0, kind: str | None = None, depth_penalty: int = 1,
            grammar: Grammar | None = None) -> ExecutionTrace:
    """Run ``program`` from ``state`` under a compute budget.

    Each resolved token is charged its cost plus ``depth_penalty``; execution
    halts at STOP or before the first token that no longer fits.  The trace's
    ``final_state`` is the lowest-loss state seen anywhere along the way,
    including inside fused tokens.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    lang = vocab.language
    grammar = grammar or Grammar(vocab)
    kind = lang.start_kind if kind is None else kind
    validate_chain(grammar, program, kind)
    key = (int(seed),) if np.isscalar(seed) else tuple(int(s) for s in seed)
    ctx = ExecContext(problem, lang, key)
    trace = ExecutionTrace(budget=budget, final_budget=budget)
    best = {"loss": None, "state": state}

    def consider(s, k):
        loss = lang.loss(problem, s, k)
        if loss is None:
            return None
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss}")
        if best["loss"] is None or loss < best["loss"]:
            best["loss"], best["state"] = loss, s
        return loss

    current = consider(state, kind)
    trace.initial_loss = current
    remaining = budget
    pos = 0
    pending = None
    for tid in program:
        tok = vocab[tid]
        if tok.kind == STOP:
            trace.stopped = True
            remaining = max(0, remaining - depth_penalty)
            break
        if tok.is_special:
            pending = tok
            continue
        if pending is not None:
            tok = vocab.bind(pending, tok)
            pending = None
        charge = tok.cost + depth_penalty
        if charge > remaining:
            trace.truncated = True
            break
        try:
            state, kind = run_token(vocab, tok, state, kind, ctx, pos, consider)
            loss = consider(state, kind)
        except FloatingPointError:
            trace.failed = True
            trace.failed_step = len(trace.steps)
            break
        pos += tok.width
        remaining -= charge
        if loss is not None:
            current = loss
        trace.steps.append(tok.id)
        trace.losses.append(current if current is not None else float("nan"))
        trace.costs.append(tok.cost)
        trace.remaining.append(remaining)
    trace.final_budget = remaining
    trace.final_state = best["state"] if best["loss"] is not None else state
    trace.best_loss = best["loss"]
    trace.last_state, trace.last_kind = state, kind
    return trace
