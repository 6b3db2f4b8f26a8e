"""Algorithmic byte-pair encoding: grow a vocabulary by fusing frequent token pairs.

A pair is only counted where fusing it keeps the program's meaning: the left
token must not already be the argument of a preceding special token, STOP
never fuses, a plain token never fuses with a following special, and the
fused token must be grammatical.  Pairs listed in the language's equivalence
table (``NE NE`` is the identity) and pairs whose fused token already exists
are skipped too.
"""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .lang import STOP, GrammarError, Token, Vocabulary

Corpus = list[list[str]]


@dataclass(frozen=True)
class MergeRecord:
    left: str
    right: str
    new_id: str
    count: int
    round: int

    @property
    def pair(self) -> tuple[str, str]:
        return (self.left, self.right)


def fused(vocab: Vocabulary, left: str, right: str) -> Token | None:
    """The token a pair would fuse into, or None when the pair may not fuse."""
    if (left, right) in vocab.language.equivalences:
        return None
    try:
        a, b = vocab[left], vocab[right]
    except (KeyError, GrammarError):
        return None
    if a.kind == STOP or b.kind == STOP or not b.is_plain:
        return None
    try:
        tok = vocab.bind(a, b) if a.is_special else vocab.compose(a, b)
    except GrammarError:
        return None
    if tok.id in vocab:
        return None
    return tok


def _fusable_positions(seq: Sequence[str], vocab: Vocabulary):
    """Indices i where (seq[i], seq[i+1]) is not split by a pending special."""
    bound = False
    for i in range(len(seq) - 1):
        tok = vocab[seq[i]]
        if not bound:
            yield i
        bound = tok.is_special


def count_pairs(corpus: Sequence[Sequence[str]], vocab: Vocabulary) -> Counter:
    raw = Counter()
    for seq in corpus:
        for i in _fusable_positions(seq, vocab):
            raw[(seq[i], seq[i + 1])] += 1
    cache: dict[tuple[str, str], bool] = {}
    out = Counter()
    for pair, c in raw.items():
        if pair not in cache:
            cache[pair] = fused(vocab, *pair) is not None
        if cache[pair]:
            out[pair] = c
    return out


def rewrite(seq: Sequence[str], pair: tuple[str, str], new_id: str, vocab: Vocabulary) -> list[str]:
    """Replace occurrences of ``pair`` left to right without overlap."""
    out: list[str] = []
    i = 0
    bound = False
    n = len(seq)
    while i < n:
        if not bound and i + 1 < n and (seq[i], seq[i + 1]) == pair:
            out.append(new_id)
            bound = False
            i += 2
            continue
        out.append(seq[i])
        bound = vocab[seq[i]].is_special
        i += 1
    return out


def merge_once(corpus: Sequence[Sequence[str]], vocab: Vocabulary, threshold: int = 10,
               round_index: int = 0) -> tuple[Corpus, Vocabulary, MergeRecord | None]:
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    counts = count_pairs(corpus, vocab)
    if not counts:
        return [list(s) for s in corpus], vocab, None
    top = max(counts.values())
    if top < threshold:
        return [list(s) for s in corpus], vocab, None
    pair = min(p for p, c in counts.items() if c == top)
    tok = fused(vocab, *pair)
    new_vocab = vocab.extend([tok])
    new_corpus = [rewrite(s, pair, tok.id, vocab) for s in corpus]
    return new_corpus, new_vocab, MergeRecord(pair[0], pair[1], tok.id, top, round_index)


def run_abpe(corpus: Sequence[Sequence[str]], vocab: Vocabulary, threshold: int = 10,
             round_index: int = 0, max_merges: int | None = None) -> tuple[Vocabulary, list[MergeRecord], Corpus]:
    """Merge until no pair reaches ``threshold``; returns vocabulary, history and rewritten corpus."""
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    history: list[MergeRecord] = []
    corpus = [list(s) for s in corpus]
    while max_merges is None or len(history) < max_merges:
        corpus, vocab, rec = merge_once(corpus, vocab, threshold, round_index)
        if rec is None:
            break
        history.append(rec)
    return vocab, history, corpus


# ---------------------------------------------------------------------------
# files


def format_corpus(corpus: Sequence[Sequence[str]]) -> str:
    return "".join(" ".join(seq) + "\n" for seq in corpus)


def parse_corpus(text: str, vocab: Vocabulary | None = None) -> Corpus:
    corpus = [line.split() for line in text.splitlines() if line.strip()]
    if vocab is not None:
        for k, seq in enumerate(corpus):
            for tid in seq:
                try:
                    vocab[tid]
                except (KeyError, GrammarError):
                    raise ValueError(f"line {k + 1}: unknown token {tid!r}") from None
    return corpus


MERGE_COLUMNS = ("round", "left", "right", "new_id", "count")


def format_merges(history: Sequence[MergeRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MERGE_COLUMNS)
    for r in history:
        w.writerow([r.round, r.left, r.right, r.new_id, r.count])
    return buf.getvalue()


def parse_merges(text: str) -> list[MergeRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [MergeRecord(r["left"], r["right"], r["new_id"], int(r["count"]), int(r["round"])) for r in rows]


def write_text(path: str | os.PathLike, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)
