import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algodisc.abpe import (
    MergeRecord,
    count_pairs,
    format_corpus,
    format_merges,
    merge_once,
    parse_corpus,
    parse_merges,
    rewrite,
    run_abpe,
)
from algodisc.lang import Grammar, Vocabulary, check_chain, execute
from algodisc.qap.instance import generate_cqap
from algodisc.qap.tokens import low_level_language
from algodisc.toy import ToyProblem, toy_language

TOY = Vocabulary.from_language(toy_language())
LOW = Vocabulary.from_language(low_level_language())
AB = [["A", "B", "A", "B"], ["A", "B"]]


def test_count_pairs_direct_count():
    counts = count_pairs(AB, TOY)
    assert counts[("A", "B")] == 3 and counts[("B", "A")] == 1 and len(counts) == 2


def test_equivalent_pairs_are_not_counted():
    assert not count_pairs([["NE", "NE"]], LOW)
    assert not count_pairs([["NEG", "NEG"], ["ID", "ID"]], TOY)


def test_empty_corpus_has_no_pairs():
    assert not count_pairs([], TOY)
    assert not count_pairs([[]], TOY)


def test_ungrammatical_fusions_are_not_counted():
    # a plain token never fuses with a following special, and STOP never fuses
    counts = count_pairs([["GRAD", "FOR", "LSA", "STOP"]], LOW)
    assert set(counts) == {("FOR", "LSA")}
    # the argument of a special is already bound and cannot fuse rightwards
    counts = count_pairs([["RU", "GRAD", "LSA"]], LOW)
    assert set(counts) == {("RU", "GRAD")}


def test_merge_once_fuses_the_top_pair():
    corpus, vocab, rec = merge_once(AB, TOY, threshold=2, round_index=4)
    assert rec == MergeRecord("A", "B", "A->B", 3, 4)
    assert corpus == [["A->B", "A->B"], ["A->B"]]
    assert vocab["A->B"].definition == ("merge", "A", "B")
    assert len(vocab) == len(TOY) + 1


def test_merge_below_threshold_changes_nothing():
    corpus, vocab, rec = merge_once(AB, TOY, threshold=4)
    assert rec is None and corpus == AB and vocab is TOY
    with pytest.raises(ValueError):
        merge_once(AB, TOY, threshold=0)


def test_overlapping_run_rewrites_left_to_right():
    corpus, _, rec = merge_once([["A", "A", "A"]], TOY, threshold=1)
    assert rec.new_id == "A->A" and corpus == [["A->A", "A"]]


def test_ties_go_to_the_lexicographically_smallest_pair():
    _, _, rec = merge_once([["B", "A"], ["A", "B"]], TOY, threshold=1)
    assert rec.pair == ("A", "B")


def test_special_binding_merges_into_a_plain_token():
    corpus, vocab, rec = merge_once([["RU", "GRAD", "LSA"]] * 3, LOW, threshold=2)
    assert rec.new_id == "RU(GRAD)" and vocab[rec.new_id].is_plain
    assert corpus == [["RU(GRAD)", "LSA"]] * 3


def test_run_abpe_reaches_a_fixpoint():
    vocab, history, corpus = run_abpe(AB, TOY, threshold=2)
    assert [r.new_id for r in history] == ["A->B"]
    assert corpus == [["A->B", "A->B"], ["A->B"]]
    again, more, _ = run_abpe(corpus, vocab, threshold=2)
    assert more == [] and again is vocab


def test_run_abpe_respects_max_merges():
    corpus = [["A", "B", "NEG", "A"]] * 5
    _, history, _ = run_abpe(corpus, TOY, threshold=1, max_merges=1)
    assert len(history) == 1


programs = st.lists(st.sampled_from(["A", "B", "NEG", "NOISE", "ID"]), min_size=1, max_size=8)


@settings(max_examples=60)
@given(st.lists(programs, min_size=1, max_size=8), st.integers(0, 2 ** 31 - 1))
def test_merges_preserve_semantics_and_grow_monotonically(corpus, seed):
    vocab, history, rewritten = run_abpe(corpus, TOY, threshold=2)
    assert len(vocab) == len(TOY) + len(history)
    assert vocab.ids[:len(TOY)] == TOY.ids
    for rec in history:
        assert rec.count >= 2
    for before, after in zip(corpus, rewritten):
        assert len(after) <= len(before)
        assert check_chain(Grammar(vocab), after) is None
        x0 = float(np.random.default_rng(seed).normal())
        a = execute(TOY, before, x0, problem=ToyProblem(1.0), budget=10 ** 6, seed=seed)
        b = execute(vocab, after, x0, problem=ToyProblem(1.0), budget=10 ** 6, seed=seed)
        assert a.last_state == b.last_state and a.best_loss == b.best_loss


def test_fused_qap_tokens_match_their_pairs_on_random_states():
    corpus = [["NE", "GRAD", "LSA"], ["GRAD", "LSA", "PU", "GRAD", "LSA"]] * 3
    vocab, history, _ = run_abpe(corpus, LOW, threshold=3)
    assert history
    inst = generate_cqap(7, 1)
    rng = np.random.default_rng(0)
    for rec in history:
        pair = [rec.left, rec.right]
        for _ in range(20):
            x = rng.permutation(7)
            s = int(rng.integers(2 ** 31))
            a = execute(vocab, pair, x, problem=inst, budget=10 ** 7, seed=s)
            b = execute(vocab, [rec.new_id], x, problem=inst, budget=10 ** 7, seed=s)
            np.testing.assert_array_equal(a.last_state, b.last_state)


def test_rewrite_skips_pairs_split_by_a_special():
    assert rewrite(["RU", "GRAD", "LSA"], ("GRAD", "LSA"), "GRAD->LSA", LOW) == ["RU", "GRAD", "LSA"]


def test_corpus_file_roundtrip():
    corpus = [["GRAD", "LSA"], ["FOR(RU(GRAD))", "LSA", "STOP"]]
    assert parse_corpus(format_corpus(corpus)) == corpus
    with pytest.raises(ValueError, match="line 2"):
        parse_corpus("GRAD LSA\nGRAD NOPE\n", LOW)


def test_merge_history_roundtrip():
    history = [MergeRecord("GRAD", "LSA", "GRAD->LSA", 12, 0), MergeRecord("FOR", "RU(GRAD)", "FOR(RU(GRAD))", 10, 1)]
    text = format_merges(history)
    assert text.splitlines()[0] == "round,left,right,new_id,count"
    assert parse_merges(text) == history
