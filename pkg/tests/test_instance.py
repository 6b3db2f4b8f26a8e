import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from algodisc.qap.exact import brute_force_optimum
from algodisc.qap.instance import (
    QapInstance,
    generate_cqap,
    generate_pqap,
    is_doubly_stochastic,
    is_permutation,
    is_permutation_matrix,
    loss_batch,
    matrix_to_perm,
    parse_qaplib,
    parse_qaplib_solution,
    perm_matrix,
    qap_gradient,
    qap_loss,
    reverse,
    swap,
    write_qaplib,
)

from conftest import exhaustive_min, random_instance


def test_linear_term_only_gives_trace_of_c():
    C = np.arange(16.0).reshape(4, 4)
    inst = QapInstance(np.zeros((4, 4)), np.zeros((4, 4)), C)
    assert qap_loss(inst, np.arange(4)) == np.trace(C)


def test_symmetric_two_by_two_gives_six_for_both_permutations():
    inst = QapInstance([[0, 1], [1, 0]], [[0, 3], [3, 0]], np.zeros((2, 2)))
    assert qap_loss(inst, [0, 1]) == 6.0
    assert qap_loss(inst, [1, 0]) == 6.0


def test_permutation_and_matrix_forms_agree(rng):
    inst = random_instance(rng, 6)
    for _ in range(20):
        p = rng.permutation(6)
        direct = sum(inst.F[i, j] * inst.D[p[i], p[j]] for i in range(6) for j in range(6))
        direct += sum(inst.C[i, p[i]] for i in range(6))
        assert qap_loss(inst, p) == pytest.approx(direct)
        assert qap_loss(inst, perm_matrix(p)) == pytest.approx(direct)


def test_trace_formula_on_doubly_stochastic_matrix(rng):
    inst = random_instance(rng, 5)
    P = np.full((5, 5), 0.2)
    expected = np.trace(inst.F @ P @ inst.D.T @ P.T + inst.C @ P.T)
    assert qap_loss(inst, P) == pytest.approx(expected)


def test_loss_batch_matches_single_evaluations(rng):
    inst = random_instance(rng, 7)
    perms = np.stack([rng.permutation(7) for _ in range(30)])
    np.testing.assert_allclose(loss_batch(inst, perms), [qap_loss(inst, p) for p in perms])


def test_oracle_minimum_at_n6(rng):
    inst = random_instance(rng, 6)
    best = min(itertools.permutations(range(6)), key=lambda p: qap_loss(inst, np.array(p)))
    assert qap_loss(inst, np.array(best)) == exhaustive_min(inst)
    assert brute_force_optimum(inst) == exhaustive_min(inst)


def test_dimension_mismatch_rejected(rng):
    inst = random_instance(rng, 4)
    with pytest.raises(ValueError):
        qap_loss(inst, np.arange(5))
    with pytest.raises(ValueError):
        qap_gradient(inst, np.eye(3))
    with pytest.raises(ValueError):
        QapInstance(np.zeros((3, 3)), np.zeros((4, 4)), np.zeros((3, 3)))


def test_instance_rejects_non_finite_and_tiny():
    with pytest.raises(ValueError):
        QapInstance([[np.nan]], [[0.0]], [[0.0]])
    bad = np.zeros((3, 3))
    bad[0, 1] = np.inf
    with pytest.raises(ValueError):
        QapInstance(bad, np.zeros((3, 3)), np.zeros((3, 3)))


def test_brute_force_provenance_limited_to_small_n():
    z = np.zeros((11, 11))
    with pytest.raises(ValueError):
        QapInstance(z, z, z, 0.0, "brute-force")
    with pytest.raises(ValueError):
        QapInstance(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), 0.0, None)


def test_gradient_linear_case_is_c(rng):
    C = rng.normal(size=(5, 5))
    inst = QapInstance(np.zeros((5, 5)), np.zeros((5, 5)), C)
    for _ in range(3):
        P = rng.random((5, 5))
        np.testing.assert_array_equal(qap_gradient(inst, P), C)


def test_gradient_symmetric_case_is_two_fpd(rng):
    inst = random_instance(rng, 6, linear=False, symmetric=True)
    P = rng.random((6, 6))
    np.testing.assert_allclose(qap_gradient(inst, P), 2 * inst.F @ P @ inst.D)


def central_difference(inst, P, h=1e-5):
    G = np.zeros_like(P)
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            E = np.zeros_like(P)
            E[i, j] = h
            G[i, j] = (qap_loss(inst, P + E) - qap_loss(inst, P - E)) / (2 * h)
    return G


def test_gradient_matches_finite_differences_n8(rng):
    inst = QapInstance(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
    P = rng.random((8, 8))
    G, fd = qap_gradient(inst, P), central_difference(inst, P)
    assert np.linalg.norm(G - fd) / np.linalg.norm(fd) < 1e-6


@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_loss_is_invariant_under_simultaneous_relabelling(n, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n)
    p, s = rng.permutation(n), rng.permutation(n)
    relabelled = QapInstance(inst.F[np.ix_(s, s)], inst.D, inst.C[s])
    assert qap_loss(relabelled, p[s]) == pytest.approx(qap_loss(inst, p))


# ---------------------------------------------------------------------------
# permutations


def test_permutation_helpers():
    p = np.array([2, 0, 1])
    P = perm_matrix(p)
    assert is_permutation_matrix(P) and is_doubly_stochastic(P)
    np.testing.assert_array_equal(matrix_to_perm(P), p)
    assert is_permutation(p) and not is_permutation([0, 0, 1])
    with pytest.raises(ValueError):
        matrix_to_perm(np.full((3, 3), 1 / 3))
    np.testing.assert_array_equal(swap(p, 0, 2), [1, 0, 2])
    np.testing.assert_array_equal(reverse(np.arange(5), 1, 3), [0, 3, 2, 1, 4])


def test_reverse_formula():
    x = np.array([0, 1, 2])
    assert reverse(x, 0, 2).tolist() == [2, 1, 0]
    x = np.arange(7)
    i, j = 2, 5
    y = reverse(x, i, j)
    assert all(y[k] == x[j + i - k] for k in range(i, j + 1))


# ---------------------------------------------------------------------------
# generators


@pytest.mark.parametrize("n", [6, 7, 8])
def test_pqap_optimum_is_certified_by_brute_force(n):
    for s in range(5):
        inst = generate_pqap(n, s)
        assert inst.provenance == "generator"
        assert brute_force_optimum(inst) == inst.known_optimum


def test_cqap_structure_on_many_seeds():
    for s in range(100):
        inst = generate_cqap(6, s)
        for M in (inst.F, inst.D):
            assert np.isfinite(M).all()
            np.testing.assert_array_equal(M, np.round(M))
            np.testing.assert_array_equal(M, M.T)
            assert not np.diag(M).any()
        assert not inst.C.any()
        assert inst.known_optimum is None


@pytest.mark.parametrize("gen", [generate_cqap, generate_pqap])
def test_generators_are_deterministic(gen):
    a, b = gen(9, 3), gen(9, 3)
    for x, y in ((a.F, b.F), (a.D, b.D), (a.C, b.C)):
        np.testing.assert_array_equal(x, y)
    assert a.known_optimum == b.known_optimum
    assert not np.array_equal(gen(9, 4).F, a.F) or not np.array_equal(gen(9, 4).D, a.D)


@pytest.mark.parametrize("gen", [generate_cqap, generate_pqap])
def test_generators_reject_small_n(gen):
    with pytest.raises(ValueError):
        gen(3, 0)


# ---------------------------------------------------------------------------
# QAPLIB and serialisation


def test_parse_qaplib_example():
    inst = parse_qaplib("2 0 1 1 0 0 3 3 0")
    assert inst.n == 2
    np.testing.assert_array_equal(inst.F, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(inst.D, [[0, 3], [3, 0]])
    assert not inst.C.any()


def test_parse_qaplib_any_line_breaks():
    text = "3\n\n 1 2\n3 4 5 6 7 8 9\n\n9 8 7\n6 5 4 3 2 1\n"
    inst = parse_qaplib(text)
    np.testing.assert_array_equal(inst.F.ravel(), np.arange(1, 10))
    np.testing.assert_array_equal(inst.D.ravel(), np.arange(9, 0, -1))


def test_parse_qaplib_truncated_names_missing_count():
    with pytest.raises(ValueError, match="missing 2"):
        parse_qaplib("2 0 1 1 0 0 3")


def test_parse_qaplib_non_numeric_names_offset():
    with pytest.raises(ValueError, match="offset 3"):
        parse_qaplib("2 0 1 x 0 0 3 3 0")


def test_qaplib_roundtrip(rng):
    inst = random_instance(rng, 5, linear=False)
    back = parse_qaplib(write_qaplib(inst))
    np.testing.assert_array_equal(back.F, inst.F)
    np.testing.assert_array_equal(back.D, inst.D)
    with pytest.raises(ValueError):
        write_qaplib(random_instance(rng, 3, linear=True))


def test_published_style_solution_recomputes(rng):
    inst = random_instance(rng, 6, linear=False)
    perm = np.array([3, 1, 0, 5, 2, 4])
    value = qap_loss(inst, perm)
    n, v, p = parse_qaplib_solution(f"6 {value:g}\n" + " ".join(str(x + 1) for x in perm))
    assert n == 6 and qap_loss(parse_qaplib(write_qaplib(inst)), p) == v == value


def test_json_roundtrip_keeps_provenance():
    inst = generate_pqap(6, 1)
    back = QapInstance.from_json(inst.to_json())
    assert back.known_optimum == inst.known_optimum and back.provenance == "generator"
    np.testing.assert_array_equal(back.C, inst.C)
