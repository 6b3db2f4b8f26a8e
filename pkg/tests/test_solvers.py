import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from algodisc.qap.exact import brute_force, brute_force_optimum
from algodisc.qap.instance import (
    QapInstance,
    generate_cqap,
    is_doubly_stochastic,
    perm_matrix,
    qap_gradient,
    qap_loss,
    reverse,
    swap,
)
from algodisc.qap.lsa import lsa
from algodisc.qap.solvers import (
    bias_loss,
    bias_matrix,
    default_schedule,
    frank_wolfe,
    frank_wolfe_line_search,
    gibbs_average,
    gibbs_perm_average,
    interpolate,
    k_opt,
    multistart_two_opt,
    orthogonal_descent,
    perturbed_starts,
    project_to_permutation,
    psp,
    qr_q,
    simulated_annealing,
    two_swap_best,
)

from conftest import random_instance


def random_ds(rng, n, terms=4):
    w = rng.dirichlet(np.ones(terms))
    return sum(wi * perm_matrix(rng.permutation(n)) for wi in w)


def no_improving_transposition(inst, x):
    base = qap_loss(inst, x)
    return all(qap_loss(inst, swap(x, i, j)) >= base - 1e-9
               for i, j in itertools.combinations(range(len(x)), 2))


# ---------------------------------------------------------------------------
# interpolation and Frank-Wolfe


def test_interpolate_endpoints_and_fixed_point(rng):
    Q, S = random_ds(rng, 5), random_ds(rng, 5)
    np.testing.assert_array_equal(interpolate(Q, S, 0.0), Q)
    np.testing.assert_array_equal(interpolate(Q, S, 1.0), S)
    for g in (0.1, 0.5, 0.9):
        np.testing.assert_allclose(interpolate(Q, Q, g), Q)


def test_interpolate_hand_value():
    out = interpolate(np.eye(2), np.full((2, 2), 0.5), 0.5)
    np.testing.assert_allclose(out, [[0.75, 0.25], [0.25, 0.75]])


@pytest.mark.parametrize("g", [-0.1, 1.5, math.nan])
def test_interpolate_rejects_gamma_outside_unit_interval(g):
    with pytest.raises(ValueError):
        interpolate(np.eye(2), np.eye(2), g)


@given(st.integers(2, 8), st.floats(0, 1), st.integers(0, 2 ** 31 - 1))
def test_interpolate_preserves_double_stochasticity(n, g, seed):
    rng = np.random.default_rng(seed)
    assert is_doubly_stochastic(interpolate(random_ds(rng, n), random_ds(rng, n), g))


def test_default_schedule_values():
    assert default_schedule(3) == [1.0, 2 / 3, 0.5]


def test_first_default_step_is_the_lsa_vertex(rng):
    inst = random_instance(rng, 6)
    P0 = random_ds(rng, 6)
    out = frank_wolfe(inst, P0, k_max=1)
    np.testing.assert_array_equal(out, perm_matrix(lsa(qap_gradient(inst, P0))))


def test_linear_instance_converges_in_one_step(rng):
    C = rng.normal(size=(5, 5))
    inst = QapInstance(np.zeros((5, 5)), np.zeros((5, 5)), C)
    for k in (1, 5, 30):
        np.testing.assert_allclose(frank_wolfe(inst, random_ds(rng, 5), k_max=k), perm_matrix(lsa(C)))


def test_explicit_schedule_is_followed_exactly(rng):
    inst = random_instance(rng, 5)
    sched = [0.3, 0.7, 0.2]
    P = np.full((5, 5), 0.2)
    for g in sched:
        P = (1 - g) * P + g * perm_matrix(lsa(qap_gradient(inst, P)))
    np.testing.assert_allclose(frank_wolfe(inst, np.full((5, 5), 0.2), sched), P)
    with pytest.raises(ValueError):
        frank_wolfe(inst, P, sched, k_max=4)


def test_frank_wolfe_never_beats_the_oracle(rng):
    for _ in range(10):
        inst = random_instance(rng, 5)
        P = frank_wolfe(inst, np.full((5, 5), 0.2), k_max=30)
        assert is_doubly_stochastic(P)
        for mode in ("l2", "steepest", "best_of_both"):
            assert qap_loss(inst, project_to_permutation(inst, P, mode)) >= brute_force_optimum(inst)


def test_line_search_steps_are_exact_minimisers(rng):
    inst = random_instance(rng, 6, symmetric=True)
    P = np.full((6, 6), 1 / 6)
    _, steps = frank_wolfe_line_search(inst, P, 5)
    for g in steps:
        S = perm_matrix(lsa(qap_gradient(inst, P)))
        grid = np.linspace(0, 1, 2001)
        best = min(qap_loss(inst, interpolate(P, S, t)) for t in grid)
        assert qap_loss(inst, interpolate(P, S, g)) <= best + 1e-9
        P = interpolate(P, S, g)


# ---------------------------------------------------------------------------
# projection


def test_projection_of_a_permutation_matrix_is_itself(rng):
    inst = random_instance(rng, 6)
    p = rng.permutation(6)
    np.testing.assert_array_equal(project_to_permutation(inst, perm_matrix(p), "l2"), p)


def test_dominant_diagonal_projects_to_identity(rng):
    inst = random_instance(rng, 2)
    for a in (0.51, 0.7, 1.0):
        P = np.array([[a, 1 - a], [1 - a, a]])
        np.testing.assert_array_equal(project_to_permutation(inst, P, "l2"), [0, 1])


def test_best_of_both_is_the_smaller_branch(rng):
    for _ in range(50):
        inst = random_instance(rng, 6)
        P = random_ds(rng, 6)
        a = qap_loss(inst, lsa(-P))
        b = qap_loss(inst, lsa(qap_gradient(inst, P)))
        chosen = project_to_permutation(inst, P, "best_of_both")
        assert qap_loss(inst, chosen) == min(a, b)
        if a == b:
            np.testing.assert_array_equal(chosen, lsa(-P))


def test_unknown_projection_mode(rng):
    with pytest.raises(ValueError):
        project_to_permutation(random_instance(rng, 3), np.eye(3), "nearest")


# ---------------------------------------------------------------------------
# swaps and k-opt


def test_two_swap_at_n2_returns_the_better_permutation(rng):
    for _ in range(10):
        inst = random_instance(rng, 2)
        best = min(([0, 1], [1, 0]), key=lambda p: qap_loss(inst, np.array(p)))
        for x in ([0, 1], [1, 0]):
            out = two_swap_best(inst, np.array(x))
            assert qap_loss(inst, out) == qap_loss(inst, np.array(best))


def test_two_swap_at_the_optimum_does_not_improve(rng):
    for _ in range(10):
        inst = random_instance(rng, 7)
        x = brute_force(inst)
        out = two_swap_best(inst, x)
        assert qap_loss(inst, out) == qap_loss(inst, x)


def test_two_swap_fixpoint_has_no_improving_transposition(rng):
    inst = random_instance(rng, 8)
    x = rng.permutation(8)
    for _ in range(200):
        y = two_swap_best(inst, x)
        if np.array_equal(y, x):
            break
        x = y
    assert no_improving_transposition(inst, x)


def test_two_swap_with_inner_token(rng):
    inst = random_instance(rng, 5)
    x = rng.permutation(5)

    def inner(y):
        return k_opt(inst, y, "2opt")

    out = two_swap_best(inst, x, inner)
    expected = min(qap_loss(inst, inner(swap(x, i, j))) for i, j in itertools.combinations(range(5), 2))
    assert qap_loss(inst, out) == min(expected, qap_loss(inst, inner(x)))


def test_two_opt_is_a_local_optimum_and_no_worse(rng):
    for _ in range(50):
        inst = random_instance(rng, 7)
        x = rng.permutation(7)
        y = k_opt(inst, x, "2opt")
        assert qap_loss(inst, y) <= qap_loss(inst, x)
        assert no_improving_transposition(inst, y)


def test_two_opt_fixpoint_is_unchanged(rng):
    inst = random_instance(rng, 7)
    y = k_opt(inst, rng.permutation(7), "2opt")
    np.testing.assert_array_equal(k_opt(inst, y, "2opt"), y)


def test_three_opt_has_no_improving_three_exchange(rng):
    for _ in range(10):
        inst = random_instance(rng, 6)
        y = k_opt(inst, rng.permutation(6), "3opt")
        base = qap_loss(inst, y)
        for i, j, k in itertools.permutations(range(6), 3):
            z = y.copy()
            z[[i, j, k]] = y[[j, k, i]]
            assert qap_loss(inst, z) >= base - 1e-9
        assert no_improving_transposition(inst, y)


def test_path_reversal_is_a_local_optimum(rng):
    for _ in range(10):
        inst = random_instance(rng, 7)
        y = k_opt(inst, rng.permutation(7), "p2opt")
        base = qap_loss(inst, y)
        for i, j in itertools.combinations(range(7), 2):
            assert qap_loss(inst, reverse(y, i, j)) >= base - 1e-9


def test_p3opt_and_small_n_variants(rng):
    inst = random_instance(rng, 7)
    x = rng.permutation(7)
    assert qap_loss(inst, k_opt(inst, x, "p3opt")) <= qap_loss(inst, x)
    small = random_instance(rng, 2)
    for v in ("2opt", "3opt", "p2opt", "p3opt"):
        assert qap_loss(small, k_opt(small, np.array([0, 1]), v)) == brute_force_optimum(small)
    with pytest.raises(ValueError):
        k_opt(inst, x, "4opt")


def test_multistart_two_opt_respects_the_evaluation_budget(rng):
    inst = generate_cqap(10, 0)
    for budget in (45, 500, 5000):
        y, used = multistart_two_opt(inst, budget, np.random.default_rng(0))
        assert used <= max(budget, 45)
        assert no_improving_transposition(inst, y) or used >= budget - 45


# ---------------------------------------------------------------------------
# simulated annealing


def test_annealing_with_no_steps_returns_the_input(rng):
    inst = random_instance(rng, 6)
    x = rng.permutation(6)
    np.testing.assert_array_equal(simulated_annealing(inst, x, 0, rng), x)


def test_annealing_accepts_every_improvement_at_zero_temperature_limit(rng):
    inst = random_instance(rng, 6)
    x = rng.permutation(6)
    # with a vanishing temperature only improving swaps are accepted, so the walk is a descent
    y = simulated_annealing(inst, x, 5000, np.random.default_rng(1), T0=1e-300)
    assert no_improving_transposition(inst, y)


def test_annealing_on_cqap_n12_is_no_worse_and_reproducible():
    inst = generate_cqap(12, 0)
    x = np.random.default_rng(0).permutation(12)
    a = simulated_annealing(inst, x, 20000, np.random.default_rng(7))
    b = simulated_annealing(inst, x, 20000, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    assert qap_loss(inst, a) <= qap_loss(inst, x)


def test_annealing_argument_checks(rng):
    inst = random_instance(rng, 4)
    with pytest.raises(ValueError):
        simulated_annealing(inst, np.arange(4), -1, rng)
    with pytest.raises(ValueError):
        simulated_annealing(inst, np.arange(4), 10, rng, eps=1.0)
    with pytest.raises(ValueError):
        simulated_annealing(inst, np.arange(4), 10, rng, T0=-1.0)


# ---------------------------------------------------------------------------
# orthogonal descent


def test_zero_gradient_keeps_the_start():
    z = np.zeros((5, 5))
    inst = QapInstance(z, z, z)
    x = np.array([2, 0, 4, 1, 3])
    np.testing.assert_array_equal(orthogonal_descent(inst, perm_matrix(x), "op"), x)
    np.testing.assert_array_equal(orthogonal_descent(inst, perm_matrix(x), "oc"), x)
    np.testing.assert_array_equal(qr_q(perm_matrix(x)), perm_matrix(x))


def test_qr_factor_matches_hand_computation_at_n2():
    G = np.array([[1.0, -2.0], [0.5, 1.0]])
    M = np.eye(2) - 0.5 * G
    a, b = M[:, 0], M[:, 1]
    q1 = a / np.linalg.norm(a)
    r = b - (q1 @ b) * q1
    q2 = r / np.linalg.norm(r)
    np.testing.assert_allclose(qr_q(M), np.stack([q1, q2], axis=1), atol=1e-15)


def test_orthogonal_descent_never_beats_the_oracle(rng):
    for _ in range(10):
        inst = random_instance(rng, 6)
        for v in ("op", "oc"):
            y = orthogonal_descent(inst, np.eye(6), v)
            assert qap_loss(inst, y) >= brute_force_optimum(inst)


def test_orthogonal_descent_rejects_non_orthogonal_start(rng):
    with pytest.raises(ValueError):
        orthogonal_descent(random_instance(rng, 3), np.full((3, 3), 1 / 3))


# ---------------------------------------------------------------------------
# Gibbs averaging, bias and perturbed starts


def test_gibbs_average_closed_forms(rng):
    M = random_ds(rng, 4)
    np.testing.assert_array_equal(gibbs_average([M], [3.0], 5.0), M)
    values = [random_ds(rng, 4) for _ in range(3)]
    np.testing.assert_allclose(gibbs_average(values, [1.0, 5.0, 9.0], 0.0), sum(values) / 3)
    assert gibbs_average([0.0, 1.0], [0.0, math.log(3)], 1.0) == pytest.approx(0.25)


def test_gibbs_perm_average_uses_instance_losses(rng):
    inst = random_instance(rng, 4)
    xs = [rng.permutation(4) for _ in range(3)]
    w = np.exp(-0.1 * np.array([qap_loss(inst, x) for x in xs]))
    expected = sum(wi * perm_matrix(x) for wi, x in zip(w, xs)) / w.sum()
    out = gibbs_perm_average(inst, xs, 0.1)
    np.testing.assert_allclose(out, expected)
    assert is_doubly_stochastic(out)


def test_gibbs_rejects_empty_and_infinite_beta(rng):
    inst = random_instance(rng, 3)
    with pytest.raises(ValueError):
        gibbs_perm_average(inst, [], 1.0)
    with pytest.raises(ValueError):
        gibbs_average([1.0], [1.0], math.inf)


def test_bias_adds_a_linear_penalty(rng):
    inst = random_instance(rng, 5)
    y = random_ds(rng, 5)
    x0 = perm_matrix(rng.permutation(5))
    T = y * (1 - y) * x0
    np.testing.assert_allclose(bias_matrix(y, x0), T)
    biased = bias_loss(inst, y, x0, 0.3)
    for _ in range(5):
        x = perm_matrix(rng.permutation(5))
        assert qap_loss(biased, x) == pytest.approx(qap_loss(inst, x) + 0.3 * np.trace(x.T @ T))


def test_perturbed_starts_are_doubly_stochastic(rng):
    for P in perturbed_starts(rng.permutation(6), rng, 10):
        assert is_doubly_stochastic(P)


def test_psp_returns_the_best_inner_result(rng):
    inst = random_instance(rng, 6)
    x = rng.permutation(6)

    def inner(P):
        return project_to_permutation(inst, P, "l2")

    out = psp(inst, x, inner, np.random.default_rng(3))
    starts = perturbed_starts(x, np.random.default_rng(3), 10)
    assert qap_loss(inst, out) == min(qap_loss(inst, inner(P)) for P in starts)


# ---------------------------------------------------------------------------
# oracle floor on n <= 8


def test_no_solver_beats_the_oracle_n8(rng):
    for _ in range(5):
        inst = random_instance(rng, 8)
        opt = brute_force_optimum(inst)
        x = rng.permutation(8)
        outs = [k_opt(inst, x, v) for v in ("2opt", "3opt", "p2opt", "p3opt")]
        outs.append(simulated_annealing(inst, x, 2000, rng))
        outs.append(project_to_permutation(inst, frank_wolfe(inst, np.full((8, 8), 1 / 8)), "best_of_both"))
        outs.append(orthogonal_descent(inst, np.eye(8)))
        assert all(qap_loss(inst, y) >= opt for y in outs)
