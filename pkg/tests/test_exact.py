import numpy as np
import pytest

from algodisc.qap.exact import (
    BRUTE_FORCE_MAX_N,
    branch_and_bound,
    brute_force,
    brute_force_optimum,
    certify,
    gilmore_lawler_bound,
)
from algodisc.qap.instance import QapInstance, generate_cqap, qap_loss
from algodisc.qap.lsa import lsa_cost

from conftest import exhaustive_min, random_instance


def test_brute_force_matches_itertools_enumeration(rng):
    for n in (2, 3, 5, 6):
        inst = random_instance(rng, n)
        assert qap_loss(inst, brute_force(inst)) == exhaustive_min(inst) == brute_force_optimum(inst)


def test_brute_force_size_limit():
    z = np.zeros((BRUTE_FORCE_MAX_N + 1,) * 2)
    with pytest.raises(ValueError):
        brute_force(QapInstance(z, z, z))


def test_certify_attaches_brute_force_optimum(rng):
    inst = certify(random_instance(rng, 5))
    assert inst.provenance == "brute-force" and inst.known_optimum == exhaustive_min(inst)


def test_gilmore_lawler_is_tight_in_the_linear_case(rng):
    C = rng.normal(size=(6, 6))
    inst = QapInstance(np.zeros((6, 6)), np.zeros((6, 6)), C)
    assert gilmore_lawler_bound(inst) == pytest.approx(lsa_cost(C))
    assert gilmore_lawler_bound(inst) == pytest.approx(brute_force_optimum(inst))


def test_gilmore_lawler_never_exceeds_optimum(rng):
    for _ in range(100):
        n = int(rng.integers(2, 8))
        inst = random_instance(rng, n, linear=bool(rng.integers(2)), symmetric=bool(rng.integers(2)))
        assert gilmore_lawler_bound(inst) <= brute_force_optimum(inst) + 1e-9


def test_branch_and_bound_certifies_optimum_n8(rng):
    for _ in range(5):
        inst = random_instance(rng, 8)
        perm, bound, completed = branch_and_bound(inst, time_limit=60)
        assert completed
        assert qap_loss(inst, perm) == brute_force_optimum(inst)
        assert bound == pytest.approx(qap_loss(inst, perm))


def test_branch_and_bound_on_structured_instance():
    inst = generate_cqap(8, 2)
    perm, _, completed = branch_and_bound(inst, time_limit=60)
    assert completed and qap_loss(inst, perm) == brute_force_optimum(inst)


def test_branch_and_bound_time_limit():
    inst = generate_cqap(30, 0)
    perm, bound, completed = branch_and_bound(inst, time_limit=0.05)
    assert not completed
    assert bound <= qap_loss(inst, perm)
    with pytest.raises(ValueError):
        branch_and_bound(inst, time_limit=0)
