import itertools
import random
from fractions import Fraction

import numpy as np
import pytest

from pbfair.cohesion import (
    OracleGuardError,
    binarize,
    brute_force_cohesive_groups,
    frequent_itemsets,
    groups_from_project_sets,
    has_cohesive_group,
    is_cohesive,
    maximal_group,
    mine_cohesive_groups,
    min_support,
)
from pbfair.core import BallotKind, approval_profile, cardinal_profile, make_instance

from helpers import random_instance, random_profile


def exhaustive_itemsets(matrix, minsupp):
    """Independent oracle: enumerate all 2^m itemsets and count containing rows."""
    n, m = matrix.shape
    out = []
    for size in range(1, m + 1):
        for items in itertools.combinations(range(m), size):
            count = sum(1 for row in matrix if all(row[p] for p in items))
            support = Fraction(count, n)
            if support >= minsupp:
                out.append((frozenset(items), support))
    return out


def test_binarize_patterns():
    prof = cardinal_profile([[Fraction(1, 2), Fraction(0), Fraction(1, 4)]], 3)
    assert binarize(prof).tolist() == [[1, 0, 1]]
    prof2 = approval_profile([{1}], 3)
    assert binarize(prof2).tolist() == [[0, 1, 0]]
    prof3 = approval_profile([set()], 3)
    assert binarize(prof3).tolist() == [[0, 0, 0]]


def test_min_support():
    assert min_support(make_instance([20, 50, 80], 100)) == Fraction(1, 5)
    assert min_support(make_instance([100], 100)) == 1
    # cheapest project dearer than the whole budget: clamped
    assert min_support(make_instance([150], 100)) == 1


def test_frequent_itemsets_threshold_equality():
    matrix = np.array([[1, 0], [1, 0], [0, 1], [0, 0]], dtype=np.uint8)
    found = dict(frequent_itemsets(matrix, Fraction(1, 2)))
    assert found[frozenset({0})] == Fraction(1, 2)
    assert frozenset({1}) not in found


def test_frequent_itemsets_minsupp_one_empty():
    matrix = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    assert frequent_itemsets(matrix, Fraction(1)) == []


def test_frequent_itemsets_full_agreement():
    matrix = np.ones((3, 2), dtype=np.uint8)
    found = dict(frequent_itemsets(matrix, Fraction(1, 2)))
    assert found == {
        frozenset({0}): Fraction(1),
        frozenset({1}): Fraction(1),
        frozenset({0, 1}): Fraction(1),
    }


@pytest.mark.parametrize("seed", range(40))
def test_frequent_itemsets_against_enumeration(seed):
    rng = random.Random(seed)
    n, m = rng.randint(1, 8), rng.randint(1, 6)
    matrix = np.array([[rng.random() < 0.5 for _ in range(m)] for _ in range(n)], dtype=np.uint8)
    minsupp = Fraction(rng.randint(1, 4), 4)
    got = sorted(frequent_itemsets(matrix, minsupp), key=lambda t: sorted(t[0]))
    expected = sorted(exhaustive_itemsets(matrix, minsupp), key=lambda t: sorted(t[0]))
    assert got == expected


def test_maximal_group_examples():
    matrix = np.array([[1], [0], [1], [1]], dtype=np.uint8)
    assert maximal_group((0,), matrix) == {0, 2, 3}
    matrix2 = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    assert maximal_group((0, 1), matrix2) == frozenset()


def test_maximal_group_superset_monotonicity():
    rng = random.Random(7)
    matrix = np.array([[rng.random() < 0.6 for _ in range(4)] for _ in range(6)], dtype=np.uint8)
    assert maximal_group((0, 1), matrix) <= maximal_group((0,), matrix)


def test_mine_two_symmetric_groups():
    # two disjoint voter blocks, each affording its own project
    inst = make_instance([50, 50], 100, ids=["a", "b"])
    prof = approval_profile([{0}, {0}, {1}, {1}], 2)
    index = mine_cohesive_groups(inst, prof)
    assert index.size == 2
    assert all(g.gamma == 1 for g in index.groups)
    # equal gamma and equal tiebreak: lexicographic order on P
    assert [g.projects for g in index.groups] == [(0,), (1,)]


def test_affordability_boundary():
    inst = make_instance([60], 100)
    prof = approval_profile([{0}, set()], 1)
    # support 1/2 gives 50 < 60: no group
    assert mine_cohesive_groups(inst, prof).size == 0


def test_gamma_arithmetic():
    inst = make_instance([25], 100)
    prof = approval_profile([{0}, {0}, set(), set()], 1)
    index = mine_cohesive_groups(inst, prof)
    assert index.size == 1
    assert index.groups[0].gamma == 2


def test_group_invariants_definition_check():
    rng = random.Random(11)
    for _ in range(50):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(1, 8), inst.num_projects, kind)
        for g in mine_cohesive_groups(inst, prof).groups:
            assert g.gamma >= 1
            assert all(a > 0 for a in g.alpha_floor)
            assert is_cohesive(inst, prof, g.projects, g.members)
            # maximality: adding any absent agent breaks the support condition
            for extra in set(range(prof.num_ballots)) - g.members:
                assert not all(prof.score(extra, p) > 0 for p in g.projects)


def test_mine_equals_bruteforce_multiset_and_order():
    rng = random.Random(23)
    for _ in range(60):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(1, 8), inst.num_projects, kind)
        mined = mine_cohesive_groups(inst, prof)
        brute = brute_force_cohesive_groups(inst, prof)
        assert mined.groups == brute.groups


def test_bruteforce_guard():
    inst = make_instance([1] * 21, 30)
    prof = approval_profile([set(range(21))], 21)
    with pytest.raises(OracleGuardError):
        brute_force_cohesive_groups(inst, prof)


def test_downward_closure():
    rng = random.Random(31)
    for _ in range(30):
        inst = random_instance(rng)
        prof = random_profile(rng, rng.randint(1, 8), inst.num_projects, BallotKind.APPROVAL)
        found = {fs for fs, _ in frequent_itemsets(binarize(prof), min_support(inst))}
        for itemset in found:
            for item in itemset:
                smaller = itemset - {item}
                if smaller:
                    assert smaller in found


def test_truncation_is_prefix():
    inst = make_instance([10, 10, 10], 100)
    prof = approval_profile([{0, 1, 2}, {0, 1}, {0}], 3)
    index = mine_cohesive_groups(inst, prof)
    top = index.top(2)
    assert top.groups == index.groups[:2]
    assert top.truncated_at == 2
    assert index.top(index.size + 5) is index


def test_groups_from_project_sets_matches_mining():
    inst = make_instance([50, 50], 100)
    prof = approval_profile([{0}, {0}, {1}, {1}], 2)
    index = mine_cohesive_groups(inst, prof)
    rebuilt = groups_from_project_sets(inst, prof, [g.projects for g in index.groups])
    assert rebuilt.groups == index.groups


def test_full_agreement_symmetry():
    # everyone approves everything: groups are exactly the affordable subsets,
    # each with the whole electorate as members
    inst = make_instance([30, 30, 30], 70)
    prof = approval_profile([{0, 1, 2}] * 3, 3)
    index = brute_force_cohesive_groups(inst, prof)
    expected = {(0,), (1,), (2,), (0, 1), (0, 2), (1, 2)}  # triples cost 90 > 70
    assert {g.projects for g in index.groups} == expected
    assert all(g.members == {0, 1, 2} for g in index.groups)
    assert mine_cohesive_groups(inst, prof).groups == index.groups


def test_has_cohesive_group_matches_miner():
    rng = random.Random(47)
    for _ in range(80):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(1, 8), inst.num_projects, kind)
        assert has_cohesive_group(inst, prof) == (mine_cohesive_groups(inst, prof).size > 0)
