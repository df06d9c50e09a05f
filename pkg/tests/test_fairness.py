import random
from fractions import Fraction

import pytest

from pbfair.cohesion import OracleGuardError, mine_cohesive_groups
from pbfair.core import (
    BallotKind,
    Objective,
    approval_profile,
    cardinal_profile,
    make_allocation,
    make_instance,
)
from pbfair.fairness import (
    InternalInconsistencyError,
    group_ratio,
    normalized_welfare,
    strong_ejr_approx,
    verify_ejr_bruteforce,
    verify_pjr_bruteforce,
    verify_strong_ejr_bruteforce,
    verify_strong_ejr_maximal,
)

from helpers import (
    objective_for,
    random_feasible_allocation,
    random_instance,
    random_profile,
)


def two_block_fixture():
    """n=4, b=100; project a (cost 50) approved by voters {0,1}, b (cost 50) by {2,3}."""
    inst = make_instance([50, 50], 100, ids=["a", "b"])
    prof = approval_profile([{0}, {0}, {1}, {1}], 2)
    return inst, prof, mine_cohesive_groups(inst, prof)


def test_group_ratio_containment_gives_one():
    inst, prof, index = two_block_fixture()
    full = make_allocation(inst, {0, 1})
    for g in index.groups:
        assert group_ratio(g, full, prof, Objective.CARD, inst) == 1


def test_group_ratio_zero_numerator():
    inst = make_instance([10, 10], 20, ids=["a", "b"])
    prof = approval_profile([{0}, {0}], 2)
    index = mine_cohesive_groups(inst, prof)
    only_b = make_allocation(inst, {1})
    group_a = next(g for g in index.groups if g.projects == (0,))
    assert group_ratio(group_a, only_b, prof, Objective.CARD, inst) == 0


def test_two_group_phi_half():
    # serving one of two symmetric groups gives ratios (1, 0), phi = 0.5
    inst, prof, index = two_block_fixture()
    pi_a = make_allocation(inst, {0})
    report = strong_ejr_approx(index, pi_a, prof, Objective.CARD, inst)
    assert sorted(r for _, r in report.per_group) == [0.0, 1.0]
    assert report.phi == 0.5
    assert not report.strong_ejr


def test_phi_single_group_exact_demand():
    inst = make_instance([40, 60], 40)
    prof = approval_profile([{0}, {0}], 2)
    index = mine_cohesive_groups(inst, prof)
    report = strong_ejr_approx(index, make_allocation(inst, {0}), prof, Objective.CARD, inst)
    assert report.phi == 1.0 and report.strong_ejr


def test_phi_truncation_prefix_equals_whole():
    inst, prof, index = two_block_fixture()
    alloc = make_allocation(inst, {0})
    full = strong_ejr_approx(index, alloc, prof, Objective.CARD, inst)
    capped = strong_ejr_approx(index, alloc, prof, Objective.CARD, inst, sigma=index.size + 10)
    assert full.phi == capped.phi


def test_vacuous_report():
    inst = make_instance([60], 100)
    prof = approval_profile([{0}, set()], 1)
    index = mine_cohesive_groups(inst, prof)
    report = strong_ejr_approx(index, make_allocation(inst, set()), prof, Objective.CARD, inst)
    assert report.vacuous and report.phi == 1.0 and report.groups_considered == 0


def test_verify_maximal_examples():
    inst, prof, index = two_block_fixture()
    assert verify_strong_ejr_maximal(index, make_allocation(inst, {0, 1}), prof, Objective.CARD, inst)
    assert not verify_strong_ejr_maximal(index, make_allocation(inst, {0}), prof, Objective.CARD, inst)


def test_verify_maximal_refuses_truncated():
    inst, prof, index = two_block_fixture()
    with pytest.raises(ValueError):
        verify_strong_ejr_maximal(index.top(1), make_allocation(inst, {0}), prof, Objective.CARD, inst)


def test_satisfaction_via_different_projects():
    # one group demanding satisfaction 2; every member reaches 2 through other projects
    inst = make_instance([10, 10, 5, 5, 5, 5], 20, ids=list("abcdef"))
    prof = approval_profile([{0, 1, 2, 3}, {0, 1, 4, 5}], 6)
    index = mine_cohesive_groups(inst, prof)
    group_ab = next(g for g in index.groups if g.projects == (0, 1))
    alloc = make_allocation(inst, {2, 3, 4, 5})  # c..f, neither a nor b
    assert group_ratio(group_ab, alloc, prof, Objective.CARD, inst) == 1


def test_bruteforce_examples():
    inst, prof, _ = two_block_fixture()
    pi_a = make_allocation(inst, {0})
    empty = make_allocation(inst, set())
    assert not verify_strong_ejr_bruteforce(inst, prof, pi_a, Objective.CARD)
    assert not verify_ejr_bruteforce(inst, prof, pi_a, Objective.CARD)
    assert not verify_strong_ejr_bruteforce(inst, prof, empty, Objective.CARD)
    full = make_allocation(inst, {0, 1})
    assert verify_strong_ejr_bruteforce(inst, prof, full, Objective.CARD)
    assert verify_ejr_bruteforce(inst, prof, full, Objective.CARD)
    assert verify_pjr_bruteforce(inst, prof, full, Objective.CARD)


def test_bruteforce_vacuous_truth():
    inst = make_instance([60], 100)
    prof = approval_profile([{0}, set()], 1)
    assert verify_strong_ejr_bruteforce(inst, prof, make_allocation(inst, set()), Objective.CARD)


def test_pjr_union_coverage_counterexample():
    # group {0,1} on P={a,b}; allocation {a} covers only one unit of the demanded two
    inst = make_instance([10, 10], 40, ids=["a", "b"])
    prof = approval_profile([{0, 1}, {0, 1}], 2)
    alloc = make_allocation(inst, {0})
    assert not verify_pjr_bruteforce(inst, prof, alloc, Objective.CARD)
    assert verify_pjr_bruteforce(inst, prof, make_allocation(inst, {0, 1}), Objective.CARD)


def test_guard_refusal():
    inst = make_instance([1] * 7, 5)
    prof = approval_profile([set(range(7))], 7)
    with pytest.raises(OracleGuardError):
        verify_strong_ejr_bruteforce(inst, prof, make_allocation(inst, set()), Objective.CARD)


def test_maximal_check_equals_exhaustive_check():
    rng = random.Random(101)
    for _ in range(150):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, kind)
        objective = objective_for(kind, rng)
        alloc = random_feasible_allocation(rng, inst)
        index = mine_cohesive_groups(inst, prof)
        efficient = verify_strong_ejr_maximal(index, alloc, prof, objective, inst)
        brute = verify_strong_ejr_bruteforce(inst, prof, alloc, objective)
        assert efficient == brute


def test_implication_chain():
    rng = random.Random(202)
    checked = 0
    for _ in range(150):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, kind)
        objective = objective_for(kind, rng)
        alloc = random_feasible_allocation(rng, inst)
        strong = verify_strong_ejr_bruteforce(inst, prof, alloc, objective)
        ejr = verify_ejr_bruteforce(inst, prof, alloc, objective)
        pjr = verify_pjr_bruteforce(inst, prof, alloc, objective)
        if strong:
            assert ejr
        if ejr:
            assert pjr
        checked += 1
    assert checked == 150


def test_phi_iff_strong_ejr_when_uncapped():
    rng = random.Random(303)
    for _ in range(120):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, kind)
        objective = objective_for(kind, rng)
        alloc = random_feasible_allocation(rng, inst)
        index = mine_cohesive_groups(inst, prof)
        report = strong_ejr_approx(index, alloc, prof, objective, inst)
        verdict = verify_strong_ejr_maximal(index, alloc, prof, objective, inst)
        assert (report.phi_exact == 1) == verdict
        assert report.strong_ejr == verdict
        assert 0.0 <= report.phi <= 1.0


def test_phi_monotone_under_enlargement():
    rng = random.Random(404)
    for _ in range(100):
        inst = random_instance(rng)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, kind)
        objective = objective_for(kind, rng)
        index = mine_cohesive_groups(inst, prof)
        alloc = random_feasible_allocation(rng, inst)
        addable = [
            p for p in range(inst.num_projects)
            if p not in alloc.selected
            and inst.projects[p].cost <= inst.budget - alloc.total_cost
        ]
        if not addable:
            continue
        bigger = make_allocation(inst, set(alloc.selected) | {rng.choice(addable)})
        before = strong_ejr_approx(index, alloc, prof, objective, inst)
        after = strong_ejr_approx(index, bigger, prof, objective, inst)
        assert after.phi_exact >= before.phi_exact


def test_cardinal_scaling_invariance():
    rng = random.Random(505)
    for _ in range(60):
        inst = random_instance(rng)
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, BallotKind.CARDINAL)
        factor = Fraction(rng.randint(1, 5), rng.choice([1, 2]))
        scaled = cardinal_profile(
            [[s * factor for s in ballot] for ballot in prof.cardinal], inst.num_projects
        )
        alloc = random_feasible_allocation(rng, inst)
        index = mine_cohesive_groups(inst, prof)
        scaled_index = mine_cohesive_groups(inst, scaled)
        a = strong_ejr_approx(index, alloc, prof, Objective.CARDINAL, inst)
        b = strong_ejr_approx(scaled_index, alloc, scaled, Objective.CARDINAL, inst)
        assert a.phi_exact == b.phi_exact
        assert verify_strong_ejr_bruteforce(inst, prof, alloc, Objective.CARDINAL) == \
            verify_strong_ejr_bruteforce(inst, scaled, alloc, Objective.CARDINAL)


def test_normalized_welfare():
    inst = make_instance([10, 10], 20)
    prof = approval_profile([{0, 1}], 2)
    best = make_allocation(inst, {0, 1})
    assert normalized_welfare(inst, prof, best, Objective.CARD, 2) == 1.0
    assert normalized_welfare(inst, prof, make_allocation(inst, set()), Objective.CARD, 2) == 0.0
    assert normalized_welfare(inst, prof, make_allocation(inst, {0}), Objective.CARD, 2) == 0.5
    with pytest.raises(InternalInconsistencyError):
        normalized_welfare(inst, prof, best, Objective.CARD, 1)
    with pytest.raises(ValueError):
        normalized_welfare(inst, prof, best, Objective.CARD, 0)
