"""Acceptance suite: one test per criterion, each printing a PASS line.

Criterion 10 (corpus reproduction) is data-dependent: it runs only when
PABULIB_DIR points at the real corpus and is skipped otherwise.
"""

import json
import os
import random
import time
from fractions import Fraction
from pathlib import Path
from types import SimpleNamespace

import pytest

from pbfair.cohesion import brute_force_cohesive_groups, mine_cohesive_groups
from pbfair.core import (
    BallotKind,
    Objective,
    approval_profile,
    make_allocation,
    make_instance,
    utilitarian_welfare,
)
from pbfair.dsl import DslEvalError, evaluate_rule, parse_rule
from pbfair.evolve import EngineConfig, MockChatClient, build_eval_context, run_evolution
from pbfair.evolve.fitness import penalized_term
from pbfair.fairness import (
    strong_ejr_approx,
    verify_strong_ejr_bruteforce,
    verify_strong_ejr_maximal,
)
from pbfair.rules import (
    complete_add1,
    complete_with,
    greed_util,
    greedy_by_scores,
    is_exhaustive,
    max_util,
    mes,
    maximin_support,
    run_mes,
    seq_phragmen,
)

from helpers import (
    objective_for,
    random_feasible_allocation,
    random_instance,
    random_profile,
    random_supported_pair,
)
from test_dsl import (
    LEARNED_RULE_CARD,
    LEARNED_RULE_COST,
    random_source,
    straight_line_card_rule,
    straight_line_cost_rule,
)
from test_evolve import make_factory, single_group_context
from test_rules import exhaustive_max_util


def report_pass(number, message):
    print(f"ACCEPTANCE {number}: PASS - {message}")


def test_criterion_01_maximal_equals_bruteforce():
    rng = random.Random(20240901)
    started = time.perf_counter()
    agreements = 0
    for i in range(500):
        inst = random_instance(rng, max_m=6)
        kind = BallotKind.APPROVAL if i % 2 == 0 else BallotKind.CARDINAL
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, kind)
        objective = objective_for(kind, rng)
        alloc = random_feasible_allocation(rng, inst)
        index = mine_cohesive_groups(inst, prof)
        efficient = verify_strong_ejr_maximal(index, alloc, prof, objective, inst)
        brute = verify_strong_ejr_bruteforce(inst, prof, alloc, objective)
        assert efficient == brute, f"disagreement on case {i}"
        agreements += 1
    elapsed = time.perf_counter() - started
    assert agreements == 500
    assert elapsed < 60, f"took {elapsed:.1f}s"
    report_pass(1, f"500/500 maximal-vs-bruteforce agreements in {elapsed:.1f}s")


def test_criterion_02_miner_equals_bruteforce():
    rng = random.Random(20240902)
    for i in range(200):
        inst = random_instance(rng, max_m=6)
        kind = BallotKind.APPROVAL if i % 2 == 0 else BallotKind.CARDINAL
        prof = random_profile(rng, rng.randint(1, 8), inst.num_projects, kind)
        mined = mine_cohesive_groups(inst, prof)
        brute = brute_force_cohesive_groups(inst, prof)
        assert mined.groups == brute.groups, f"divergence on case {i}"
    report_pass(2, "200/200 instances: identical group multiset and sort order")


def test_criterion_03_exact_optimizer():
    rng = random.Random(20240903)
    cases = 0
    for i in range(200):
        kind = BallotKind.APPROVAL if i % 2 == 0 else BallotKind.CARDINAL
        inst, prof = random_supported_pair(
            rng, min_m=2, max_m=15 if i % 10 == 0 else 10, max_n=6, kind=kind
        )
        objectives = (
            (Objective.CARDINAL,) if kind is BallotKind.CARDINAL
            else (Objective.CARD, Objective.COST)
        )
        for objective in objectives:
            alloc = max_util(inst, prof, objective)
            best_value, best_tuple = exhaustive_max_util(inst, prof, objective)
            assert alloc.sorted_indices() == best_tuple
            cases += 1
    report_pass(3, f"{cases} optimizer runs match exhaustive welfare and tie-broken set")


def test_criterion_04_mes_accounting_and_completions():
    # the documented hand trace
    inst = make_instance([100, 40], 100, ids=["px", "py"])
    prof = approval_profile([{0, 1}, {0, 1}, {0}, {0}], 2)
    selected, ledger = run_mes(inst, prof, Objective.CARD)
    assert selected == {1}
    assert ledger.balances == [Fraction(5), Fraction(5), Fraction(25), Fraction(25)]

    rng = random.Random(20240904)
    for i in range(200):
        kind = BallotKind.APPROVAL if i % 2 == 0 else BallotKind.CARDINAL
        inst, prof = random_supported_pair(rng, kind=kind)
        objective = objective_for(kind, rng)
        selected, ledger = run_mes(inst, prof, objective)
        assert all(balance >= 0 for balance in ledger.balances)
        paid = {}
        for _, p, amount in ledger.payments:
            paid[p] = paid.get(p, Fraction(0)) + amount
        assert set(paid) == set(selected)
        assert all(paid[p] == inst.projects[p].cost for p in selected)
        add1 = complete_add1(inst, prof, objective)
        add1u = complete_with(add1, greed_util, inst, prof, objective)
        add1um = complete_with(add1, max_util, inst, prof, objective)
        w = lambda a: utilitarian_welfare(inst, prof, a, objective)
        assert w(add1) <= w(add1u) <= w(add1um)
        assert is_exhaustive(inst, add1u.selected)
        assert is_exhaustive(inst, add1um.selected)
    report_pass(4, "hand trace reproduced; 200 instances conserve payments; completion chain holds")


def test_criterion_05_phi_properties():
    rng = random.Random(20240905)
    augmentations = 0
    while augmentations < 1000:
        inst = random_instance(rng, max_m=6)
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        prof = random_profile(rng, rng.randint(2, 8), inst.num_projects, kind)
        objective = objective_for(kind, rng)
        index = mine_cohesive_groups(inst, prof)
        alloc = random_feasible_allocation(rng, inst)
        report = strong_ejr_approx(index, alloc, prof, objective, inst)
        assert 0.0 <= report.phi <= 1.0
        verdict = verify_strong_ejr_maximal(index, alloc, prof, objective, inst)
        assert (report.phi_exact == 1) == verdict
        capped = strong_ejr_approx(index, alloc, prof, objective, inst,
                                   sigma=index.size + rng.randint(0, 3))
        assert capped.phi == report.phi
        addable = [
            p for p in range(inst.num_projects)
            if p not in alloc.selected
            and inst.projects[p].cost <= inst.budget - alloc.total_cost
        ]
        if not addable:
            continue
        bigger = make_allocation(inst, set(alloc.selected) | {rng.choice(addable)})
        after = strong_ejr_approx(index, bigger, prof, objective, inst)
        assert after.phi_exact >= report.phi_exact
        augmentations += 1
    report_pass(5, "phi in [0,1]; phi=1 iff Strong-EJR; 1000 augmentations monotone; truncation consistent")


def _timed_phi(index, alloc, prof, inst, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        strong_ejr_approx(index, alloc, prof, Objective.CARD, inst)
        best = min(best, time.perf_counter() - t0)
    return best


def test_criterion_06_linear_scaling_in_voters():
    rng = random.Random(20240906)
    m = 12
    costs = [rng.randint(10, 50) for _ in range(m)]
    budget = sum(costs) // 2
    inst = make_instance(costs, budget)
    ballots = [
        frozenset(p for p in range(m) if rng.random() < 0.35) or frozenset({rng.randrange(m)})
        for _ in range(1000)
    ]
    small = approval_profile(ballots, m)
    large = approval_profile(ballots * 2, m)  # duplication preserves the group structure
    index_small = mine_cohesive_groups(inst, small)
    index_large = mine_cohesive_groups(inst, large)
    assert [g.projects for g in index_small.groups] == [g.projects for g in index_large.groups]
    alloc = greed_util(inst, small, Objective.CARD)
    _timed_phi(index_small, alloc, small, inst, repeats=1)  # warm-up
    t_small = _timed_phi(index_small, alloc, small, inst)
    t_large = _timed_phi(index_large, alloc, large, inst)
    ratio = t_large / t_small
    assert ratio <= 3.0, f"doubling n scaled time by {ratio:.2f}"
    report_pass(6, f"n: 1000 -> 2000 scaled phi time by {ratio:.2f} (<= 3) over "
                   f"{index_small.size} groups")


def test_criterion_07_dsl_fidelity():
    import numpy as np

    rng = random.Random(20240907)
    for _ in range(100):
        kind = rng.choice([BallotKind.APPROVAL, BallotKind.CARDINAL])
        inst, prof = random_supported_pair(rng, max_m=8, kind=kind)
        got = evaluate_rule(parse_rule(LEARNED_RULE_COST), inst, prof)
        np.testing.assert_allclose(got, straight_line_cost_rule(inst, prof), atol=1e-9)
        got = evaluate_rule(parse_rule(LEARNED_RULE_CARD), inst, prof)
        np.testing.assert_allclose(got, straight_line_card_rule(inst, prof), atol=1e-9)

    inst, prof = random_supported_pair(rng, max_m=8, kind=BallotKind.APPROVAL)
    checked = 0
    while checked < 100:
        source = f"({random_source(rng)}) + 0 * cost"
        scale = 2.0 ** rng.randint(-3, 8)
        try:
            base = greedy_by_scores(inst, evaluate_rule(parse_rule(source), inst, prof))
            scaled = greedy_by_scores(
                inst, evaluate_rule(parse_rule(f"{scale!r} * ({source})"), inst, prof)
            )
        except DslEvalError:
            continue
        assert base == scaled
        checked += 1
    report_pass(7, "both stored rules match straight-line oracles at 1e-9; "
                   "100 random expressions scale-invariant")


def test_criterion_08_engine_behavior():
    ctx = single_group_context()
    config = EngineConfig(population_size=4, max_populations=20, epsilon=0.9,
                          seed=99, top_l=3)

    def run_once():
        return run_evolution(config, ctx, MockChatClient(factory=make_factory(better_at=20)))

    result_a, result_b = run_once(), run_once()
    assert result_a.event_log_text() == result_b.event_log_text()

    best_by_gen = {e["generation"]: e["best"] for e in result_a.events
                   if e["event"] == "generation"}
    series = [best_by_gen[g] for g in sorted(best_by_gen)]
    assert len(series) == 20
    assert all(b >= a for a, b in zip(series, series[1:]))
    assert series[3] == pytest.approx(0.75) and series[4] == pytest.approx(1.0)
    for event in result_a.events:
        if "strategies" in event:
            assert len(event["strategies"]) <= 5

    # forced stagnation with no improvement: exactly one refinement in 4 generations
    short = EngineConfig(population_size=4, max_populations=4, epsilon=0.9, seed=99, top_l=3)
    stagnant = run_evolution(short, ctx, MockChatClient(factory=make_factory()))
    refinements = [e for e in stagnant.events if e["event"] == "refinement"]
    assert len(refinements) == 1 and refinements[0]["generation"] == 3
    report_pass(8, "byte-identical logs; monotone best over 20 generations; "
                   "step at generation 5; exactly one refinement under stagnation")


def test_criterion_09_fitness_algebra():
    assert penalized_term(0.8, 0.95, 0.9) == pytest.approx(0.8)
    assert penalized_term(0.8, 0.85, 0.9) == pytest.approx(-0.2)
    mixed = (penalized_term(0.9, 0.95, 0.9) + penalized_term(0.7, 0.85, 0.9)) / 2
    assert mixed == pytest.approx(0.3)
    report_pass(9, "penalty algebra unit cases: 0.8, -0.2, 0.3")


TABLE_TARGETS = {  # approval ID set, cost satisfaction: (mean welfare ratio, mean phi)
    "greedutil": (0.978, 0.750),
    "seqphrag": (0.710, 0.955),
    "mes_cost": (0.524, 0.831),
}


@pytest.mark.skipif("PABULIB_DIR" not in os.environ,
                    reason="corpus reproduction needs PABULIB_DIR with the real files; "
                           "not a CI gate")
def test_criterion_10_table_reproduction():
    from pbfair.data import assign_split, filter_dataset, parse_pabulib_file, Role
    from pbfair.fairness import normalized_welfare

    root = Path(os.environ["PABULIB_DIR"])
    entries = filter_dataset(
        parse_pabulib_file(path) for path in sorted(root.glob("**/*.pb"))
    )
    id_set = [e for e in entries
              if e.profile.kind is BallotKind.APPROVAL and assign_split(e) is Role.TEST_ID]
    assert id_set, "no ID-split approval instances found"
    rules = {
        "greedutil": greed_util,
        "seqphrag": lambda i, p, o: seq_phragmen(i, p),
        "mes_cost": lambda i, p, o: mes(i, p, Objective.COST),
    }
    sums = {name: [0.0, 0.0] for name in rules}
    for entry in id_set:
        index = mine_cohesive_groups(entry.instance, entry.profile)
        optimum = utilitarian_welfare(
            entry.instance, entry.profile,
            max_util(entry.instance, entry.profile, Objective.COST), Objective.COST,
        )
        for name, fn in rules.items():
            alloc = fn(entry.instance, entry.profile, Objective.COST)
            sums[name][0] += normalized_welfare(entry.instance, entry.profile, alloc,
                                                Objective.COST, optimum)
            sums[name][1] += strong_ejr_approx(index, alloc, entry.profile, Objective.COST,
                                               entry.instance, sigma=100).phi
    for name, (target_w, target_phi) in TABLE_TARGETS.items():
        mean_w = sums[name][0] / len(id_set)
        mean_phi = sums[name][1] / len(id_set)
        assert mean_w == pytest.approx(target_w, abs=0.01)
        assert mean_phi == pytest.approx(target_phi, abs=0.01)
    report_pass(10, f"table aggregates reproduced on {len(id_set)} ID instances")
