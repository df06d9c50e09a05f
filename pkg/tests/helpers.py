"""Seeded random generators shared across the test suite."""

from __future__ import annotations

import random
from fractions import Fraction

from pbfair.core import (
    BallotKind,
    Instance,
    Objective,
    Profile,
    approval_profile,
    cardinal_profile,
    make_allocation,
    make_instance,
)

# small denominators keep integer rescaling cheap in the brute-force oracles
SCORE_DENOMS = (1, 2, 4)


def random_instance(rng: random.Random, min_m=2, max_m=6, max_cost=60) -> Instance:
    m = rng.randint(min_m, max_m)
    costs = [rng.randint(1, max_cost) for _ in range(m)]
    total = sum(costs)
    budget = rng.randint(min(costs), max(min(costs), total - 1))
    return make_instance(costs, budget)


def random_approval(rng: random.Random, n: int, m: int, density=0.5) -> Profile:
    ballots = [
        frozenset(p for p in range(m) if rng.random() < density)
        for _ in range(n)
    ]
    return approval_profile(ballots, m)


def random_cardinal(rng: random.Random, n: int, m: int, zero_chance=0.4) -> Profile:
    ballots = []
    for _ in range(n):
        row = []
        for _ in range(m):
            if rng.random() < zero_chance:
                row.append(Fraction(0))
            else:
                row.append(Fraction(rng.randint(1, 8), rng.choice(SCORE_DENOMS)))
        ballots.append(row)
    return cardinal_profile(ballots, m)


def random_profile(rng: random.Random, n: int, m: int, kind: BallotKind) -> Profile:
    if kind is BallotKind.APPROVAL:
        return random_approval(rng, n, m)
    return random_cardinal(rng, n, m)


def random_feasible_allocation(rng: random.Random, instance: Instance):
    order = list(range(instance.num_projects))
    rng.shuffle(order)
    remaining = instance.budget
    chosen = []
    for p in order:
        if instance.projects[p].cost <= remaining and rng.random() < 0.6:
            chosen.append(p)
            remaining -= instance.projects[p].cost
    return make_allocation(instance, chosen)


def random_supported_pair(rng: random.Random, min_m=2, max_m=6, max_n=8, max_cost=60,
                          kind: BallotKind = BallotKind.APPROVAL):
    """Instance/profile where every project has at least one supporter and the
    instance is not fully funded (the shape the dataset filter guarantees)."""
    for _ in range(200):
        instance = random_instance(rng, min_m=min_m, max_m=max_m, max_cost=max_cost)
        n = rng.randint(2, max_n)
        profile = random_profile(rng, n, instance.num_projects, kind)
        if not profile.unsupported_projects() and not instance.is_fully_funded():
            return instance, profile
    raise AssertionError("generator failed to produce a supported pair")


def objective_for(kind: BallotKind, rng: random.Random) -> Objective:
    if kind is BallotKind.CARDINAL:
        return Objective.CARDINAL
    return rng.choice([Objective.CARD, Objective.COST])
