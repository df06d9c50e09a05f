"""Synthetic PB instances from a two-dimensional Euclidean preference model.

Voters and projects are placed i.i.d. uniformly on the unit square and
each voter approves their k nearest projects (k drawn per voter).  The
cumulative variant spreads one point over the approved set proportionally
to inverse distance.  The external setup this imitates does not publish
its ballot parameters, so the k-nearest model here is a documented
stand-in; see the README.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from ..core import BallotKind, Instance, Profile, Project
from .pabulib import DatasetEntry, format_money


@dataclass(frozen=True)
class SynthConfig:
    """Ranges are inclusive; the seed fully determines the generated entry."""

    voters: tuple[int, int] = (100, 1000)
    projects: tuple[int, int] = (10, 25)
    cost_range: tuple[int, int] = (100_00, 10_000_00)  # minor units
    budget_fraction: tuple[float, float] = (0.2, 0.8)
    nearest: tuple[int, int] = (3, 8)
    cumulative: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("voters", "projects", "cost_range", "nearest"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"empty or invalid {name} range ({lo}, {hi})")
        if self.nearest[1] > self.projects[0]:
            raise ValueError(
                f"nearest-neighbour count can reach {self.nearest[1]} "
                f"but only {self.projects[0]} projects are guaranteed"
            )
        lo, hi = self.budget_fraction
        if not 0 < lo <= hi:
            raise ValueError(f"invalid budget fraction range ({lo}, {hi})")


def generate_synthetic(config: SynthConfig) -> DatasetEntry:
    """One deterministic synthetic entry per (config, seed)."""
    rng = random.Random(config.seed)
    n = rng.randint(*config.voters)
    m = rng.randint(*config.projects)
    voter_xy = [(rng.random(), rng.random()) for _ in range(n)]
    project_xy = [(rng.random(), rng.random()) for _ in range(m)]
    costs = [rng.randint(*config.cost_range) for _ in range(m)]
    fraction = rng.uniform(*config.budget_fraction)
    budget = max(1, int(fraction * sum(costs)))

    approvals: list[list[int]] = []
    distances: list[list[float]] = []
    for vx, vy in voter_xy:
        dist = [(vx - px) ** 2 + (vy - py) ** 2 for px, py in project_xy]
        order = sorted(range(m), key=lambda p: (dist[p], p))
        k = rng.randint(*config.nearest)
        approvals.append(order[:k])
        distances.append(dist)

    projects = tuple(Project(id=f"p{p + 1}", index=p, cost=costs[p]) for p in range(m))
    instance = Instance(projects=projects, budget=budget)
    if config.cumulative:
        ballots = []
        for approved, dist in zip(approvals, distances):
            weights = [Fraction(1.0 / max(dist[p], 1e-12)) for p in approved]
            total = sum(weights, Fraction(0))
            scores = [Fraction(0)] * m
            for p, w in zip(approved, weights):
                scores[p] = w / total
            ballots.append(tuple(scores))
        profile = Profile(kind=BallotKind.CARDINAL, cardinal=tuple(ballots), num_projects=m)
        vote_type = "cumulative"
    else:
        profile = Profile(
            kind=BallotKind.APPROVAL,
            approval=tuple(frozenset(a) for a in approvals),
            num_projects=m,
        )
        vote_type = "approval"

    metadata = {
        "description": f"synthetic Euclidean instance (seed {config.seed})",
        "country": "SYN",
        "unit": "synthetic",
        "vote_type": vote_type,
        "budget": format_money(budget),
        "num_projects": str(m),
        "num_votes": str(n),
    }
    return DatasetEntry(instance=instance, profile=profile, metadata=metadata)
