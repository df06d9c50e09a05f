"""Domain model for participatory budgeting: instances, ballots, allocations, welfare.

All money amounts (project costs, budgets) are integers in minor currency
units, and all cardinal scores are exact :class:`fractions.Fraction` values.
Welfare and satisfaction computations stay in exact arithmetic; floating
point appears only in derived metrics and DSL scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

#: Minor currency units per major unit (two decimal places everywhere).
MINOR_UNITS_PER_MAJOR = 100


class BallotKind(Enum):
    APPROVAL = "approval"
    CARDINAL = "cardinal"


class Objective(Enum):
    """Welfare objective: approval satisfaction (by count or by cost) or cardinal utility."""

    CARD = "card"  # approval ballots, satisfaction = number of approved selected projects
    COST = "cost"  # approval ballots, satisfaction = cost of approved selected projects
    CARDINAL = "cardinal"  # cardinal ballots, utility = sum of scores of selected projects

    @property
    def ballot_kind(self) -> BallotKind:
        if self is Objective.CARDINAL:
            return BallotKind.CARDINAL
        return BallotKind.APPROVAL


@dataclass(frozen=True)
class Project:
    """A single fundable project.

    ``index`` is the 0-based position within its instance and doubles as the
    lexicographic tie-break order used by all resolute rules.
    """

    id: str
    index: int
    cost: int

    def __post_init__(self):
        if self.cost <= 0:
            raise ValueError(f"project {self.id!r}: cost must be positive, got {self.cost}")


@dataclass(frozen=True)
class Instance:
    """A PB instance: an ordered list of projects and a budget (minor units)."""

    projects: tuple[Project, ...]
    budget: int

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError(f"budget must be positive, got {self.budget}")
        if not self.projects:
            raise ValueError("instance needs at least one project")
        for i, p in enumerate(self.projects):
            if p.index != i:
                raise ValueError(f"project {p.id!r} has index {p.index}, expected {i}")

    @property
    def num_projects(self) -> int:
        return len(self.projects)

    def cost(self, index: int) -> int:
        return self.projects[index].cost

    @property
    def total_project_cost(self) -> int:
        return sum(p.cost for p in self.projects)

    def is_fully_funded(self) -> bool:
        """True when the whole project set fits the budget (excluded from experiments)."""
        return self.total_project_cost <= self.budget


def make_instance(costs: Sequence[int], budget: int, ids: Sequence[str] | None = None) -> Instance:
    """Convenience constructor from raw costs; ids default to ``p0``, ``p1``, ..."""
    if ids is None:
        ids = [f"p{i}" for i in range(len(costs))]
    projects = tuple(Project(id=str(pid), index=i, cost=int(c)) for i, (pid, c) in enumerate(zip(ids, costs)))
    return Instance(projects=projects, budget=int(budget))


@dataclass(frozen=True, eq=False)
class Profile:
    """A profile of ``n`` ballots over the instance's ``m`` projects.

    Approval ballots are frozensets of approved project indices; cardinal
    ballots are dense tuples of non-negative Fractions of length ``m``.
    A binary support matrix (1 iff approved / positively scored) is built
    lazily and cached, since columnar counting is a hot path for mining.
    """

    kind: BallotKind
    approval: tuple[frozenset[int], ...] = ()
    cardinal: tuple[tuple[Fraction, ...], ...] = ()
    num_projects: int = 0
    _matrix_cache: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.kind is BallotKind.APPROVAL:
            if not self.approval:
                raise ValueError("approval profile needs at least one ballot")
            for ballot in self.approval:
                for idx in ballot:
                    if not 0 <= idx < self.num_projects:
                        raise ValueError(f"ballot references project index {idx} out of range")
        else:
            if not self.cardinal:
                raise ValueError("cardinal profile needs at least one ballot")
            for ballot in self.cardinal:
                if len(ballot) != self.num_projects:
                    raise ValueError("cardinal ballot length does not match project count")
                if any(s < 0 for s in ballot):
                    raise ValueError("cardinal scores must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, Profile):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.approval == other.approval
            and self.cardinal == other.cardinal
            and self.num_projects == other.num_projects
        )

    __hash__ = None

    @property
    def num_ballots(self) -> int:
        if self.kind is BallotKind.APPROVAL:
            return len(self.approval)
        return len(self.cardinal)

    def score(self, voter: int, project: int) -> Fraction:
        """Exact score the voter assigns to the project (0/1 for approval)."""
        if self.kind is BallotKind.APPROVAL:
            return Fraction(1 if project in self.approval[voter] else 0)
        return Fraction(self.cardinal[voter][project])

    def support_matrix(self) -> np.ndarray:
        """n-by-m uint8 matrix; entry 1 iff the voter approves / positively scores the project."""
        if not self._matrix_cache:
            n, m = self.num_ballots, self.num_projects
            mat = np.zeros((n, m), dtype=np.uint8)
            if self.kind is BallotKind.APPROVAL:
                for i, ballot in enumerate(self.approval):
                    for p in ballot:
                        mat[i, p] = 1
            else:
                for i, ballot in enumerate(self.cardinal):
                    for p, s in enumerate(ballot):
                        if s > 0:
                            mat[i, p] = 1
            mat.setflags(write=False)
            self._matrix_cache.append(mat)
        return self._matrix_cache[0]

    def supporter_counts(self) -> np.ndarray:
        """Per-project count of voters approving / assigning a positive score."""
        return self.support_matrix().sum(axis=0, dtype=np.int64)

    def unsupported_projects(self) -> list[int]:
        """Indices of projects no voter supports (flagged by the dataset filter)."""
        counts = self.supporter_counts()
        return [int(p) for p in np.flatnonzero(counts == 0)]


def approval_profile(ballots: Iterable[Iterable[int]], num_projects: int) -> Profile:
    return Profile(
        kind=BallotKind.APPROVAL,
        approval=tuple(frozenset(b) for b in ballots),
        num_projects=num_projects,
    )


def cardinal_profile(ballots: Iterable[Iterable], num_projects: int) -> Profile:
    return Profile(
        kind=BallotKind.CARDINAL,
        cardinal=tuple(tuple(Fraction(s) for s in b) for b in ballots),
        num_projects=num_projects,
    )


@dataclass(frozen=True)
class Allocation:
    """A feasible budget allocation: selected project indices plus their exact total cost."""

    selected: frozenset[int]
    total_cost: int

    def __contains__(self, index: int) -> bool:
        return index in self.selected

    def sorted_indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.selected))


def total_cost(selection: Iterable[int], instance: Instance) -> int:
    """Exact total cost of a set of project indices; 0 for the empty set."""
    total = 0
    for idx in selection:
        if not 0 <= idx < instance.num_projects:
            raise IndexError(f"project index {idx} out of range")
        total += instance.projects[idx].cost
    return total


def make_allocation(instance: Instance, selection: Iterable[int]) -> Allocation:
    """Build an allocation, enforcing feasibility against the instance's budget."""
    selected = frozenset(selection)
    cost = total_cost(selected, instance)
    if cost > instance.budget:
        raise ValueError(f"allocation cost {cost} exceeds budget {instance.budget}")
    return Allocation(selected=selected, total_cost=cost)


def satisfaction(objective: Objective, ballot: frozenset[int], selection: frozenset[int], instance: Instance):
    """Approval satisfaction of one ballot for a selection.

    Applies the satisfaction function to the intersection of the approved
    set with ``selection``: a count for :attr:`Objective.CARD`, an exact
    cost for :attr:`Objective.COST`.
    """
    if objective is Objective.CARDINAL:
        raise ValueError("satisfaction is defined for approval objectives only")
    approved_selected = ballot & selection
    if objective is Objective.CARD:
        return len(approved_selected)
    return total_cost(approved_selected, instance)


def utilitarian_welfare(instance: Instance, profile: Profile, allocation: Allocation, objective: Objective):
    """Total welfare of an allocation: summed ballot scores (cardinal) or summed satisfaction (approval).

    Exact arithmetic: an int for approval objectives, a Fraction (or int)
    for cardinal profiles.
    """
    if objective is Objective.CARDINAL:
        if profile.kind is not BallotKind.CARDINAL:
            raise ValueError("cardinal objective requires a cardinal profile")
        total = Fraction(0)
        for ballot in profile.cardinal:
            for p in allocation.selected:
                total += ballot[p]
        return total
    if profile.kind is not BallotKind.APPROVAL:
        raise ValueError("approval objective requires an approval profile")
    return sum(satisfaction(objective, ballot, allocation.selected, instance) for ballot in profile.approval)
