"""Maximal cohesive-group enumeration via frequent itemset mining.

A group of voters is cohesive for a project set P when every member
supports all of P and the group's proportional share of the budget covers
c(P).  The fraction of voters supporting all of P is exactly the itemset
support of P over the binary ballot matrix, so level-wise Apriori with
minimum support min_p c(p)/b enumerates every candidate P.  Groups are
ordered by descending deservingness gamma = support * b / c(P), ties by
descending cumulative approval score, then lexicographically on P.

This enumeration is rule-independent: it runs once per instance and its
output is reused by every fairness evaluation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .core import BallotKind, Instance, Profile


class OracleGuardError(RuntimeError):
    """Raised when a brute-force oracle is asked to run beyond its size guard."""


@dataclass(frozen=True)
class CohesiveGroup:
    """A maximal cohesive group: project set, its maximal supporter set, and ordering keys.

    ``alpha_floor`` holds, per project of ``projects`` (sorted ascending),
    the minimum score any member assigns to it.  For approval profiles the
    floor is all ones.  Storing it here means satisfaction-ratio
    denominators never re-scan the profile.
    """

    projects: tuple[int, ...]
    members: frozenset[int]
    support: Fraction
    gamma: Fraction
    tiebreak: int
    alpha_floor: tuple[Fraction, ...]

    @property
    def demand(self) -> Fraction:
        """Satisfaction every member is owed: sum of per-project score floors."""
        return sum(self.alpha_floor, Fraction(0))


@dataclass(frozen=True)
class GroupIndex:
    """All maximal cohesive groups of an instance, sorted by (gamma desc, tiebreak desc, P asc)."""

    groups: tuple[CohesiveGroup, ...]
    truncated_at: int | None = None

    @property
    def size(self) -> int:
        return len(self.groups)

    @property
    def is_truncated(self) -> bool:
        return self.truncated_at is not None

    def top(self, sigma: int | None) -> "GroupIndex":
        """Prefix of the sorted sequence, capped at sigma (no-op when sigma covers everything)."""
        if sigma is None or self.size <= sigma:
            return self
        return replace(self, groups=self.groups[:sigma], truncated_at=sigma)


def binarize(profile: Profile) -> np.ndarray:
    """n-by-m 0/1 matrix: 1 iff the voter approves (approval) or scores positively (cardinal)."""
    return profile.support_matrix()


def min_support(instance: Instance) -> Fraction:
    """Mining threshold: cheapest project cost over the budget, clamped to at most 1."""
    cheapest = min(p.cost for p in instance.projects)
    return min(Fraction(cheapest, instance.budget), Fraction(1))


def _column_bitsets(matrix: np.ndarray) -> list[int]:
    """Each project's supporter set packed into a Python int (bit i = voter i)."""
    n, m = matrix.shape
    cols = []
    for p in range(m):
        bits = 0
        for i in np.flatnonzero(matrix[:, p]):
            bits |= 1 << int(i)
        cols.append(bits)
    return cols


def frequent_itemsets(matrix: np.ndarray, minsupp: Fraction) -> list[tuple[frozenset[int], Fraction]]:
    """All itemsets with support >= minsupp, by level-wise Apriori with candidate pruning.

    Support is the exact fraction of rows containing the itemset. Every
    size >= 1 is reported (a single project can already be cohesive).
    """
    if not 0 < minsupp <= 1:
        raise ValueError(f"minimum support must be in (0, 1], got {minsupp}")
    n, m = matrix.shape
    cols = _column_bitsets(matrix)
    threshold = minsupp * n  # compare counts against n * minsupp exactly

    result: list[tuple[frozenset[int], Fraction]] = []
    # level 1
    level: dict[tuple[int, ...], int] = {}
    for p in range(m):
        count = cols[p].bit_count()
        if count >= threshold:
            level[(p,)] = cols[p]
            result.append((frozenset((p,)), Fraction(count, n)))

    k = 2
    while level:
        keys = sorted(level)
        frequent_prev = set(keys)
        next_level: dict[tuple[int, ...], int] = {}
        # join step: combine itemsets sharing the first k-2 items
        for a, b in itertools.combinations(keys, 2):
            if a[:-1] != b[:-1]:
                continue
            candidate = a + (b[-1],)
            # prune: every (k-1)-subset must itself be frequent
            if any(
                candidate[:i] + candidate[i + 1 :] not in frequent_prev
                for i in range(k - 1)
            ):
                continue
            bits = level[a] & level[b]
            count = bits.bit_count()
            if count >= threshold:
                next_level[candidate] = bits
                result.append((frozenset(candidate), Fraction(count, n)))
        level = next_level
        k += 1
    return result


def maximal_group(projects, matrix: np.ndarray) -> frozenset[int]:
    """All voters whose row is 1 on every project of P (the inclusion-maximal cohesive candidates)."""
    projects = tuple(projects)
    if not projects:
        raise ValueError("maximal_group needs a non-empty project set")
    mask = matrix[:, projects[0]].astype(bool)
    for p in projects[1:]:
        mask &= matrix[:, p].astype(bool)
    return frozenset(int(i) for i in np.flatnonzero(mask))


def _build_group(instance: Instance, profile: Profile, projects: tuple[int, ...],
                 members: frozenset[int], counts: np.ndarray) -> CohesiveGroup:
    n = profile.num_ballots
    support = Fraction(len(members), n)
    gamma = support * Fraction(instance.budget, sum(instance.projects[p].cost for p in projects))
    tiebreak = 1
    for p in projects:
        tiebreak *= int(counts[p])
    if profile.kind is BallotKind.APPROVAL:
        alpha_floor = tuple(Fraction(1) for _ in projects)
    else:
        alpha_floor = tuple(
            min(profile.cardinal[i][p] for i in members) for p in projects
        )
    return CohesiveGroup(
        projects=projects,
        members=members,
        support=support,
        gamma=gamma,
        tiebreak=tiebreak,
        alpha_floor=alpha_floor,
    )


def _sorted_index(groups: list[CohesiveGroup]) -> GroupIndex:
    groups.sort(key=lambda g: (-g.gamma, -g.tiebreak, g.projects))
    return GroupIndex(groups=tuple(groups))


def mine_cohesive_groups(instance: Instance, profile: Profile) -> GroupIndex:
    """Enumerate every maximal cohesive group by Apriori mining plus the affordability filter.

    An itemset (P, supp) yields a group exactly when supp * b >= c(P); its
    member set is the maximal supporter set of P.  The returned index may
    be empty, which signals an instance the dataset filter would reject.
    """
    matrix = binarize(profile)
    counts = profile.supporter_counts()
    budget = instance.budget
    groups: list[CohesiveGroup] = []
    for itemset, supp in frequent_itemsets(matrix, min_support(instance)):
        projects = tuple(sorted(itemset))
        if supp * budget < sum(instance.projects[p].cost for p in projects):
            continue
        members = maximal_group(projects, matrix)
        groups.append(_build_group(instance, profile, projects, members, counts))
    return _sorted_index(groups)


def brute_force_cohesive_groups(instance: Instance, profile: Profile, max_projects: int = 20) -> GroupIndex:
    """Oracle for :func:`mine_cohesive_groups`: direct enumeration of all 2^m - 1 project sets."""
    m = instance.num_projects
    if m > max_projects:
        raise OracleGuardError(f"brute-force group enumeration refused for m={m} > {max_projects}")
    matrix = binarize(profile)
    counts = profile.supporter_counts()
    n = profile.num_ballots
    budget = instance.budget
    groups: list[CohesiveGroup] = []
    for size in range(1, m + 1):
        for projects in itertools.combinations(range(m), size):
            members = maximal_group(projects, matrix)
            if not members:
                continue
            if Fraction(len(members), n) * budget < sum(instance.projects[p].cost for p in projects):
                continue
            groups.append(_build_group(instance, profile, projects, members, counts))
    return _sorted_index(groups)


def groups_from_project_sets(instance: Instance, profile: Profile, project_sets) -> GroupIndex:
    """Rebuild a sorted group index from known cohesive project sets (cache loads).

    Members, support and ordering keys are recomputed from the profile;
    only the mining enumeration itself is skipped.
    """
    matrix = binarize(profile)
    counts = profile.supporter_counts()
    groups = []
    for projects in project_set_list(project_sets):
        members = maximal_group(projects, matrix)
        if members:
            groups.append(_build_group(instance, profile, projects, members, counts))
    return _sorted_index(groups)


def project_set_list(project_sets) -> list[tuple[int, ...]]:
    return [tuple(sorted(p)) for p in project_sets]


def has_cohesive_group(instance: Instance, profile: Profile) -> bool:
    """Cheap exact test used by the dataset filter.

    Support shrinks and cost grows as P grows, so some cohesive group
    exists iff some singleton is already cohesive; that needs one pass
    over the per-project supporter counts.
    """
    counts = profile.supporter_counts()
    n = profile.num_ballots
    return any(
        Fraction(int(counts[p.index]), n) * instance.budget >= p.cost
        for p in instance.projects
    )


def is_cohesive(instance: Instance, profile: Profile, projects, members) -> bool:
    """Definition check (used by tests): all members support all of P and the share covers c(P)."""
    projects = tuple(projects)
    members = frozenset(members)
    if not projects or not members:
        return False
    for i in members:
        for p in projects:
            if profile.score(i, p) <= 0:
                return False
    share = Fraction(len(members), profile.num_ballots) * instance.budget
    return share >= sum(instance.projects[p].cost for p in projects)
