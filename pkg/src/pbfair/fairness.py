"""Strong-EJR verification and approximation, plus brute-force fairness oracles.

The efficient verifier inspects only the maximal cohesive group per project
set (enumerating subgroups adds nothing once the satisfaction demand is
fixed per project set, see below).  The brute-force verifiers enumerate
every (project set, voter subset) pair directly over bitmask encodings and
exist solely to cross-check the efficient path on small instances.

Satisfaction demand convention: for cardinal ballots the demand of a
project set P is the sum over P of the lowest score any supporter of all
of P assigns, i.e. the score floor of the *maximal* supporter set.  Scoring
demands against each subgroup's own floor instead would make the maximal
check and the exhaustive check genuinely disagree (a smaller subgroup has
a higher floor), so one fixed per-P demand is used everywhere: the
Strong-EJR, EJR and PJR checks and the approximation ratios all divide by
the same quantity.  For approval ballots the two readings coincide.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import lcm

from .cohesion import CohesiveGroup, GroupIndex, OracleGuardError
from .core import Allocation, BallotKind, Instance, Objective, Profile, total_cost

BRUTE_FORCE_MAX_VOTERS = 12
BRUTE_FORCE_MAX_PROJECTS = 6


class InternalInconsistencyError(RuntimeError):
    """A computed optimum turned out worse than an actual allocation (optimizer bug)."""


@dataclass(frozen=True)
class FairnessReport:
    """Strong-EJR approximation of one allocation against a group index.

    ``phi`` is the mean over considered groups of the worst member's
    clamped satisfaction ratio; ``phi_exact`` is the same value before the
    final float conversion.  ``strong_ejr`` records whether every
    considered group met its demand outright.  ``vacuous`` marks instances
    without any cohesive group, where the metric defaults to 1.
    """

    phi: float
    phi_exact: Fraction
    per_group: tuple[tuple[tuple[int, ...], float], ...]
    strong_ejr: bool
    groups_considered: int
    vacuous: bool = False


def _member_satisfaction(profile: Profile, objective: Objective, instance: Instance,
                         voter: int, selection: frozenset[int]) -> Fraction:
    if objective is Objective.CARDINAL:
        return sum((profile.cardinal[voter][p] for p in selection), Fraction(0))
    approved_selected = profile.approval[voter] & selection
    if objective is Objective.CARD:
        return Fraction(len(approved_selected))
    return Fraction(total_cost(approved_selected, instance))


def _group_demand(group: CohesiveGroup, objective: Objective, instance: Instance) -> Fraction:
    if objective is Objective.CARD:
        return Fraction(len(group.projects))
    if objective is Objective.COST:
        return Fraction(sum(instance.projects[p].cost for p in group.projects))
    return group.demand


def group_ratio(group: CohesiveGroup, allocation: Allocation, profile: Profile,
                objective: Objective, instance: Instance) -> Fraction:
    """Worst member's clamped satisfaction ratio, exactly.

    Exactly 1 iff every member's satisfaction under the allocation reaches
    the group's demand; clamping each member at 1 before taking the
    minimum makes that equivalence hold.
    """
    demand = _group_demand(group, objective, instance)
    worst = Fraction(1)
    for voter in group.members:
        got = _member_satisfaction(profile, objective, instance, voter, allocation.selected)
        ratio = min(Fraction(1), got / demand)
        if ratio < worst:
            worst = ratio
            if worst == 0:
                break
    return worst


def strong_ejr_approx(index: GroupIndex, allocation: Allocation, profile: Profile,
                      objective: Objective, instance: Instance,
                      sigma: int | None = None) -> FairnessReport:
    """Mean worst-member ratio over the top-sigma groups in deservingness order.

    Ratios stay exact rationals until the final averaging step.  An empty
    index yields 1 with the ``vacuous`` flag set, keeping the metric total
    for ad-hoc use on unfiltered instances.
    """
    groups = index.groups if sigma is None else index.groups[: sigma]
    if not groups:
        return FairnessReport(
            phi=1.0, phi_exact=Fraction(1), per_group=(), strong_ejr=True,
            groups_considered=0, vacuous=True,
        )
    ratios = [
        (g.projects, group_ratio(g, allocation, profile, objective, instance))
        for g in groups
    ]
    total = sum((r for _, r in ratios), Fraction(0))
    phi_exact = total / len(ratios)
    return FairnessReport(
        phi=float(phi_exact),
        phi_exact=phi_exact,
        per_group=tuple((projects, float(r)) for projects, r in ratios),
        strong_ejr=all(r == 1 for _, r in ratios),
        groups_considered=len(ratios),
    )


def verify_strong_ejr_maximal(index: GroupIndex, allocation: Allocation, profile: Profile,
                              objective: Objective, instance: Instance) -> bool:
    """Efficient Strong-EJR verdict: every maximal group's worst member meets the demand.

    Refuses truncated indexes; verification must see every group.
    """
    if index.is_truncated:
        raise ValueError("Strong-EJR verification requires an untruncated group index")
    return all(
        group_ratio(g, allocation, profile, objective, instance) == 1
        for g in index.groups
    )


# ---------------------------------------------------------------------------
# Brute-force oracles.  Everything below works on integer-scaled scores and
# bitmask-encoded voter sets so that full enumeration over 2^m project sets
# times 2^n voter subsets stays affordable within the size guard.
# ---------------------------------------------------------------------------


def _check_guard(instance: Instance, profile: Profile) -> None:
    n, m = profile.num_ballots, instance.num_projects
    if n > BRUTE_FORCE_MAX_VOTERS or m > BRUTE_FORCE_MAX_PROJECTS:
        raise OracleGuardError(
            f"brute-force verification refused for n={n}, m={m} "
            f"(guard: n <= {BRUTE_FORCE_MAX_VOTERS}, m <= {BRUTE_FORCE_MAX_PROJECTS})"
        )


def _scaled_scores(profile: Profile) -> tuple[list[list[int]], int]:
    """Integer score table (row per voter) and the common denominator it was scaled by."""
    n, m = profile.num_ballots, profile.num_projects
    if profile.kind is BallotKind.APPROVAL:
        return [[1 if p in profile.approval[i] else 0 for p in range(m)] for i in range(n)], 1
    denom = lcm(*(s.denominator for ballot in profile.cardinal for s in ballot))
    table = [
        [int(s * denom) for s in ballot]
        for ballot in profile.cardinal
    ]
    return table, denom


def _pi_satisfaction_int(profile: Profile, objective: Objective, instance: Instance,
                         allocation: Allocation, scores: list[list[int]]) -> list[int]:
    """Per-voter satisfaction of the allocation on the same integer scale as ``scores``."""
    pi = sorted(allocation.selected)
    out = []
    for i in range(profile.num_ballots):
        if objective is Objective.CARD:
            out.append(sum(scores[i][p] for p in pi))
        elif objective is Objective.COST:
            out.append(sum(instance.projects[p].cost for p in pi if scores[i][p]))
        else:
            out.append(sum(scores[i][p] for p in pi))
    return out


def _demand_int(projects: tuple[int, ...], supporters: list[int], scores: list[list[int]],
                objective: Objective, instance: Instance) -> int:
    if objective is Objective.CARD:
        return len(projects)
    if objective is Objective.COST:
        return sum(instance.projects[p].cost for p in projects)
    return sum(min(scores[i][p] for i in supporters) for p in projects)


def _cohesive_candidates(instance: Instance, profile: Profile, scores: list[list[int]]):
    """Yield (projects, supporter list, minimal cohesive size) for every P with a cohesive group."""
    n, m = profile.num_ballots, instance.num_projects
    budget = instance.budget
    for size in range(1, m + 1):
        for projects in itertools.combinations(range(m), size):
            supporters = [i for i in range(n) if all(scores[i][p] > 0 for p in projects)]
            if not supporters:
                continue
            cost = sum(instance.projects[p].cost for p in projects)
            # |N| / n * b >= c(P)  <=>  |N| >= ceil(n * c(P) / b)
            min_size = -(-n * cost // budget)
            if len(supporters) < min_size:
                continue
            yield projects, supporters, min_size


def verify_strong_ejr_bruteforce(instance: Instance, profile: Profile, allocation: Allocation,
                                 objective: Objective) -> bool:
    """Exhaustive Strong-EJR check over all project sets and all cohesive voter subsets.

    Every cohesive subset for P lies inside P's supporter set and shares
    P's demand, so the subset sweep reduces to checking each supporter
    once whenever any cohesive subset exists at all.
    """
    _check_guard(instance, profile)
    scores, _ = _scaled_scores(profile)
    sat_pi = _pi_satisfaction_int(profile, objective, instance, allocation, scores)
    for projects, supporters, _min_size in _cohesive_candidates(instance, profile, scores):
        demand = _demand_int(projects, supporters, scores, objective, instance)
        if any(sat_pi[i] < demand for i in supporters):
            return False
    return True


def verify_ejr_bruteforce(instance: Instance, profile: Profile, allocation: Allocation,
                          objective: Objective) -> bool:
    """Exhaustive EJR check: every cohesive voter subset has at least one satisfied member."""
    _check_guard(instance, profile)
    scores, _ = _scaled_scores(profile)
    sat_pi = _pi_satisfaction_int(profile, objective, instance, allocation, scores)
    for projects, supporters, min_size in _cohesive_candidates(instance, profile, scores):
        demand = _demand_int(projects, supporters, scores, objective, instance)
        unsatisfied = [i for i in supporters if sat_pi[i] < demand]
        # a violating subset must consist solely of unsatisfied supporters
        # and still meet the size bound; any min_size-subset of them works
        if len(unsatisfied) >= min_size:
            return False
    return True


def verify_pjr_bruteforce(instance: Instance, profile: Profile, allocation: Allocation,
                          objective: Objective) -> bool:
    """Exhaustive PJR check: every cohesive subset's aggregate satisfaction meets the demand.

    The aggregate (a union of covered projects for approval, a per-project
    max for cardinal) only grows with the subset, so it suffices to sweep
    the subsets at exactly the minimal cohesive size.
    """
    _check_guard(instance, profile)
    scores, _ = _scaled_scores(profile)
    pi = sorted(allocation.selected)
    for projects, supporters, min_size in _cohesive_candidates(instance, profile, scores):
        demand = _demand_int(projects, supporters, scores, objective, instance)
        if objective is Objective.CARDINAL:
            rows = {i: [scores[i][p] for p in pi] for i in supporters}
            for subset in itertools.combinations(supporters, min_size):
                aggregate = sum(max(rows[i][k] for i in subset) for k in range(len(pi)))
                if aggregate < demand:
                    return False
        else:
            covered = {
                i: frozenset(p for p in pi if scores[i][p]) for i in supporters
            }
            for subset in itertools.combinations(supporters, min_size):
                union = frozenset().union(*(covered[i] for i in subset))
                if objective is Objective.CARD:
                    aggregate = len(union)
                else:
                    aggregate = sum(instance.projects[p].cost for p in union)
                if aggregate < demand:
                    return False
    return True


def normalized_welfare(instance: Instance, profile: Profile, allocation: Allocation,
                       objective: Objective, optimal_welfare) -> float:
    """Welfare of the allocation relative to the optimum, in [0, 1]."""
    from .core import utilitarian_welfare

    if optimal_welfare <= 0:
        raise ValueError("optimal welfare must be positive (filtered instances guarantee it)")
    welfare = utilitarian_welfare(instance, profile, allocation, objective)
    if welfare > optimal_welfare:
        raise InternalInconsistencyError(
            f"allocation welfare {welfare} exceeds the supposed optimum {optimal_welfare}"
        )
    return float(Fraction(welfare) / Fraction(optimal_welfare))
