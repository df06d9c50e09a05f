"""Baseline PB rules: exact and greedy welfare maximizers, MES, Phragmen-style rules.

Every rule is resolute: ties are always broken by ascending project index,
and all internal event comparisons (purchase prices, accrual times, load
levels) are carried out in exact rational arithmetic, so repeated runs are
bit-identical and never depend on floating-point rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .core import (
    MINOR_UNITS_PER_MAJOR,
    Allocation,
    BallotKind,
    Instance,
    Objective,
    Profile,
    Project,
    approval_profile,
    cardinal_profile,
    make_allocation,
)


class InvalidRuleError(ValueError):
    """A priority rule produced unusable scores (non-finite entries)."""


RuleFn = Callable[[Instance, Profile, Objective], Allocation]


@dataclass
class VoterLedger:
    """Execution state of a sequential spending rule: balances plus a payment log."""

    balances: list[Fraction]
    payments: list[tuple[int, int, Fraction]] = field(default_factory=list)

    def charge(self, voter: int, project: int, amount: Fraction) -> None:
        if amount > self.balances[voter]:
            raise InternalLedgerError(
                f"voter {voter} charged {amount} with balance {self.balances[voter]}"
            )
        self.balances[voter] -= amount
        self.payments.append((voter, project, amount))

    def total_paid(self, project: int) -> Fraction:
        return sum((a for _, p, a in self.payments if p == project), Fraction(0))


class InternalLedgerError(RuntimeError):
    pass


def project_values(instance: Instance, profile: Profile, objective: Objective) -> list:
    """Per-project welfare contribution: app count, cost-weighted app count, or total score."""
    counts = profile.supporter_counts()
    if objective is Objective.CARD:
        return [int(counts[p]) for p in range(instance.num_projects)]
    if objective is Objective.COST:
        return [int(counts[p]) * instance.projects[p].cost for p in range(instance.num_projects)]
    return [
        sum((ballot[p] for ballot in profile.cardinal), Fraction(0))
        for p in range(instance.num_projects)
    ]


def is_exhaustive(instance: Instance, selected: frozenset[int], budget: int | None = None) -> bool:
    """No unselected project fits the leftover budget."""
    budget = instance.budget if budget is None else budget
    leftover = budget - sum(instance.projects[p].cost for p in selected)
    return all(
        p.index in selected or p.cost > leftover for p in instance.projects
    )


# ---------------------------------------------------------------------------
# Greedy rules
# ---------------------------------------------------------------------------


def _greedy_fill(instance: Instance, order: Sequence[int]) -> Allocation:
    """Scan the order, adding every project that still fits (exhaustive greedy)."""
    remaining = instance.budget
    selected = []
    for p in order:
        cost = instance.projects[p].cost
        if cost <= remaining:
            selected.append(p)
            remaining -= cost
    return make_allocation(instance, selected)


def greed_util(instance: Instance, profile: Profile, objective: Objective) -> Allocation:
    """Greedy rule ordered by approval count (approval) or total score (cardinal).

    The ordering deliberately ignores the satisfaction function for
    approval profiles: greediness is by raw approvals for both the count
    and the cost objective.
    """
    if objective is Objective.CARDINAL:
        key = project_values(instance, profile, objective)
    else:
        counts = profile.supporter_counts()
        key = [int(counts[p]) for p in range(instance.num_projects)]
    order = sorted(range(instance.num_projects), key=lambda p: (-key[p], p))
    return _greedy_fill(instance, order)


def greedy_by_scores(instance: Instance, scores: Sequence[float]) -> Allocation:
    """Exhaustive greedy over an externally supplied score vector (the DSL entry point)."""
    if len(scores) != instance.num_projects:
        raise InvalidRuleError(
            f"expected {instance.num_projects} scores, got {len(scores)}"
        )
    values = [float(s) for s in scores]
    if any(not math.isfinite(v) for v in values):
        raise InvalidRuleError("score vector contains a non-finite entry")
    order = sorted(range(instance.num_projects), key=lambda p: (-values[p], p))
    return _greedy_fill(instance, order)


# ---------------------------------------------------------------------------
# Exact welfare maximization (0/1 knapsack by branch and bound)
# ---------------------------------------------------------------------------


def _knapsack_best_value(items: list[tuple], capacity: int):
    """Best achievable value from (value, cost) items within capacity.

    Depth-first branch and bound with the fractional-relaxation upper
    bound; exact arithmetic throughout.  Zero-value items never affect the
    optimum and are dropped by the caller.
    """
    items = sorted(items, key=lambda vc: Fraction(vc[0]) / vc[1], reverse=True)
    best = 0

    def bound(idx: int, cap: int, val):
        total = val
        for j in range(idx, len(items)):
            v, c = items[j]
            if c <= cap:
                cap -= c
                total += v
            else:
                return total + Fraction(v) * Fraction(cap, c)
        return total

    def dfs(idx: int, cap: int, val):
        nonlocal best
        if val > best:
            best = val
        if idx == len(items) or bound(idx, cap, val) <= best:
            return
        v, c = items[idx]
        if c <= cap:
            dfs(idx + 1, cap - c, val + v)
        dfs(idx + 1, cap, val)

    dfs(0, capacity, 0)
    return best


def max_util(instance: Instance, profile: Profile, objective: Objective) -> Allocation:
    """Exact utilitarian welfare maximizer; lexicographically smallest optimum.

    First computes the optimal value by branch and bound, then walks the
    projects in index order, keeping a project exactly when an optimal
    completion through it still exists.  Stopping as soon as the running
    value hits the optimum yields the lexicographically smallest sorted
    index sequence among all optima.
    """
    values = project_values(instance, profile, objective)
    costs = [p.cost for p in instance.projects]
    m = instance.num_projects

    def positive_items(start: int):
        return [(values[p], costs[p]) for p in range(start, m) if values[p] > 0]

    target = _knapsack_best_value(positive_items(0), instance.budget)
    selected = []
    cap = instance.budget
    got = 0
    for p in range(m):
        if got == target:
            break
        if costs[p] > cap or values[p] <= 0:
            continue
        if got + values[p] + _knapsack_best_value(positive_items(p + 1), cap - costs[p]) == target:
            selected.append(p)
            cap -= costs[p]
            got += values[p]
    if got != target:
        raise InternalLedgerError("optimal completion walk failed to reach the optimum")
    return make_allocation(instance, selected)


# ---------------------------------------------------------------------------
# Method of Equal Shares
# ---------------------------------------------------------------------------


def _mes_supporters(instance: Instance, profile: Profile, objective: Objective) -> list[list[tuple[int, Fraction]]]:
    """Per project: (voter, positive utility) pairs.

    Utility is 1 per approval for the count objective, the project cost
    per approval for the cost objective, and the raw score for cardinal
    profiles.
    """
    m = instance.num_projects
    out: list[list[tuple[int, Fraction]]] = [[] for _ in range(m)]
    if objective is Objective.CARDINAL:
        for i, ballot in enumerate(profile.cardinal):
            for p, s in enumerate(ballot):
                if s > 0:
                    out[p].append((i, s))
    else:
        unit = {
            Objective.CARD: lambda p: Fraction(1),
            Objective.COST: lambda p: Fraction(instance.projects[p].cost),
        }[objective]
        for i, ballot in enumerate(profile.approval):
            for p in ballot:
                out[p].append((i, unit(p)))
    return out


def _mes_price(cost: int, supporters: list[tuple[int, Fraction]], balances: list[Fraction]):
    """Minimal per-utility price rho with sum_i min(balance_i, rho * u_i) = cost, or None."""
    if sum(balances[v] for v, _ in supporters) < cost:
        return None
    order = sorted(supporters, key=lambda vu: balances[vu[0]] / vu[1])
    paid = Fraction(0)
    util_left = sum((u for _, u in order), Fraction(0))
    for v, u in order:
        rho = (cost - paid) / util_left
        if rho <= balances[v] / u:
            return rho
        paid += balances[v]
        util_left -= u
    return None


def run_mes(instance: Instance, profile: Profile, objective: Objective,
            endowment: Fraction | None = None) -> tuple[frozenset[int], VoterLedger]:
    """MES execution returning the selected set and the full payment ledger.

    Each voter starts with ``endowment`` (default b/n).  Rounds buy the
    affordable project with the lowest per-utility price, ties by index;
    the rule stops when nothing is affordable and is non-exhaustive by
    design.
    """
    n = profile.num_ballots
    if endowment is None:
        endowment = Fraction(instance.budget, n)
    ledger = VoterLedger(balances=[endowment] * n)
    supporters = _mes_supporters(instance, profile, objective)
    selected: set[int] = set()
    while True:
        best = None
        for p in range(instance.num_projects):
            if p in selected or not supporters[p]:
                continue
            rho = _mes_price(instance.projects[p].cost, supporters[p], ledger.balances)
            if rho is None:
                continue
            if best is None or (rho, p) < best:
                best = (rho, p)
        if best is None:
            break
        rho, p = best
        for v, u in supporters[p]:
            ledger.charge(v, p, min(ledger.balances[v], rho * u))
        selected.add(p)
    return frozenset(selected), ledger


def mes(instance: Instance, profile: Profile, objective: Objective) -> Allocation:
    selected, _ = run_mes(instance, profile, objective)
    return make_allocation(instance, selected)


def complete_add1(instance: Instance, profile: Profile, objective: Objective) -> Allocation:
    """MES with per-voter endowments raised one major unit at a time.

    Stops at the first endowment whose outcome either exceeds the real
    budget (the previous outcome is returned) or is exhaustive within it.
    May legitimately stop non-exhaustive when no endowment increase can
    add another project.
    """
    n = profile.num_ballots
    base = Fraction(instance.budget, n)
    selected, _ = run_mes(instance, profile, objective)
    prev = selected
    if is_exhaustive(instance, prev):
        return make_allocation(instance, prev)
    supporters = _mes_supporters(instance, profile, objective)
    buyable = frozenset(p for p in range(instance.num_projects) if supporters[p])
    # endowments beyond any voter's total supported cost cannot change the outcome
    per_voter_cost = [Fraction(0)] * n
    for p, sup in enumerate(supporters):
        for v, _ in sup:
            per_voter_cost[v] += instance.projects[p].cost
    k_limit = int(max(per_voter_cost, default=Fraction(0)) // MINOR_UNITS_PER_MAJOR) + 2
    for k in range(1, k_limit + 1):
        selected, _ = run_mes(instance, profile, objective, endowment=base + k * MINOR_UNITS_PER_MAJOR)
        cost = sum(instance.projects[p].cost for p in selected)
        if cost > instance.budget:
            return make_allocation(instance, prev)
        if is_exhaustive(instance, selected):
            return make_allocation(instance, selected)
        if selected == buyable:
            return make_allocation(instance, selected)
        prev = selected
    raise InternalLedgerError("endowment scan failed to terminate")


def restrict(instance: Instance, profile: Profile, kept: Sequence[int], budget: int):
    """Sub-instance over the kept projects (re-indexed) with the given budget."""
    kept = sorted(kept)
    projects = tuple(
        Project(id=instance.projects[old].id, index=new, cost=instance.projects[old].cost)
        for new, old in enumerate(kept)
    )
    sub_instance = Instance(projects=projects, budget=budget)
    position = {old: new for new, old in enumerate(kept)}
    if profile.kind is BallotKind.APPROVAL:
        sub_profile = approval_profile(
            ({position[p] for p in ballot if p in position} for ballot in profile.approval),
            num_projects=len(kept),
        )
    else:
        sub_profile = cardinal_profile(
            ([ballot[old] for old in kept] for ballot in profile.cardinal),
            num_projects=len(kept),
        )
    return sub_instance, sub_profile, kept


def complete_with(base: Allocation, completion: RuleFn, instance: Instance,
                  profile: Profile, objective: Objective) -> Allocation:
    """Spend the leftover budget by running a completion rule on the unselected projects."""
    leftover = instance.budget - base.total_cost
    remaining = [p for p in range(instance.num_projects) if p not in base.selected]
    if leftover <= 0 or not remaining:
        return base
    sub_instance, sub_profile, kept = restrict(instance, profile, remaining, leftover)
    extra = completion(sub_instance, sub_profile, objective)
    return make_allocation(instance, set(base.selected) | {kept[p] for p in extra.selected})


# ---------------------------------------------------------------------------
# Phragmen-style rules (approval ballots only)
# ---------------------------------------------------------------------------


def _require_approval(profile: Profile, rule: str) -> None:
    if profile.kind is not BallotKind.APPROVAL:
        raise ValueError(f"{rule} is defined for approval profiles only")


def seq_phragmen(instance: Instance, profile: Profile, objective: Objective | None = None) -> Allocation:
    """Sequential Phragmen, exhaustive variant.

    Voters accrue virtual money at unit rate; the project whose approvers'
    combined money first reaches its cost is bought and those approvers'
    balances reset.  Projects that no longer fit the remaining real budget
    are skipped, and the rule continues until no candidate remains.
    """
    _require_approval(profile, "seq_phragmen")
    n = profile.num_ballots
    approvers = [
        [i for i in range(n) if p in profile.approval[i]]
        for p in range(instance.num_projects)
    ]
    reset_time = [Fraction(0)] * n
    remaining = instance.budget
    selected: set[int] = set()
    while True:
        best = None
        for p in range(instance.num_projects):
            if p in selected or not approvers[p]:
                continue
            cost = instance.projects[p].cost
            if cost > remaining:
                continue
            when = (cost + sum(reset_time[i] for i in approvers[p])) / Fraction(len(approvers[p]))
            if best is None or (when, p) < best:
                best = (when, p)
        if best is None:
            break
        when, p = best
        for i in approvers[p]:
            reset_time[i] = when
        remaining -= instance.projects[p].cost
        selected.add(p)
    return make_allocation(instance, selected)


def _water_fill_level(loads: list[Fraction], cost: int) -> Fraction:
    """Level L with sum(max(0, L - load)) == cost over the given sorted loads."""
    prefix = Fraction(0)
    for j in range(1, len(loads) + 1):
        prefix += loads[j - 1]
        level = (cost + prefix) / j
        if level >= loads[j - 1] and (j == len(loads) or level <= loads[j]):
            return level
    raise InternalLedgerError("water fill found no level")


def maximin_support(instance: Instance, profile: Profile, objective: Objective | None = None) -> Allocation:
    """Maximin support (generalised sequential Phragmen), exhaustive variant.

    Each round distributes a candidate's cost over its approvers on top of
    their current loads by exact water-filling, selects the candidate whose
    resulting maximum approver load is smallest (ties by index), and
    commits that distribution.
    """
    _require_approval(profile, "maximin_support")
    n = profile.num_ballots
    approvers = [
        [i for i in range(n) if p in profile.approval[i]]
        for p in range(instance.num_projects)
    ]
    loads = [Fraction(0)] * n
    remaining = instance.budget
    selected: set[int] = set()
    while True:
        best = None
        for p in range(instance.num_projects):
            if p in selected or not approvers[p]:
                continue
            cost = instance.projects[p].cost
            if cost > remaining:
                continue
            current = sorted(loads[i] for i in approvers[p])
            level = _water_fill_level(current, cost)
            peak = max(level, current[-1])
            if best is None or (peak, p) < best:
                best = (peak, p, level)
        if best is None:
            break
        _, p, level = best
        for i in approvers[p]:
            loads[i] = max(loads[i], level)
        remaining -= instance.projects[p].cost
        selected.add(p)
    return make_allocation(instance, selected)


# ---------------------------------------------------------------------------
# Named rule registry (CLI and evaluation harness entry point)
# ---------------------------------------------------------------------------

APPROVAL_ONLY = {"seqphrag", "maximinsupp"}

_BASE_RULES: dict[str, RuleFn] = {
    "maxutil": max_util,
    "greedutil": greed_util,
    "seqphrag": seq_phragmen,
    "maximinsupp": maximin_support,
    "mes": mes,
}


def _fixed_objective(fn: RuleFn, objective: Objective) -> RuleFn:
    def wrapped(instance, profile, _objective):
        return fn(instance, profile, objective)

    return wrapped


def resolve_rule(token: str, dsl_loader: Callable[[str], RuleFn] | None = None) -> RuleFn:
    """Resolve a rule token like ``mes``, ``mes_cost+add1u`` or ``dsl:file`` to a callable.

    The optional completion after ``+`` runs on the leftover budget:
    ``add1`` raises MES endowments, ``add1u``/``add1um`` additionally
    complete greedily / exactly, and ``dsl:PATH`` completes with a stored
    priority expression.
    """
    base_token, _, completion_token = token.partition("+")

    def load_dsl(spec: str) -> RuleFn:
        if dsl_loader is None:
            raise ValueError(f"rule token {token!r} needs a DSL loader")
        return dsl_loader(spec)

    if base_token.startswith("dsl:"):
        base = load_dsl(base_token[4:])
    elif base_token in ("mes_cost", "mes_card"):
        base = _fixed_objective(mes, Objective.COST if base_token.endswith("cost") else Objective.CARD)
    elif base_token in _BASE_RULES:
        base = _BASE_RULES[base_token]
    else:
        raise ValueError(f"unknown rule {base_token!r}")

    if not completion_token:
        return base
    if base_token not in ("mes", "mes_cost", "mes_card"):
        raise ValueError(f"completions only apply to MES variants, got {token!r}")

    mes_objective = None
    if base_token == "mes_cost":
        mes_objective = Objective.COST
    elif base_token == "mes_card":
        mes_objective = Objective.CARD

    def completed(instance, profile, objective):
        mes_obj = mes_objective or objective
        if completion_token == "add1":
            return complete_add1(instance, profile, mes_obj)
        if completion_token in ("add1u", "add1um"):
            grown = complete_add1(instance, profile, mes_obj)
            finisher = greed_util if completion_token == "add1u" else max_util
            return complete_with(grown, finisher, instance, profile, objective)
        if completion_token.startswith("dsl:"):
            base_alloc = mes(instance, profile, mes_obj)
            return complete_with(base_alloc, load_dsl(completion_token[4:]), instance, profile, objective)
        raise ValueError(f"unknown completion {completion_token!r}")

    return completed
