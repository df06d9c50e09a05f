"""Fitness evaluation: penalized welfare over a precomputed training context.

A candidate's allocation rule is the exhaustive greedy allocator fed by its
evaluated score vector.  Per instance, fitness rewards welfare relative to
the optimum and subtracts a unit penalty when the fairness approximation
falls below the threshold; the per-instance terms are averaged.  Group
indexes and optimal welfares are computed once per training set, so a
fitness evaluation costs one score-vector pass plus work linear in the
number of voters per considered group.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..cohesion import GroupIndex, mine_cohesive_groups
from ..core import Instance, Objective, Profile, utilitarian_welfare
from ..dsl import CandidateRule, DslEvalError, FeatureSet, Validity, build_features, evaluate_rule
from ..fairness import normalized_welfare, strong_ejr_approx
from ..rules import InvalidRuleError, greedy_by_scores, max_util


@dataclass(frozen=True)
class EngineConfig:
    """Evolution hyperparameters; defaults follow the reference configuration."""

    population_size: int = 20
    max_populations: int = 20
    eval_timeout_s: float = 60.0
    sigma: int = 100
    epsilon: float | None = None
    top_l: int = 3
    stagnation_t: int = 3
    score_window_d: int = 3
    max_strategies: int = 5
    temperature: float = 1.0
    seed: int = 0
    retry_budget: int = 3
    max_chat_calls: int | None = None

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population size must be at least 2")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.top_l > self.population_size:
            raise ValueError("top_l cannot exceed the population size")


@dataclass(frozen=True)
class InstanceContext:
    """Rule-independent precomputation for one training instance."""

    instance: Instance
    profile: Profile
    groups: GroupIndex
    optimal_welfare: object
    features: FeatureSet


@dataclass(frozen=True)
class EvalContext:
    instances: tuple[InstanceContext, ...]
    objective: Objective

    @property
    def size(self) -> int:
        return len(self.instances)


def build_eval_context(entries, objective: Objective, cache=None) -> EvalContext:
    """Precompute group indexes and optimal welfare for every training entry."""
    contexts = []
    for entry in entries:
        if cache is not None:
            groups, _ = cache.get_or_mine(entry)
        else:
            groups = mine_cohesive_groups(entry.instance, entry.profile)
        optimum = utilitarian_welfare(
            entry.instance, entry.profile, max_util(entry.instance, entry.profile, objective), objective
        )
        contexts.append(
            InstanceContext(
                instance=entry.instance,
                profile=entry.profile,
                groups=groups,
                optimal_welfare=optimum,
                features=build_features(entry.instance, entry.profile),
            )
        )
    return EvalContext(instances=tuple(contexts), objective=objective)


def theta(phi: float, epsilon: float) -> int:
    """Unit penalty when the fairness approximation falls below the threshold."""
    if not 0 <= phi <= 1 or not 0 <= epsilon <= 1:
        raise ValueError("theta arguments must lie in [0, 1]")
    return 1 if phi < epsilon else 0


def penalized_term(omega_norm: float, phi: float, epsilon: float) -> float:
    """One instance's fitness contribution: normalized welfare minus the penalty."""
    return omega_norm - theta(phi, epsilon)


def fitness(rule: CandidateRule, ctx: EvalContext, config: EngineConfig) -> float | None:
    """Evaluate a candidate on every training instance; sets fitness and validity in place.

    Any evaluation error invalidates the rule, as does any single instance
    exceeding the per-instance wall-clock timeout.  Valid rules get
    q = mean(normalized welfare - penalty), which is at most 1 and may be
    negative for rules that are not empirically fair.
    """
    if config.epsilon is None:
        raise ValueError("EngineConfig.epsilon must be set before fitness evaluation")
    if rule.ast is None:
        rule.validity = Validity.PARSE_ERROR
        rule.fitness = None
        return None
    terms = []
    for item in ctx.instances:
        started = time.monotonic()
        try:
            scores = evaluate_rule(rule.ast, item.instance, item.profile, features=item.features)
            allocation = greedy_by_scores(item.instance, scores)
        except (DslEvalError, InvalidRuleError):
            rule.validity = Validity.EVAL_ERROR
            rule.fitness = None
            return None
        omega_norm = normalized_welfare(
            item.instance, item.profile, allocation, ctx.objective, item.optimal_welfare
        )
        report = strong_ejr_approx(
            item.groups, allocation, item.profile, ctx.objective, item.instance, sigma=config.sigma
        )
        terms.append(penalized_term(omega_norm, report.phi, config.epsilon))
        if time.monotonic() - started > config.eval_timeout_s:
            rule.validity = Validity.TIMEOUT
            rule.fitness = None
            return None
    value = sum(terms) / len(terms)
    rule.validity = Validity.VALID
    rule.fitness = value
    return value


def rule_phi(rule_fn, ctx: EvalContext, sigma: int | None = None) -> float:
    """Mean fairness approximation of an arbitrary rule over a context."""
    values = []
    for item in ctx.instances:
        allocation = rule_fn(item.instance, item.profile, ctx.objective)
        report = strong_ejr_approx(
            item.groups, allocation, item.profile, ctx.objective, item.instance, sigma=sigma
        )
        values.append(report.phi)
    return sum(values) / len(values)


def compute_epsilon(baselines: dict, ctx: EvalContext, sigma: int | None = None,
                    override: float | None = None) -> float:
    """Penalty threshold: the best mean fairness approximation any baseline achieves.

    An explicit override always wins (documented precedence for config files).
    """
    if override is not None:
        return override
    if not ctx.instances:
        raise ValueError("cannot derive epsilon from an empty training set")
    if not baselines:
        raise ValueError("need at least one baseline rule")
    return max(rule_phi(fn, ctx, sigma=sigma) for fn in baselines.values())
