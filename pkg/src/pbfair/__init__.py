"""pbfair: participatory-budgeting rules, Strong-EJR fairness metrics, and rule evolution."""

from .core import (
    Allocation,
    BallotKind,
    Instance,
    Objective,
    Profile,
    Project,
    approval_profile,
    cardinal_profile,
    make_allocation,
    make_instance,
    satisfaction,
    total_cost,
    utilitarian_welfare,
)
from .cohesion import (
    CohesiveGroup,
    GroupIndex,
    binarize,
    brute_force_cohesive_groups,
    frequent_itemsets,
    has_cohesive_group,
    maximal_group,
    mine_cohesive_groups,
    min_support,
)
from .fairness import (
    FairnessReport,
    group_ratio,
    normalized_welfare,
    strong_ejr_approx,
    verify_ejr_bruteforce,
    verify_pjr_bruteforce,
    verify_strong_ejr_bruteforce,
    verify_strong_ejr_maximal,
)

__version__ = "0.1.0"
