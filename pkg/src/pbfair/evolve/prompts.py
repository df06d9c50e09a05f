"""Prompt assembly for rule generation, variation, and strategy refinement.

Generated rules are requested as one-line descriptions plus a single
priority expression in the package's DSL (replacing free-form code, which
would not be sandboxable); the expression's arguments and return contract
match what the greedy allocator expects: per-project features in, one
score per project out.
"""

from __future__ import annotations

from ..core import Objective

TASKS = {
    Objective.COST: (
        "There are M projects with different construction costs, a fixed budget, and N "
        "yes/no approval samples over the projects. I need a priority score for every "
        "project such that greedily funding projects by descending score until nothing "
        "else fits maximizes, on average over the samples, the total cost of funded "
        "projects the sample approves of."
    ),
    Objective.CARD: (
        "There are M projects with different construction costs, a fixed budget, and N "
        "yes/no approval samples over the projects. I need a priority score for every "
        "project such that greedily funding projects by descending score until nothing "
        "else fits maximizes, on average over the samples, the number of funded "
        "projects the sample approves of."
    ),
    Objective.CARDINAL: (
        "There are M projects with different construction costs, a fixed budget, and N "
        "valuation samples assigning a non-negative value to every project. I need a "
        "priority score for every project such that greedily funding projects by "
        "descending score until nothing else fits maximizes the average total value of "
        "the funded projects across the samples."
    ),
}

DSL_TEMPLATE = """Write the rule as a single arithmetic expression in this mini-language:

  per-project vectors: cost, app_count, app_rate, score_sum, score_mean
  scalars: budget, n, m
  operators: + - * / ^  and functions neg(x), sqrt(x), log(x), log1p(x),
  exp(x), abs(x), min(a,b), max(a,b), plus reductions sum(v), mean(v),
  max(v), min(v) that turn a vector into a scalar.

The expression must produce one score per project. Example:
```
sqrt(app_rate) * (1 / (1 + cost / budget))
```"""

FORMAT_INSTRUCTIONS = (
    "First, describe your new strategy and main steps in one sentence. The "
    "description must be inside a brace. Next, implement it as one expression "
    "using the template below, inside a fenced code block.\n\n"
    + DSL_TEMPLATE
    + "\n\nDo not give additional explanations."
)

INITIAL_EXPLORATION = (
    "Please help me create a new strategy that has a totally different form "
    "from the given ones."
)

INITIAL_MODIFICATION = (
    "If the utility is positive, identify the main parameters of the score "
    "expression and create a new strategy with different parameter settings. "
    "If the utility is negative, revise the strategy to improve its "
    "proportionality: whenever a sufficiently large group of samples approves "
    "the same subset of projects, that subset should end up funded."
)


def _user(content: str) -> list[dict]:
    return [{"role": "user", "content": content}]


def initialization_prompt(objective: Objective) -> list[dict]:
    return _user(f"{TASKS[objective]}\n\n{FORMAT_INSTRUCTIONS}")


def exploration_prompt(objective: Objective, strategy_text: str, parents) -> list[dict]:
    blocks = [TASKS[objective], f"I have {len(parents)} existing strategies with their code as follows:"]
    for j, parent in enumerate(parents, start=1):
        blocks.append(
            f"No. {j} strategy and the corresponding code are:\n"
            f"{parent.description}\n```\n{parent.source}\n```"
        )
    blocks.append(strategy_text)
    blocks.append(FORMAT_INSTRUCTIONS)
    return _user("\n\n".join(blocks))


def modification_prompt(objective: Objective, strategy_text: str, parent) -> list[dict]:
    fitness = "unknown" if parent.fitness is None else f"{parent.fitness:.6f}"
    blocks = [
        TASKS[objective],
        "I have one strategy with its code as follows:\n"
        f"Strategy description: {parent.description}\n"
        f"Code:\n```\n{parent.source}\n```\n"
        f"Utility: {fitness}",
        strategy_text,
        FORMAT_INSTRUCTIONS,
    ]
    return _user("\n\n".join(blocks))


REFINEMENT_PREAMBLE = (
    "I want to use language models to generate heuristic scoring rules for this "
    "problem. I already have a set of prompts and have observed how well the "
    "rules they produce perform. Please analyse the prompts and their scores "
    "and design a better one."
)

KIND_NOTES = {
    "exploration": (
        "The prompts above are Exploration prompts: they ask for new strategies "
        "that differ as much as possible from the given ones."
    ),
    "modification": (
        "The prompts above are Modification prompts: they ask to refine one "
        "strategy by modifying it, adjusting parameters, and removing redundant parts."
    ),
}


def refinement_prompt(objective: Objective, kind: str, strategies) -> list[dict]:
    blocks = [TASKS[objective], REFINEMENT_PREAMBLE,
              f"I have {len(strategies)} existing prompts with average score (the higher the better) as follows:"]
    for j, (text, score) in enumerate(strategies, start=1):
        shown = "none yet" if score is None else f"{score:.6f}"
        blocks.append(f"No. {j} prompt:\nContent: {text}\nScore: {shown}")
    blocks.append(KIND_NOTES[kind])
    blocks.append(
        f"Please help me create a new {kind.capitalize()} prompt that has a totally "
        "different form from the given ones but can be motivated from them. Describe "
        "your new prompt and main steps in one sentence. The description must be "
        "inside a brace. Do not give additional explanations."
    )
    return _user("\n\n".join(blocks))
