"""Population-based evolutionary search over DSL rules with prompt refinement.

One engine run owns a population of candidate rules, a strategy set split
into exploration and modification prompts, and a chat client.  Offspring
slots alternate between the two kinds, cycling round-robin within a kind.
When the top of the population stagnates, the engine asks the model for
one new strategy of each kind; new strategies are kept only if they
produce at least one valid rule in their first batch, and the set is
pruned by score to a fixed maximum (never dropping the last strategy of a
kind).  Under the mock client and a fixed seed the entire run, including
the event log, is reproducible byte for byte: events carry no timestamps
and every random draw comes from the seeded generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from ..dsl import (
    CandidateRule,
    DslParseError,
    ExtractionError,
    Validity,
    canonical_form,
    extract_braced_span,
    extract_candidate,
    parse_rule,
)
from .fitness import EngineConfig, EvalContext, fitness
from .llm import LlmClient, LlmError
from . import prompts


class StrategyKind(Enum):
    EXPLORATION = "exploration"
    MODIFICATION = "modification"


@dataclass
class PromptStrategy:
    kind: StrategyKind
    text: str
    provenance: str = "initial"  # or "refined"
    produced: list[float] = field(default_factory=list)
    attempts: int = 0
    born_generation: int = 0
    on_probation: bool = False

    def score(self, window: int) -> float | None:
        """Average fitness of the top-`window` rules this strategy produced."""
        if not self.produced:
            return None
        best = sorted(self.produced, reverse=True)[:window]
        return sum(best) / len(best)


def initial_strategies() -> list[PromptStrategy]:
    return [
        PromptStrategy(kind=StrategyKind.EXPLORATION, text=prompts.INITIAL_EXPLORATION),
        PromptStrategy(kind=StrategyKind.MODIFICATION, text=prompts.INITIAL_MODIFICATION),
    ]


def select_parents(population: Sequence[CandidateRule], count: int, rng,
                   h: int | None = None) -> list[CandidateRule]:
    """Weighted sampling without replacement with weight 1/(rank + h), ranks 1-based."""
    if count > len(population):
        raise ValueError(f"cannot select {count} parents from {len(population)} rules")
    if h is None:
        h = len(population)
    pool = list(enumerate(population))  # (0-based rank, rule)
    chosen = []
    for _ in range(count):
        weights = [1.0 / (rank + 1 + h) for rank, _ in pool]
        pick = rng.random() * sum(weights)
        acc = 0.0
        for i, weight in enumerate(weights):
            acc += weight
            if pick < acc or i == len(pool) - 1:
                chosen.append(pool.pop(i)[1])
                break
    return chosen


def detect_stagnation(history: Sequence[tuple], top_l: int, window: int) -> bool:
    """True when the last window+1 generations' top-l fitness tuples are identical."""
    if len(history) < window + 1:
        return False
    recent = [tuple(entry[:top_l]) for entry in history[-(window + 1):]]
    return all(entry == recent[0] for entry in recent)


@dataclass
class ChatAccounting:
    calls: int = 0
    refinement_calls: int = 0
    prompt_chars: int = 0
    completion_chars: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class EvolutionResult:
    population: list[CandidateRule]
    strategies: list[PromptStrategy]
    events: list[dict]
    accounting: ChatAccounting

    @property
    def best(self) -> CandidateRule | None:
        return self.population[0] if self.population else None

    def event_log_text(self) -> str:
        return "".join(json.dumps(event, sort_keys=True) + "\n" for event in self.events)


class ResourceExhausted(Exception):
    pass


class Engine:
    def __init__(self, config: EngineConfig, ctx: EvalContext, llm: LlmClient,
                 rng, checkpoint_path=None):
        self.config = config
        self.ctx = ctx
        self.llm = llm
        self.rng = rng
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.population: list[CandidateRule] = []
        self.strategies = initial_strategies()
        self.events: list[dict] = []
        self.accounting = ChatAccounting()
        self.history: list[tuple] = []
        self.history_floor = 0  # stagnation is measured only after the last refinement
        self._rotation = {kind: 0 for kind in StrategyKind}
        self.generation = 0

    # -- chat plumbing ------------------------------------------------------

    def _chat(self, messages, refinement: bool = False) -> str:
        cap = self.config.max_chat_calls
        if cap is not None and self.accounting.calls >= cap:
            raise ResourceExhausted()
        response = self.llm.chat(messages, self.config.temperature)
        self.accounting.calls += 1
        if refinement:
            self.accounting.refinement_calls += 1
        self.accounting.prompt_chars += sum(len(m.get("content", "")) for m in messages)
        self.accounting.completion_chars += len(response.text)
        self.accounting.prompt_tokens += response.prompt_tokens
        self.accounting.completion_tokens += response.completion_tokens
        return response.text

    # -- candidate generation ----------------------------------------------

    def _known_canonicals(self, extra=()) -> set[str]:
        known = {rule.canonical for rule in self.population if rule.canonical}
        known.update(extra)
        return known

    def _attempt(self, messages, taken: set[str]) -> tuple[CandidateRule | None, str]:
        """One chat round: (candidate, outcome) with outcome in ok/extract/parse/duplicate."""
        text = self._chat(messages)
        try:
            description, source = extract_candidate(text)
        except ExtractionError:
            return None, "extract"
        try:
            ast = parse_rule(source)
        except DslParseError:
            return (
                CandidateRule(description=description, source=source, validity=Validity.PARSE_ERROR),
                "parse",
            )
        canonical = canonical_form(ast)
        if canonical in taken:
            return None, "duplicate"
        return (
            CandidateRule(description=description, source=source, ast=ast, canonical=canonical),
            "ok",
        )

    def _spawn(self, messages, strategy: PromptStrategy | None,
               taken: set[str]) -> tuple[CandidateRule | None, str]:
        """Fill one slot: retry extraction/parse/duplicate failures within the budget,
        evaluate the survivor, and feed strategy quality control.

        Returns (candidate or None, outcome) with outcome one of
        ok/invalid/duplicate/extract.
        """
        candidate, outcome = None, "extract"
        for _ in range(self.config.retry_budget):
            candidate, outcome = self._attempt(messages, taken)
            if strategy is not None:
                strategy.attempts += 1
            if outcome == "ok":
                break
        if outcome in ("extract", "duplicate"):
            return None, outcome
        if outcome == "parse":
            return candidate, "invalid"
        fitness(candidate, self.ctx, self.config)
        if candidate.validity is not Validity.VALID:
            return candidate, "invalid"
        if strategy is not None:
            strategy.produced.append(candidate.fitness)
        return candidate, "ok"

    # -- population management ---------------------------------------------

    @staticmethod
    def _sort_key(rule: CandidateRule):
        return (-rule.fitness, rule.canonical)

    def _survive(self, offspring: list[CandidateRule]) -> None:
        merged = list(self.population)
        seen = {rule.canonical for rule in merged}
        for rule in offspring:
            if rule.validity is Validity.VALID and rule.canonical not in seen:
                merged.append(rule)
                seen.add(rule.canonical)
        merged.sort(key=self._sort_key)
        self.population = merged[: self.config.population_size]
        if len(self.population) < self.config.population_size:
            self._event({"event": "warning", "message": "population below nominal size",
                         "size": len(self.population)})

    def _top_tuple(self) -> tuple:
        return tuple(
            round(rule.fitness, 12) for rule in self.population[: self.config.top_l]
        )

    # -- strategy management -------------------------------------------------

    def _next_strategy(self, kind: StrategyKind) -> PromptStrategy:
        pool = [s for s in self.strategies if s.kind is kind]
        index = self._rotation[kind] % len(pool)
        self._rotation[kind] += 1
        return pool[index]

    def _strategy_summary(self) -> list[dict]:
        return [
            {
                "kind": s.kind.value,
                "provenance": s.provenance,
                "attempts": s.attempts,
                "score": None if (score := s.score(self.config.score_window_d)) is None else round(score, 12),
            }
            for s in self.strategies
        ]

    def refine_strategies(self) -> None:
        """Ask for one new strategy per kind; newcomers enter on probation."""
        for kind in StrategyKind:
            pool = [s for s in self.strategies if s.kind is kind]
            listed = [(s.text, s.score(self.config.score_window_d)) for s in pool]
            try:
                text = self._chat(
                    prompts.refinement_prompt(self.ctx.objective, kind.value, listed),
                    refinement=True,
                )
            except LlmError:
                self._event({"event": "refinement_skipped", "generation": self.generation,
                             "kind": kind.value})
                continue
            try:
                description = extract_braced_span(text)
            except ExtractionError:
                self._event({"event": "refinement_skipped", "generation": self.generation,
                             "kind": kind.value})
                continue
            self.strategies.append(
                PromptStrategy(kind=kind, text=description, provenance="refined",
                               born_generation=self.generation, on_probation=True)
            )
        self._prune_strategies()
        self.history_floor = len(self.history)
        self._event({"event": "refinement", "generation": self.generation,
                     "strategies": self._strategy_summary()})

    def settle_strategies(self) -> None:
        """Reject probationary strategies whose first batch was all-invalid, then prune."""
        kept = []
        for s in self.strategies:
            if s.on_probation and s.attempts > 0:
                if not s.produced:
                    self._event({"event": "strategy_rejected", "kind": s.kind.value,
                                 "generation": self.generation})
                    continue
                s.on_probation = False
            kept.append(s)
        self.strategies = kept
        self._prune_strategies()

    def _prune_strategies(self) -> None:
        while len(self.strategies) > self.config.max_strategies:
            evictable = [
                s for s in self.strategies
                if s.attempts > 0  # first-generation immunity for unused strategies
                and sum(1 for t in self.strategies if t.kind is s.kind) > 1
            ]
            if not evictable:
                break
            loser = min(
                evictable,
                key=lambda s: (
                    s.score(self.config.score_window_d) is not None,
                    s.score(self.config.score_window_d) or 0.0,
                    -s.born_generation,
                ),
            )
            self.strategies.remove(loser)
            self._event({"event": "strategy_evicted", "kind": loser.kind.value,
                         "generation": self.generation})

    # -- events / checkpoints ------------------------------------------------

    def _event(self, payload: dict) -> None:
        self.events.append(payload)

    def _generation_event(self, invalid: int, duplicates: int) -> None:
        best = self.population[0].fitness if self.population else None
        mean = (
            sum(r.fitness for r in self.population) / len(self.population)
            if self.population
            else None
        )
        self._event({
            "event": "generation",
            "generation": self.generation,
            "population": len(self.population),
            "best": None if best is None else round(best, 12),
            "mean": None if mean is None else round(mean, 12),
            "invalid_offspring": invalid,
            "duplicate_offspring": duplicates,
            "strategies": self._strategy_summary(),
            "chat_calls": self.accounting.calls,
            "refinement_calls": self.accounting.refinement_calls,
            "prompt_chars": self.accounting.prompt_chars,
            "completion_chars": self.accounting.completion_chars,
            "prompt_tokens": self.accounting.prompt_tokens,
            "completion_tokens": self.accounting.completion_tokens,
        })

    def save_checkpoint(self) -> None:
        if self.checkpoint_path is None:
            return
        state = {
            "generation": self.generation,
            "population": [
                {
                    "description": r.description,
                    "source": r.source,
                    "fitness": r.fitness,
                }
                for r in self.population
            ],
            "strategies": [
                {
                    "kind": s.kind.value,
                    "text": s.text,
                    "provenance": s.provenance,
                    "produced": s.produced,
                    "attempts": s.attempts,
                    "born_generation": s.born_generation,
                    "on_probation": s.on_probation,
                }
                for s in self.strategies
            ],
            "rng_state": _encode_rng_state(self.rng.getstate()),
            "accounting": vars(self.accounting),
        }
        self.checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.checkpoint_path.with_name(self.checkpoint_path.name + ".tmp")
        tmp.write_text(json.dumps(state, sort_keys=True), encoding="utf-8")
        tmp.replace(self.checkpoint_path)

    # -- main loop ------------------------------------------------------------

    def initialize(self) -> None:
        taken: set[str] = set()
        for _ in range(self.config.population_size):
            candidate, outcome = self._spawn(
                prompts.initialization_prompt(self.ctx.objective), None, self._known_canonicals(taken)
            )
            if outcome == "ok":
                taken.add(candidate.canonical)
                self.population.append(candidate)
        self.population.sort(key=self._sort_key)
        self.history.append(self._top_tuple())
        self._event({
            "event": "init",
            "population": len(self.population),
            "best": None if not self.population else round(self.population[0].fitness, 12),
            "chat_calls": self.accounting.calls,
        })

    def step(self) -> None:
        self.generation += 1
        offspring: list[CandidateRule] = []
        taken: set[str] = set()
        invalid = duplicates = 0
        for slot in range(self.config.population_size):
            kind = StrategyKind.EXPLORATION if slot % 2 == 0 else StrategyKind.MODIFICATION
            strategy = self._next_strategy(kind)
            if kind is StrategyKind.EXPLORATION and len(self.population) >= 2:
                parents = select_parents(self.population, 2, self.rng)
                messages = prompts.exploration_prompt(self.ctx.objective, strategy.text, parents)
            elif self.population:
                parents = select_parents(self.population, 1, self.rng)
                messages = prompts.modification_prompt(self.ctx.objective, strategy.text, parents[0])
            else:
                messages = prompts.initialization_prompt(self.ctx.objective)
            candidate, outcome = self._spawn(messages, strategy, self._known_canonicals(taken))
            if outcome == "ok":
                taken.add(candidate.canonical)
                offspring.append(candidate)
            elif outcome == "invalid":
                invalid += 1
            else:
                duplicates += 1
        self._survive(offspring)
        self.settle_strategies()
        self.history.append(self._top_tuple())
        window = self.history[self.history_floor:]
        if detect_stagnation(window, self.config.top_l, self.config.stagnation_t):
            self.refine_strategies()
        self._generation_event(invalid, duplicates)
        self.save_checkpoint()

    def restore(self, state: dict) -> None:
        """Resume from a checkpoint: population, strategy set, RNG state, accounting."""
        self.generation = state["generation"]
        self.population = []
        for record in state["population"]:
            ast = parse_rule(record["source"])
            rule = CandidateRule(
                description=record["description"],
                source=record["source"],
                ast=ast,
                canonical=canonical_form(ast),
                fitness=record["fitness"],
            )
            self.population.append(rule)
        self.population.sort(key=self._sort_key)
        self.strategies = [
            PromptStrategy(
                kind=StrategyKind(s["kind"]),
                text=s["text"],
                provenance=s["provenance"],
                produced=list(s["produced"]),
                attempts=s["attempts"],
                born_generation=s["born_generation"],
                on_probation=s["on_probation"],
            )
            for s in state["strategies"]
        ]
        self.rng.setstate(state["rng_state"])
        self.accounting = ChatAccounting(**state["accounting"])
        self.history.append(self._top_tuple())

    def run(self, resume_state: dict | None = None) -> EvolutionResult:
        try:
            if resume_state is not None:
                self.restore(resume_state)
            else:
                self.initialize()
            for _ in range(self.config.max_populations - self.generation):
                self.step()
        except ResourceExhausted:
            self._event({"event": "resource_exhausted", "generation": self.generation,
                         "chat_calls": self.accounting.calls})
        except LlmError as exc:
            self.save_checkpoint()
            self._event({"event": "client_failure", "generation": self.generation,
                         "error": str(exc)})
            raise
        self.save_checkpoint()
        return EvolutionResult(
            population=self.population,
            strategies=self.strategies,
            events=self.events,
            accounting=self.accounting,
        )


def run_evolution(config: EngineConfig, ctx: EvalContext, llm: LlmClient,
                  checkpoint_path=None, rng=None, resume_state=None) -> EvolutionResult:
    """Full evolutionary run; deterministic for a fixed seed and scripted client."""
    import random

    if rng is None:
        rng = random.Random(config.seed)
    engine = Engine(config, ctx, llm, rng, checkpoint_path=checkpoint_path)
    return engine.run(resume_state=resume_state)


def _encode_rng_state(state):
    def encode(value):
        if isinstance(value, tuple):
            return {"__tuple__": [encode(v) for v in value]}
        return value

    return encode(state)


def _decode_rng_state(state):
    if isinstance(state, dict) and "__tuple__" in state:
        return tuple(_decode_rng_state(v) for v in state["__tuple__"])
    return state


def load_checkpoint(path) -> dict:
    """Read back a checkpoint; rule sources re-parse on use, RNG state restores exactly."""
    state = json.loads(Path(path).read_text(encoding="utf-8"))
    state["rng_state"] = _decode_rng_state(state["rng_state"])
    return state
