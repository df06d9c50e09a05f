from .fitness import EngineConfig, EvalContext, InstanceContext, build_eval_context, compute_epsilon, fitness, theta
from .llm import ChatResponse, HttpChatClient, LlmClient, LlmError, MockChatClient
from .engine import (
    EvolutionResult,
    PromptStrategy,
    StrategyKind,
    detect_stagnation,
    load_checkpoint,
    run_evolution,
    select_parents,
)

__all__ = [
    "EngineConfig",
    "EvalContext",
    "InstanceContext",
    "build_eval_context",
    "compute_epsilon",
    "fitness",
    "theta",
    "ChatResponse",
    "HttpChatClient",
    "LlmClient",
    "LlmError",
    "MockChatClient",
    "EvolutionResult",
    "PromptStrategy",
    "StrategyKind",
    "detect_stagnation",
    "load_checkpoint",
    "run_evolution",
    "select_parents",
]
