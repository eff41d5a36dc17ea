"""Conversational optimization loop for small RTL designs.

A planner model proposes rewrite steps, a completion model applies them,
simulation gates every candidate, and synthesis + place-and-route numbers
decide which variant is kept. Everything observable about a session lives
in its append-only event log.
"""

from .agent import (
    ExplorationResult,
    LoopConfig,
    OptimizationPlan,
    build_optimizer_prompt,
    parse_plan,
    rewrite_candidate,
    run_loop,
    select_best,
)
from .bench import aggregate, discover_suite, emit, run_suite
from .eda import (
    ExternalToolAdapter,
    ToolConfig,
    VerdictRules,
    place_and_route,
    simulate,
    synthesize,
)
from .llm import ChatRequest, ChatResponse, Gateway, LiveBackend, ScriptedBackend, complete, extract_code_blocks
from .model import (
    FF,
    LUT,
    CradleError,
    DesignUnit,
    Objective,
    ResourceMetrics,
    Variant,
    VerdictStatus,
    VerificationVerdict,
    extract_hierarchy,
    objective_value,
    reduction,
    reductions_vs_reference,
)
from .replay import ReplayAdapter, replay_adapter
from .service import CradleService, PortInUse, serve, stream_events
from .session import SessionManager, append_event, load_session, post_message, read_events

__version__ = "0.1.0"

__all__ = [
    "CradleError", "CradleService", "ChatRequest", "ChatResponse", "DesignUnit",
    "ExplorationResult", "ExternalToolAdapter", "FF", "Gateway", "LiveBackend",
    "LoopConfig", "LUT", "Objective", "OptimizationPlan", "PortInUse",
    "ReplayAdapter", "ResourceMetrics", "ScriptedBackend", "SessionManager",
    "ToolConfig", "Variant", "VerdictRules", "VerdictStatus", "VerificationVerdict",
    "aggregate", "append_event", "build_optimizer_prompt", "complete",
    "discover_suite", "emit", "extract_code_blocks", "extract_hierarchy",
    "load_session", "objective_value", "parse_plan", "place_and_route",
    "post_message", "read_events", "reduction", "reductions_vs_reference",
    "replay_adapter", "rewrite_candidate", "run_loop", "run_suite",
    "select_best", "serve", "simulate", "stream_events", "synthesize",
]
