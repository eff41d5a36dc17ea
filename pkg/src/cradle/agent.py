"""The generator-critic exploration loop.

An optimizer agent (reasoning model) reviews the current best source and
produces a numbered plan; a rewriter agent (completion model) executes it.
Candidates must pass simulation before they are synthesized and measured,
and the best variant only moves on strict objective improvement, so failing
code can never be returned. The loop runs a bounded number of planning
rounds and feeds failures back for self-correction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from . import events, verilog
from .eda import Cancelled, CancelToken, CompileError, PnrFailed, Timeout, ToolMissing
from .llm import ChatRequest, GatewayError, extract_code_blocks
from .model import (
    CradleError,
    DesignUnit,
    Objective,
    ResourceMetrics,
    Variant,
    VerificationVerdict,
    objective_value,
    reductions_vs_reference,
    with_metrics,
)
from .reports import StatsUnparseable, UtilizationNotFound

PROMPT_TOKEN_BUDGET = 64000
REASONING_MODEL_DEFAULT = "o4-mini"


class UnparseablePlan(CradleError):
    """Optimizer reply had neither STEP lines nor a stop marker."""


class NoCodeBlock(CradleError):
    """Rewriter reply contained no extractable code block."""


class InterfaceChanged(CradleError):
    """Rewriter altered the top module's header."""


class PromptTooLarge(CradleError):
    """Estimated prompt size exceeds the configured budget."""


class RefFailsVerification(CradleError):
    """The reference design fails its own testbench; nothing to optimize."""


@dataclass(frozen=True)
class OptimizationPlan:
    id: int
    steps: tuple = ()
    rationale: str = ""
    stop: bool = False
    focus_module: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.stop and not self.steps:
            raise ValueError("a non-stop plan needs at least one step")


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 3
    repair_attempts: int = 2
    objective: Objective = field(default_factory=Objective)
    require_improvement: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.repair_attempts < 0:
            raise ValueError("repair_attempts must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    index: int
    plan: OptimizationPlan | None
    variants: tuple = ()
    failure: str | None = None


@dataclass(frozen=True)
class ExplorationResult:
    best: Variant
    iterations: tuple = ()
    reductions: dict = field(default_factory=dict)
    stopped_early: bool = False
    aborted: str | None = None
    optimizer_calls: int = 0
    rewriter_calls: int = 0
    reference: Variant | None = None

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(self.iterations))
        if not self.best.verdict.passed and not self.best.is_reference:
            raise ValueError("best must be verified or the reference")


def estimate_tokens(text: str) -> int:
    return len(text) // 4


def _render_counts(metrics: ResourceMetrics) -> str:
    return ", ".join(f"{cls}={metrics.get(cls)}" for cls in metrics.classes())


def _objective_text(objective: Objective) -> str:
    if objective.weights is not None:
        terms = " + ".join(f"{w}*{cls}" for cls, w in sorted(objective.weights.items()))
        return f"minimize the weighted sum {terms}"
    return (
        f"minimize {objective.primary_class} count first, "
        f"then {objective.secondary_class} count"
    )


PLAN_FORMAT_INSTRUCTIONS = (
    "Reply with numbered lines of the form `STEP n: <action>`, one line "
    "`RATIONALE: <why>`, optionally one line `FOCUS: <module>`, and exactly "
    "one of `CONTINUE` or `NO_FURTHER_OPTIMIZATION` on its own line."
)


def build_optimizer_prompt(
    design: DesignUnit,
    best_so_far: Variant,
    guidance,
    iteration: int,
    objective: Objective = Objective(),
    target: str = "ecp5",
    prior_summary: str | None = None,
    token_budget: int = PROMPT_TOKEN_BUDGET,
    model: str = REASONING_MODEL_DEFAULT,
) -> ChatRequest:
    """Prompt for one planning round.

    Embeds the current best source and metrics, the previous round's outcome
    (from iteration 2 on), and every guidance text verbatim in arrival
    order. Raises PromptTooLarge instead of silently sending an oversized
    request; the caller may retry with a source trimmed at hierarchy leaves.
    """
    system = (
        "You are a resource-minimizing RTL critic for FPGA designs. "
        f"Objective: {_objective_text(objective)}. Target device family: {target}. "
        "Propose concrete source-level rewrites that keep the design "
        "functionally identical; the testbench must still pass."
    )
    parts = [
        f"Design: {design.name} (top module: {design.top_module})",
        f"Current best implementation (variant {best_so_far.id}):",
        f"```verilog\n{best_so_far.source_text}\n```",
    ]
    if best_so_far.metrics is not None:
        parts.append(f"Measured resource usage: {_render_counts(best_so_far.metrics)}")
    if iteration >= 2 and prior_summary:
        parts.append(f"Previous iteration outcome:\n{prior_summary}")
    guidance = list(guidance or [])
    if guidance:
        lines = "\n".join(f"{i + 1}. {text}" for i, text in enumerate(guidance))
        parts.append(f"Designer guidance (in arrival order):\n{lines}")
    parts.append(PLAN_FORMAT_INSTRUCTIONS)
    user = "\n\n".join(parts)

    if estimate_tokens(system) + estimate_tokens(user) > token_budget:
        raise PromptTooLarge(
            f"estimated {estimate_tokens(system) + estimate_tokens(user)} tokens "
            f"exceeds budget {token_budget}"
        )
    return ChatRequest(model=model, messages=(("system", system), ("user", user)))


def truncate_leaf_modules(source: str, keep: str) -> str:
    """Stub out the bodies of leaf modules (no child instantiations) other
    than `keep`, shrinking a too-large prompt while preserving structure."""
    decls = verilog.scan_modules([source])
    names = list(decls)
    leaves = [
        name
        for name, body in decls.items()
        if name != keep and not verilog.instantiations(body, names)
    ]
    out = source
    for name in leaves:
        header = verilog.module_header(out, name)
        if header is None:
            continue
        body = decls[name]
        stub = header + "\n  // body elided\nendmodule"
        out = out.replace(body, stub, 1)
    return out


_STEP_RE = re.compile(r"^\s*STEP\s+(\d+)\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_RATIONALE_RE = re.compile(r"^\s*RATIONALE\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_FOCUS_RE = re.compile(r"^\s*FOCUS\s*:\s*(\S+)\s*$", re.IGNORECASE | re.MULTILINE)
_STOP_RE = re.compile(r"\bNO_FURTHER_OPTIMIZATION\b")


def parse_plan(text: str, plan_id: int = 0) -> OptimizationPlan:
    """Parse an optimizer reply. Tolerates surrounding prose; step numbering
    is kept only as order. No steps and no stop marker is unparseable."""
    steps = tuple(m.group(2) for m in _STEP_RE.finditer(text))
    stop = bool(_STOP_RE.search(text))
    if not steps and not stop:
        raise UnparseablePlan("reply has no STEP lines and no stop marker")
    rationale_m = _RATIONALE_RE.search(text)
    focus_m = _FOCUS_RE.search(text)
    return OptimizationPlan(
        id=plan_id,
        steps=steps,
        rationale=rationale_m.group(1) if rationale_m else "",
        stop=stop,
        focus_module=focus_m.group(1) if focus_m else None,
    )


def rewrite_candidate(
    gateway,
    plan: OptimizationPlan,
    current_source: str,
    top_module: str,
    feedback: str | None = None,
) -> str:
    """One rewriter call executing the plan on the current source.

    Takes the LAST verilog-tagged block of the reply (any block as
    fallback); rejects replies without a block (NoCodeBlock) or with an
    altered top module header (InterfaceChanged).
    """
    if plan.stop:
        raise ValueError("cannot rewrite from a stop plan")
    system = (
        "You are an RTL rewriter. Apply the given optimization plan to the "
        "Verilog source. Output the complete rewritten design as exactly one "
        "fenced code block tagged verilog. Keep the top module's name and "
        f"port list exactly as given (top module: {top_module}). Do not "
        "change the testbench-visible interface in any way."
    )
    parts = ["Optimization plan:"]
    parts.extend(f"STEP {i + 1}: {step}" for i, step in enumerate(plan.steps))
    if plan.rationale:
        parts.append(f"RATIONALE: {plan.rationale}")
    if feedback:
        parts.append(f"\nThe previous attempt failed. Tool feedback:\n{feedback}")
    parts.append(f"\nCurrent source:\n```verilog\n{current_source}\n```")
    user = "\n".join(parts)

    response = gateway.complete("completion", (("system", system), ("user", user)))
    blocks = extract_code_blocks(response.text, "verilog") or extract_code_blocks(response.text)
    if not blocks:
        raise NoCodeBlock("reply contained no fenced code block")
    candidate = blocks[-1].text
    if not verilog.headers_equivalent(current_source, candidate, top_module):
        expected = verilog.module_header(current_source, top_module) or top_module
        raise InterfaceChanged(
            f"top module header must stay exactly: {verilog.normalize_header(expected)}"
        )
    return candidate


def select_best(reference: Variant, candidates, objective: Objective) -> Variant:
    """Argmin of objective_value over the reference and all verified,
    measured candidates; ties go to the lowest variant id, so an
    equal-cost rewrite never displaces the reference."""
    pool = [reference] + [
        c for c in candidates if c.verdict.passed and c.metrics is not None
    ]
    return min(pool, key=lambda v: (objective_value(v.metrics, objective), v.id))


def _outcome_summary(record: IterationRecord, best_id: int) -> str:
    if record.plan is None:
        return f"Round {record.index} failed: {record.failure}"
    lines = [f"Round {record.index} plan had {len(record.plan.steps)} step(s)."]
    for v in record.variants:
        if v.metrics is not None:
            note = " (new best)" if v.id == best_id else ""
            lines.append(
                f"Variant {v.id}: Pass, {_render_counts(v.metrics)}{note}"
            )
        else:
            rule = f" ({v.verdict.matched_rule})" if v.verdict.matched_rule else ""
            lines.append(f"Variant {v.id}: {v.verdict.status.value}{rule}")
    if not record.variants:
        lines.append(f"No candidate produced: {record.failure}")
    return "\n".join(lines)


class _Emitter:
    def __init__(self, sink):
        self._sink = sink

    def __call__(self, kind: str, payload: dict):
        if self._sink is not None:
            self._sink(kind, payload)


def run_loop(
    design: DesignUnit,
    cfg: LoopConfig,
    adapters,
    gateway,
    sink=None,
    guidance=None,
    guidance_queue=None,
    cancel: CancelToken | None = None,
    variant_sink=None,
    prompt_token_budget: int = PROMPT_TOKEN_BUDGET,
) -> ExplorationResult:
    """Run the full explore loop on one design.

    `adapters` provides simulate/synthesize/place_and_route/measure (live or
    replay); `gateway` provides complete(label, messages); `sink(kind,
    payload)` receives an event at every state transition; `guidance_queue`
    (a queue.Queue) is drained before each planning round so messages sent
    mid-run steer the next prompt; `variant_sink(variant)` is called as each
    variant is produced and again when it gains metrics.
    """
    emit = _Emitter(sink)
    guidance = list(guidance or [])
    cancel = cancel or CancelToken()

    def persist(variant: Variant):
        if variant_sink is not None:
            variant_sink(variant)

    # reference must pass its own testbench before anything else happens
    ref_verdict = adapters.simulate(design.source_files, design.testbench_files, cancel)
    emit(events.VERIFICATION_RESULT, _verdict_payload(0, ref_verdict))
    if not ref_verdict.passed:
        emit(events.ERROR, {
            "message": f"reference design fails verification ({ref_verdict.status.value})",
            "scope": "reference",
        })
        raise RefFailsVerification(ref_verdict.log_excerpt)

    reference = Variant(
        id=0, source_text=design.joined_source(), iteration=0, verdict=ref_verdict
    )
    persist(reference)
    try:
        if design.reference_metrics is not None:
            ref_metrics = design.reference_metrics
        else:
            ref_metrics = adapters.measure(design.source_files, design.top_module, cancel)
    except ToolMissing as e:
        emit(events.ERROR, {"message": str(e), "scope": "tools"})
        emit(events.LOOP_FINISHED, {
            "best_variant_id": 0, "reductions": {}, "stopped_early": False,
            "iterations": 0, "aborted": f"ToolMissing: {e}",
        })
        return ExplorationResult(
            best=reference, aborted=f"ToolMissing: {e}", reference=reference
        )
    reference = with_metrics(reference, ref_metrics)
    persist(reference)
    emit(events.METRICS_MEASURED, {"variant_id": 0, "counts": dict(ref_metrics.counts)})

    best = reference
    iterations: list[IterationRecord] = []
    optimizer_calls = 0
    rewriter_calls = 0
    next_variant_id = 1
    stopped_early = False
    aborted: str | None = None
    prior_summary: str | None = None

    def finish() -> ExplorationResult:
        reds = reductions_vs_reference(ref_metrics, best.metrics)
        # reduction 48.0 means the count went down 48%, shown as "-48.0%"
        summary_bits = ", ".join(
            f"{cls} {-reds[cls]:+.1f}%"
            for cls in sorted(reds)
            if cls in (cfg.objective.primary_class, cfg.objective.secondary_class)
        )
        emit(events.AGENT_MESSAGE, {
            "text": f"Exploration finished: best is variant {best.id} ({summary_bits})."
        })
        payload = {
            "best_variant_id": best.id,
            "reductions": reds,
            "stopped_early": stopped_early,
            "iterations": len(iterations),
        }
        if aborted:
            payload["aborted"] = aborted
        emit(events.LOOP_FINISHED, payload)
        return ExplorationResult(
            best=best,
            iterations=tuple(iterations),
            reductions=reds,
            stopped_early=stopped_early,
            aborted=aborted,
            optimizer_calls=optimizer_calls,
            rewriter_calls=rewriter_calls,
            reference=reference,
        )

    while optimizer_calls < cfg.max_iterations and not stopped_early and aborted is None:
        round_index = len(iterations) + 1
        if guidance_queue is not None:
            while not guidance_queue.empty():
                guidance.append(guidance_queue.get_nowait())
        if cancel.cancelled:
            aborted = "cancelled"
            break

        try:
            plan, calls_used = _plan_round(
                design, best, guidance, round_index, cfg, gateway,
                prior_summary, prompt_token_budget,
                cfg.max_iterations - optimizer_calls,
            )
        except GatewayError as e:
            optimizer_calls += 1
            iterations.append(IterationRecord(round_index, None, failure=f"gateway: {e}"))
            emit(events.ERROR, {"message": str(e), "scope": "gateway"})
            aborted = f"gateway: {e.code}"
            finish()
            raise
        except PromptTooLarge as e:
            iterations.append(IterationRecord(round_index, None, failure=str(e)))
            emit(events.ERROR, {"message": str(e), "scope": "plan"})
            aborted = "PromptTooLarge"
            break
        optimizer_calls += calls_used
        if plan is None:
            iterations.append(
                IterationRecord(round_index, None, failure="UnparseablePlan")
            )
            emit(events.ERROR, {"message": "optimizer reply was unparseable", "scope": "plan"})
            continue

        plan_payload = {
            "iteration": round_index,
            "plan_id": plan.id,
            "steps": list(plan.steps),
            "rationale": plan.rationale,
            "stop": plan.stop,
        }
        if plan.focus_module:
            plan_payload["focus_module"] = plan.focus_module
        emit(events.PLAN_CREATED, plan_payload)

        if plan.stop:
            stopped_early = True
            iterations.append(IterationRecord(round_index, plan))
            break

        round_variants: list[Variant] = []
        failure: str | None = None
        feedback: str | None = None
        measured = False
        for attempt in range(1, cfg.repair_attempts + 2):
            if cancel.cancelled:
                aborted = "cancelled"
                break
            rewriter_calls += 1
            try:
                candidate_text = rewrite_candidate(
                    gateway, plan, best.source_text, design.top_module, feedback
                )
            except GatewayError as e:
                iterations.append(
                    IterationRecord(round_index, plan, tuple(round_variants),
                                    failure=f"gateway: {e}")
                )
                emit(events.ERROR, {"message": str(e), "scope": "gateway"})
                finish()
                raise
            except NoCodeBlock as e:
                failure = str(e)
                feedback = (
                    "Your previous reply contained no fenced code block. "
                    + "Reply with the complete design in one ```verilog block."
                )
                emit(events.ERROR, {"message": str(e), "scope": "rewrite"})
                continue
            except InterfaceChanged as e:
                failure = str(e)
                feedback = str(e)
                emit(events.ERROR, {"message": str(e), "scope": "rewrite"})
                continue

            variant_id = next_variant_id
            next_variant_id += 1
            emit(events.CANDIDATE_PRODUCED, {
                "variant_id": variant_id, "iteration": round_index, "attempt": attempt,
            })
            try:
                verdict = adapters.simulate(
                    [(f"{design.top_module}.v", candidate_text)],
                    design.testbench_files,
                    cancel,
                )
            except ToolMissing as e:
                aborted = f"ToolMissing: {e}"
                emit(events.ERROR, {"message": str(e), "scope": "tools"})
                break
            except Cancelled:
                aborted = "cancelled"
                break
            emit(events.VERIFICATION_RESULT, _verdict_payload(variant_id, verdict))
            variant = Variant(
                id=variant_id, source_text=candidate_text, iteration=round_index,
                verdict=verdict, plan_ref=plan.id,
            )
            round_variants.append(variant)
            persist(variant)
            if not verdict.passed:
                failure = f"verification {verdict.status.value}"
                feedback = _repair_feedback(verdict)
                continue

            try:
                metrics = adapters.measure(
                    [(f"{design.top_module}.v", candidate_text)], design.top_module, cancel
                )
            except ToolMissing as e:
                aborted = f"ToolMissing: {e}"
                emit(events.ERROR, {"message": str(e), "scope": "tools"})
                break
            except Cancelled:
                aborted = "cancelled"
                break
            except (CompileError, PnrFailed, Timeout, StatsUnparseable, UtilizationNotFound) as e:
                failure = f"measurement failed: {e.code}"
                feedback = f"Synthesis/place-and-route failed:\n{e}"
                emit(events.ERROR, {"message": f"{e.code}: {e}", "scope": "measure"})
                continue

            variant = with_metrics(variant, metrics)
            round_variants[-1] = variant
            persist(variant)
            emit(events.METRICS_MEASURED, {
                "variant_id": variant_id, "counts": dict(metrics.counts),
            })
            failure = None
            measured = True
            if objective_value(metrics, cfg.objective) < objective_value(
                best.metrics, cfg.objective
            ):
                best = variant
                emit(events.BEST_UPDATED, {
                    "variant_id": variant_id,
                    "reductions": reductions_vs_reference(ref_metrics, metrics),
                })
            break

        record = IterationRecord(
            round_index, plan, tuple(round_variants),
            failure=failure if not measured else None,
        )
        iterations.append(record)
        prior_summary = _outcome_summary(record, best.id)

    return finish()


def _plan_round(
    design, best, guidance, round_index, cfg, gateway,
    prior_summary, token_budget, calls_left,
):
    """One planning round: prompt, parse, and on an unparseable reply one
    re-ask with a format reminder (budget permitting). Returns
    (plan or None, optimizer calls used)."""
    source = best.source_text
    try:
        request = build_optimizer_prompt(
            design, best, guidance, round_index,
            objective=cfg.objective, prior_summary=prior_summary,
            token_budget=token_budget,
        )
    except PromptTooLarge:
        trimmed = truncate_leaf_modules(source, design.top_module)
        request = build_optimizer_prompt(
            design, replace(best, source_text=trimmed), guidance, round_index,
            objective=cfg.objective, prior_summary=prior_summary,
            token_budget=token_budget,
        )

    response = gateway.complete("reasoning", request.messages)
    calls = 1
    try:
        return parse_plan(response.text, plan_id=round_index), calls
    except UnparseablePlan:
        if calls >= calls_left:
            return None, calls
    reminder = request.messages + (
        ("assistant", response.text),
        ("user", "That reply could not be parsed. " + PLAN_FORMAT_INSTRUCTIONS),
    )
    response = gateway.complete("reasoning", reminder)
    calls += 1
    try:
        return parse_plan(response.text, plan_id=round_index), calls
    except UnparseablePlan:
        return None, calls


def _verdict_payload(variant_id: int, verdict: VerificationVerdict) -> dict:
    return {
        "variant_id": variant_id,
        "status": verdict.status.value,
        "matched_rule": verdict.matched_rule,
        "log_excerpt": verdict.log_excerpt,
    }


def _repair_feedback(verdict: VerificationVerdict) -> str:
    label = {
        "CompileError": "The candidate failed to compile.",
        "SimFail": "The candidate failed simulation against the testbench.",
        "Timeout": "The simulation did not finish in time.",
    }.get(verdict.status.value, "Verification failed.")
    excerpt = verdict.log_excerpt.strip()
    if excerpt:
        return f"{label}\nLog excerpt:\n{excerpt}"
    return label
