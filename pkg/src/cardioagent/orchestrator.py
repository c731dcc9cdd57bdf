"""
The chief cardiologist loop.

``execute_case`` triages the task, retrieves reference chunks, plans,
executes each step through a tool (or plain reasoning), consults the
planner after every step when the case is complex, holds a
multidisciplinary discussion when an ``ESCALATE: discussion`` marker shows
up, reviews the completed steps and finally asks the chief for a summary
and an answer.  Everything lands in an append-only trace.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from . import trace as tracing
from .case import CaseInput, load_case
from .discussion import DiscussionConfig, DiscussionTranscript, EvidenceBundle, run_discussion
from .errors import BackendFailure, CardioError, DecisionParseFailure, ParseFailure, ToolUnavailable
from .gateway import Gateway, Role
from .parsing import clean_response, has_escalation, parse_fields
from .prompts import DEFAULT_TEMPLATES, PromptTemplates
from .rag_planner import (
    DEFAULT_MAX_REVISIONS,
    Plan,
    PlanRun,
    PlanStep,
    Retriever,
    StepRecord,
    StepStatus,
    ask_with_retry,
    execute_plan,
    generate_plan,
)
from .tools.registry import NONE_TOOL, CaseContext, ToolRegistry, echo_panel_data, ecg_panel_data
from .trace import ExecutionTrace

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_BACKEND = 3


class Complexity(str, enum.Enum):
    SIMPLE = "simple"
    COMPLEX = "complex"


@dataclass(frozen=True)
class ComplexityVerdict:
    label: Complexity
    rationale: str
    fallback: bool = False

    @property
    def adaptive(self) -> bool:
        return self.label is Complexity.COMPLEX


@dataclass(frozen=True)
class Decision:
    summary: str
    answer: str
    probability: Optional[float] = None
    supporting_steps: Tuple[int, ...] = ()

    def __post_init__(self):
        if not self.answer.strip():
            raise DecisionParseFailure("decision answer is empty")
        if self.probability is not None and not (0.0 <= self.probability <= 1.0):
            raise DecisionParseFailure(f"probability {self.probability} outside [0, 1]")

    def as_dict(self) -> Dict[str, Any]:
        return {
            "summary": self.summary,
            "answer": self.answer,
            "probability": self.probability,
            "supporting_steps": list(self.supporting_steps),
        }


# ---------------------------------------------------------------------------
# Triage and tool selection
# ---------------------------------------------------------------------------


def assess_complexity(
    case: CaseInput, gw: Gateway, templates: PromptTemplates = DEFAULT_TEMPLATES
) -> ComplexityVerdict:
    text = gw.ask(
        Role.CHIEF, templates.render("complexity", question=case.question, modalities=case.inventory())
    )
    fields = parse_fields(text, ("COMPLEXITY", "RATIONALE"))
    words = fields.get("COMPLEXITY", "").split()
    label = words[0].strip(".,;*").lower() if words else ""
    rationale = fields.get("RATIONALE", "").strip()
    if label in (Complexity.SIMPLE.value, Complexity.COMPLEX.value):
        verdict = ComplexityVerdict(Complexity(label), rationale)
    else:
        log.warning("complexity label not found in chief output; treating the case as complex")
        verdict = ComplexityVerdict(Complexity.COMPLEX, rationale or clean_response(text).strip(), fallback=True)
    tracing.record(
        "complexity", label=verdict.label.value, rationale=verdict.rationale, fallback=verdict.fallback
    )
    return verdict


def select_tool(
    step: PlanStep,
    registry: ToolRegistry,
    gw: Optional[Gateway] = None,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
    question: str = "",
) -> str:
    if len(registry) == 0:
        raise ToolUnavailable(f"step {step.ordinal}: tool registry is empty")
    if step.suggested_tool:
        if step.suggested_tool == NONE_TOOL or step.suggested_tool in registry:
            return step.suggested_tool
        raise ToolUnavailable(f"step {step.ordinal}: suggested tool {step.suggested_tool!r} is not registered")
    if gw is None:
        raise ToolUnavailable(f"step {step.ordinal}: no tool hint and no chief model to choose one")
    text = gw.ask(
        Role.CHIEF,
        templates.render(
            "select_tool", question=question, step=f"{step.ordinal}. {step.instruction}",
            tool_cards=registry.render_cards(),
        ),
    )
    words = parse_fields(text, ("TOOL",)).get("TOOL", "").split()
    choice = words[0].strip(".,;*`").lower() if words else ""
    if choice == NONE_TOOL or choice in registry:
        return choice
    raise ToolUnavailable(f"step {step.ordinal}: chief chose {choice or '(nothing)'!r}, which is not registered")


# ---------------------------------------------------------------------------
# Decision
# ---------------------------------------------------------------------------

_DECISION_KEYS = ("SUMMARY", "ANSWER", "PROBABILITY", "SUPPORTING_STEPS")
_FLOAT_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?%?$")


def parse_decision(text: str, terminal: Dict[int, StepStatus]) -> Optional[Decision]:
    fields = parse_fields(text, _DECISION_KEYS)
    answer = fields.get("ANSWER", "").strip()
    if not answer:
        return None
    prob = None
    raw = fields.get("PROBABILITY", "").strip().split()
    if raw and raw[0].lower() not in ("none", "null", "n/a", "-"):
        token = raw[0].rstrip(".,;")
        if not _FLOAT_RE.match(token):
            return None
        prob = float(token.rstrip("%")) / (100.0 if token.endswith("%") else 1.0)
        if not (0.0 <= prob <= 1.0) or math.isnan(prob):
            return None
    if "SUPPORTING_STEPS" in fields:
        cited = [int(n) for n in re.findall(r"\d+", fields["SUPPORTING_STEPS"])]
        steps = tuple(dict.fromkeys(n for n in cited if n in terminal))
        if len(steps) != len(set(cited)):
            log.warning("decision cited steps outside the executed plan; dropped them")
    else:
        steps = tuple(n for n, s in terminal.items() if s is StepStatus.DONE)
    return Decision(fields.get("SUMMARY", "").strip(), answer, prob, steps)


def finalize_decision(
    plan: Plan,
    step_log: str,
    gw: Gateway,
    discussion: Optional[DiscussionTranscript] = None,
    review: str = "",
    question: str = "",
    templates: PromptTemplates = DEFAULT_TEMPLATES,
) -> Decision:
    if any(not s.terminal for s in plan.steps):
        raise CardioError("finalize_decision needs every plan step done or skipped")
    terminal = {s.ordinal: s.status for s in plan.steps}
    prompt = templates.render(
        "decision",
        question=question,
        plan=plan.render(),
        step_log=step_log or "(no steps executed)",
        discussion=_discussion_digest(discussion),
        review=review or "(no review)",
    )
    decision, _ = ask_with_retry(
        gw, Role.CHIEF, prompt, templates.render("decision_reminder"),
        lambda text: parse_decision(text, terminal), DecisionParseFailure, "final decision",
    )
    tracing.record("decision", **decision.as_dict())
    return decision


def _discussion_digest(d: Optional[DiscussionTranscript]) -> str:
    if d is None:
        return "(no discussion held)"
    head = f"Discussion between {d.roles[0]} and {d.roles[1]}: {len(d.turns)} step(s), stop reason {d.stop_reason.value}."
    if not d.turns:
        return head
    return f"{head}\nFinal synthesis:\n{d.final_text}"


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass
class Engine:
    retriever: Retriever
    gateway: Gateway
    registry: ToolRegistry = field(default_factory=ToolRegistry)
    remote: Any = None
    templates: PromptTemplates = DEFAULT_TEMPLATES
    discussion: DiscussionConfig = field(default_factory=DiscussionConfig)
    max_revisions: int = DEFAULT_MAX_REVISIONS
    ecg_band: Tuple[float, float] = (0.5, 40.0)


@dataclass
class CaseResult:
    decision: Decision
    trace: ExecutionTrace
    run: PlanRun
    complexity: ComplexityVerdict
    discussion: Optional[DiscussionTranscript]
    review: str
    context: CaseContext


class CaseAborted(CardioError):
    """Wraps the error that ended a case; ``trace`` holds everything up to it."""

    def __init__(self, cause: CardioError, trace: ExecutionTrace):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause
        self.trace = trace

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.cause)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CaseAborted):
        return exc.exit_code
    if isinstance(exc, BackendFailure):
        return EXIT_BACKEND
    if isinstance(exc, ParseFailure):
        return EXIT_PARSE
    return 1


def _step_runner(engine: Engine, ctx: CaseContext, question: str):
    def run_step(step: PlanStep, plan: Plan, records: List[StepRecord]) -> StepRecord:
        try:
            tool = select_tool(step, engine.registry, engine.gateway, engine.templates, question)
        except ToolUnavailable as exc:
            tracing.record("tool_unavailable", ordinal=step.ordinal, reason=str(exc))
            return StepRecord(step.ordinal, step.suggested_tool, f"step skipped: {exc}", ok=False)
        if tool == NONE_TOOL:
            log_text = "\n".join(f"Step {r.ordinal} ({r.tool or 'reasoning'}): {r.result}" for r in records)
            text = engine.gateway.ask(
                Role.CHIEF,
                engine.templates.render(
                    "reasoning_step", question=question, step=f"{step.ordinal}. {step.instruction}",
                    step_log=log_text or "(none)",
                ),
            )
            text = clean_response(text).strip()
            return StepRecord(step.ordinal, None, text, escalate=has_escalation(text))
        tracing.record("tool_call", ordinal=step.ordinal, tool=tool)
        try:
            out = engine.registry.run(tool, ctx)
        except BackendFailure as exc:
            # a remote tool outage degrades the step; only model-gateway loss aborts
            return StepRecord(step.ordinal, tool, f"step skipped: {tool} failed: {exc}", ok=False)
        except CardioError as exc:
            return StepRecord(step.ordinal, tool, f"step skipped: {tool} failed: {exc}", ok=False)
        return StepRecord(step.ordinal, tool, out.text, data=out.data, escalate=has_escalation(out.text))

    return run_step


def execute_case(
    case: CaseInput,
    engine: Engine,
    trace: Optional[ExecutionTrace] = None,
    out: Optional[Union[str, Path]] = None,
) -> CaseResult:
    trace = trace if trace is not None else ExecutionTrace(case.case_id)
    ctx = CaseContext(case, remote=engine.remote, band=tuple(engine.ecg_band))
    gw = engine.gateway
    with tracing.activate(trace):
        try:
            trace.record(
                "case", case_id=case.case_id, question=case.question, modalities=case.modalities(),
                inventory=case.inventory(), backends=gw.describe(),
            )
            verdict = assess_complexity(case, gw, engine.templates)
            ctx_chunks = engine.retriever.retrieve(case.question)
            plan = generate_plan(ctx_chunks, gw, engine.templates)

            held: List[DiscussionTranscript] = []

            def on_escalate(step: PlanStep, source: str, records: List[StepRecord]) -> Optional[str]:
                if held:
                    tracing.record("escalation_ignored", ordinal=step.ordinal, reason="discussion already held")
                    return None
                bundle = EvidenceBundle(
                    question=case.question,
                    inputs=case.render_inputs(),
                    intermediate=ctx.evidence_text(),
                    media=tuple(case.echo_refs),
                )
                transcript = run_discussion(bundle, engine.discussion, gw, templates=engine.templates)
                held.append(transcript)
                trace.record("discussion", ordinal=step.ordinal, source=source, transcript=transcript.to_dict())
                return "Multidisciplinary discussion: " + _discussion_digest(transcript)

            run = execute_plan(
                plan, _step_runner(engine, ctx, case.question), gw, adaptive=verdict.adaptive,
                templates=engine.templates, max_revisions=engine.max_revisions,
                on_escalate=on_escalate, question=case.question,
            )
            trace.record("plan_final", plan=run.plan.as_dict(), stop_reason=run.stop_reason)
            discussion = held[0] if held else None
            review = clean_response(
                gw.ask(
                    Role.CHIEF,
                    engine.templates.render(
                        "review", question=case.question, plan=run.plan.render(),
                        step_log=run.result_log() or "(no steps executed)",
                        discussion=_discussion_digest(discussion),
                    ),
                )
            ).strip()
            trace.record("review", text=review)
            decision = finalize_decision(
                run.plan, run.result_log(), gw, discussion, review, case.question, engine.templates
            )
            trace.record("artifacts", **panel_artifacts(case, ctx, decision))
        except CardioError as exc:
            trace.record("aborted", error=type(exc).__name__, message=str(exc), exit_code=exit_code_for(exc))
            if out is not None:
                trace.save(out)
            raise CaseAborted(exc, trace) from exc
    if out is not None:
        trace.save(out)
    return CaseResult(decision, trace, run, verdict, discussion, review, ctx)


def panel_artifacts(case: CaseInput, ctx: CaseContext, decision: Decision) -> Dict[str, Any]:
    profile = {"source": "labs", "text": ctx.labs.narrative} if ctx.labs is not None else {
        "source": "question", "text": case.question,
    }
    return {
        "case_id": case.case_id,
        "profile": profile,
        "ecg": ecg_panel_data(ctx),
        "echo": echo_panel_data(ctx),
        "decision": decision.as_dict(),
    }


def run_case_dir(directory: Union[str, Path], engine: Engine, out: Optional[Union[str, Path]] = None) -> CaseResult:
    return execute_case(load_case(directory), engine, out=out)
