"""
Retrieval-grounded planning.

``retrieve`` runs the two-stage search (dense top-3n, keyword re-scoring to
n), ``generate_plan`` turns the retrieved context into a numbered procedure
and ``stepwise_update`` asks the planner model, after each executed step,
for a running summary, a continue/stop action and an optional replacement
for the remaining steps.  ``execute_plan`` drives that loop.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

from . import trace as tracing
from .corpus import ChunkStore
from .errors import EmptyIndex, EmptyQuery, InvalidConfig, PlanParseFailure, UpdateParseFailure
from .gateway import ChatRequest, Gateway, Message, Role
from .keyword_filter import FilterConfig, MedicalVocabulary, QueryKeywords, RankedChunk, filter_candidates
from .parsing import has_escalation, is_null, parse_fields, parse_numbered_list
from .prompts import DEFAULT_TEMPLATES, PromptTemplates
from .vector_index import Embedder, VectorIndex, embed, search_topk

log = logging.getLogger(__name__)

DEFAULT_MAX_REVISIONS = 5


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetrievedContext:
    question: str
    chunks: Sequence[RankedChunk]
    n: int
    keywords: Sequence[str] = ()

    def render(self) -> str:
        if not self.chunks:
            return "(no reference material retrieved)"
        return "\n\n".join(
            f"[{i}] ({r.chunk_id}) {r.chunk.text}" for i, r in enumerate(self.chunks, start=1)
        )


@dataclass
class Retriever:
    store: ChunkStore
    index: VectorIndex
    embedder: Embedder
    vocab: MedicalVocabulary
    cfg: FilterConfig
    n: int = 3
    stopwords: frozenset = frozenset()

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfig(f"n must be >= 1, got {self.n}")
        if self.index.count and self.index.embedder_name != self.embedder.name:
            raise InvalidConfig(
                f"index was built with {self.index.embedder_name!r}, "
                f"query embedder is {self.embedder.name!r}"
            )
        # position bonus is relative to the chunk size the store was cut with
        if self.cfg.chunk_size != self.store.config.chunk_size:
            self.cfg = replace(self.cfg, chunk_size=self.store.config.chunk_size)

    def retrieve(self, question: str) -> RetrievedContext:
        return retrieve(
            question, self.store, self.index, self.embedder, self.vocab, self.cfg, self.n, self.stopwords
        )


def retrieve(
    question: str,
    store: ChunkStore,
    index: VectorIndex,
    embedder: Embedder,
    vocab: MedicalVocabulary,
    cfg: FilterConfig,
    n: int = 3,
    stopwords=frozenset(),
) -> RetrievedContext:
    if index.count == 0:
        raise EmptyIndex("vector index is empty; build it before querying")
    kw = QueryKeywords.from_query(question, stopwords)
    if len(kw) == 0:
        raise EmptyQuery(f"no keywords left in query {question!r} after stopword removal")
    cands = search_topk(index, embed(question, embedder), 3 * n)
    ranked = filter_candidates(cands, store, kw, vocab, cfg, n)
    tracing.record(
        "retrieval",
        question=question,
        keywords=list(kw.keywords),
        candidates=[[c.chunk_id, round(c.cosine, 12)] for c in cands],
        selected=[
            {"chunk_id": r.chunk_id, "score": round(r.score.score, 12), "backfilled": r.backfilled}
            for r in ranked
        ],
    )
    return RetrievedContext(question=question, chunks=tuple(ranked), n=n, keywords=kw.keywords)


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


class StepStatus(str, enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    SKIPPED = "skipped"


# pending -> skipped covers steps abandoned by a stop action
_TRANSITIONS = {
    StepStatus.PENDING: {StepStatus.RUNNING, StepStatus.SKIPPED},
    StepStatus.RUNNING: {StepStatus.DONE, StepStatus.SKIPPED},
    StepStatus.DONE: set(),
    StepStatus.SKIPPED: set(),
}


class InvalidTransition(InvalidConfig):
    pass


@dataclass
class PlanStep:
    ordinal: int
    instruction: str
    suggested_tool: Optional[str] = None
    status: StepStatus = StepStatus.PENDING
    note: str = ""

    def advance(self, status: StepStatus, note: str = "") -> None:
        status = StepStatus(status)
        if status not in _TRANSITIONS[self.status]:
            raise InvalidTransition(f"step {self.ordinal}: {self.status.value} -> {status.value} not allowed")
        self.status = status
        if note:
            self.note = note

    @property
    def terminal(self) -> bool:
        return self.status in (StepStatus.DONE, StepStatus.SKIPPED)

    def as_dict(self) -> dict:
        d = {"ordinal": self.ordinal, "instruction": self.instruction, "status": self.status.value}
        if self.suggested_tool:
            d["suggested_tool"] = self.suggested_tool
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class Plan:
    steps: List[PlanStep]
    revision: int = 0

    def __post_init__(self):
        for i, s in enumerate(self.steps, start=1):
            if s.ordinal != i:
                raise InvalidConfig(f"plan step ordinals must be contiguous from 1 (got {s.ordinal} at {i})")

    @property
    def s(self) -> int:
        return len(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def step(self, ordinal: int) -> PlanStep:
        return self.steps[ordinal - 1]

    def next_pending(self) -> Optional[PlanStep]:
        return next((s for s in self.steps if s.status is StepStatus.PENDING), None)

    def running(self) -> Optional[PlanStep]:
        return next((s for s in self.steps if s.status is StepStatus.RUNNING), None)

    def pending(self) -> List[PlanStep]:
        return [s for s in self.steps if s.status is StepStatus.PENDING]

    def render(self) -> str:
        lines = []
        for s in self.steps:
            hint = f" [tool: {s.suggested_tool}]" if s.suggested_tool else ""
            lines.append(f"{s.ordinal}. {s.instruction}{hint} ({s.status.value})")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {"revision": self.revision, "steps": [s.as_dict() for s in self.steps]}

    def snapshot(self) -> "Plan":
        return Plan([replace(s) for s in self.steps], self.revision)

    def with_replacement(self, new_steps: Sequence[PlanStep]) -> "Plan":
        """Keep started/finished steps, swap every pending step for ``new_steps``."""
        kept = [replace(s) for s in self.steps if s.status is not StepStatus.PENDING]
        start = len(kept)
        fresh = [
            PlanStep(start + i, s.instruction, s.suggested_tool) for i, s in enumerate(new_steps, start=1)
        ]
        return Plan(kept + fresh, self.revision + 1)


def plan_from_text(text: str, revision: int = 0) -> Optional[Plan]:
    items = parse_numbered_list(text)
    if not items:
        return None
    return Plan([PlanStep(i, instr, tool) for i, (instr, tool) in enumerate(items, start=1)], revision)


def ask_with_retry(gw: Gateway, role: Role, prompt: str, reminder: str, parse, failure_cls, what: str):
    """One request, and on a contract violation one reprompt with a format reminder."""
    messages = [Message("user", prompt)]
    first = gw.complete(ChatRequest(role=role, messages=tuple(messages))).text
    result = parse(first)
    if result is not None:
        return result, first
    log.warning("%s response violated the output contract; reprompting once", what)
    tracing.record("contract_retry", what=what)
    messages += [Message("assistant", first), Message("user", reminder)]
    second = gw.complete(ChatRequest(role=role, messages=tuple(messages))).text
    result = parse(second)
    if result is None:
        raise failure_cls(f"{what}: response did not follow the required format after one retry")
    return result, second


def generate_plan(
    ctx: RetrievedContext, gw: Gateway, templates: PromptTemplates = DEFAULT_TEMPLATES
) -> Plan:
    if not ctx.chunks:
        log.warning("planning without retrieved context for %r", ctx.question)
        tracing.record("context_gap", question=ctx.question)
    prompt = templates.render("plan", question=ctx.question, context_chunks=ctx.render())
    plan, _ = ask_with_retry(
        gw, Role.PLANNER, prompt, templates.render("plan_reminder"), plan_from_text, PlanParseFailure, "plan"
    )
    tracing.record("plan_generated", plan=plan.as_dict())
    return plan


# ---------------------------------------------------------------------------
# Stepwise update
# ---------------------------------------------------------------------------


class Action(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass(frozen=True)
class StepOutcome:
    summary: str
    action: Action
    next_plan: Optional[Plan]
    step_result: str
    escalate: bool = False
    diagnostic: str = ""


_UPDATE_KEYS = ("SUMMARY", "ACTION", "NEW_PLAN", "ESCALATE")


def parse_update(text: str, plan: Plan, step_result: str) -> Optional[StepOutcome]:
    fields = parse_fields(text, _UPDATE_KEYS)
    action_raw = fields.get("ACTION", "").split()
    if not action_raw:
        return None
    try:
        action = Action(action_raw[0].strip(".,;").lower())
    except ValueError:
        return None
    new_plan = None
    raw_plan = fields.get("NEW_PLAN")
    if action is Action.CONTINUE and not is_null(raw_plan):
        items = parse_numbered_list(raw_plan)
        if not items:
            return None
        new_plan = plan.with_replacement([PlanStep(i, a, t) for i, (a, t) in enumerate(items, start=1)])
    return StepOutcome(
        summary=fields.get("SUMMARY", ""),
        action=action,
        next_plan=new_plan,
        step_result=step_result,
        escalate=has_escalation(text),
    )


def stepwise_update(
    plan: Plan,
    step_result: str,
    running_summary: str,
    gw: Gateway,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
    step_log: str = "",
    question: str = "",
) -> StepOutcome:
    current = plan.running()
    if current is None:
        raise InvalidConfig("stepwise_update needs a step in status 'running'")
    prompt = templates.render(
        "update",
        question=question,
        plan_so_far=plan.render(),
        current_step=f"{current.ordinal}. {current.instruction}",
        step_result=step_result,
        summary=running_summary or "(none yet)",
        step_log=step_log or "(none)",
    )
    outcome, _ = ask_with_retry(
        gw,
        Role.PLANNER,
        prompt,
        templates.render("update_reminder"),
        lambda text: parse_update(text, plan, step_result),
        UpdateParseFailure,
        "stepwise update",
    )
    return outcome


# ---------------------------------------------------------------------------
# Execution loop
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    ordinal: int
    tool: Optional[str]
    result: str
    ok: bool = True
    escalate: bool = False
    data: dict = field(default_factory=dict)


@dataclass
class PlanRun:
    plan: Plan
    history: List[Plan]
    records: List[StepRecord]
    outcomes: List[StepOutcome]
    summary: str
    stop_reason: str
    escalations: int = 0

    def result_log(self) -> str:
        return "\n".join(
            f"Step {r.ordinal} ({r.tool or 'reasoning'}): {r.result}" for r in self.records
        )


StepRunner = Callable[[PlanStep, Plan, List[StepRecord]], StepRecord]
EscalationHandler = Callable[[PlanStep, str, List[StepRecord]], Optional[str]]


def execute_plan(
    plan: Plan,
    run_step: StepRunner,
    gw: Gateway,
    adaptive: bool,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
    max_revisions: int = DEFAULT_MAX_REVISIONS,
    on_escalate: Optional[EscalationHandler] = None,
    question: str = "",
) -> PlanRun:
    """Run every step of ``plan``; with ``adaptive`` consult the planner after each.

    A stop action skips all remaining steps.  Replacement plans beyond
    ``max_revisions`` are refused and force a stop, so the loop always ends:
    each iteration finishes one step and the step supply is bounded by the
    initial plan plus at most ``max_revisions`` replacements.
    """
    history = [plan.snapshot()]
    records: List[StepRecord] = []
    outcomes: List[StepOutcome] = []
    summary = ""
    stop_reason = "completed"
    escalations = 0

    def escalate(step: PlanStep, source: str):
        nonlocal escalations
        escalations += 1
        tracing.record("escalation", ordinal=step.ordinal, source=source)
        if on_escalate is not None:
            text = on_escalate(step, source, records)
            if text:
                records.append(StepRecord(step.ordinal, "discussion", text))

    while True:
        step = plan.next_pending()
        if step is None:
            break
        step.advance(StepStatus.RUNNING)
        tracing.record("step_started", ordinal=step.ordinal, instruction=step.instruction, revision=plan.revision)
        rec = run_step(step, plan, records)
        records.append(rec)
        tracing.record(
            "step_result", ordinal=step.ordinal, tool=rec.tool, ok=rec.ok, result=rec.result, data=rec.data
        )

        outcome = None
        if adaptive:
            outcome = stepwise_update(
                plan, rec.result, summary, gw, templates,
                step_log="\n".join(f"Step {r.ordinal} ({r.tool or 'reasoning'}): {r.result}" for r in records),
                question=question,
            )
        step.advance(StepStatus.DONE if rec.ok else StepStatus.SKIPPED, "" if rec.ok else rec.result)

        if rec.escalate:
            escalate(step, "step_result")

        if outcome is None:
            continue
        summary = outcome.summary or summary
        if outcome.next_plan is not None and outcome.next_plan.revision > max_revisions:
            diag = f"replacement plan refused: revision cap {max_revisions} reached"
            log.warning(diag)
            outcome = replace(outcome, action=Action.STOP, next_plan=None, diagnostic=diag)
            tracing.record("revision_cap", max_revisions=max_revisions, ordinal=step.ordinal)
        outcomes.append(outcome)
        tracing.record(
            "stepwise_update",
            ordinal=step.ordinal,
            summary=outcome.summary,
            action=outcome.action.value,
            replaced=outcome.next_plan is not None,
            diagnostic=outcome.diagnostic,
        )
        if outcome.escalate:
            escalate(step, "stepwise_update")
        if outcome.next_plan is not None:
            # statuses of kept steps may have moved on since the planner saw them
            kept = {s.ordinal: s.status for s in plan.steps}
            for s in outcome.next_plan.steps:
                if s.ordinal in kept and s.status is not StepStatus.PENDING:
                    s.status = kept[s.ordinal]
            plan = outcome.next_plan
            history.append(plan.snapshot())
            tracing.record("plan_updated", plan=plan.as_dict())
        if outcome.action is Action.STOP:
            stop_reason = "capped" if outcome.diagnostic else "stopped"
            for s in plan.pending():
                s.advance(StepStatus.SKIPPED, "not executed: plan stopped")
            tracing.record(
                "stopped", ordinal=step.ordinal, reason=outcome.diagnostic or "planner action=stop"
            )
            break

    return PlanRun(plan, history, records, outcomes, summary, stop_reason, escalations)
