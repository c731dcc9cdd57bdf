from __future__ import annotations

import pytest

from cardioagent.errors import EmptyIndex, EmptyQuery, InvalidConfig, MockExhausted, PlanParseFailure, UpdateParseFailure
from cardioagent.gateway import Role, mock_gateway
from cardioagent.rag_planner import (
    Action,
    InvalidTransition,
    Plan,
    PlanStep,
    RetrievedContext,
    StepRecord,
    StepStatus,
    execute_plan,
    generate_plan,
    parse_update,
    plan_from_text,
    retrieve,
    stepwise_update,
)
from cardioagent.trace import ExecutionTrace, activate
from cardioagent.vector_index import HashEmbedder, VectorIndex
from conftest import make_retriever, make_store

PLAN3 = "1. Read labs [tool: lab_process]\n2. Measure ECG [tool: ecg_measure]\n3. Conclude"


def ctx(question="Is there heart failure?"):
    return RetrievedContext(question, (), 3)


def plan_of(n):
    return Plan([PlanStep(i, f"step {i}") for i in range(1, n + 1)])


def runner(calls):
    def run(step, plan, records):
        calls.append(step.ordinal)
        return StepRecord(step.ordinal, None, f"result {step.ordinal}")

    return run


def update(action="continue", new_plan="none", summary="s"):
    return f"SUMMARY: {summary}\nACTION: {action}\nNEW_PLAN: {new_plan}"


class TestRetrieve:
    def test_returns_n_ranked_chunks(self):
        store = make_store()
        r = make_retriever(store, n=3, threshold=0.0)
        out = r.retrieve("heart failure ejection fraction")
        assert len(out.chunks) == 3 and out.n == 3
        assert out.keywords == ("heart", "failure", "ejection", "fraction")
        scores = [c.score.score for c in out.chunks]
        assert scores == sorted(scores, reverse=True)

    def test_trace_records_candidates(self):
        store = make_store()
        r = make_retriever(store, n=2)
        tr = ExecutionTrace()
        with activate(tr):
            r.retrieve("atrial fibrillation")
        ev = tr.last("retrieval")
        assert len(ev["candidates"]) == 6 and 1 <= len(ev["selected"]) <= 2

    def test_errors(self):
        store = make_store()
        r = make_retriever(store)
        with pytest.raises(EmptyQuery):
            retrieve("the of and", store, r.index, r.embedder, r.vocab, r.cfg, 3, frozenset({"the", "of", "and"}))
        with pytest.raises(EmptyIndex):
            retrieve("bnp", store, VectorIndex(64, "hash-64"), r.embedder, r.vocab, r.cfg)

    def test_embedder_mismatch(self):
        store = make_store()
        r = make_retriever(store)
        with pytest.raises(InvalidConfig):
            type(r)(store, r.index, HashEmbedder(dim=32), r.vocab, r.cfg)


class TestPlanParsing:
    def test_plan_from_text(self):
        p = plan_from_text("Here you go:\n" + PLAN3)
        assert p.s == 3 and p.step(1).suggested_tool == "lab_process" and p.step(3).suggested_tool is None
        assert all(s.status is StepStatus.PENDING for s in p.steps)

    def test_generate_plan(self):
        gw = mock_gateway([{"match": "write a general plan", "response": PLAN3}])
        assert generate_plan(ctx(), gw).s == 3

    def test_retry_once_then_succeed(self):
        gw = mock_gateway([{"role": "planner", "responses": ["I think we should look at things.", PLAN3]}])
        tr = ExecutionTrace()
        with activate(tr):
            assert generate_plan(ctx(), gw).s == 3
        assert tr.last("contract_retry")["what"] == "plan"
        assert tr.last("context_gap") is not None

    def test_plan_parse_failure(self):
        gw = mock_gateway([{"role": "planner", "responses": ["no list", "still none"]}])
        with pytest.raises(PlanParseFailure):
            generate_plan(ctx(), gw)

    def test_backend_failure_propagates(self):
        with pytest.raises(MockExhausted):
            generate_plan(ctx(), mock_gateway([]))


class TestTransitions:
    def test_allowed(self):
        s = PlanStep(1, "x")
        s.advance(StepStatus.RUNNING)
        s.advance(StepStatus.DONE)
        p = PlanStep(2, "y")
        p.advance(StepStatus.SKIPPED)
        assert s.terminal and p.terminal

    @pytest.mark.parametrize(
        "path", [["done"], ["running", "pending"], ["running", "done", "running"], ["skipped", "running"]]
    )
    def test_invalid(self, path):
        s = PlanStep(1, "x")
        with pytest.raises(InvalidTransition):
            for status in path:
                s.advance(status)

    def test_non_contiguous_plan(self):
        with pytest.raises(InvalidConfig):
            Plan([PlanStep(2, "x")])


class TestUpdate:
    def test_parse_continue_and_replace(self):
        p = plan_of(3)
        p.step(1).advance(StepStatus.RUNNING)
        out = parse_update(update(new_plan="\n1. new a\n2. new b"), p, "r")
        assert out.action is Action.CONTINUE
        assert [s.instruction for s in out.next_plan.steps] == ["step 1", "new a", "new b"]
        assert out.next_plan.revision == 1

    def test_parse_stop_and_escalate(self):
        out = parse_update(update("stop") + "\nESCALATE: discussion", plan_of(2), "r")
        assert out.action is Action.STOP and out.next_plan is None and out.escalate

    @pytest.mark.parametrize("text", ["nothing useful", "ACTION: maybe", update(new_plan="rewrite everything")])
    def test_parse_rejects(self, text):
        assert parse_update(text, plan_of(2), "r") is None

    def test_update_parse_failure_after_retry(self):
        p = plan_of(2)
        p.step(1).advance(StepStatus.RUNNING)
        gw = mock_gateway([{"role": "planner", "responses": ["hmm", "still hmm"]}])
        with pytest.raises(UpdateParseFailure):
            stepwise_update(p, "r", "", gw)

    def test_update_needs_running_step(self):
        with pytest.raises(InvalidConfig):
            stepwise_update(plan_of(2), "r", "", mock_gateway([]))


class TestExecutePlan:
    def test_non_adaptive_makes_no_update_calls(self):
        gw = mock_gateway([])
        calls = []
        run = execute_plan(plan_of(3), runner(calls), gw, adaptive=False)
        assert calls == [1, 2, 3] and run.outcomes == [] and run.stop_reason == "completed"
        assert gw.backend(Role.PLANNER).call_log == []
        assert all(s.status is StepStatus.DONE for s in run.plan.steps)

    def test_stop_halts_early(self):
        gw = mock_gateway([{"match": "Step just executed:\n2. ", "response": update("stop")}, {"response": update()}])
        calls = []
        tr = ExecutionTrace()
        with activate(tr):
            run = execute_plan(plan_of(5), runner(calls), gw, adaptive=True)
        assert calls == [1, 2] and run.stop_reason == "stopped"
        assert [s.status for s in run.plan.steps] == [StepStatus.DONE] * 2 + [StepStatus.SKIPPED] * 3
        assert tr.last("stopped")["ordinal"] == 2

    def test_replacement_increments_revision(self):
        gw = mock_gateway(
            [
                {"match": "Step just executed:\n1. ", "response": update(new_plan="\n1. alpha\n2. beta")},
                {"response": update()},
            ]
        )
        calls = []
        run = execute_plan(plan_of(4), runner(calls), gw, adaptive=True)
        assert run.plan.revision == 1 and [p.revision for p in run.history] == [0, 1]
        assert [s.instruction for s in run.plan.steps] == ["step 1", "alpha", "beta"]
        assert calls == [1, 2, 3]
        assert all(s.status is StepStatus.DONE for s in run.plan.steps)

    def test_revision_cap_forces_stop(self):
        gw = mock_gateway([{"response": update(new_plan="\n1. again")}])
        calls = []
        tr = ExecutionTrace()
        with activate(tr):
            run = execute_plan(plan_of(1), runner(calls), gw, adaptive=True, max_revisions=2)
        assert run.plan.revision == 2 and run.stop_reason == "capped"
        assert len(calls) == 3
        assert tr.last("revision_cap")["max_revisions"] == 2
        assert "revision cap" in run.outcomes[-1].diagnostic

    def test_failed_step_is_skipped(self):
        def run(step, plan, records):
            return StepRecord(step.ordinal, "x", "boom", ok=False)

        out = execute_plan(plan_of(2), run, mock_gateway([]), adaptive=False)
        assert [s.status for s in out.plan.steps] == [StepStatus.SKIPPED] * 2
        assert out.plan.step(1).note == "boom"

    def test_escalation_handler(self):
        gw = mock_gateway([{"match": "Step just executed:\n1. ", "response": update() + "\nESCALATE: discussion"}, {"response": update()}])
        seen = []

        def on_escalate(step, source, records):
            seen.append((step.ordinal, source))
            return "discussed"

        run = execute_plan(plan_of(2), runner([]), gw, adaptive=True, on_escalate=on_escalate)
        assert seen == [(1, "stepwise_update")] and run.escalations == 1
        assert any(r.tool == "discussion" for r in run.records)
