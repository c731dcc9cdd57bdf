from __future__ import annotations

import pytest

from cardioagent.case import load_case
from cardioagent.config import build_engine, load_config
from cardioagent.discussion import DiscussionConfig
from cardioagent.errors import (
    BackendFailure,
    CardioError,
    DecisionParseFailure,
    InvalidConfig,
    PlanParseFailure,
    ToolUnavailable,
)
from cardioagent.gateway import Role, mock_gateway
from cardioagent.orchestrator import (
    EXIT_BACKEND,
    EXIT_PARSE,
    CaseAborted,
    Complexity,
    assess_complexity,
    execute_case,
    exit_code_for,
    finalize_decision,
    parse_decision,
    select_tool,
)
from cardioagent.rag_planner import Plan, PlanStep, StepStatus
from cardioagent.tools.registry import ToolRegistry
from cardioagent.trace import ExecutionTrace, activate
from conftest import DEMO_CASE

DECISION = "SUMMARY: raised BNP\nANSWER: HF\nPROBABILITY: 0.8\nSUPPORTING_STEPS: 1"


def rules(complexity="simple", plan="1. Parse labs [tool: lab_process]\n2. Classify views [tool: view_classifier]",
          decision=DECISION, extra=()):
    return list(extra) + [
        {"role": "chief", "match": "Assess the complexity", "response": f"COMPLEXITY: {complexity}\nRATIONALE: r"},
        {"role": "planner", "match": "write a general plan", "response": plan},
        {"role": "chief", "match": "Question and evaluate", "response": "Steps look fine."},
        {"role": "chief", "match": "Give the final decision", "response": decision},
    ]


def engine_with(rule_list, **kw):
    engine = build_engine(load_config())
    engine.gateway = mock_gateway(rule_list)
    for k, v in kw.items():
        setattr(engine, k, v)
    return engine


def done_plan(n, skipped=()):
    steps = [PlanStep(i, f"s{i}") for i in range(1, n + 1)]
    for s in steps:
        s.advance(StepStatus.SKIPPED if s.ordinal in skipped else StepStatus.RUNNING)
        if not s.terminal:
            s.advance(StepStatus.DONE)
    return Plan(steps)


@pytest.fixture(scope="module")
def demo_case():
    return load_case(DEMO_CASE)


class TestComplexity:
    def test_labels(self, echo_case):
        gw = mock_gateway([{"response": "COMPLEXITY: simple\nRATIONALE: one lab value"}])
        v = assess_complexity(echo_case, gw)
        assert v.label is Complexity.SIMPLE and not v.adaptive and v.rationale == "one lab value"

    def test_fallback_is_complex(self, echo_case):
        gw = mock_gateway([{"response": "Hard to say."}])
        trace = ExecutionTrace()
        with activate(trace):
            v = assess_complexity(echo_case, gw)
        assert v.adaptive and v.fallback
        assert trace.last("complexity")["fallback"] is True


class TestSelectTool:
    def test_hint(self):
        reg = ToolRegistry()
        assert select_tool(PlanStep(1, "x", "ecg_measure"), reg) == "ecg_measure"
        assert select_tool(PlanStep(1, "x", "none"), reg) == "none"

    def test_unregistered_hint(self):
        with pytest.raises(ToolUnavailable, match="step 3"):
            select_tool(PlanStep(3, "x", "mri_reader"), ToolRegistry())

    def test_empty_registry(self):
        with pytest.raises(ToolUnavailable):
            select_tool(PlanStep(1, "x", "ecg_measure"), ToolRegistry(()))

    def test_chief_chooses(self):
        gw = mock_gateway([{"match": "Registered tools:", "response": "TOOL: `lab_process`"}])
        assert select_tool(PlanStep(1, "x"), ToolRegistry(), gw) == "lab_process"
        bad = mock_gateway([{"response": "TOOL: stethoscope"}])
        with pytest.raises(ToolUnavailable):
            select_tool(PlanStep(1, "x"), ToolRegistry(), bad)
        with pytest.raises(ToolUnavailable):
            select_tool(PlanStep(1, "x"), ToolRegistry())


class TestDecision:
    terminal = {1: StepStatus.DONE, 2: StepStatus.SKIPPED, 3: StepStatus.DONE}

    def test_full(self):
        d = parse_decision(DECISION + ", 9", self.terminal)
        assert (d.answer, d.probability, d.supporting_steps) == ("HF", 0.8, (1,))

    def test_inline_and_percent(self):
        d = parse_decision("SUMMARY: s, ANSWER: HF, PROBABILITY: 85%", self.terminal)
        assert d.probability == pytest.approx(0.85) and d.supporting_steps == (1, 3)

    def test_probability_optional(self):
        assert parse_decision("ANSWER: no HF", self.terminal).probability is None

    @pytest.mark.parametrize("text", ["SUMMARY: only", "ANSWER: HF\nPROBABILITY: 1.7", "ANSWER: HF\nPROBABILITY: high"])
    def test_rejected(self, text):
        assert parse_decision(text, self.terminal) is None

    def test_failure_after_one_retry(self):
        gw = mock_gateway([{"role": "chief", "responses": ["ANSWER: HF\nPROBABILITY: 1.7", "ANSWER: HF\nPROBABILITY: 1.7"]}])
        with pytest.raises(DecisionParseFailure):
            finalize_decision(done_plan(2), "", gw)
        assert len(gw.backend(Role.CHIEF).call_log) == 2

    def test_retry_recovers(self):
        gw = mock_gateway([{"role": "chief", "responses": ["It is HF.", DECISION]}])
        assert finalize_decision(done_plan(2), "", gw).answer == "HF"

    def test_requires_terminal_plan(self):
        with pytest.raises(CardioError):
            finalize_decision(Plan([PlanStep(1, "x")]), "", mock_gateway([]))


class TestExecuteCase:
    def test_simple_case_gate_law(self, echo_case):
        engine = engine_with(rules("simple"))
        result = execute_case(echo_case, engine)
        assert result.decision.answer == "HF"
        assert result.trace.of_type("stepwise_update") == []
        prompts = [c["prompt"] for c in engine.gateway.backend(Role.PLANNER).call_log]
        assert not any("Step just executed" in p for p in prompts)
        assert result.run.stop_reason == "completed"

    def test_complex_case_updates_every_step(self, echo_case):
        upd = {"role": "planner", "match": "Step just executed", "response": "SUMMARY: s\nACTION: continue\nNEW_PLAN: none"}
        result = execute_case(echo_case, engine_with(rules("complex", extra=[upd])))
        assert len(result.trace.of_type("stepwise_update")) == 2

    def test_tool_failure_skips_step(self, echo_case):
        plan = "1. Measure the ECG [tool: ecg_measure]\n2. Use the stethoscope [tool: stethoscope]\n3. Parse labs [tool: lab_process]"
        result = execute_case(echo_case, engine_with(rules(plan=plan)))
        statuses = [s.status for s in result.run.plan.steps]
        assert statuses == [StepStatus.SKIPPED, StepStatus.SKIPPED, StepStatus.DONE]
        assert result.trace.last("tool_unavailable")["ordinal"] == 2
        assert result.decision.supporting_steps == (1,)  # cited steps only need to exist in the plan

    def test_remote_outage_degrades(self, echo_case):
        class Down:
            name = "down"
            tools = ()

            def call(self, tool, ref):
                raise BackendFailure("tool server down")

        from cardioagent.tools.remote import RemoteTool

        Down.tools = tuple(RemoteTool)
        result = execute_case(echo_case, engine_with(rules(), remote=Down()))
        assert result.run.plan.step(2).status is StepStatus.SKIPPED
        assert "tool server down" in result.run.plan.step(2).note

    def test_reasoning_step(self, echo_case):
        extra = [{"role": "chief", "match": "by reasoning over", "response": "Labs suggest HF."}]
        result = execute_case(echo_case, engine_with(rules(plan="1. Think [tool: none]", extra=extra)))
        assert result.run.records[0].result == "Labs suggest HF." and result.run.records[0].tool is None

    def test_single_discussion_per_case(self, echo_case):
        esc = {"role": "planner", "match": "Step just executed", "response": "SUMMARY: s\nACTION: continue\nNEW_PLAN: none\nESCALATE: discussion"}
        disc = [
            {"role": "chief", "match": "convening", "response": "ROLE_A: a\nROLE_B: b"},
            {"role": "expert_a", "response": "x\nVERDICT: HF"},
            {"role": "expert_b", "response": "x\nVERDICT: HF"},
            {"role": "synthesizer", "response": "x\nVERDICT: HF"},
        ]
        result = execute_case(echo_case, engine_with(rules("complex", extra=[esc] + disc), discussion=DiscussionConfig(2)))
        assert len(result.trace.of_type("discussion")) == 1
        assert len(result.trace.of_type("escalation_ignored")) == 1
        assert result.discussion.stop_reason.value == "consensus" and len(result.discussion.turns) == 3
        assert any(r.tool == "discussion" for r in result.run.records)

    def test_plan_parse_failure_aborts(self, echo_case, tmp_path):
        engine = engine_with(rules(plan="no plan"))
        with pytest.raises(CaseAborted) as info:
            execute_case(echo_case, engine, out=tmp_path / "t.json")
        assert isinstance(info.value.cause, PlanParseFailure) and info.value.exit_code == EXIT_PARSE
        assert info.value.trace.last("aborted")["error"] == "PlanParseFailure"
        assert (tmp_path / "t.json").is_file()

    def test_gateway_loss_aborts(self, echo_case):
        engine = engine_with(rules()[:2])
        with pytest.raises(CaseAborted) as info:
            execute_case(echo_case, engine)
        assert info.value.exit_code == EXIT_BACKEND

    def test_exit_codes(self):
        assert exit_code_for(BackendFailure("x")) == 3
        assert exit_code_for(DecisionParseFailure("x")) == 2
        assert exit_code_for(InvalidConfig("x")) == 1

    def test_demo_case(self, demo_case):
        result = execute_case(demo_case, build_engine(load_config()))
        assert result.decision.answer == "HF" and result.decision.probability == 0.9
        assert result.run.plan.revision == 1 and result.run.plan.s == 8
        assert result.discussion is not None and len(result.discussion.turns) == 3
        assert result.trace.last("artifacts")["echo"]["views"]["clip_01"] == "A4C"
