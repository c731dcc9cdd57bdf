from __future__ import annotations

import json
import re

import pytest

from cardioagent.config import build_engine, load_config
from cardioagent.errors import AssetWriteFailure, MissingTrace
from cardioagent.gateway import mock_gateway
from cardioagent.orchestrator import execute_case
from cardioagent.report import panel_digest, render_panel
from cardioagent.trace import ExecutionTrace

ECG_RULES = [
    {"role": "chief", "match": "Assess the complexity", "response": "COMPLEXITY: simple\nRATIONALE: one ECG"},
    {"role": "planner", "match": "write a general plan",
     "response": "1. Filter the ECG [tool: ecg_preprocess]\n2. Measure waves [tool: ecg_measure]\n3. Plot beats [tool: heartbeat_extract]"},
    {"role": "chief", "match": "Question and evaluate", "response": "Fine."},
    {"role": "chief", "match": "Give the final decision",
     "response": "SUMMARY: regular rhythm\nANSWER: normal sinus rhythm\nPROBABILITY: 0.9\nSUPPORTING_STEPS: 2"},
]


@pytest.fixture
def ecg_result(ecg_case):
    engine = build_engine(load_config())
    engine.gateway = mock_gateway(ECG_RULES)
    return execute_case(ecg_case, engine)


def test_ecg_only_panel(ecg_result, tmp_path):
    panel = render_panel(ecg_result.trace, tmp_path / "p")
    html = panel.index.read_text()
    assert panel.absent == ("echo",)
    assert set(panel.sections) == {"profile", "ecg", "decision"}
    assert re.search(r'<p class="absent">No echocardiography', html)
    assert "normal sinus rhythm" in html and "probability 0.90" in html
    names = sorted(p.name for p in panel.assets)
    assert names == ["ecg_II.svg", "heartbeat_I.svg", "heartbeat_II.svg", "heartbeat_V5.svg"]


def test_markers_reference_measurements(ecg_result, tmp_path):
    panel = render_panel(ecg_result.trace, tmp_path)
    svg = (tmp_path / "assets" / "ecg_II.svg").read_text()
    refs = {int(v) for v in re.findall(r'data-ref="(\d+)"', svg)}
    m = ecg_result.context.measurements
    known = set(m.r_peaks["II"]) | set(m.markers.p_peaks) | set(m.markers.t_peaks)
    assert refs and refs <= known
    assert set(m.r_peaks["II"]) <= refs
    assert panel.index.is_file()


def test_rerender_is_byte_identical(ecg_result, tmp_path):
    path = ecg_result.trace.save(tmp_path / "t.json", normalize=True)
    a = panel_digest(render_panel(path, tmp_path / "a"))
    b = panel_digest(render_panel(json.loads(path.read_text()), tmp_path / "b"))
    assert a == b


def test_missing_artifacts(tmp_path):
    tr = ExecutionTrace("x")
    tr.record("plan", plan={})
    with pytest.raises(MissingTrace):
        render_panel(tr, tmp_path)
    with pytest.raises(MissingTrace):
        render_panel(tmp_path / "nope.json", tmp_path)


def test_asset_write_failure(ecg_result, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(AssetWriteFailure):
        render_panel(ecg_result.trace, blocker)


def test_profile_falls_back_to_question(tmp_path):
    tr = ExecutionTrace("q")
    tr.record("artifacts", case_id="q", profile={"source": "question", "text": "Why?"}, ecg=None, echo=None, decision={})
    panel = render_panel(tr, tmp_path)
    assert panel.absent == ("ecg", "echo", "decision")
    assert "Source: case question" in panel.index.read_text()
