from __future__ import annotations

import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cardioagent.errors import BackendFailure, PayloadSchemaError, ToolUnavailable
from cardioagent.tools.remote import (
    DiagnosisPayload,
    HttpRemoteTools,
    MaskPayload,
    MockRemoteTools,
    RemoteTool,
    ViewPayload,
    parse_payload,
    payload_to_json,
    remote_tool_call,
    rle_decode,
    rle_encode,
    views_summary,
)
from conftest import DATA

FIXTURES = {
    "view_classifier": {"clip_01": {"view": "A4C", "confidence": 0.9}, "clip_02": {"view": "PSL"}},
    "echo_segmenter": {"clip_01": {"frames": [{"height": 2, "width": 3, "rle": [1, 2, 3]}]}},
    "diagnosis_model": {"case": {"label": "HF", "probability": 0.8}},
}


class TestRle:
    def test_example(self):
        mask = np.array([[0, 1, 1], [0, 0, 0]], dtype=bool)
        assert rle_encode(mask) == (1, 2, 3)
        np.testing.assert_array_equal(rle_decode((1, 2, 3), 2, 3), mask)
        assert rle_encode(np.ones((1, 2))) == (0, 2)

    @settings(max_examples=100, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
    def test_round_trip(self, mask):
        h, w = mask.shape
        np.testing.assert_array_equal(rle_decode(rle_encode(mask), h, w), mask)

    def test_bad_length(self):
        with pytest.raises(PayloadSchemaError):
            rle_decode((1, 2), 2, 3)


class TestPayloads:
    def test_parse_each_tool(self):
        v = parse_payload(RemoteTool.VIEW_CLASSIFIER, {"view": "A4C", "confidence": 0.5})
        m = parse_payload(RemoteTool.ECHO_SEGMENTER, {"frames": [{"height": 2, "width": 3, "rle": [1, 2, 3]}]})
        d = parse_payload(RemoteTool.DIAGNOSIS_MODEL, {"label": " HF ", "probability": 0.7})
        assert v == ViewPayload("A4C", 0.5)
        assert isinstance(m, MaskPayload) and m.frames[0].decode().sum() == 2
        assert d == DiagnosisPayload("HF", 0.7)
        for p in (v, m, d):
            assert payload_to_json(p) == payload_to_json(parse_payload(
                {ViewPayload: RemoteTool.VIEW_CLASSIFIER, MaskPayload: RemoteTool.ECHO_SEGMENTER,
                 DiagnosisPayload: RemoteTool.DIAGNOSIS_MODEL}[type(p)], payload_to_json(p)))

    @pytest.mark.parametrize(
        "tool,data",
        [
            (RemoteTool.VIEW_CLASSIFIER, {"view": "XYZ"}),
            (RemoteTool.VIEW_CLASSIFIER, {"view": "A4C", "confidence": 1.5}),
            (RemoteTool.VIEW_CLASSIFIER, ["A4C"]),
            (RemoteTool.ECHO_SEGMENTER, {"frames": "none"}),
            (RemoteTool.ECHO_SEGMENTER, {"frames": [{"height": 2, "width": 2, "rle": [1]}]}),
            (RemoteTool.ECHO_SEGMENTER, {"frames": [{"height": 2}]}),
            (RemoteTool.DIAGNOSIS_MODEL, {"label": "", "probability": 0.5}),
            (RemoteTool.DIAGNOSIS_MODEL, {"label": "HF", "probability": "high"}),
            (RemoteTool.DIAGNOSIS_MODEL, {"label": "HF"}),
        ],
    )
    def test_schema_errors(self, tool, data):
        with pytest.raises(PayloadSchemaError):
            parse_payload(tool, data)


class TestClients:
    def test_mock_call(self):
        client = MockRemoteTools(FIXTURES)
        r = remote_tool_call("view_classifier", "clip_01", client)
        assert r.payload.view == "A4C" and r.provenance == "mock-tools"
        assert "view A4C" in r.to_text()
        assert views_summary([r, remote_tool_call("diagnosis_model", "case", client)]) == {"clip_01": "A4C"}

    def test_unknown_tool_and_ref(self):
        client = MockRemoteTools({"view_classifier": FIXTURES["view_classifier"]})
        with pytest.raises(ToolUnavailable):
            remote_tool_call("lv_volume", "clip_01", client)
        with pytest.raises(ToolUnavailable):
            remote_tool_call("echo_segmenter", "clip_01", client)
        with pytest.raises(ToolUnavailable):
            remote_tool_call("view_classifier", "clip_99", client)

    def test_bundled_fixtures_valid(self):
        client = MockRemoteTools.from_file(DATA / "demo" / "remote_fixtures.json")
        for tool, table in client.fixtures.items():
            for ref in table:
                remote_tool_call(tool, ref, client)

    def _http(self, handler):
        return HttpRemoteTools("http://tools.test/run", client=httpx.Client(transport=httpx.MockTransport(handler)))

    def test_http_ok(self):
        def handler(req):
            body = json.loads(req.read())
            return httpx.Response(200, json=FIXTURES[body["tool"]][body["input_ref"]])

        r = remote_tool_call(RemoteTool.DIAGNOSIS_MODEL, "case", self._http(handler))
        assert r.payload == DiagnosisPayload("HF", 0.8)

    @pytest.mark.parametrize(
        "response,exc",
        [
            (httpx.Response(404), ToolUnavailable),
            (httpx.Response(500), BackendFailure),
            (httpx.Response(200, text="<html>"), PayloadSchemaError),
            (httpx.Response(200, json={"view": "??"}), PayloadSchemaError),
        ],
    )
    def test_http_errors(self, response, exc):
        with pytest.raises(exc):
            remote_tool_call(RemoteTool.VIEW_CLASSIFIER, "clip_01", self._http(lambda r: response))

    def test_http_transport_error(self):
        def handler(req):
            raise httpx.ConnectTimeout("slow")

        with pytest.raises(BackendFailure):
            remote_tool_call(RemoteTool.VIEW_CLASSIFIER, "clip_01", self._http(handler))
