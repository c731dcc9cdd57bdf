"""
Clients for the neural expert tools (echo view classifier, echo segmenter,
multimodal diagnosis model).  The models themselves live elsewhere; here
they are reached over HTTP (``POST {tool, input_ref}``) or replaced by a
fixture-backed mock.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import httpx
import numpy as np

from ..errors import BackendFailure, PayloadSchemaError, ToolUnavailable

ECHO_VIEWS = ("A2C", "A3C", "A4C", "A5C", "AD", "DPL", "DPS", "PSL", "PSS", "SSN", "Sub")


class RemoteTool(str, enum.Enum):
    VIEW_CLASSIFIER = "view_classifier"
    ECHO_SEGMENTER = "echo_segmenter"
    DIAGNOSIS_MODEL = "diagnosis_model"


@dataclass(frozen=True)
class ViewPayload:
    view: str
    confidence: Optional[float] = None


@dataclass(frozen=True)
class MaskFrame:
    height: int
    width: int
    rle: Tuple[int, ...]

    def decode(self) -> np.ndarray:
        return rle_decode(self.rle, self.height, self.width)


@dataclass(frozen=True)
class MaskPayload:
    frames: Tuple[MaskFrame, ...]
    structure: str = "left ventricle"


@dataclass(frozen=True)
class DiagnosisPayload:
    label: str
    probability: float


@dataclass(frozen=True)
class RemoteToolResult:
    tool: RemoteTool
    input_ref: str
    payload: Union[ViewPayload, MaskPayload, DiagnosisPayload]
    provenance: str

    def to_text(self) -> str:
        p = self.payload
        if isinstance(p, ViewPayload):
            conf = f" (confidence {p.confidence:.2f})" if p.confidence is not None else ""
            return f"Echo clip {self.input_ref}: view {p.view}{conf}."
        if isinstance(p, MaskPayload):
            areas = [int(f.decode().sum()) for f in p.frames]
            if areas:
                return (
                    f"Segmentation of {self.input_ref}: {len(areas)} frames of {p.structure} masks, "
                    f"area range {min(areas)}-{max(areas)} px."
                )
            return f"Segmentation of {self.input_ref}: no frames."
        return f"Preliminary diagnosis for {self.input_ref}: {p.label} (probability {p.probability:.2f})."


# ---------------------------------------------------------------------------
# Run-length encoding for masks: alternating run lengths, starting with zeros
# ---------------------------------------------------------------------------


def rle_encode(mask: np.ndarray) -> Tuple[int, ...]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return ()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return tuple(int(r) for r in runs)


def rle_decode(rle: Sequence[int], height: int, width: int) -> np.ndarray:
    if sum(rle) != height * width or any(r < 0 for r in rle):
        raise PayloadSchemaError(f"RLE runs sum to {sum(rle)}, expected {height * width}")
    flat = np.zeros(height * width, dtype=bool)
    pos, val = 0, False
    for r in rle:
        if val:
            flat[pos : pos + r] = True
        pos += r
        val = not val
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# Payload validation
# ---------------------------------------------------------------------------


def _prob(value: Any, what: str) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise PayloadSchemaError(f"{what} must be a number, got {value!r}") from None
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise PayloadSchemaError(f"{what} must lie in [0, 1], got {p}")
    return p


def parse_payload(tool: RemoteTool, data: Any):
    if not isinstance(data, Mapping):
        raise PayloadSchemaError(f"{tool.value}: payload must be a JSON object")
    if tool is RemoteTool.VIEW_CLASSIFIER:
        view = data.get("view")
        if view not in ECHO_VIEWS:
            raise PayloadSchemaError(f"view {view!r} is not one of {', '.join(ECHO_VIEWS)}")
        conf = data.get("confidence")
        return ViewPayload(view, None if conf is None else _prob(conf, "confidence"))
    if tool is RemoteTool.ECHO_SEGMENTER:
        frames = data.get("frames")
        if not isinstance(frames, list):
            raise PayloadSchemaError("mask payload needs a 'frames' list")
        out = []
        for i, f in enumerate(frames):
            try:
                h, w, rle = int(f["height"]), int(f["width"]), tuple(int(r) for r in f["rle"])
            except (KeyError, TypeError, ValueError):
                raise PayloadSchemaError(f"mask frame {i} needs integer height, width and rle") from None
            if sum(rle) != h * w:
                raise PayloadSchemaError(f"mask frame {i}: RLE covers {sum(rle)} px, frame has {h * w}")
            out.append(MaskFrame(h, w, rle))
        return MaskPayload(tuple(out), str(data.get("structure", "left ventricle")))
    label = data.get("label")
    if not isinstance(label, str) or not label.strip():
        raise PayloadSchemaError("diagnosis payload needs a non-empty 'label'")
    return DiagnosisPayload(label.strip(), _prob(data.get("probability"), "probability"))


def payload_to_json(payload) -> Dict[str, Any]:
    if isinstance(payload, MaskPayload):
        return {
            "structure": payload.structure,
            "frames": [{"height": f.height, "width": f.width, "rle": list(f.rle)} for f in payload.frames],
        }
    if isinstance(payload, ViewPayload):
        d: Dict[str, Any] = {"view": payload.view}
        if payload.confidence is not None:
            d["confidence"] = payload.confidence
        return d
    return {"label": payload.label, "probability": payload.probability}


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------


class MockRemoteTools:
    """Fixture playback: ``{tool: {input_ref: payload}}``."""

    def __init__(self, fixtures: Mapping[str, Mapping[str, Any]], name: str = "mock-tools"):
        self.fixtures = {RemoteTool(k): dict(v) for k, v in fixtures.items()}
        self.name = name

    @property
    def tools(self) -> Tuple[RemoteTool, ...]:
        return tuple(self.fixtures)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MockRemoteTools":
        path = Path(path)
        return cls(json.loads(path.read_text(encoding="utf-8")), name=f"mock-tools:{path.name}")

    def call(self, tool: RemoteTool, input_ref: str) -> Any:
        table = self.fixtures[tool]
        if input_ref not in table:
            raise ToolUnavailable(f"{self.name}: no {tool.value} fixture for input {input_ref!r}")
        return table[input_ref]


class HttpRemoteTools:
    def __init__(self, url: str, tools: Sequence[str] = tuple(t.value for t in RemoteTool),
                 timeout: float = 300.0, client: Optional[httpx.Client] = None):
        self.url = url
        self._tools = tuple(RemoteTool(t) for t in tools)
        self.timeout = timeout
        self.name = f"http-tools:{url}"
        self._client = client

    @property
    def tools(self) -> Tuple[RemoteTool, ...]:
        return self._tools

    def call(self, tool: RemoteTool, input_ref: str) -> Any:
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            resp = client.post(self.url, json={"tool": tool.value, "input_ref": input_ref})
        except httpx.TransportError as exc:
            raise BackendFailure(f"{self.name}: {exc}") from exc
        finally:
            if self._client is None:
                client.close()
        if resp.status_code == 404:
            raise ToolUnavailable(f"{self.name}: tool {tool.value} not served")
        if resp.status_code >= 400:
            raise BackendFailure(f"{self.name}: HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError:
            raise PayloadSchemaError(f"{self.name}: response is not JSON") from None


def remote_tool_call(tool: Union[str, RemoteTool], input_ref: str, client) -> RemoteToolResult:
    try:
        tool = RemoteTool(tool)
    except ValueError:
        raise ToolUnavailable(f"unknown remote tool {tool!r}") from None
    if tool not in client.tools:
        raise ToolUnavailable(f"remote tool {tool.value} is not registered with {client.name}")
    payload = parse_payload(tool, client.call(tool, input_ref))
    return RemoteToolResult(tool, input_ref, payload, client.name)


def views_summary(results: List[RemoteToolResult]) -> Dict[str, str]:
    return {r.input_ref: r.payload.view for r in results if isinstance(r.payload, ViewPayload)}
