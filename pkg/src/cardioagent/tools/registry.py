"""Tool cards and the per-case runner the chief cardiologist invokes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..case import CaseInput
from ..errors import ToolUnavailable
from . import ecg as ecg_tools
from .labs import LabReport, lab_process
from .remote import (
    MaskPayload,
    RemoteTool,
    RemoteToolResult,
    ViewPayload,
    payload_to_json,
    remote_tool_call,
)

NONE_TOOL = "none"


@dataclass(frozen=True)
class ToolCard:
    name: str
    description: str
    inputs: Tuple[str, ...]
    remote: bool = False

    def render(self) -> str:
        return f"- {self.name}: {self.description} (inputs: {', '.join(self.inputs)})"


@dataclass
class ToolOutput:
    text: str
    data: Dict[str, Any] = field(default_factory=dict)


@dataclass
class CaseContext:
    """Lazily computed tool results for one case, shared by later steps."""

    case: CaseInput
    remote: Any = None
    band: Tuple[float, float] = ecg_tools.DEFAULT_BAND
    labs: Optional[LabReport] = None
    ecg_summary: Optional[ecg_tools.EcgSummary] = None
    measurements: Optional[ecg_tools.EcgMeasurements] = None
    heartbeats: Optional[ecg_tools.HeartbeatSet] = None
    remote_results: List[RemoteToolResult] = field(default_factory=list)

    def require_ecg(self) -> ecg_tools.EcgSignal:
        if self.case.ecg is None:
            raise ToolUnavailable("this case has no ECG recording")
        return self.case.ecg

    def filtered(self) -> ecg_tools.EcgSummary:
        if self.ecg_summary is None:
            self.ecg_summary = ecg_tools.ecg_preprocess(self.require_ecg(), self.band)
        return self.ecg_summary

    def measured(self) -> ecg_tools.EcgMeasurements:
        if self.measurements is None:
            self.measurements = ecg_tools.ecg_measure(self.filtered().signal)
        return self.measurements

    def remote_call(self, tool: RemoteTool, input_ref: str) -> RemoteToolResult:
        if self.remote is None:
            raise ToolUnavailable(f"no remote tool client configured for {tool.value}")
        for r in self.remote_results:
            if r.tool is tool and r.input_ref == input_ref:
                return r
        res = remote_tool_call(tool, input_ref, self.remote)
        self.remote_results.append(res)
        return res

    def views(self) -> Dict[str, str]:
        return {
            r.input_ref: r.payload.view for r in self.remote_results if isinstance(r.payload, ViewPayload)
        }

    def evidence_text(self) -> str:
        """Textual rendering of every intermediate tool output computed so far."""
        parts = []
        if self.labs is not None:
            parts.append("Lab technician:\n" + self.labs.narrative)
        if self.ecg_summary is not None:
            parts.append("ECG technician:\n" + self.ecg_summary.text)
        if self.measurements is not None:
            parts.append("Electrophysiologist measurements:\n" + self.measurements.to_text())
        if self.heartbeats is not None:
            refs = ", ".join(f"heartbeat_{lead}.svg" for lead in self.heartbeats.plots)
            counts = ", ".join(f"{k}: {len(v)} beats" for k, v in self.heartbeats.beats.items())
            parts.append(f"Heartbeat plots ({counts}): {refs}")
        for r in self.remote_results:
            parts.append(r.to_text())
        return "\n\n".join(parts) if parts else "(no intermediate tool outputs)"


# ---------------------------------------------------------------------------
# Local tool runners
# ---------------------------------------------------------------------------


def _run_labs(ctx: CaseContext) -> ToolOutput:
    if "labs" not in ctx.case.modalities():
        raise ToolUnavailable("this case has no laboratory report")
    if ctx.labs is None:
        ctx.labs = lab_process(ctx.case.labs_text)
    numeric = {k: [v, u] for k, (v, u) in ctx.labs.numeric().items()}
    return ToolOutput(ctx.labs.narrative, {"numeric": numeric, "unparsed": list(ctx.labs.unparsed)})


def _run_preprocess(ctx: CaseContext) -> ToolOutput:
    s = ctx.filtered()
    return ToolOutput(
        s.text,
        {"band": list(s.band), "stats": {st.lead: [round(st.mean_mv, 9), round(st.std_mv, 6)] for st in s.stats}},
    )


def _run_measure(ctx: CaseContext) -> ToolOutput:
    m = ctx.measured()
    named = {k: (None if v is None else round(float(v), 6)) for k, v in m.named().items()}
    return ToolOutput(m.to_text(), {"measurements": named, "reference_lead": m.reference_lead})


def _run_heartbeats(ctx: CaseContext) -> ToolOutput:
    if ctx.heartbeats is None:
        ctx.heartbeats = ecg_tools.heartbeat_extract(ctx.filtered().signal, ctx.measured())
    hb = ctx.heartbeats
    counts = {k: len(v) for k, v in hb.beats.items()}
    clipped = {k: sum(b.clipped for b in v) for k, v in hb.beats.items()}
    text = "Extracted heartbeats " + ", ".join(
        f"lead {k}: {n} windows ({clipped[k]} clipped)" for k, n in counts.items()
    ) + "."
    return ToolOutput(text, {"beats": counts, "clipped": clipped})


def _require_echo(ctx: CaseContext) -> Sequence[str]:
    if not ctx.case.echo_refs:
        raise ToolUnavailable("this case has no echocardiography clips")
    return ctx.case.echo_refs


def _run_views(ctx: CaseContext) -> ToolOutput:
    results = [ctx.remote_call(RemoteTool.VIEW_CLASSIFIER, ref) for ref in _require_echo(ctx)]
    return ToolOutput(
        " ".join(r.to_text() for r in results), {"views": {r.input_ref: r.payload.view for r in results}}
    )


def _run_segmenter(ctx: CaseContext) -> ToolOutput:
    refs = _require_echo(ctx)
    views = ctx.views()
    targets = [r for r in refs if views.get(r) == "A4C"] if views else list(refs)
    if not targets:
        raise ToolUnavailable("no apical four-chamber clip available for segmentation")
    results = [ctx.remote_call(RemoteTool.ECHO_SEGMENTER, ref) for ref in targets]
    areas = {}
    for r in results:
        assert isinstance(r.payload, MaskPayload)
        areas[r.input_ref] = [int(f.decode().sum()) for f in r.payload.frames]
    return ToolOutput(" ".join(r.to_text() for r in results), {"mask_areas": areas})


def _run_diagnosis(ctx: CaseContext) -> ToolOutput:
    r = ctx.remote_call(RemoteTool.DIAGNOSIS_MODEL, ctx.case.case_id)
    return ToolOutput(r.to_text(), payload_to_json(r.payload))


Runner = Callable[[CaseContext], ToolOutput]

DEFAULT_CARDS: Tuple[Tuple[ToolCard, Runner], ...] = (
    (ToolCard("lab_process", "parse the laboratory report into values, a narrative and tokens", ("labs",)), _run_labs),
    (ToolCard("ecg_preprocess", "band-pass filter and baseline-correct the ECG; per-lead mean and SD", ("ecg",)),
     _run_preprocess),
    (ToolCard("ecg_measure", "R peaks, heart rate, HRV and QRS/PR/QT durations", ("ecg",)), _run_measure),
    (ToolCard("heartbeat_extract", "beat windows and plots for leads I, II and V5", ("ecg",)), _run_heartbeats),
    (ToolCard("view_classifier", "label each echo clip with its standard view", ("echo",), remote=True), _run_views),
    (ToolCard("echo_segmenter", "pixel masks of cardiac structures in apical four-chamber clips", ("echo",),
              remote=True), _run_segmenter),
    (ToolCard("diagnosis_model", "preliminary multimodal diagnosis with a probability",
              ("labs", "ecg", "echo"), remote=True), _run_diagnosis),
)


class ToolRegistry:
    def __init__(self, entries: Sequence[Tuple[ToolCard, Runner]] = DEFAULT_CARDS):
        self._cards: Dict[str, ToolCard] = {}
        self._runners: Dict[str, Runner] = {}
        for card, runner in entries:
            self.register(card, runner)

    def register(self, card: ToolCard, runner: Runner) -> None:
        if card.name == NONE_TOOL:
            raise ValueError(f"'{NONE_TOOL}' is reserved for pure reasoning steps")
        self._cards[card.name] = card
        self._runners[card.name] = runner

    def __contains__(self, name: object) -> bool:
        return name in self._cards

    def __len__(self) -> int:
        return len(self._cards)

    def names(self) -> List[str]:
        return list(self._cards)

    def card(self, name: str) -> ToolCard:
        return self._cards[name]

    def render_cards(self) -> str:
        return "\n".join(c.render() for c in self._cards.values())

    def run(self, name: str, ctx: CaseContext) -> ToolOutput:
        if name not in self._runners:
            raise ToolUnavailable(f"tool {name!r} is not registered")
        return self._runners[name](ctx)


def collect_evidence(ctx: CaseContext, registry: ToolRegistry) -> str:
    """Run every applicable tool once (skipping failures) and render Z."""
    for name in registry.names():
        try:
            registry.run(name, ctx)
        except Exception:  # noqa: BLE001 - unusable tools simply contribute nothing
            continue
    return ctx.evidence_text()


def ecg_panel_data(ctx: CaseContext, max_points: int = 4000) -> Optional[Dict[str, Any]]:
    """ECG section data for the review panel (None if no ECG tool ran)."""
    if ctx.ecg_summary is None:
        return None
    sig = ctx.ecg_summary.signal
    lead = ctx.measurements.reference_lead if ctx.measurements is not None else (
        "II" if "II" in sig.lead_names else sig.lead_names[0]
    )
    x = sig.lead(lead)
    step = max(1, int(np.ceil(len(x) / max_points)))
    out: Dict[str, Any] = {
        "lead": lead,
        "sampling_rate": sig.sampling_rate,
        "n_samples": int(len(x)),
        "decimation": step,
        "samples": [round(float(v), 4) for v in x[::step]],
    }
    if ctx.measurements is not None:
        m = ctx.measurements
        groups = {"P": m.markers.p_peaks, "R": m.r_peaks.get(lead, []), "T": m.markers.t_peaks}
        out["markers"] = {k: [[int(i), round(float(x[i]), 4)] for i in v] for k, v in groups.items()}
        out["measurements"] = {k: (None if v is None else round(float(v), 3)) for k, v in m.named().items()}
    if ctx.heartbeats is not None:
        out["beat_plots"] = dict(ctx.heartbeats.plots)
    return out


def echo_panel_data(ctx: CaseContext) -> Optional[Dict[str, Any]]:
    if not ctx.remote_results:
        return None
    views = ctx.views()
    masks = {
        r.input_ref: payload_to_json(r.payload) for r in ctx.remote_results if isinstance(r.payload, MaskPayload)
    }
    if not views and not masks:
        return None
    return {"views": views, "masks": masks}
