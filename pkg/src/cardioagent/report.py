"""Static review panel (HTML + SVG assets) rendered from an execution trace."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .errors import AssetWriteFailure, MissingTrace
from .svg import line_plot
from .tools.remote import rle_decode
from .trace import ExecutionTrace

_CSS = """
body{font-family:sans-serif;margin:1.5em;max-width:72em;color:#222}
h1{font-size:1.4em}h2{font-size:1.15em;border-bottom:1px solid #ccc;margin-top:1.6em}
table{border-collapse:collapse}td,th{border:1px solid #ddd;padding:.2em .6em;text-align:left}
.absent{color:#888;font-style:italic}.answer{font-size:1.2em;font-weight:bold}
pre{white-space:pre-wrap;background:#f7f7f7;padding:.6em}
""".strip()


@dataclass
class ReviewPanel:
    case_id: str
    directory: Path
    index: Path
    assets: List[Path] = field(default_factory=list)
    sections: Tuple[str, ...] = ()
    absent: Tuple[str, ...] = ()


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("._") or "asset"


def _as_trace(trace: Union[ExecutionTrace, Dict[str, Any], str, Path]) -> ExecutionTrace:
    if isinstance(trace, ExecutionTrace):
        return trace
    if isinstance(trace, dict):
        return ExecutionTrace.from_dict(trace)
    return ExecutionTrace.load(trace)


def ecg_waveform_svg(ecg: Dict[str, Any]) -> str:
    fs = float(ecg["sampling_rate"])
    step = int(ecg["decimation"])
    y = np.asarray(ecg["samples"], dtype=float)
    t = np.arange(len(y)) * step / fs
    markers = {}
    # marker positions use the full-rate sample index, not the decimated one
    for label, pts in sorted((ecg.get("markers") or {}).items()):
        markers[label] = [(i / fs, v, i) for i, v in pts]
    return line_plot(
        [(t, y)], width=900, height=220, title=f"Lead {ecg['lead']} (filtered)", markers=markers,
        xlabel="time (s)", ylabel="mV",
    )


def mask_svg(frame: Dict[str, Any], scale: int = 2) -> str:
    h, w = int(frame["height"]), int(frame["width"])
    mask = rle_decode(frame["rle"], h, w)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale}" height="{h * scale}" '
        f'viewBox="0 0 {w} {h}" shape-rendering="crispEdges">',
        f'<rect width="{w}" height="{h}" fill="#111"/>',
    ]
    for r in range(h):
        row = mask[r]
        c = 0
        while c < w:
            if row[c]:
                start = c
                while c < w and row[c]:
                    c += 1
                out.append(f'<rect x="{start}" y="{r}" width="{c - start}" height="1" fill="#e33" fill-opacity="0.8"/>')
            else:
                c += 1
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _fmt_value(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.1f}"
    return escape(str(v))


def render_panel(
    trace: Union[ExecutionTrace, Dict[str, Any], str, Path], out_dir: Union[str, Path]
) -> ReviewPanel:
    tr = _as_trace(trace)
    art = tr.last("artifacts")
    if art is None:
        raise MissingTrace("trace has no 'artifacts' event; was the case run to completion?")
    out_dir = Path(out_dir)
    assets_dir = out_dir / "assets"
    files: Dict[str, str] = {}
    body: List[str] = []
    present, absent = [], []
    case_id = str(art.get("case_id") or tr.case_id or "case")

    body.append(f"<h1>Review panel: {escape(case_id)}</h1>")

    profile = art.get("profile") or {}
    body.append("<h2>Patient profile</h2>")
    if profile.get("text"):
        present.append("profile")
        src = "laboratory report" if profile.get("source") == "labs" else "case question"
        body.append(f"<p>Source: {src}</p><pre>{escape(profile['text'])}</pre>")
    else:
        absent.append("profile")
        body.append('<p class="absent">No patient profile available.</p>')

    ecg = art.get("ecg")
    body.append("<h2>ECG</h2>")
    if ecg:
        present.append("ecg")
        name = f"ecg_{_safe(ecg['lead'])}.svg"
        files[name] = ecg_waveform_svg(ecg)
        body.append(f'<img src="assets/{name}" alt="ECG lead {escape(ecg["lead"])}">')
        if ecg.get("measurements"):
            rows = "".join(
                f"<tr><th>{escape(k)}</th><td>{_fmt_value(v)}</td></tr>" for k, v in ecg["measurements"].items()
            )
            body.append(f"<table>{rows}</table>")
        else:
            body.append('<p class="absent">No wave measurements were taken.</p>')
        for lead, svg in sorted((ecg.get("beat_plots") or {}).items()):
            bname = f"heartbeat_{_safe(lead)}.svg"
            files[bname] = svg
            body.append(f'<img src="assets/{bname}" alt="heartbeats lead {escape(lead)}">')
    else:
        absent.append("ecg")
        body.append('<p class="absent">No ECG analysis in this case.</p>')

    echo = art.get("echo")
    body.append("<h2>Echocardiography</h2>")
    if echo:
        present.append("echo")
        views = echo.get("views") or {}
        masks = echo.get("masks") or {}
        refs = sorted(set(views) | set(masks))
        rows = []
        for ref in refs:
            cell = ""
            frames = (masks.get(ref) or {}).get("frames") or []
            if frames:
                mname = f"mask_{_safe(ref)}.svg"
                files[mname] = mask_svg(frames[0])
                cell = f'<img src="assets/{mname}" alt="mask {escape(ref)}">'
            rows.append(
                f"<tr><td>{escape(ref)}</td><td>{escape(views.get(ref, 'not classified'))}</td><td>{cell}</td></tr>"
            )
        body.append("<table><tr><th>clip</th><th>view</th><th>segmentation</th></tr>" + "".join(rows) + "</table>")
    else:
        absent.append("echo")
        body.append('<p class="absent">No echocardiography results in this case.</p>')

    decision = art.get("decision") or {}
    body.append("<h2>Decision</h2>")
    if decision.get("answer"):
        present.append("decision")
        prob = decision.get("probability")
        ptxt = f" (probability {prob:.2f})" if prob is not None else ""
        body.append(f'<p class="answer">{escape(decision["answer"])}{ptxt}</p>')
        body.append(f"<pre>{escape(decision.get('summary') or '')}</pre>")
        steps = ", ".join(str(s) for s in decision.get("supporting_steps") or [])
        body.append(f"<p>Supporting steps: {steps or 'none'}</p>")
    else:
        absent.append("decision")
        body.append('<p class="absent">No decision recorded.</p>')

    plan_event = tr.last("plan_final")
    if plan_event:
        final = plan_event["plan"]
        items = "".join(
            f"<li>{escape(s['instruction'])} <em>({escape(s['status'])})</em></li>" for s in final["steps"]
        )
        body.append(f"<h2>Plan (revision {final['revision']})</h2><ol>{items}</ol>")
    disc = tr.last("discussion")
    if disc:
        t = disc["transcript"]
        body.append(
            f"<h2>Discussion</h2><p>{escape(' and '.join(t['roles']))}: {len(t['turns'])} step(s), "
            f"stop reason {escape(str(t['stop_reason']))}, final verdict "
            f"{escape(str(t['final']['verdict']))}.</p>"
        )

    html = (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>Review panel {escape(case_id)}</title><style>{_CSS}</style></head>\n<body>\n"
        + "\n".join(body)
        + "\n</body></html>\n"
    )
    try:
        assets_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(files):
            p = assets_dir / name
            p.write_text(files[name], encoding="utf-8")
            written.append(p)
        index = out_dir / "index.html"
        index.write_text(html, encoding="utf-8")
    except OSError as exc:
        raise AssetWriteFailure(f"cannot write review panel to {out_dir}: {exc}") from exc
    return ReviewPanel(case_id, out_dir, index, written, tuple(present), tuple(absent))


def panel_digest(panel: ReviewPanel) -> Dict[str, str]:
    """File name -> contents, for byte-level comparisons."""
    out = {"index.html": panel.index.read_text(encoding="utf-8")}
    for p in panel.assets:
        out[f"assets/{p.name}"] = p.read_text(encoding="utf-8")
    return out

