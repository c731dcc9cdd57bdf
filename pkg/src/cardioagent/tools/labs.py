"""Laboratory-report parsing into structured values, a narrative and tokens."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from ..errors import EmptyInput
from ..keyword_filter import tokenize

Value = Union[float, str]

_FIELD_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9 _()/%.\-]*?)\s*[:=]\s*(.+?)\s*$")
_NUMBER_UNIT_RE = re.compile(r"^([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)(?:\s*([^\s,;]+))?$")
_NARRATIVE_RE = re.compile(r"^(.+?) is ([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)(?: (\S+))?\.$")

DEFAULT_UNITS = {"age": "years"}


@dataclass(frozen=True)
class LabValue:
    value: Value
    unit: Optional[str] = None
    label: str = ""

    @property
    def numeric(self) -> bool:
        return isinstance(self.value, float)


@dataclass
class LabReport:
    raw_text: str
    parsed: Dict[str, LabValue] = field(default_factory=dict)
    unparsed: List[str] = field(default_factory=list)
    narrative: str = ""
    tokens: List[str] = field(default_factory=list)

    def numeric(self) -> Dict[str, Tuple[float, Optional[str]]]:
        return {k: (v.value, v.unit) for k, v in self.parsed.items() if v.numeric}


def field_key(label: str) -> str:
    return re.sub(r"[^a-z0-9%]+", "_", label.strip().lower()).strip("_")


def format_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def _split_table_row(line: str) -> Optional[List[str]]:
    for delim in ("\t", "|", ";", ","):
        if delim in line:
            cells = [c.strip() for c in line.strip().strip("|").split(delim)]
            cells = [c for c in cells if c != ""]
            if 2 <= len(cells) <= 3:
                return cells
    return None


def _interpret(label: str, raw_value: str, unit: Optional[str] = None) -> LabValue:
    key = field_key(label)
    m = _NUMBER_UNIT_RE.match(raw_value.strip())
    if m and (unit is None or m.group(2) is None):
        return LabValue(float(m.group(1)), unit or m.group(2) or DEFAULT_UNITS.get(key), label.strip())
    return LabValue(raw_value.strip(), unit, label.strip())


def _render(report: LabReport) -> str:
    lines = []
    for v in report.parsed.values():
        if v.numeric:
            unit = f" {v.unit}" if v.unit else ""
            lines.append(f"{v.label} is {format_number(v.value)}{unit}.")
        else:
            lines.append(f"{v.label}: {v.value}.")
    if report.unparsed:
        lines.append("Unparsed: " + " | ".join(report.unparsed))
    return "\n".join(lines)


def lab_process(raw: str) -> LabReport:
    """Parse ``Field: value unit`` lines and 2-3 cell delimited table rows.

    Lines that fit neither shape are kept verbatim under ``unparsed``.
    """
    if raw is None or not raw.strip():
        raise EmptyInput("lab report is empty")
    report = LabReport(raw_text=raw)
    for line in raw.splitlines():
        if not line.strip():
            continue
        m = _FIELD_RE.match(line)
        if m:
            lv = _interpret(m.group(1), m.group(2))
        else:
            cells = _split_table_row(line)
            if cells is None or not re.match(r"[A-Za-z]", cells[0]):
                report.unparsed.append(line.strip())
                continue
            lv = _interpret(cells[0], cells[1], cells[2] if len(cells) == 3 else None)
        key = field_key(lv.label)
        if not key:
            report.unparsed.append(line.strip())
            continue
        report.parsed[key] = lv
    report.narrative = _render(report)
    report.tokens = tokenize(report.narrative)
    return report


def parse_narrative(narrative: str) -> Dict[str, Tuple[float, Optional[str]]]:
    """Recover the numeric fields from a narrative produced by ``lab_process``."""
    out = {}
    for line in narrative.splitlines():
        m = _NARRATIVE_RE.match(line.strip())
        if m:
            out[field_key(m.group(1))] = (float(m.group(2)), m.group(3))
    return out
