"""Helpers for the structured blocks models are asked to emit."""

from __future__ import annotations

import re
from typing import Dict, Iterable, List, Optional, Tuple

_THINK_RE = re.compile(r"<think>.*?</think>", re.S | re.I)
_NUMBERED_RE = re.compile(r"^\s*(\d+)\s*[.)]\s+(\S.*?)\s*$")
_TOOL_HINT_RE = re.compile(r"\[\s*tool\s*:\s*([A-Za-z0-9_\-]+)\s*\]", re.I)

NULL_WORDS = frozenset({"", "null", "none", "no", "no update", "n/a", "-"})


def clean_response(text: str) -> str:
    """Drop reasoning blocks and code-fence markers, keep the payload."""
    text = _THINK_RE.sub("", text)
    return "\n".join(ln for ln in text.splitlines() if not ln.strip().startswith("```"))


def parse_fields(text: str, keys: Iterable[str]) -> Dict[str, str]:
    """Extract ``KEY: value`` fields; a value runs until the next known key.

    Keys may start a line or follow whitespace, a comma or a semicolon, so
    ``ANSWER: HF, PROBABILITY: 0.9`` yields both fields.  The first
    occurrence of a key wins.
    """
    keys = list(keys)
    pattern = re.compile(
        r"(?:^|(?<=[\s,;]))(" + "|".join(re.escape(k) for k in keys) + r")\s*:", re.M
    )
    text = clean_response(text)
    matches = list(pattern.finditer(text))
    out: Dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        value = text[m.end() : end].strip().rstrip(",;").strip()
        out.setdefault(m.group(1), value)
    return out


def parse_numbered_list(text: str) -> List[Tuple[str, Optional[str]]]:
    """``(instruction, tool_hint)`` for each ``1. ...`` / ``2) ...`` line."""
    items = []
    for line in clean_response(text).splitlines():
        m = _NUMBERED_RE.match(line)
        if not m:
            continue
        body = m.group(2)
        hint = _TOOL_HINT_RE.search(body)
        tool = hint.group(1).lower() if hint else None
        body = _TOOL_HINT_RE.sub("", body).strip().rstrip(" -:")
        if body:
            items.append((body, tool))
    return items


def is_null(value: Optional[str]) -> bool:
    return value is None or value.strip().strip(".").lower() in NULL_WORDS


ESCALATE_RE = re.compile(r"\bESCALATE\s*:\s*discussion\b", re.I)


def has_escalation(text: str) -> bool:
    return bool(ESCALATE_RE.search(text or ""))
