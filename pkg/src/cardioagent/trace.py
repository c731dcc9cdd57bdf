"""Append-only execution trace shared by every pipeline stage."""

from __future__ import annotations

import contextlib
import contextvars
import dataclasses
import enum
import json
import threading
import time
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import numpy as np

from .errors import MissingTrace

# keys holding wall-clock data; stripped before determinism comparisons
VOLATILE_KEYS = frozenset({"ts", "latency_ms"})

_active: contextvars.ContextVar[Optional["ExecutionTrace"]] = contextvars.ContextVar(
    "cardioagent_trace", default=None
)


def jsonable(obj: Any) -> Any:
    """Convert rich Python and numpy values to plain JSON types."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(jsonable(k)): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def strip_volatile(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


class ExecutionTrace:
    def __init__(self, case_id: Optional[str] = None, clock=time.time):
        self.case_id = case_id
        self.events: List[Dict[str, Any]] = []
        self._clock = clock
        self._lock = threading.Lock()

    def record(self, type: str, **payload: Any) -> Dict[str, Any]:
        with self._lock:
            event = {"seq": len(self.events), "type": type, "ts": round(self._clock(), 6)}
            event.update(jsonable(payload))
            self.events.append(event)
            return event

    def of_type(self, *types: str) -> List[Dict[str, Any]]:
        return [e for e in self.events if e["type"] in types]

    def last(self, type: str) -> Optional[Dict[str, Any]]:
        found = self.of_type(type)
        return found[-1] if found else None

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        return iter(self.events)

    def to_dict(self, normalize: bool = False) -> Dict[str, Any]:
        data = {"case_id": self.case_id, "events": self.events}
        return strip_volatile(data) if normalize else data

    def dumps(self, normalize: bool = False) -> str:
        return json.dumps(self.to_dict(normalize), indent=1, ensure_ascii=False) + "\n"

    def to_jsonl(self, normalize: bool = False) -> str:
        events = strip_volatile(self.events) if normalize else self.events
        return "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in events)

    def save(self, path: Union[str, Path], normalize: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(normalize), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExecutionTrace":
        if not isinstance(data, dict) or "events" not in data:
            raise MissingTrace("trace JSON has no 'events' list")
        trace = cls(case_id=data.get("case_id"))
        trace.events = list(data["events"])
        return trace

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExecutionTrace":
        path = Path(path)
        if not path.is_file():
            raise MissingTrace(f"trace file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MissingTrace(f"trace file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def current_trace() -> Optional[ExecutionTrace]:
    return _active.get()


@contextlib.contextmanager
def activate(trace: Optional[ExecutionTrace]):
    """Route gateway and tool events of the current context into ``trace``."""
    token = _active.set(trace)
    try:
        yield trace
    finally:
        _active.reset(token)


def record(type: str, **payload: Any) -> None:
    trace = _active.get()
    if trace is not None:
        trace.record(type, **payload)
