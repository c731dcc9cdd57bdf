"""
Model gateway.

Every model role (chief, planner, the two discussion experts and the
synthesizer) is bound to one backend: an OpenAI-compatible HTTP
chat-completions endpoint or a scripted mock that plays back canned
responses.  Calls made while a trace is active are logged to it with
content hashes and short previews.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import httpx
import numpy as np
import yaml

from . import trace as tracing
from .errors import AttachmentUnsupported, BackendFailure, ConfigError, MockExhausted

log = logging.getLogger(__name__)

PREVIEW_CHARS = 200
DEFAULT_RETRIES = 2


class Role(str, enum.Enum):
    CHIEF = "chief"
    PLANNER = "planner"
    EXPERT_A = "expert_a"
    EXPERT_B = "expert_b"
    SYNTHESIZER = "synthesizer"


@dataclass(frozen=True)
class Message:
    speaker: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class ChatRequest:
    role: Role
    messages: Tuple[Message, ...]
    attachments: Tuple[str, ...] = ()
    max_tokens: int = 1024
    temperature: float = 0.0

    @property
    def prompt(self) -> str:
        return "\n".join(m.content for m in self.messages)

    @classmethod
    def simple(cls, role: Role, user: str, system: Optional[str] = None, **kw) -> "ChatRequest":
        msgs = []
        if system:
            msgs.append(Message("system", system))
        msgs.append(Message("user", user))
        return cls(role=Role(role), messages=tuple(msgs), **kw)


@dataclass
class ChatResponse:
    text: str
    backend_name: str
    latency_ms: float = 0.0
    token_usage: Dict[str, int] = field(default_factory=dict)
    retry_count: int = 0


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Scripted mock
# ---------------------------------------------------------------------------


@dataclass
class MockRule:
    responses: List[str]
    match: Optional[str] = None
    regex: bool = False
    role: Optional[str] = None
    times: Optional[int] = None  # None: unlimited (single response) / len(responses)
    used: int = 0

    def __post_init__(self):
        if not self.responses:
            raise ConfigError("mock rule needs a response")
        if self.times is None and len(self.responses) > 1:
            self.times = len(self.responses)
        self._pattern = re.compile(self.match, re.S) if (self.regex and self.match) else None

    def available(self) -> bool:
        return self.times is None or self.used < self.times

    def matches(self, req: ChatRequest) -> bool:
        if not self.available():
            return False
        if self.role is not None and self.role != req.role.value:
            return False
        if self.match is None:
            return True
        if self._pattern is not None:
            return self._pattern.search(req.prompt) is not None
        return self.match in req.prompt

    def take(self) -> str:
        text = self.responses[min(self.used, len(self.responses) - 1)]
        self.used += 1
        return text


class ScriptedMockBackend:
    """Deterministic playback of ``(matcher, response)`` rules.

    Rules are tried in order; the first available rule whose role filter
    and matcher accept the request answers it.  A rule with several
    ``responses`` plays them in sequence and is then spent.  Requests no
    rule answers fall through to ``default`` or raise ``MockExhausted``.
    """

    supports_media = True

    def __init__(self, rules: Sequence[MockRule] = (), default: Optional[str] = None, name: str = "mock"):
        self.rules = list(rules)
        self.default = default
        self.name = name
        self.call_log: List[Dict[str, Any]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_data(cls, data: Any, name: str = "mock") -> "ScriptedMockBackend":
        if isinstance(data, list):
            data = {"rules": data}
        if not isinstance(data, dict):
            raise ConfigError("mock script must be a list of rules or a mapping with 'rules'")
        rules = []
        for i, r in enumerate(data.get("rules") or []):
            if not isinstance(r, dict):
                raise ConfigError(f"mock rule {i} is not a mapping")
            if "responses" in r:
                responses = [str(x) for x in r["responses"]]
            elif "response" in r:
                responses = [str(r["response"])]
            else:
                raise ConfigError(f"mock rule {i} has no response")
            rules.append(
                MockRule(
                    responses=responses,
                    match=r.get("match"),
                    regex=bool(r.get("regex", False)),
                    role=r.get("role"),
                    times=r.get("times"),
                )
            )
        default = data.get("default")
        return cls(rules, default=None if default is None else str(default), name=name)

    @classmethod
    def from_file(cls, path: Union[str, Path], name: Optional[str] = None) -> "ScriptedMockBackend":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read mock script {path}: {exc}") from None
        return cls.from_data(data, name=name or f"mock:{path.name}")

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            for rule in self.rules:
                if rule.matches(req):
                    text = rule.take()
                    break
            else:
                if self.default is None:
                    self.call_log.append({"role": req.role.value, "prompt": req.prompt, "response": None})
                    raise MockExhausted(
                        f"{self.name}: no rule matches {req.role.value} request "
                        f"(prompt starts {req.prompt[:80]!r})"
                    )
                text = self.default
            self.call_log.append({"role": req.role.value, "prompt": req.prompt, "response": text})
        return ChatResponse(text=text, backend_name=self.name)


# ---------------------------------------------------------------------------
# HTTP (OpenAI-compatible)
# ---------------------------------------------------------------------------


def _endpoint(url: str, suffix: str) -> str:
    url = url.rstrip("/")
    return url if url.endswith(suffix) else url + suffix


class _HttpBase:
    def __init__(
        self,
        url: str,
        model: str,
        api_key_env: Optional[str] = None,
        retries: int = DEFAULT_RETRIES,
        backoff: float = 0.5,
        timeout: float = 120.0,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._client = client
        self._sleep = sleep

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, endpoint: str, body: Dict[str, Any]) -> Tuple[Dict[str, Any], int]:
        """POST with retries on transport errors and on retryable status codes (429 or 5xx)."""
        client = self._client or httpx.Client(timeout=self.timeout)
        last_error = ""
        try:
            for attempt in range(self.retries + 1):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = client.post(endpoint, json=body, headers=self._headers())
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                    continue
                if resp.status_code >= 400:
                    raise BackendFailure(f"{endpoint}: HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json(), attempt
                except ValueError:
                    raise BackendFailure(f"{endpoint}: response is not JSON") from None
        finally:
            if self._client is None:
                client.close()
        raise BackendFailure(f"{endpoint}: failed after {self.retries + 1} attempts ({last_error})")


class HttpChatBackend(_HttpBase):
    def __init__(self, url: str, model: str, supports_media: bool = False, name: Optional[str] = None, **kw):
        super().__init__(url, model, **kw)
        self.supports_media = supports_media
        self.name = name or f"http:{model}"

    def _payload(self, req: ChatRequest) -> Dict[str, Any]:
        messages = []
        last_user = max((i for i, m in enumerate(req.messages) if m.speaker == "user"), default=None)
        for i, m in enumerate(req.messages):
            if i == last_user and req.attachments:
                parts: List[Dict[str, Any]] = [{"type": "text", "text": m.content}]
                for ref in req.attachments:
                    parts.append({"type": "image_url", "image_url": {"url": ref}})
                messages.append({"role": m.speaker, "content": parts})
            else:
                messages.append({"role": m.speaker, "content": m.content})
        return {
            "model": self.model,
            "messages": messages,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }

    def complete(self, req: ChatRequest) -> ChatResponse:
        t0 = time.perf_counter()
        data, retries = self._post(_endpoint(self.url, "/chat/completions"), self._payload(req))
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise BackendFailure(f"{self.name}: malformed chat completion response") from None
        if not text.strip():
            raise BackendFailure(f"{self.name}: empty completion")
        usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, (int, float))}
        return ChatResponse(
            text=text,
            backend_name=self.name,
            latency_ms=(time.perf_counter() - t0) * 1000,
            token_usage=usage,
            retry_count=retries,
        )


class HttpEmbedder(_HttpBase):
    """Embedder backed by an OpenAI-compatible ``/embeddings`` endpoint.

    Pooling of token vectors into one chunk vector is left to the server.
    """

    def __init__(self, url: str, model: str = "default", dim: Optional[int] = None, **kw):
        super().__init__(url, model, **kw)
        self.name = f"http:{model}"
        self._dim = dim

    @property
    def dim(self) -> int:
        if self._dim is None:
            self._dim = len(self.embed("dimension probe"))
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        data, _ = self._post(_endpoint(self.url, "/embeddings"), {"model": self.model, "input": text})
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError):
            raise BackendFailure(f"{self.name}: malformed embedding response") from None
        return vec


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class Gateway:
    """Routes requests to the backend bound to their role."""

    def __init__(self, bindings: Mapping[Union[Role, str], Any]):
        self.bindings: Dict[Role, Any] = {Role(r): b for r, b in bindings.items()}
        missing = [r.value for r in Role if r not in self.bindings]
        if missing:
            raise ConfigError(f"no backend bound for role(s): {', '.join(missing)}")

    def backend(self, role: Union[Role, str]):
        return self.bindings[Role(role)]

    def supports_media(self, role: Union[Role, str]) -> bool:
        return bool(getattr(self.backend(role), "supports_media", False))

    def complete(self, req: ChatRequest) -> ChatResponse:
        backend = self.backend(req.role)
        if req.attachments and not self.supports_media(req.role):
            raise AttachmentUnsupported(
                f"role {req.role.value} is bound to text-only backend {backend.name}; "
                f"{len(req.attachments)} attachment(s) refused"
            )
        prompt = req.prompt
        try:
            resp = backend.complete(req)
        except BackendFailure as exc:
            tracing.record(
                "model_call",
                role=req.role.value,
                backend=backend.name,
                request_sha=_sha(prompt),
                request_preview=prompt[:PREVIEW_CHARS],
                error=f"{type(exc).__name__}: {exc}",
            )
            raise
        tracing.record(
            "model_call",
            role=req.role.value,
            backend=resp.backend_name,
            request_sha=_sha(prompt),
            request_preview=prompt[:PREVIEW_CHARS],
            response_sha=_sha(resp.text),
            response_preview=resp.text[:PREVIEW_CHARS],
            attachments=len(req.attachments),
            retry_count=resp.retry_count,
            latency_ms=round(resp.latency_ms, 3),
        )
        return resp

    def ask(self, role: Union[Role, str], user: str, system: Optional[str] = None, **kw) -> str:
        return self.complete(ChatRequest.simple(Role(role), user, system=system, **kw)).text

    def describe(self) -> Dict[str, str]:
        return {r.value: self.bindings[r].name for r in Role}


def complete(req: ChatRequest, gw: Gateway) -> ChatResponse:
    return gw.complete(req)


def load_backends(config: Mapping[str, Any], base_dir: Union[str, Path] = ".") -> Gateway:
    """Build a gateway from a per-role mapping.

    Each role entry is ``{"backend": "mock", "script": <yaml path>}`` or
    ``{"backend": "http", "url": ..., "model": ..., "api_key_env": ...}``.
    Roles pointing at the same mock script share one mock instance.
    """
    base_dir = Path(base_dir)
    if not isinstance(config, Mapping):
        raise ConfigError("models config must be a mapping of role -> backend settings")
    unknown_roles = sorted(set(config) - {r.value for r in Role})
    if unknown_roles:
        raise ConfigError(f"unknown role(s) in config: {', '.join(unknown_roles)}")
    mocks: Dict[str, ScriptedMockBackend] = {}
    bindings = {}
    for role in Role:
        entry = config.get(role.value)
        if entry is None:
            raise ConfigError(f"role '{role.value}' has no backend configured")
        if not isinstance(entry, Mapping):
            raise ConfigError(f"role '{role.value}': settings must be a mapping")
        kind = entry.get("backend")
        if kind == "mock":
            if "script" in entry:
                path = (base_dir / entry["script"]).resolve()
                key = str(path)
                if key not in mocks:
                    mocks[key] = ScriptedMockBackend.from_file(path)
                bindings[role] = mocks[key]
            elif "rules" in entry or "default" in entry:
                bindings[role] = ScriptedMockBackend.from_data(dict(entry), name=f"mock:{role.value}")
            else:
                raise ConfigError(f"role '{role.value}': mock backend needs 'script' or 'rules'")
        elif kind == "http":
            for key in ("url", "model"):
                if not entry.get(key):
                    raise ConfigError(f"role '{role.value}': http backend needs '{key}'")
            bindings[role] = HttpChatBackend(
                entry["url"],
                entry["model"],
                api_key_env=entry.get("api_key_env"),
                supports_media=bool(entry.get("media", False)),
                retries=int(entry.get("retries", DEFAULT_RETRIES)),
            )
        else:
            raise ConfigError(f"role '{role.value}': unknown backend {kind!r} (expected 'mock' or 'http')")
    return Gateway(bindings)


def mock_gateway(script: Any) -> Gateway:
    """All roles bound to one mock built from in-memory script data."""
    backend = script if isinstance(script, ScriptedMockBackend) else ScriptedMockBackend.from_data(script)
    return Gateway({r: backend for r in Role})

