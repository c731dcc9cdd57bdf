"""
Multidisciplinary discussion: two domain experts and a synthesizer.

Step 1 gives both experts the original input I and the synthesizer merges
their answers into D_1.  Step 2 shows the experts D_1 with the intermediate
tool outputs Z.  From step 3 on, odd steps re-inject I and even steps
re-inject Z, always alongside the previous synthesis.  From step 3 on the
discussion stops once both experts' verdicts equal the previous
synthesis verdict, and in any case after step T = 2 * max_rounds.
"""

from __future__ import annotations

import contextvars
import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from . import trace as tracing
from .errors import BackendFailure, InvalidConfig, MissingVerdict
from .gateway import ChatRequest, Gateway, Role
from .parsing import clean_response, parse_fields
from .prompts import DEFAULT_TEMPLATES, PromptTemplates

log = logging.getLogger(__name__)

GENERIC_ROLES = ("imaging expert", "signal expert")
_VERDICT_RE = re.compile(r"^\s*\**\s*VERDICT\s*\**\s*:\s*(.+?)\s*$", re.M | re.I)


class Injected(str, enum.Enum):
    I = "I"
    Z = "Z"


class StopReason(str, enum.Enum):
    CONSENSUS = "consensus"
    CAP_REACHED = "cap_reached"
    ERROR = "error"


@dataclass(frozen=True)
class DiscussionConfig:
    max_rounds: int = 2
    parallel: bool = False

    def __post_init__(self):
        if int(self.max_rounds) != self.max_rounds or self.max_rounds < 1:
            raise InvalidConfig(f"max_rounds must be an integer >= 1, got {self.max_rounds}")

    @property
    def T(self) -> int:
        return 2 * self.max_rounds


@dataclass(frozen=True)
class EvidenceBundle:
    question: str
    inputs: str  # I rendered as text
    intermediate: str  # Z rendered as text
    media: Tuple[str, ...] = ()


@dataclass(frozen=True)
class DiscussionTurn:
    t: int
    injected: Injected
    q_text: str
    q_verdict: Optional[str]
    p_text: str
    p_verdict: Optional[str]
    d_text: str
    d_verdict: Optional[str]
    agreed: Optional[bool] = None  # both experts vs D_{t-1}; None at t=1

    def as_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "injected": self.injected.value,
            "Q": {"text": self.q_text, "verdict": self.q_verdict},
            "P": {"text": self.p_text, "verdict": self.p_verdict},
            "D": {"text": self.d_text, "verdict": self.d_verdict},
            "agreed": self.agreed,
        }


@dataclass
class DiscussionTranscript:
    config: DiscussionConfig
    roles: Tuple[str, str]
    turns: List[DiscussionTurn] = field(default_factory=list)
    stop_reason: Optional[StopReason] = None
    error: Optional[str] = None

    @property
    def final(self) -> Optional[DiscussionTurn]:
        return self.turns[-1] if self.turns else None

    @property
    def final_text(self) -> str:
        return self.final.d_text if self.final else ""

    @property
    def final_verdict(self) -> Optional[str]:
        return self.final.d_verdict if self.final else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": {"max_rounds": self.config.max_rounds, "T": self.config.T},
            "roles": list(self.roles),
            "turns": [t.as_dict() for t in self.turns],
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
            "error": self.error,
            "final": {"text": self.final_text, "verdict": self.final_verdict},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# Roles and verdicts
# ---------------------------------------------------------------------------


def assign_roles(
    question: str, gw: Gateway, templates: PromptTemplates = DEFAULT_TEMPLATES
) -> Tuple[str, str]:
    if not question or not question.strip():
        return GENERIC_ROLES
    text = gw.ask(Role.CHIEF, templates.render("roles", question=question.strip()))
    fields = parse_fields(text, ("ROLE_A", "ROLE_B"))
    a = fields.get("ROLE_A", "").splitlines()[0].strip() if fields.get("ROLE_A") else ""
    b = fields.get("ROLE_B", "").splitlines()[0].strip() if fields.get("ROLE_B") else ""
    if not a or not b:
        log.warning("could not parse expert roles from the chief's answer; using generic roles")
        tracing.record("roles_fallback", roles=list(GENERIC_ROLES))
        return GENERIC_ROLES
    return a, b


def parse_verdict(text: str) -> Optional[str]:
    """The label of the last ``VERDICT:`` line, or None."""
    found = _VERDICT_RE.findall(clean_response(text or ""))
    if not found:
        return None
    label = found[-1].strip().strip("*").strip()
    return label or None


def normalize_label(label: str) -> str:
    return label.strip().rstrip(".").strip().casefold()


def check_agreement(expert_verdict: Optional[str], synth_verdict: Optional[str]) -> bool:
    if expert_verdict is None or synth_verdict is None:
        raise MissingVerdict("response carries no VERDICT field")
    return normalize_label(expert_verdict) == normalize_label(synth_verdict)


def _agree(expert: Optional[str], synth: Optional[str], who: str, t: int) -> bool:
    try:
        return check_agreement(expert, synth)
    except MissingVerdict:
        log.warning("missing verdict (%s, step %d) counted as disagreement", who, t)
        tracing.record("missing_verdict", t=t, who=who)
        return False


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------


def injected_for(t: int) -> Injected:
    if t == 1:
        return Injected.I
    if t == 2:
        return Injected.Z
    return Injected.I if t % 2 == 1 else Injected.Z


def _expert_prompt(templates, role_desc, bundle, t, injected, prev: Optional[str]) -> str:
    evidence = bundle.inputs if injected is Injected.I else bundle.intermediate
    label = "Original case input (I)" if injected is Injected.I else "Intermediate tool outputs (Z)"
    return templates.render(
        "expert",
        role=role_desc,
        t=t,
        question=bundle.question,
        evidence_label=label,
        evidence=evidence,
        synthesis=prev if prev is not None else "(first step: no synthesis yet)",
    )


def run_discussion(
    bundle: EvidenceBundle,
    cfg: DiscussionConfig,
    gw: Gateway,
    roles: Optional[Tuple[str, str]] = None,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
) -> DiscussionTranscript:
    """Run the protocol; a backend failure returns the turns completed so far."""
    T = cfg.T
    transcript = DiscussionTranscript(cfg, tuple(roles) if roles else GENERIC_ROLES)
    try:
        if roles is None:
            transcript.roles = assign_roles(bundle.question, gw, templates)
        tracing.record("discussion_started", roles=list(transcript.roles), T=T)
        prev: Optional[DiscussionTurn] = None
        for t in range(1, T + 1):
            injected = injected_for(t)
            prev_text = prev.d_text if prev else None

            def ask(role: Role, desc: str) -> str:
                prompt = _expert_prompt(templates, desc, bundle, t, injected, prev_text)
                media = bundle.media if (injected is Injected.I and gw.supports_media(role)) else ()
                return gw.complete(ChatRequest.simple(role, prompt, attachments=tuple(media))).text

            if cfg.parallel:
                with ThreadPoolExecutor(max_workers=2) as pool:
                    fa = pool.submit(contextvars.copy_context().run, ask, Role.EXPERT_A, transcript.roles[0])
                    fb = pool.submit(contextvars.copy_context().run, ask, Role.EXPERT_B, transcript.roles[1])
                    q_text, p_text = fa.result(), fb.result()
            else:
                q_text = ask(Role.EXPERT_A, transcript.roles[0])
                p_text = ask(Role.EXPERT_B, transcript.roles[1])
            d_text = gw.ask(
                Role.SYNTHESIZER,
                templates.render(
                    "synthesis", t=t, question=bundle.question, role_a=transcript.roles[0],
                    role_b=transcript.roles[1], expert_a=q_text, expert_b=p_text,
                ),
            )
            q_v, p_v, d_v = parse_verdict(q_text), parse_verdict(p_text), parse_verdict(d_text)
            agreed = None
            if prev is not None:
                a_ok = _agree(q_v, prev.d_verdict, "expert_a", t)
                b_ok = _agree(p_v, prev.d_verdict, "expert_b", t)
                agreed = a_ok and b_ok
            turn = DiscussionTurn(t, injected, q_text, q_v, p_text, p_v, d_text, d_v, agreed)
            transcript.turns.append(turn)
            tracing.record(
                "discussion_turn", t=t, injected=injected.value, verdicts=[q_v, p_v, d_v], agreed=agreed
            )
            prev = turn
            # the agreement test belongs to the t >= 3 loop only
            if t >= 3 and agreed:
                transcript.stop_reason = StopReason.CONSENSUS
                break
            if t == T:
                transcript.stop_reason = StopReason.CAP_REACHED
    except BackendFailure as exc:
        log.warning("discussion interrupted by backend failure: %s", exc)
        transcript.stop_reason = StopReason.ERROR
        transcript.error = f"{type(exc).__name__}: {exc}"
    tracing.record(
        "discussion_finished",
        stop_reason=transcript.stop_reason.value,
        turns=len(transcript.turns),
        final_verdict=transcript.final_verdict,
        error=transcript.error,
    )
    return transcript
