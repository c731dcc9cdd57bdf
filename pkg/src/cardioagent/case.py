"""One patient case and its on-disk layout.

A case directory holds ``question.txt`` plus any of ``labs.txt``,
``ecg.csv`` and ``echo/*.ref`` (one clip reference per file; an empty file
uses its stem as the reference).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

from .errors import InvalidCase, InvalidConfig
from .tools.ecg import EcgSignal, read_ecg_csv


@dataclass(frozen=True)
class CaseInput:
    case_id: str
    question: str
    labs_text: Optional[str] = None
    ecg: Optional[EcgSignal] = None
    echo_refs: Tuple[str, ...] = ()
    ecg_source: Optional[str] = None

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise InvalidCase(f"case {self.case_id!r}: question is empty")
        if not self.modalities():
            raise InvalidCase(f"case {self.case_id!r}: no labs, ECG or echo input")

    def modalities(self) -> List[str]:
        out = []
        if self.labs_text and self.labs_text.strip():
            out.append("labs")
        if self.ecg is not None:
            out.append("ecg")
        if self.echo_refs:
            out.append("echo")
        return out

    def inventory(self) -> str:
        parts = []
        if "labs" in self.modalities():
            parts.append(f"laboratory report ({len(self.labs_text.splitlines())} lines)")
        if self.ecg is not None:
            parts.append(
                f"{len(self.ecg.lead_names)}-lead ECG, {self.ecg.duration_s:.1f} s at {self.ecg.sampling_rate:g} Hz"
            )
        if self.echo_refs:
            parts.append(f"{len(self.echo_refs)} echocardiography clip(s): {', '.join(self.echo_refs)}")
        return "; ".join(parts)

    def render_inputs(self) -> str:
        """The original input rendered as text, with media given by reference."""
        lines = [f"Question: {self.question.strip()}"]
        if "labs" in self.modalities():
            lines.append("Laboratory report:\n" + self.labs_text.strip())
        if self.ecg is not None:
            src = f" from {self.ecg_source}" if self.ecg_source else ""
            lines.append(
                f"ECG{src}: leads {', '.join(self.ecg.lead_names)}; "
                f"{self.ecg.duration_s:.1f} s at {self.ecg.sampling_rate:g} Hz."
            )
        if self.echo_refs:
            lines.append("Echocardiography clips: " + ", ".join(self.echo_refs) + ".")
        return "\n".join(lines)


def load_case(directory: Union[str, Path], case_id: Optional[str] = None) -> CaseInput:
    d = Path(directory)
    if not d.is_dir():
        raise InvalidCase(f"case directory {d} does not exist")
    qpath = d / "question.txt"
    if not qpath.is_file():
        raise InvalidCase(f"case directory {d} has no question.txt")
    question = qpath.read_text(encoding="utf-8").strip()
    labs = (d / "labs.txt").read_text(encoding="utf-8") if (d / "labs.txt").is_file() else None
    ecg = None
    if (d / "ecg.csv").is_file():
        try:
            ecg = read_ecg_csv(d / "ecg.csv")
        except (InvalidConfig, ValueError, StopIteration) as exc:
            raise InvalidCase(f"{d / 'ecg.csv'}: {exc}") from None
    refs: List[str] = []
    if (d / "echo").is_dir():
        for p in sorted((d / "echo").glob("*.ref")):
            refs.append(p.read_text(encoding="utf-8").strip() or p.stem)
    return CaseInput(
        case_id=case_id or d.name,
        question=question,
        labs_text=labs,
        ecg=ecg,
        echo_refs=tuple(refs),
        ecg_source="ecg.csv" if ecg is not None else None,
    )


__all__ = ["CaseInput", "load_case"]
