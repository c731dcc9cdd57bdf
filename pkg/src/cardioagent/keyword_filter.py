"""
Keyword re-scoring of dense candidates.

Every candidate chunk gets the score

    score(chunk, Q) = 1/|Q| * sum_k TF(k, chunk) * MW(k) * PB(k, chunk)

with TF the keyword's share of the chunk's tokens, MW the medical
vocabulary weight (1 for unlisted terms) and PB a 1.2x bonus when the
keyword first appears within the leading 30% of the configured chunk size.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from .corpus import Chunk, ChunkStore
from .errors import EmptyChunk, EmptyQuery, InvalidConfig
from .vector_index import ScoredCandidate

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def load_stopwords(path: Optional[Union[str, Path]] = None) -> FrozenSet[str]:
    """Newline-separated stopword list; ``#`` starts a comment."""
    if path is None:
        raw = resources.files("cardioagent.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in raw.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@dataclass(frozen=True)
class MedicalVocabulary:
    weights: Dict[str, float] = field(default_factory=dict)
    source: str = "inline"

    def __post_init__(self):
        clean = {}
        for term, w in self.weights.items():
            w = float(w)
            if not math.isfinite(w) or w < 1.0:
                raise InvalidConfig(f"vocabulary weight for {term!r} must be finite and >= 1, got {w}")
            clean[term.strip().lower()] = w
        object.__setattr__(self, "weights", clean)

    def __contains__(self, term: str) -> bool:
        return term in self.weights

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "MedicalVocabulary":
        if path is None:
            raw = resources.files("cardioagent.data").joinpath("vocabulary.json").read_text("utf-8")
            return cls(json.loads(raw), source="builtin:vocabulary.json")
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), source=str(path))


@dataclass(frozen=True)
class QueryKeywords:
    keywords: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.keywords)

    def __iter__(self):
        return iter(self.keywords)

    @classmethod
    def from_query(cls, query: str, stopwords: Iterable[str] = ()) -> "QueryKeywords":
        stop = set(stopwords)
        kept = [t for t in tokenize(query) if t not in stop]
        return cls(tuple(dict.fromkeys(kept)))


@dataclass(frozen=True)
class FilterConfig:
    threshold: float = 0.05
    position_fraction: float = 0.3
    position_bonus: float = 1.2
    min_results: int = 1
    chunk_size: int = 1000

    def __post_init__(self):
        if not (0.0 < self.position_fraction < 1.0):
            raise InvalidConfig("position_fraction must lie in (0, 1)")
        if self.position_bonus < 1.0:
            raise InvalidConfig("position_bonus must be >= 1")
        if self.threshold < 0:
            raise InvalidConfig("threshold must be >= 0")
        if self.min_results < 0:
            raise InvalidConfig("min_results must be >= 0")
        if self.chunk_size < 1:
            raise InvalidConfig("chunk_size must be >= 1")


@dataclass(frozen=True)
class KeywordTerm:
    keyword: str
    tf: float
    mw: float
    pb: float

    @property
    def product(self) -> float:
        return self.tf * self.mw * self.pb


@dataclass(frozen=True)
class ChunkScore:
    chunk_id: str
    score: float
    breakdown: Tuple[KeywordTerm, ...]

    def recompute(self) -> float:
        if not self.breakdown:
            return 0.0
        return sum(t.product for t in self.breakdown) / len(self.breakdown)


@dataclass(frozen=True)
class RankedChunk:
    chunk: Chunk
    score: ChunkScore
    cosine: float
    backfilled: bool = False

    @property
    def chunk_id(self) -> str:
        return self.chunk.chunk_id


def _chunk_tokens(chunk: Chunk) -> List[str]:
    tokens = tokenize(chunk.text)
    if not tokens:
        raise EmptyChunk(f"chunk {chunk.chunk_id} contains no tokens")
    return tokens


def term_frequency(k: str, chunk: Chunk) -> float:
    tokens = _chunk_tokens(chunk)
    return tokens.count(k) / len(tokens)


def medical_weight(k: str, vocab: MedicalVocabulary) -> float:
    return vocab.weights.get(k, 1.0)


def first_position(k: str, chunk: Chunk) -> Optional[int]:
    """Character offset of the first token equal to ``k`` (case-insensitive)."""
    for m in _TOKEN_RE.finditer(chunk.text.lower()):
        if m.group() == k:
            return m.start()
    return None


def position_bonus(k: str, chunk: Chunk, cfg: FilterConfig) -> float:
    pos = first_position(k, chunk)
    if pos is None:
        return 1.0
    return cfg.position_bonus if pos < cfg.position_fraction * cfg.chunk_size else 1.0


def score_chunk(
    chunk: Chunk, kw: QueryKeywords, vocab: MedicalVocabulary, cfg: FilterConfig
) -> ChunkScore:
    if len(kw) == 0:
        raise EmptyQuery("query has no keywords after stopword removal")
    tokens = _chunk_tokens(chunk)
    n = len(tokens)
    terms = []
    for k in kw:
        terms.append(
            KeywordTerm(
                keyword=k,
                tf=tokens.count(k) / n,
                mw=medical_weight(k, vocab),
                pb=position_bonus(k, chunk, cfg),
            )
        )
    terms = tuple(terms)
    return ChunkScore(chunk.chunk_id, sum(t.product for t in terms) / len(terms), terms)


def _rank_key(r: RankedChunk):
    return (-r.score.score, -r.cosine, r.chunk_id)


def filter_candidates(
    cands: Sequence[ScoredCandidate],
    store: ChunkStore,
    kw: QueryKeywords,
    vocab: MedicalVocabulary,
    cfg: FilterConfig,
    n: int,
) -> List[RankedChunk]:
    """Score the dense candidates and keep the best ``n`` above threshold.

    A threshold of 0 disables filtering (pure re-ranking).  When fewer than
    ``cfg.min_results`` candidates pass, the best-scoring rejected ones are
    appended with ``backfilled=True``.
    """
    if len(kw) == 0:
        raise EmptyQuery("query has no keywords after stopword removal")
    if n < 1:
        raise InvalidConfig(f"n must be >= 1, got {n}")
    ranked = sorted(
        (RankedChunk(store[c.chunk_id], score_chunk(store[c.chunk_id], kw, vocab, cfg), c.cosine) for c in cands),
        key=_rank_key,
    )
    disabled = cfg.threshold <= 0
    passed = [r for r in ranked if disabled or r.score.score > cfg.threshold]
    out = passed[:n]
    floor = min(cfg.min_results, n)
    if len(out) < floor:
        taken = {r.chunk_id for r in out}
        for r in ranked:
            if len(out) >= floor:
                break
            if r.chunk_id not in taken:
                out.append(replace(r, backfilled=True))
    return out


def format_breakdown(r: RankedChunk) -> str:
    parts = [
        f"{t.keyword}: TF={t.tf:.4f} MW={t.mw:g} PB={t.pb:g}" for t in r.score.breakdown
    ]
    flag = " [backfilled]" if r.backfilled else ""
    return f"score={r.score.score:.6f} cos={r.cosine:.6f}{flag} | " + "; ".join(parts)
