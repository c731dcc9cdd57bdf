"""
Knowledge-base construction.

Raw source documents are converted to normalized text and then cut into
fixed-size, overlapping character windows.  Each window keeps its document
id, 1-based ordinal and start offset so that a retrieved chunk can always be
traced back to the exact span of the source it came from.

The resulting ``ChunkStore`` is persisted as JSON lines: one header line
``{"version", "d_s", "d_o", "M"}`` followed by one line per chunk.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import DuplicateDocId, EmptyDocument, InvalidConfig, UnsupportedFormat

log = logging.getLogger(__name__)

STORE_VERSION = 1

_WS_RE = re.compile(r"\s+")


class DocFormat(str, enum.Enum):
    PLAIN_TEXT = "plain_text"
    HTML = "html"
    PDF_TEXT = "pdf_text"


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    origin: str
    format: DocFormat
    raw_bytes: bytes


@dataclass(frozen=True)
class CleanText:
    doc_id: str
    text: str

    @property
    def char_count(self) -> int:
        return len(self.text)


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 1000
    overlap: int = 200

    def __post_init__(self):
        if not isinstance(self.chunk_size, int) or self.chunk_size < 1:
            raise InvalidConfig(f"chunk_size must be a positive integer, got {self.chunk_size!r}")
        if not isinstance(self.overlap, int) or self.overlap < 0:
            raise InvalidConfig(f"overlap must be a non-negative integer, got {self.overlap!r}")
        if self.overlap >= self.chunk_size:
            raise InvalidConfig(
                f"overlap ({self.overlap}) must be smaller than chunk_size ({self.chunk_size})"
            )

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    start_offset: int
    text: str

    @property
    def length(self) -> int:
        return len(self.text)

    @property
    def end_offset(self) -> int:
        return self.start_offset + len(self.text)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


class _TagStripper(HTMLParser):
    _SKIP = {"script", "style", "head", "title", "noscript"}
    _BLOCK = {
        "p", "div", "br", "li", "ul", "ol", "tr", "td", "th", "table",
        "h1", "h2", "h3", "h4", "h5", "h6", "section", "article", "header",
        "footer", "blockquote", "pre", "hr",
    }

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: List[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1
        elif tag in self._BLOCK:
            self.parts.append(" ")

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth:
            self._skip_depth -= 1
        elif tag in self._BLOCK:
            self.parts.append(" ")

    def handle_data(self, data):
        if not self._skip_depth:
            self.parts.append(data)


def normalize_text(text: str) -> str:
    """Strip control characters and collapse all whitespace to single spaces."""
    cleaned = []
    for ch in text:
        if ch.isspace():
            cleaned.append(" ")
        elif unicodedata.category(ch) in ("Cc", "Cf", "Cs", "Co"):
            continue
        else:
            cleaned.append(ch)
    return _WS_RE.sub(" ", "".join(cleaned)).strip()


def _decode(doc: SourceDocument) -> str:
    raw = doc.raw_bytes
    if raw.lstrip()[:5] == b"%PDF-" or b"\x00" in raw:
        raise UnsupportedFormat(
            f"{doc.doc_id}: binary content; PDFs must be converted to text before ingestion"
        )
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise UnsupportedFormat(f"{doc.doc_id}: not valid UTF-8 text ({exc})") from None


def extract_text(doc: SourceDocument) -> CleanText:
    """Turn a source document into normalized plain text.

    HTML is stripped of tags (script/style bodies dropped) with entities
    decoded.  ``pdf_text`` must already be extracted text; binary PDF bytes
    are rejected.
    """
    try:
        fmt = DocFormat(doc.format)
    except ValueError:
        raise UnsupportedFormat(f"{doc.doc_id}: unknown format {doc.format!r}") from None

    raw = _decode(doc)
    if fmt is DocFormat.HTML:
        stripper = _TagStripper()
        stripper.feed(raw)
        stripper.close()
        raw = "".join(stripper.parts)
    text = normalize_text(raw)
    if not text:
        raise EmptyDocument(f"{doc.doc_id}: no non-whitespace content")
    return CleanText(doc_id=doc.doc_id, text=text)


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------


def chunk_spans(length: int, cfg: ChunkingConfig) -> List[Tuple[int, int]]:
    """(start, end) character spans for a text of ``length`` characters."""
    spans = []
    start = 0
    while True:
        end = min(start + cfg.chunk_size, length)
        spans.append((start, end))
        if end >= length:
            return spans
        start += cfg.stride


def chunk_text(clean: CleanText, cfg: ChunkingConfig) -> List[Chunk]:
    if clean.char_count < 1:
        raise EmptyDocument(f"{clean.doc_id}: cannot chunk empty text")
    return [
        Chunk(
            chunk_id=f"{clean.doc_id}#{j}",
            doc_id=clean.doc_id,
            ordinal=j,
            start_offset=start,
            text=clean.text[start:end],
        )
        for j, (start, end) in enumerate(chunk_spans(clean.char_count, cfg), start=1)
    ]


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


@dataclass
class ChunkStore:
    config: ChunkingConfig
    chunks: List[Chunk] = field(default_factory=list)
    doc_ids: List[str] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self._by_id: Dict[str, Chunk] = {}
        for c in self.chunks:
            if c.chunk_id in self._by_id:
                raise DuplicateDocId(f"duplicate chunk id {c.chunk_id}")
            self._by_id[c.chunk_id] = c

    def __len__(self) -> int:
        return len(self.chunks)

    def __iter__(self):
        return iter(self.chunks)

    def __getitem__(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._by_id

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def chunk_counts(self) -> Dict[str, int]:
        """L_i for every document."""
        counts = {d: 0 for d in self.doc_ids}
        for c in self.chunks:
            counts[c.doc_id] = counts.get(c.doc_id, 0) + 1
        return counts

    def dumps(self) -> str:
        header = {
            "version": STORE_VERSION,
            "d_s": self.config.chunk_size,
            "d_o": self.config.overlap,
            "M": self.doc_count,
            "doc_ids": self.doc_ids,
        }
        lines = [json.dumps(header, ensure_ascii=False)]
        for c in self.chunks:
            lines.append(
                json.dumps(
                    {
                        "chunk_id": c.chunk_id,
                        "doc_id": c.doc_id,
                        "ordinal": c.ordinal,
                        "start_offset": c.start_offset,
                        "text": c.text,
                    },
                    ensure_ascii=False,
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def loads(cls, data: str) -> "ChunkStore":
        lines = [ln for ln in data.splitlines() if ln.strip()]
        if not lines:
            raise InvalidConfig("chunk store file is empty (missing header)")
        header = json.loads(lines[0])
        if header.get("version") != STORE_VERSION:
            raise InvalidConfig(f"unsupported chunk store version {header.get('version')!r}")
        cfg = ChunkingConfig(chunk_size=header["d_s"], overlap=header["d_o"])
        chunks = []
        for ln in lines[1:]:
            rec = json.loads(ln)
            chunks.append(
                Chunk(
                    chunk_id=rec["chunk_id"],
                    doc_id=rec["doc_id"],
                    ordinal=rec["ordinal"],
                    start_offset=rec["start_offset"],
                    text=rec["text"],
                )
            )
        doc_ids = header.get("doc_ids")
        if doc_ids is None:
            doc_ids = list(dict.fromkeys(c.doc_id for c in chunks))
        if len(doc_ids) != header["M"]:
            raise InvalidConfig(f"header M={header['M']} but {len(doc_ids)} documents listed")
        return cls(config=cfg, chunks=chunks, doc_ids=list(doc_ids))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ChunkStore":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def ingest_corpus(
    docs: Sequence[SourceDocument],
    cfg: ChunkingConfig,
    skip_errors: bool = False,
    out: Optional[Union[str, Path]] = None,
) -> ChunkStore:
    """Extract and chunk every document, in input order.

    With ``skip_errors`` extractor failures are recorded in ``store.skipped``
    instead of aborting the whole ingest.
    """
    seen = set()
    for d in docs:
        if d.doc_id in seen:
            raise DuplicateDocId(f"duplicate doc_id {d.doc_id!r}")
        seen.add(d.doc_id)

    chunks: List[Chunk] = []
    doc_ids: List[str] = []
    skipped: List[Tuple[str, str]] = []
    for d in docs:
        try:
            clean = extract_text(d)
        except (UnsupportedFormat, EmptyDocument) as exc:
            if not skip_errors:
                raise
            log.warning("skipping %s: %s", d.doc_id, exc)
            skipped.append((d.doc_id, str(exc)))
            continue
        chunks.extend(chunk_text(clean, cfg))
        doc_ids.append(d.doc_id)

    store = ChunkStore(config=cfg, chunks=chunks, doc_ids=doc_ids, skipped=skipped)
    if out is not None:
        store.save(out)
    return store


_EXT_FORMATS = {
    ".txt": DocFormat.PLAIN_TEXT,
    ".md": DocFormat.PLAIN_TEXT,
    ".html": DocFormat.HTML,
    ".htm": DocFormat.HTML,
    ".pdf": DocFormat.PDF_TEXT,
    ".pdftxt": DocFormat.PDF_TEXT,
}


def format_for_path(path: Path) -> Optional[DocFormat]:
    name = path.name.lower()
    if name.endswith(".pdf.txt"):
        return DocFormat.PDF_TEXT
    return _EXT_FORMATS.get(path.suffix.lower())


def read_source_dir(directory: Union[str, Path]) -> List[SourceDocument]:
    """Load every recognised file under ``directory`` in sorted path order.

    The doc_id is the path relative to ``directory`` with its extension
    removed.
    """
    directory = Path(directory)
    docs = []
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        fmt = format_for_path(path)
        if fmt is None:
            log.info("ignoring %s (unrecognised extension)", path)
            continue
        rel = path.relative_to(directory).as_posix()
        doc_id = rel[: -len(".pdf.txt")] if rel.lower().endswith(".pdf.txt") else rel.rsplit(".", 1)[0]
        docs.append(SourceDocument(doc_id=doc_id, origin=rel, format=fmt, raw_bytes=path.read_bytes()))
    return docs


def iter_doc_chunks(store: ChunkStore, doc_id: str) -> Iterable[Chunk]:
    return (c for c in store.chunks if c.doc_id == doc_id)
