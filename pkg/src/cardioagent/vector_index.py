"""
Dense retrieval: embedders, cosine similarity and an exact in-memory index.

Vectors are stored exactly as the embedder produced them (no normalization);
cosine similarity is computed at query time.  The on-disk index is a small
binary file::

    b"CVIX" | uint32 LE header length | JSON header | float32 LE records

where the JSON header holds ``version``, ``dim``, ``embedder_name``,
``count`` and the ``chunk_ids`` table giving the order of the records.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np

from .corpus import ChunkStore
from .errors import BackendFailure, DimMismatch, EmptyIndex, EmptyText, InvalidConfig, ZeroVector

INDEX_MAGIC = b"CVIX"
INDEX_VERSION = 1


@runtime_checkable
class Embedder(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic offline embedder.

    Each character n-gram of the lower-cased, space-padded text is hashed
    (BLAKE2b, seeded) to a bucket and a signed weight; the bucket sums are
    scaled to unit length.  Identical text gives identical vectors in every
    process, independent of ``PYTHONHASHSEED``.
    """

    def __init__(self, dim: int = 64, ngram: int = 3, seed: int = 0):
        if dim < 1 or ngram < 1:
            raise InvalidConfig("dim and ngram must be positive")
        self.dim = dim
        self.ngram = ngram
        self.seed = seed
        self.name = f"hash-{dim}" if (ngram, seed) == (3, 0) else f"hash-{dim}-n{ngram}-s{seed}"
        self._key = seed.to_bytes(8, "little", signed=True)

    def _bucket(self, gram: str):
        h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest()
        idx = int.from_bytes(h[:4], "little") % self.dim
        # weight in [-1, 1), never exactly zero
        w = (int.from_bytes(h[4:], "little") / 2**31) - 1.0
        return idx, w if w != 0.0 else 1.0

    def embed(self, text: str) -> np.ndarray:
        padded = " " + " ".join(text.lower().split()) + " "
        n = min(self.ngram, len(padded))
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - n + 1):
            idx, w = self._bucket(padded[i : i + n])
            vec[idx] += w
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # contributions cancelled exactly; fall back to a whole-text bucket
            idx, w = self._bucket("\x00" + padded)
            vec[idx] = 1.0 if w > 0 else -1.0
            norm = 1.0
        return vec / norm


def embed(text: str, e: Embedder) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    vec = np.asarray(e.embed(text), dtype=np.float64)
    if vec.shape != (e.dim,):
        raise DimMismatch(f"embedder {e.name} returned shape {vec.shape}, expected ({e.dim},)")
    if not np.all(np.isfinite(vec)):
        raise BackendFailure(f"embedder {e.name} returned non-finite values")
    return vec


def cosine_similarity(q: Sequence[float], v: Sequence[float]) -> float:
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape != v.shape:
        raise DimMismatch(f"dimension mismatch: {q.shape} vs {v.shape}")
    nq = float(np.linalg.norm(q))
    nv = float(np.linalg.norm(v))
    if nq == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(min(1.0, max(-1.0, float(np.dot(q, v)) / (nq * nv))))


@dataclass(frozen=True)
class ScoredCandidate:
    chunk_id: str
    cosine: float


class VectorIndex:
    """Exact cosine index over float32 vectors keyed by chunk id."""

    def __init__(self, dim: int, embedder_name: str, chunk_ids: Sequence[str] = (), vectors=None):
        self.dim = int(dim)
        self.embedder_name = embedder_name
        self.chunk_ids: List[str] = list(chunk_ids)
        if len(set(self.chunk_ids)) != len(self.chunk_ids):
            raise InvalidConfig("chunk ids in an index must be unique")
        if vectors is None:
            vectors = np.zeros((0, self.dim), dtype=np.float32)
        self.vectors = np.ascontiguousarray(vectors, dtype="<f4").reshape(-1, self.dim)
        if len(self.vectors) != len(self.chunk_ids):
            raise DimMismatch(f"{len(self.chunk_ids)} ids but {len(self.vectors)} vectors")
        self.vectors.setflags(write=False)
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        self._norms = norms

    @property
    def count(self) -> int:
        return len(self.chunk_ids)

    def __len__(self) -> int:
        return self.count

    def vector(self, chunk_id: str) -> np.ndarray:
        return self.vectors[self.chunk_ids.index(chunk_id)]

    def dumps(self) -> bytes:
        header = json.dumps(
            {
                "version": INDEX_VERSION,
                "dim": self.dim,
                "embedder_name": self.embedder_name,
                "count": self.count,
                "chunk_ids": self.chunk_ids,
            },
            ensure_ascii=False,
            separators=(",", ":"),
        ).encode("utf-8")
        return INDEX_MAGIC + struct.pack("<I", len(header)) + header + self.vectors.tobytes()

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.dumps())
        return path

    @classmethod
    def loads(cls, data: bytes) -> "VectorIndex":
        if data[:4] != INDEX_MAGIC:
            raise InvalidConfig("not a vector index file (bad magic)")
        (hlen,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        if header.get("version") != INDEX_VERSION:
            raise InvalidConfig(f"unsupported index version {header.get('version')!r}")
        body = data[8 + hlen :]
        dim, count = header["dim"], header["count"]
        if len(body) != 4 * dim * count:
            raise InvalidConfig(f"index body has {len(body)} bytes, expected {4 * dim * count}")
        vectors = np.frombuffer(body, dtype="<f4").reshape(count, dim)
        return cls(dim, header["embedder_name"], header["chunk_ids"], vectors)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "VectorIndex":
        return cls.loads(Path(path).read_bytes())


def search_topk(index: VectorIndex, q: Sequence[float], k: int) -> List[ScoredCandidate]:
    """Top-``k`` entries by cosine, ties broken by ascending chunk id."""
    if index.count == 0:
        raise EmptyIndex("index has no entries")
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimMismatch(f"query dim {q.shape} does not match index dim {index.dim}")
    nq = float(np.linalg.norm(q))
    if nq == 0.0:
        raise ZeroVector("query vector is zero")
    if np.any(index._norms == 0.0):
        bad = index.chunk_ids[int(np.argmax(index._norms == 0.0))]
        raise ZeroVector(f"index entry {bad} is a zero vector")
    # row-wise reduction (not BLAS) so identical rows give bit-identical scores
    cos = (index.vectors.astype(np.float64) * q).sum(axis=1) / (index._norms * nq)
    cos = np.clip(cos, -1.0, 1.0)
    ids = index.chunk_ids
    order = sorted(range(index.count), key=lambda i: (-cos[i], ids[i]))[:k]
    return [ScoredCandidate(index.chunk_ids[i], float(cos[i])) for i in order]


def build_index(
    store: ChunkStore, e: Embedder, out: Optional[Union[str, Path]] = None
) -> VectorIndex:
    if len(store) == 0:
        raise EmptyIndex("cannot build an index from an empty chunk store")
    vectors = np.empty((len(store), e.dim), dtype=np.float32)
    for i, chunk in enumerate(store):
        try:
            vectors[i] = embed(chunk.text, e)
        except BackendFailure as exc:
            raise BackendFailure(f"embedding chunk {chunk.chunk_id} failed: {exc}") from exc
        except EmptyText:
            raise EmptyText(f"chunk {chunk.chunk_id} has no text") from None
    index = VectorIndex(e.dim, e.name, [c.chunk_id for c in store], vectors)
    if out is not None:
        index.save(out)
    return index


def make_embedder(choice: str, **kwargs) -> Embedder:
    """Resolve an embedder by name (``hash``, ``hash-<dim>``) or URL."""
    if choice.startswith(("http://", "https://")):
        from .gateway import HttpEmbedder

        return HttpEmbedder(choice, **kwargs)
    if choice == "hash":
        return HashEmbedder()
    if choice.startswith("hash-"):
        try:
            return HashEmbedder(dim=int(choice.split("-")[1]))
        except ValueError:
            pass
    raise InvalidConfig(f"unknown embedder {choice!r} (expected 'hash', 'hash-<dim>' or a URL)")

