"""
Configuration: the packaged defaults overlaid with a user JSON or TOML file
and optional in-memory overrides.  Relative paths inside each layer are
resolved against the directory of the file that defines them.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from .corpus import ChunkingConfig, ChunkStore, ingest_corpus, read_source_dir
from .discussion import DiscussionConfig
from .errors import CardioError, ConfigError
from .gateway import Gateway, load_backends
from .keyword_filter import FilterConfig, MedicalVocabulary, load_stopwords
from .prompts import PromptTemplates
from .rag_planner import Retriever
from .tools.remote import HttpRemoteTools, MockRemoteTools, RemoteTool
from .vector_index import Embedder, VectorIndex, build_index, make_embedder

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PATH_KEYS = ("corpus", "store", "index", "vocabulary", "stopwords", "templates")


def _package_data_dir() -> Path:
    return Path(str(resources.files("cardioagent.data")))


def _read_file(path: Path) -> Dict[str, Any]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid {path.suffix.lstrip('.') or 'JSON'}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a mapping at top level")
    return data


def _absolutize(data: Dict[str, Any], base: Path) -> Dict[str, Any]:
    data = copy.deepcopy(data)

    def fix(value):
        if isinstance(value, str) and value and not value.startswith(("http://", "https://")):
            p = Path(value)
            return str(p if p.is_absolute() else (base / p).resolve())
        return value

    paths = data.get("paths")
    if isinstance(paths, dict):
        for key in PATH_KEYS:
            if key in paths:
                paths[key] = fix(paths[key])
    for entry in (data.get("models") or {}).values():
        if isinstance(entry, dict) and "script" in entry:
            entry["script"] = fix(entry["script"])
    tools = data.get("tools")
    if isinstance(tools, dict) and "fixtures" in tools:
        tools["fixtures"] = fix(tools["fixtures"])
    return data


def deep_merge(base: Dict[str, Any], over: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k != "models":
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class AppConfig:
    data: Dict[str, Any]
    source: str = "defaults"

    # -- typed views ---------------------------------------------------------

    def section(self, name: str) -> Dict[str, Any]:
        value = self.data.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigError(f"config section '{name}' must be a mapping")
        return value

    @property
    def n(self) -> int:
        n = self.section("retrieval").get("n", 3)
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"retrieval.n must be a positive integer, got {n!r}")
        return n

    def chunking(self) -> ChunkingConfig:
        c = self.section("chunking")
        return _typed(ChunkingConfig, chunk_size=c.get("chunk_size", 1000), overlap=c.get("overlap", 200))

    def filter_config(self) -> FilterConfig:
        r = self.section("retrieval")
        return _typed(
            FilterConfig,
            threshold=float(r.get("threshold", 0.05)),
            position_fraction=float(r.get("position_fraction", 0.3)),
            position_bonus=float(r.get("position_bonus", 1.2)),
            min_results=int(r.get("min_results", 1)),
            chunk_size=self.chunking().chunk_size,
        )

    def discussion(self) -> DiscussionConfig:
        d = self.section("discussion")
        return _typed(DiscussionConfig, max_rounds=d.get("max_rounds", 2), parallel=bool(d.get("parallel", False)))

    @property
    def max_revisions(self) -> int:
        v = self.section("planner").get("max_revisions", 5)
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"planner.max_revisions must be a non-negative integer, got {v!r}")
        return v

    @property
    def ecg_band(self):
        band = self.section("ecg").get("band", [0.5, 40.0])
        if not (isinstance(band, (list, tuple)) and len(band) == 2 and 0 < band[0] < band[1]):
            raise ConfigError(f"ecg.band must be [low, high] with 0 < low < high, got {band!r}")
        return (float(band[0]), float(band[1]))

    def path(self, key: str) -> Optional[Path]:
        value = self.section("paths").get(key)
        return Path(value) if value else None

    # -- builders --------------------------------------------------------------

    def embedder(self) -> Embedder:
        choice = self.data.get("embedder", "hash")
        if isinstance(choice, dict):
            kind = choice.get("url") or choice.get("name", "hash")
            extra = {k: v for k, v in choice.items() if k in ("model", "dim")}
            return _typed(make_embedder, kind, **extra)
        return _typed(make_embedder, str(choice))

    def gateway(self) -> Gateway:
        return load_backends(self.section("models"))

    def remote_tools(self):
        t = self.section("tools")
        kind = t.get("backend")
        if kind in (None, "none"):
            return None
        if kind == "mock":
            if not t.get("fixtures"):
                raise ConfigError("tools: mock backend needs 'fixtures'")
            return MockRemoteTools.from_file(t["fixtures"])
        if kind == "http":
            if not t.get("url"):
                raise ConfigError("tools: http backend needs 'url'")
            return HttpRemoteTools(t["url"], tools=t.get("tools", [x.value for x in RemoteTool]))
        raise ConfigError(f"tools: unknown backend {kind!r} (expected 'mock', 'http' or 'none')")

    def templates(self) -> PromptTemplates:
        return PromptTemplates(self.path("templates"))

    def vocabulary(self) -> MedicalVocabulary:
        return _typed(MedicalVocabulary.load, self.path("vocabulary"))

    def stopwords(self) -> frozenset:
        return load_stopwords(self.path("stopwords"))

    def load_store_and_index(self, embedder: Optional[Embedder] = None):
        """Persisted store + index when configured, else an in-memory build from ``paths.corpus``."""
        embedder = embedder or self.embedder()
        store_p, index_p, corpus_p = self.path("store"), self.path("index"), self.path("corpus")
        if store_p is not None:
            store = ChunkStore.load(store_p)
            index = VectorIndex.load(index_p) if index_p is not None else build_index(store, embedder)
            return store, index
        if corpus_p is not None:
            store = ingest_corpus(read_source_dir(corpus_p), self.chunking())
            return store, build_index(store, embedder)
        raise ConfigError("config needs paths.store (and paths.index) or paths.corpus")

    def retriever(self) -> Retriever:
        e = self.embedder()
        store, index = self.load_store_and_index(e)
        return Retriever(store, index, e, self.vocabulary(), self.filter_config(), self.n, self.stopwords())

    def validate(self) -> List[str]:
        """Every problem found, without building the corpus or contacting backends."""
        problems = []
        checks = [
            self.chunking, self.filter_config, self.discussion, self.embedder,
            lambda: self.n, lambda: self.max_revisions, lambda: self.ecg_band, self.gateway,
            self.remote_tools, self.vocabulary, self.stopwords,
        ]
        for check in checks:
            try:
                check()
            except (CardioError, ValueError, TypeError, OSError) as exc:
                problems.append(str(exc))
        for key in PATH_KEYS:
            p = self.path(key)
            if p is not None and not p.exists():
                problems.append(f"paths.{key}: {p} does not exist")
        return list(dict.fromkeys(problems))

    def dumps(self) -> str:
        return json.dumps(self.data, indent=1, sort_keys=True) + "\n"


def _typed(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> AppConfig:
    base = _package_data_dir()
    data = _absolutize(_read_file(base / "default_config.json"), base)
    source = "defaults"
    if path is not None:
        path = Path(path)
        user = _read_file(path)
        data = deep_merge(data, _absolutize(user, path.parent.resolve()))
        source = str(path)
    if overrides:
        data = deep_merge(data, _absolutize(dict(overrides), Path.cwd()))
    return AppConfig(data, source)


def build_engine(cfg: AppConfig):
    from .orchestrator import Engine
    from .tools.registry import ToolRegistry

    return Engine(
        retriever=cfg.retriever(),
        gateway=cfg.gateway(),
        registry=ToolRegistry(),
        remote=cfg.remote_tools(),
        templates=cfg.templates(),
        discussion=cfg.discussion(),
        max_revisions=cfg.max_revisions,
        ecg_band=cfg.ecg_band,
    )
