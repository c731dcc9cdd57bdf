from __future__ import annotations

import random
import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cardioagent.case import CaseInput  # noqa: E402
from cardioagent.corpus import ChunkingConfig, SourceDocument, DocFormat, ingest_corpus  # noqa: E402
from cardioagent.gateway import mock_gateway  # noqa: E402
from cardioagent.keyword_filter import FilterConfig, MedicalVocabulary  # noqa: E402
from cardioagent.rag_planner import Retriever  # noqa: E402
from cardioagent.tools.ecg import synthetic_ecg  # noqa: E402
from cardioagent.vector_index import HashEmbedder, build_index  # noqa: E402

DATA = Path(str(resources.files("cardioagent.data")))
DEMO_CASE = DATA / "demo" / "case_hf"

WORDS = (
    "heart failure ejection fraction bnp troponin ischemia infarction atrial fibrillation "
    "ventricle dilated murmur valve stenosis regurgitation pressure edema dyspnea echo ecg "
    "rhythm sinus tachycardia bradycardia block qrs interval wave lead left right chamber "
    "the a of and with in for is on patient study finding level high low normal acute chronic"
).split()


def random_text(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_words)) + "."


def make_store(n_docs: int = 10, words: int = 120, seed: int = 0, chunk_size: int = 200, overlap: int = 50):
    rng = random.Random(seed)
    docs = [
        SourceDocument(f"doc{i:03d}", f"doc{i:03d}.txt", DocFormat.PLAIN_TEXT, random_text(rng, words).encode())
        for i in range(n_docs)
    ]
    return ingest_corpus(docs, ChunkingConfig(chunk_size, overlap))


def make_retriever(store, n: int = 3, threshold: float = 0.05, min_results: int = 1, vocab=None):
    e = HashEmbedder()
    cfg = FilterConfig(threshold=threshold, min_results=min_results, chunk_size=store.config.chunk_size)
    return Retriever(store, build_index(store, e), e, vocab or MedicalVocabulary({}), cfg, n)


@pytest.fixture
def small_store():
    return make_store()


@pytest.fixture
def echo_case():
    return CaseInput("c1", "Is there heart failure?", labs_text="BNP: 900 pg/mL\nAge: 70", echo_refs=("clip_01",))


@pytest.fixture
def ecg_case():
    return CaseInput("c2", "Is the rhythm normal?", ecg=synthetic_ecg(duration_s=10, fs=250, bpm=75))


@pytest.fixture
def gw_factory():
    return mock_gateway


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    log = getattr(mod, "ACCEPTANCE_LOG", None)
    if log:
        terminalreporter.section("acceptance criteria")
        for line in log:
            terminalreporter.write_line(line)
