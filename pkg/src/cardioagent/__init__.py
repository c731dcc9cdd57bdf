"""Hybrid-retrieval planning and a hierarchical multi-agent loop for cardiac case review."""

from .case import CaseInput, load_case
from .config import AppConfig, build_engine, load_config
from .corpus import Chunk, ChunkingConfig, ChunkStore, SourceDocument, chunk_text, extract_text, ingest_corpus
from .discussion import DiscussionConfig, DiscussionTranscript, EvidenceBundle, check_agreement, run_discussion
from .gateway import ChatRequest, Gateway, Role, ScriptedMockBackend, load_backends, mock_gateway
from .keyword_filter import FilterConfig, MedicalVocabulary, filter_candidates, score_chunk
from .orchestrator import Decision, Engine, assess_complexity, execute_case, finalize_decision, select_tool
from .rag_planner import Plan, PlanStep, Retriever, generate_plan, retrieve, stepwise_update
from .report import render_panel
from .trace import ExecutionTrace
from .vector_index import HashEmbedder, VectorIndex, build_index, search_topk

__version__ = "0.1.0"

__all__ = [
    "AppConfig", "CaseInput", "ChatRequest", "Chunk", "ChunkStore", "ChunkingConfig", "Decision",
    "DiscussionConfig", "DiscussionTranscript", "Engine", "EvidenceBundle", "ExecutionTrace", "FilterConfig",
    "Gateway", "HashEmbedder", "MedicalVocabulary", "Plan", "PlanStep", "Retriever", "Role",
    "ScriptedMockBackend", "SourceDocument", "VectorIndex", "assess_complexity", "build_engine", "build_index",
    "check_agreement", "chunk_text", "execute_case", "extract_text", "filter_candidates", "finalize_decision",
    "generate_plan", "ingest_corpus", "load_backends", "load_case", "load_config", "mock_gateway", "render_panel",
    "retrieve", "run_discussion", "score_chunk", "search_topk", "select_tool", "stepwise_update",
]
