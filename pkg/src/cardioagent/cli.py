"""Command-line entry point: ``cardioagent <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import List, Optional

from .case import load_case
from .config import AppConfig, build_engine, load_config
from .corpus import ChunkingConfig, ChunkStore, ingest_corpus, read_source_dir
from .discussion import EvidenceBundle, run_discussion
from .errors import CardioError, UsageError
from .keyword_filter import format_breakdown
from .orchestrator import CaseAborted, exit_code_for, execute_case
from .rag_planner import Retriever, generate_plan
from .report import render_panel
from .tools.registry import CaseContext, ToolRegistry, collect_evidence
from .trace import ExecutionTrace, activate
from .vector_index import VectorIndex, build_index, make_embedder

EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2, our parse-contract code
        raise UsageError(f"{self.prog}: {message}")


def _add_config(p: argparse.ArgumentParser, default=None) -> None:
    p.add_argument("--config", default=default, help="JSON or TOML config overlaying the packaged defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cardioagent", description="Hybrid-retrieval planning and multi-agent cardiac case review.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress to stderr")
    _add_config(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("ingest", help="chunk a directory of source documents into a chunk store")
    p.add_argument("--in", dest="src", required=True, help="directory of .txt/.md/.html/.pdf.txt files")
    p.add_argument("--chunk-size", type=int, default=None, help="d_s in characters (default from config)")
    p.add_argument("--overlap", type=int, default=None, help="d_o in characters (default from config)")
    p.add_argument("--out", required=True, help="chunk store file (JSON lines)")
    p.add_argument("--skip-errors", action="store_true", help="skip documents that fail extraction")

    p = sub.add_parser("index", help="embed every chunk of a store into a vector index")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embedder", default=None, help="'hash', 'hash-<dim>' or an embeddings URL")

    p = sub.add_parser("query", help="hybrid retrieval with per-keyword score breakdowns")
    p.add_argument("--store")
    p.add_argument("--index")
    p.add_argument("--n", type=int, default=None, help="number of chunks to return")
    p.add_argument("--theta", "--threshold", dest="threshold", type=float, default=None, help="keyword score threshold")
    p.add_argument("--vocab", help="medical vocabulary JSON {term: weight}")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("question")

    p = sub.add_parser("plan", help="retrieve context and print the general plan")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--case", help="case directory (its question.txt is used)")
    g.add_argument("--question")

    p = sub.add_parser("run", help="execute a case end to end and write the trace")
    p.add_argument("--case", required=True)
    p.add_argument("--out", required=True, help="trace JSON path")
    p.add_argument("--panel", help="also render the review panel into this directory")
    p.add_argument("--normalize", action="store_true", help="drop timestamps and latencies from the trace")

    p = sub.add_parser("discuss", help="run only the multidisciplinary discussion on a case")
    p.add_argument("--case", required=True)
    p.add_argument("--max-rounds", type=int, default=None)
    p.add_argument("--out", help="transcript JSON path (default: stdout)")

    p = sub.add_parser("report", help="render the review panel from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)

    sub.add_parser("validate-config", help="check the effective configuration and print it")

    p = sub.add_parser("demo", help="run the bundled heart-failure case and render its panel")
    p.add_argument("--out", required=True, help="output directory")

    for sp in sub.choices.values():
        _add_config(sp, default=argparse.SUPPRESS)
    return parser


def _config(args, overrides=None) -> AppConfig:
    return load_config(args.config, overrides)


def _retriever(args, cfg: AppConfig) -> Retriever:
    if args.store:
        e = cfg.embedder()
        store = ChunkStore.load(args.store)
        index = VectorIndex.load(args.index) if args.index else build_index(store, e)
        e = make_embedder(index.embedder_name) if index.embedder_name != e.name else e
        return Retriever(store, index, e, cfg.vocabulary(), cfg.filter_config(), cfg.n, cfg.stopwords())
    return cfg.retriever()


def cmd_ingest(args, out) -> int:
    cfg = _config(args)
    base = cfg.chunking()
    chunking = ChunkingConfig(
        args.chunk_size if args.chunk_size is not None else base.chunk_size,
        args.overlap if args.overlap is not None else base.overlap,
    )
    store = ingest_corpus(read_source_dir(args.src), chunking, skip_errors=args.skip_errors, out=args.out)
    print(f"{store.doc_count} documents, {len(store)} chunks -> {args.out}", file=out)
    for doc_id, reason in store.skipped:
        print(f"skipped {doc_id}: {reason}", file=sys.stderr)
    return 0


def cmd_index(args, out) -> int:
    cfg = _config(args)
    e = make_embedder(args.embedder) if args.embedder else cfg.embedder()
    index = build_index(ChunkStore.load(args.store), e, out=args.out)
    print(f"{index.count} vectors of dim {index.dim} ({index.embedder_name}) -> {args.out}", file=out)
    return 0


def cmd_query(args, out) -> int:
    over = {"retrieval": {}}
    if args.n is not None:
        over["retrieval"]["n"] = args.n
    if args.threshold is not None:
        over["retrieval"]["threshold"] = args.threshold
    if args.vocab:
        over["paths"] = {"vocabulary": args.vocab}
    cfg = _config(args, over)
    ctx = _retriever(args, cfg).retrieve(args.question)
    if args.json:
        rows = [
            {
                "rank": i,
                "chunk_id": r.chunk_id,
                "score": r.score.score,
                "cosine": r.cosine,
                "backfilled": r.backfilled,
                "terms": [[t.keyword, t.tf, t.mw, t.pb] for t in r.score.breakdown],
            }
            for i, r in enumerate(ctx.chunks, start=1)
        ]
        print(json.dumps({"question": args.question, "keywords": list(ctx.keywords), "results": rows}, indent=1), file=out)
        return 0
    print(f"keywords: {', '.join(ctx.keywords)}", file=out)
    for i, r in enumerate(ctx.chunks, start=1):
        print(f"{i}. {format_breakdown(r)}", file=out)
        print("   " + r.chunk.text[:160].replace("\n", " ") + ("..." if len(r.chunk.text) > 160 else ""), file=out)
    return 0


def cmd_plan(args, out) -> int:
    cfg = _config(args)
    question = load_case(args.case).question if args.case else args.question
    ctx = cfg.retriever().retrieve(question)
    plan = generate_plan(ctx, cfg.gateway(), cfg.templates())
    print(plan.render(), file=out)
    return 0


def cmd_run(args, out) -> int:
    cfg = _config(args)
    engine = build_engine(cfg)
    case = load_case(args.case)
    try:
        result = execute_case(case, engine)
    except CaseAborted as exc:
        exc.trace.save(args.out, normalize=args.normalize)
        raise
    result.trace.save(args.out, normalize=args.normalize)
    d = result.decision
    prob = f" (p={d.probability:.2f})" if d.probability is not None else ""
    print(f"{case.case_id}: {d.answer}{prob}", file=out)
    print(f"trace -> {args.out}", file=out)
    if args.panel:
        render_panel(result.trace, args.panel)
        print(f"panel -> {Path(args.panel) / 'index.html'}", file=out)
    return 0


def cmd_discuss(args, out) -> int:
    over = {"discussion": {"max_rounds": args.max_rounds}} if args.max_rounds is not None else None
    cfg = _config(args, over)
    case = load_case(args.case)
    ctx = CaseContext(case, remote=cfg.remote_tools(), band=cfg.ecg_band)
    bundle = EvidenceBundle(
        question=case.question,
        inputs=case.render_inputs(),
        intermediate=collect_evidence(ctx, ToolRegistry()),
        media=tuple(case.echo_refs),
    )
    trace = ExecutionTrace(case.case_id)
    with activate(trace):
        transcript = run_discussion(bundle, cfg.discussion(), cfg.gateway(), templates=cfg.templates())
    if args.out:
        Path(args.out).write_text(transcript.dumps(), encoding="utf-8")
        print(f"{len(transcript.turns)} step(s), {transcript.stop_reason.value} -> {args.out}", file=out)
    else:
        out.write(transcript.dumps())
    return 3 if transcript.stop_reason.value == "error" else 0


def cmd_report(args, out) -> int:
    panel = render_panel(args.trace, args.out)
    print(f"panel -> {panel.index} ({len(panel.assets)} assets)", file=out)
    for name in panel.absent:
        print(f"note: {name} section absent", file=out)
    return 0


def cmd_validate(args, out) -> int:
    cfg = _config(args)
    problems = cfg.validate()
    out.write(cfg.dumps())
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    print(f"config OK ({cfg.source}); n={cfg.n}, T={cfg.discussion().T}", file=sys.stderr)
    return 0


def cmd_demo(args, out) -> int:
    from importlib import resources

    cfg = _config(args)
    dest = Path(args.out)
    case_dir = Path(str(resources.files("cardioagent.data").joinpath("demo").joinpath("case_hf")))
    shutil.rmtree(dest / "panel", ignore_errors=True)
    result = execute_case(load_case(case_dir), build_engine(cfg), out=dest / "trace.json")
    render_panel(result.trace, dest / "panel")
    print(f"{result.decision.answer} (p={result.decision.probability}) -> {dest}", file=out)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "query": cmd_query,
    "plan": cmd_plan,
    "run": cmd_run,
    "discuss": cmd_discuss,
    "report": cmd_report,
    "validate-config": cmd_validate,
    "demo": cmd_demo,
}


def main(argv: Optional[List[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("no subcommand given (try --help)")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except CardioError as exc:
        cause = exc.cause if isinstance(exc, CaseAborted) else exc
        print(f"error: {type(cause).__name__}: {cause}", file=sys.stderr)
        return exit_code_for(exc)


cli_dispatch = main


if __name__ == "__main__":
    sys.exit(main())
