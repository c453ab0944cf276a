"""Command-line entry point.

Subcommands: ``kg load-check``, ``kge train``, ``kge score``, ``ask``, ``eval``.
Exit codes: 0 ok, 2 config/usage, 3 data, 4 backend.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_pipeline, load_config
from .controller import UnknownTheta0Error
from .evaluation import evaluate
from .gateway import Trace
from .kg import GraphStats, KGFormatError, Triple, dump_vocab, load_kg
from .kge import TrainConfig, filtered_mrr, load_checkpoint, save_checkpoint, score_triple_detail, train
from .pipeline import PipelineError, write_record

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4

log = logging.getLogger("kgrag")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(args, text: str, record: dict) -> None:
    if args.format == "records":
        print(json.dumps(record, ensure_ascii=False))
    else:
        print(text)


def _load_graph(triples, aliases):
    if triples is None:
        raise CliError("no triple file given (--triples or kg.triples in --config)", EXIT_USAGE)
    for p in (triples, aliases):
        if p is not None and not Path(p).is_file():
            raise CliError(f"file not found: {p}", EXIT_USAGE)
    try:
        return load_kg(triples, aliases)
    except (KGFormatError, KeyError) as exc:
        raise CliError(f"bad graph data: {exc}", EXIT_DATA) from exc


def _graph_paths(args):
    cfg = load_config(args.config) if args.config else None
    triples = args.triples or (cfg and cfg["kg"]["triples"])
    aliases = args.aliases or (cfg and cfg["kg"]["aliases"])
    return triples, aliases, cfg


# -- commands --------------------------------------------------------------------


def cmd_kg_load_check(args) -> int:
    triples, aliases, _ = _graph_paths(args)
    kg = _load_graph(triples, aliases)
    st = GraphStats.of(kg)
    if args.dump_vocab:
        dump_vocab(kg, args.dump_vocab)
    _emit(args, f"entities {st.entities}\nrelations {st.relations}\ntriples {st.triples}\naliases {st.aliases}",
          {"entities": st.entities, "relations": st.relations, "triples": st.triples, "aliases": st.aliases})
    return EXIT_OK


def _split(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = int(round(n * frac)) if n >= 2 else 0
    n_test = min(max(n_test, 1 if frac > 0 and n >= 2 else 0), n - 1) if n else 0
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def cmd_kge_train(args) -> int:
    triples, aliases, cfg = _graph_paths(args)
    kg = _load_graph(triples, aliases)
    if len(kg) == 0:
        raise CliError("graph has no triples", EXIT_DATA)
    base = dict(cfg["kge"].get("train", {})) if cfg else {}
    for name in ("dim", "learning_rate", "epochs", "negatives_per_positive", "l2_weight", "batch_size"):
        val = getattr(args, name)
        if val is not None:
            base[name] = val
    base["seed"] = args.seed if args.seed is not None else base.get("seed", cfg["seed"] if cfg else 0)
    try:
        tcfg = TrainConfig(**base)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training config: {exc}", EXIT_USAGE) from exc
    data = kg.as_array()
    train_idx, test_idx = _split(len(data), args.holdout, tcfg.seed)
    model = train(kg, tcfg, data[train_idx])
    save_checkpoint(model, args.out, kg)
    mrr = filtered_mrr(model, data[test_idx], data) if len(test_idx) else None
    rec = {"final_loss": model.loss_history[-1], "initial_loss": model.loss_history[0],
           "heldout": int(len(test_idx)), "filtered_mrr": mrr, "checkpoint": str(args.out)}
    text = f"final loss {rec['final_loss']:.6f}\nfiltered MRR " + (f"{mrr:.4f}" if mrr is not None else "n/a") + \
           f" ({len(test_idx)} held-out triples)\ncheckpoint {args.out}"
    _emit(args, text, rec)
    return EXIT_OK


def cmd_kge_score(args) -> int:
    triples, aliases, _ = _graph_paths(args)
    kg = _load_graph(triples, aliases)
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_USAGE)
    try:
        model = load_checkpoint(args.checkpoint, kg)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    h, r, t = kg.entity_id(args.head), kg.relation_id(args.relation), kg.entity_id(args.tail)
    if h is None:
        _emit(args, "unverifiable (unknown head entity)",
              {"head": args.head, "relation": args.relation, "tail": args.tail, "relative_score": "unverifiable"})
        return EXIT_OK
    if r is None:
        raise CliError(f"unknown relation: {args.relation}", EXIT_DATA)
    if t is None:
        raise CliError(f"unknown entity: {args.tail}", EXIT_DATA)
    st = score_triple_detail(model, kg, Triple(h, r, t))
    rel = "unverifiable" if st.relative_score is None else st.relative_score
    rec = {"head": args.head, "relation": args.relation, "tail": args.tail,
           "kge_score": st.kge_score, "reference_mean": st.reference_mean, "relative_score": rel}
    text = f"kge_score {st.kge_score!r}\nreference_mean {st.reference_mean!r}\nrelative_score " + \
           (rel if isinstance(rel, str) else repr(rel))
    _emit(args, text, rec)
    return EXIT_OK


def _pipeline_from_args(args, extra: dict):
    overrides = {
        "seed": args.seed,
        "controller.theta0": args.theta0,
        "controller.qa_model": args.qa_model,
        "controller.dataset": args.dataset_name,
        "controller.max_turns": args.max_turns,
        "gateway.fixture": str(Path(args.fixture).resolve()) if args.fixture else None,
        **extra,
    }
    cfg = load_config(args.config, overrides)
    trace = Trace(args.exchanges, timing=not args.deterministic) if args.exchanges else Trace(timing=not args.deterministic)
    if cfg["kg"]["triples"] and not Path(cfg["kg"]["triples"]).is_file():
        raise CliError(f"file not found: {cfg['kg']['triples']}", EXIT_USAGE)
    try:
        return build_pipeline(cfg, trace=trace)
    except UnknownTheta0Error as exc:
        raise CliError(f"{exc.args[0]} (use --theta0)", EXIT_USAGE) from exc
    except (KGFormatError,) as exc:
        raise CliError(f"bad graph data: {exc}", EXIT_DATA) from exc
    except FileNotFoundError as exc:
        raise CliError(f"file not found: {exc.filename}", EXIT_USAGE) from exc


def cmd_ask(args) -> int:
    pipe = _pipeline_from_args(args, {})
    try:
        record = pipe.run(args.question)
    except PipelineError as exc:
        if args.trace:
            write_record(exc.record, args.trace)
        raise CliError(str(exc), EXIT_BACKEND) from exc
    if args.trace:
        write_record(record, args.trace)
    _emit(args, f"{record.answer}\n[stop: {record.stop_reason} at t={record.final_turn}]",
          {"question": record.question, "answer": record.answer, "stop_reason": record.stop_reason,
           "final_turn": record.final_turn})
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.dataset).is_file():
        raise CliError(f"file not found: {args.dataset}", EXIT_USAGE)
    pipe = _pipeline_from_args(args, {})
    try:
        report = evaluate(args.dataset, pipe, limit=args.limit, workers=args.workers, records_dir=args.records_dir)
    except ValueError as exc:
        raise CliError(f"bad dataset: {exc}", EXIT_DATA) from exc
    if args.report:
        report.write(args.report)
    if args.format == "records":
        for r in report.to_records():
            print(json.dumps(r, ensure_ascii=False))
    else:
        print(report.table())
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("text", "records"), default="text")
    p.add_argument("--deterministic", action="store_true", help="suppress timing fields")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--triples", help="triple TSV (head, relation, tail)")
    p.add_argument("--aliases", help="alias TSV (alias, canonical label)")


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta0", type=float)
    p.add_argument("--qa-model", dest="qa_model")
    p.add_argument("--dataset-name", dest="dataset_name", help="dataset name for the theta0 table")
    p.add_argument("--max-turns", type=int, dest="max_turns")
    p.add_argument("--fixture", help="fixture file; binds every role to scripted responses")
    p.add_argument("--exchanges", help="append every LLM exchange to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgrag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("kg", help="knowledge graph utilities").add_subparsers(dest="kg_command", required=True)
    p = kg.add_parser("load-check", help="load and validate a graph")
    _common(p)
    _graph_args(p)
    p.add_argument("--dump-vocab", help="write entities.tsv/relations.tsv here")
    p.set_defaults(func=cmd_kg_load_check)

    kge = sub.add_parser("kge", help="embedding model").add_subparsers(dest="kge_command", required=True)
    p = kge.add_parser("train", help="train ComplEx embeddings")
    _common(p)
    _graph_args(p)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--negatives", dest="negatives_per_positive", type=int)
    p.add_argument("--l2", dest="l2_weight", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--holdout", type=float, default=0.1, help="fraction held out for filtered MRR")
    p.set_defaults(func=cmd_kge_train)

    p = kge.add_parser("score", help="KGE and relative score of one triple")
    _common(p)
    _graph_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("head")
    p.add_argument("relation")
    p.add_argument("tail")
    p.set_defaults(func=cmd_kge_score)

    p = sub.add_parser("ask", help="answer one question")
    _common(p)
    _run_args(p)
    p.add_argument("question")
    p.add_argument("--trace", help="write the run record here")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="evaluate on a dataset")
    _common(p)
    _run_args(p)
    p.add_argument("--dataset", required=True, help="JSONL with id, question, answers")
    p.add_argument("--limit", type=int)
    p.add_argument("--report", help="write the report records here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--records-dir", dest="records_dir", help="write one run record per item here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, UnknownTheta0Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
