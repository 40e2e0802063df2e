"""Command-line entry point: ``structdrts <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .core import format_clauses, parse_clauses, read_trees, to_clause_format, write_trees
from .data import SyntheticSpec, corpus_stats, documents_from_text, gen_synthetic, load_corpus, load_embeddings, save_corpus
from .errors import DrtsError
from .metrics import evaluate_clauses, evaluate_trees
from .model import (
    MODES,
    ModelConfig,
    TrainSchedule,
    ablation_report,
    build_vocabularies,
    evaluate,
    grad_check_suite,
    load_config,
    load_model,
    resolve_lengths,
    set_determinism,
    train,
)

log = logging.getLogger("structdrts")

METRICS = ("bleu", "skeleton", "tuple", "clause")


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(docs=args.docs, max_depth=args.max_depth, relations=args.relations)
    docs = gen_synthetic(args.seed, spec)
    save_corpus(docs, args.out)
    stats = corpus_stats(docs)
    print(f"wrote {stats.documents} documents ({stats.sentences} sentences) to {args.out}")
    return 0


def _config(path) -> tuple[ModelConfig, TrainSchedule]:
    if path is None:
        return ModelConfig(), TrainSchedule()
    return load_config(path)


def cmd_train(args) -> int:
    config, schedule = _config(args.config)
    if args.epochs is not None:
        schedule = TrainSchedule(**{**asdict(schedule), "epochs": args.epochs})
    docs, stats = load_corpus(args.corpus)
    log.info("corpus: %d documents, %.1f sentences/doc, %.1f words/sentence", stats.documents, stats.avg_sentences, stats.avg_words)
    config = resolve_lengths(config, docs)
    vocabs = build_vocabularies(docs, config)
    pretrained = None
    if args.embeddings:
        pretrained = load_embeddings(args.embeddings, list(vocabs.words), config.pretrained_dim)
    modes = MODES if args.mode == "all" else (args.mode,)
    out = Path(args.out)
    results = {}
    for mode in modes:
        mode_dir = out / mode if len(modes) > 1 else out
        model, tlog = train(docs, config, schedule, mode, mode_dir, pretrained, vocabs)
        report = evaluate(model, docs, ("bleu", "skeleton", "tuple"))
        results[mode] = (tlog, report)
        log.info("%s: %d epochs, final loss %.5f", mode, len(tlog.records), tlog.losses[-1] if tlog.losses else float("nan"))
    table = ablation_report(results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(table, encoding="utf-8")
    summary = {
        mode: {"epochs": len(t.records), "losses": t.losses, "train_eval": r}
        for mode, (t, r) in results.items()
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    print(table, end="")
    return 0


def cmd_parse(args) -> int:
    model = load_model(args.model)
    set_determinism(0)
    docs = documents_from_text(args.input, args.deps)
    results = [model.parse(d, constrained=not args.unconstrained) for d in docs]
    trees = [r.tree for r in results]
    if args.format == "clause":
        Path(args.out).write_text("\n".join(format_clauses(to_clause_format(t)) for t in trees), encoding="utf-8")
    else:
        write_trees(trees, args.out)
    flagged = sum(not r.valid or not r.complete for r in results)
    print(f"parsed {len(trees)} documents ({flagged} repaired) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown:
        raise SystemExit(f"unknown metric(s): {', '.join(unknown)}")
    clause_kw = {"restarts": args.restarts, "seed": args.seed}
    if args.format == "clause":
        if set(metrics) - {"clause"}:
            raise SystemExit("clause files only support --metrics clause")
        preds = parse_clauses(Path(args.pred).read_text(encoding="utf-8"), args.pred)
        golds = parse_clauses(Path(args.gold).read_text(encoding="utf-8"), args.gold)
        report = evaluate_clauses(preds, golds, **clause_kw)
    else:
        report = evaluate_trees(read_trees(args.pred), read_trees(args.gold), metrics, args.per_document, **clause_kw)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_grad_check(args) -> int:
    if args.config:
        config, _ = load_config(args.config)
        if config.max_skeleton_len == 0 or config.max_dru_len == 0:
            from dataclasses import replace

            config = replace(config, max_skeleton_len=config.max_skeleton_len or 40, max_dru_len=config.max_dru_len or 40)
        errors = grad_check_suite(config, args.seed, args.eps)
    else:
        errors = grad_check_suite(seed=args.seed, eps=args.eps)
    ok = True
    for name, err in errors.items():
        passed = err <= args.tolerance
        ok &= passed
        print(f"{name:<14} max relative error {err:.3e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structdrts", description="Structure-aware DRTS parsing with graph attention.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--docs", type=int, default=32)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--relations", type=int, default=24, help="size of the relation lexicon")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train one mode, or all four and write a comparison")
    p.add_argument("--config", help="key = value file with model and schedule settings")
    p.add_argument("--corpus", required=True, help="directory with docs.conll and gold.trees")
    p.add_argument("--mode", choices=(*MODES, "all"), default="gat-enc-dec")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--embeddings", help="pretrained word vectors (word2vec text format)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse raw text with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="one sentence per line, blank line between documents")
    p.add_argument("--deps", help="CoNLL file with dependency trees (needed by GAT-encoder modes)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("tree", "clause"), default="tree")
    p.add_argument("--unconstrained", action="store_true", help="disable well-formedness masks")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--report")
    p.add_argument("--format", choices=("tree", "clause"), default="tree")
    p.add_argument("--per-document", action="store_true")
    p.add_argument("--restarts", type=int, default=10, help="hill-climbing restarts for clause matching")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient checks in float64")
    p.add_argument("--config")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DrtsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
