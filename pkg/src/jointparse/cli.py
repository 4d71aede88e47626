"""Command-line interface: ``jointparse <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import List, Optional, Sequence

from .graph_core import GraphError
from .io import (
    CorpusEntry,
    FormatError,
    atomic_write,
    build_vocab,
    format_conllu,
    read_corpus,
    read_pp_pairs,
    read_uds_jsonl,
    write_uds_jsonl,
)
from .metrics import (
    pp_attachment_eval,
    per_relation_uas_delta,
    percentile_rho,
    relation_attribute_rho,
)
from .model import (
    SEARCH_GRID,
    CheckpointError,
    ConfigurationError,
    JointParser,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    transfer_init,
)
from .synthetic import make_corpus
from .training import (
    Prediction,
    predict,
    prediction_from_entry,
    prediction_to_json,
    score,
    search,
    train,
)

log = logging.getLogger("jointparse")

STRUCTURED_ERRORS = (FormatError, GraphError, ConfigurationError, CheckpointError, ValueError, OSError)


# --------------------------------------------------------------------- helpers


def _write_json(obj, path: Optional[str]):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    with atomic_write(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_tsv(header: Sequence[str], rows: Sequence[Sequence], path: Optional[str]):
    def fmt(x):
        if x is None:
            return "NA"
        if isinstance(x, float):
            return repr(x)
        return str(x)

    text = "\t".join(header) + "\n" + "".join("\t".join(fmt(x) for x in r) + "\n" for r in rows)
    if path is None:
        sys.stdout.write(text)
        return
    with atomic_write(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _config(args) -> ModelConfig:
    obj = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            obj = json.load(fh)
    if getattr(args, "mode", None):
        obj["mode"] = args.mode
    if getattr(args, "semantics_only", None) is not None:
        obj["semantics_only"] = args.semantics_only
    if getattr(args, "epochs", None) is not None:
        obj["epochs"] = args.epochs
    if getattr(args, "restarts", None) is not None:
        obj["restarts"] = args.restarts
    return ModelConfig.from_json(obj)


def _components(text: Optional[str]) -> List[str]:
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _read_predictions(path: str) -> List[Prediction]:
    return [prediction_from_entry(e) for e in read_uds_jsonl(path)]


def write_predictions(preds: Sequence[Prediction], sources: Sequence[CorpusEntry], prefix: str) -> List[Path]:
    """Write ``<prefix>.jsonl`` and ``<prefix>.conllu`` (trees only when predicted)."""
    jsonl = Path(f"{prefix}.jsonl")
    with atomic_write(jsonl, "w", encoding="utf-8") as fh:
        for p, s in zip(preds, sources):
            fh.write(json.dumps(prediction_to_json(p, s), sort_keys=True) + "\n")
    out = [jsonl]
    trees = [p.tree for p in preds if p.tree is not None]
    if trees:
        conllu = Path(f"{prefix}.conllu")
        with atomic_write(conllu, "w", encoding="utf-8") as fh:
            fh.write(format_conllu(trees))
        out.append(conllu)
    return out


# --------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    config = _config(args)
    train_corpus = read_corpus(args.train)
    dev_corpus = read_corpus(args.dev) if args.dev else None
    paths = {"train": args.train}
    if args.dev:
        paths["dev"] = args.dev
    result = train(
        config, train_corpus, dev_corpus, seed=args.seed,
        init_from=args.init_from, components=_components(args.components) if args.init_from else (),
        eval_every=args.eval_every, data_paths=paths,
    )
    with atomic_write(args.checkpoint, "wb") as fh:
        fh.write(result.best_checkpoint)
    manifest_path = args.out or f"{args.checkpoint}.manifest.json"
    _write_json(result.manifest, manifest_path)
    log.info("best dev metric %.4f at epoch %d", result.manifest["best"]["metric"], result.manifest["best"]["epoch"])
    return 0


def cmd_search(args) -> int:
    base = _config(args)
    grid = SEARCH_GRID
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
    board = search(base, grid, read_corpus(args.train), read_corpus(args.dev) if args.dev else None,
                   args.replicants, seed=args.seed, epochs=args.budget)
    _write_json({"leaderboard": board, "best": board[0]["config"]}, args.out)
    return 0


def cmd_parse(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.test)
    preds = predict(model, corpus)
    for path in write_predictions(preds, list(corpus), args.out):
        log.info("wrote %s", path)
    return 0


def cmd_evaluate(args) -> int:
    gold = read_corpus(args.test)
    dev_preds = None
    if args.pred:
        preds = _read_predictions(args.pred)
        if args.dev_pred:
            dev_preds = _read_predictions(args.dev_pred)
    elif args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        preds = predict(model, gold)
        if args.dev:
            dev_preds = predict(model, read_corpus(args.dev))
    else:
        raise ConfigurationError("evaluate needs --pred or --checkpoint")
    report = score(preds, list(gold), args.restarts, args.seed, dev_preds)
    _write_json(report.to_json(), args.out)
    return 0


def cmd_analyze(args) -> int:
    kind = args.analysis
    if kind == "percentiles":
        nodes = [n for p in _read_predictions(args.pred) for n in p.nodes]
        bins = percentile_rho(nodes, args.bins)
        _write_tsv(["bin", "count", "mean_rho"], [(b.index, b.count, b.mean_rho) for b in bins], args.out)
    elif kind == "heatmap":
        nodes = [n for p in _read_predictions(args.pred) for n in p.nodes]
        cells = relation_attribute_rho(nodes)
        header = list(cells[0].__dataclass_fields__) if cells else ["relation", "attribute", "count", "rho"]
        _write_tsv(header, [[getattr(c, h) for h in header] for c in cells], args.out)
    elif kind == "relation-delta":
        a = [p.tree for p in _read_predictions(args.pred)]
        b = [p.tree for p in _read_predictions(args.pred_b)]
        gold = read_corpus(args.test).trees
        rows = per_relation_uas_delta(a, b, gold, top=args.top)
        _write_tsv(["relation", "count", "uas_a", "uas_b", "delta"],
                   [(r.relation, r.count, r.uas_a, r.uas_b, r.delta) for r in rows], args.out)
    elif kind == "pp-attach":
        pairs = read_pp_pairs(args.pairs)
        model = load_checkpoint(args.checkpoint)
        preds = [(model.generate(p.original).tree, model.generate(p.altered).tree) for p in pairs]
        if any(t is None for pair in preds for t in pair):
            raise ConfigurationError(f"mode {model.mode.value} does not predict UD trees")
        result = pp_attachment_eval(pairs, preds)
        rows = [
            (d, r["n"], r["original"]["uas"], r["original"]["las"], r["altered"]["uas"], r["altered"]["las"],
             r["drop"]["uas"], r["drop"]["las"])
            for d, r in result.items()
        ]
        _write_tsv(["direction", "n", "orig_uas", "orig_las", "alt_uas", "alt_las", "drop_uas", "drop_las"],
                   rows, args.out)
    return 0


def cmd_transfer(args) -> int:
    config = _config(args)
    corpus = read_corpus(args.train)
    model = JointParser(config, build_vocab(corpus, config.min_count), args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        names = transfer_init(model, args.checkpoint, _components(args.components) or ["encoder", "syntactic_biaffine"])
    for w in caught:
        if args.strict_vocab and "fingerprint" in str(w.message):
            raise CheckpointError(str(w.message))
        log.warning("%s", w.message)
    save_checkpoint(model, args.out)
    log.info("transferred %d parameters into %s", len(names), args.out)
    return 0


def cmd_synth(args) -> int:
    corpus = make_corpus(args.sentences, args.vocab_size, args.seed)
    write_uds_jsonl(corpus, args.out)
    return 0


# --------------------------------------------------------------------- parser


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with ModelConfig fields")
    p.add_argument("--mode", choices=["base", "bi", "cb", "ca", "en", "in"])
    p.add_argument("--semantics-only", dest="semantics_only", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jointparse", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write its best checkpoint")
    _model_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--out", help="manifest path (default: <checkpoint>.manifest.json)")
    p.add_argument("--init-from", dest="init_from", help="checkpoint to transfer components from")
    p.add_argument("--components", default="encoder,syntactic_biaffine")
    p.add_argument("--eval-every", dest="eval_every", type=int, default=1)
    p.add_argument("--restarts", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="random hyperparameter search")
    _model_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--grid", help="JSON mapping of config field to candidate values")
    p.add_argument("--replicants", type=int, default=40)
    p.add_argument("--budget", type=int, help="epochs per run")
    p.add_argument("--restarts", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("parse", help="write predictions as UDS JSON-lines and CoNLL-U")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("evaluate", help="score a model or prediction file against gold")
    p.add_argument("--test", required=True, help="gold corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--pred", help="prediction JSON-lines from `parse`")
    p.add_argument("--dev", help="dev gold corpus for threshold tuning (with --checkpoint)")
    p.add_argument("--dev-pred", dest="dev_pred", help="dev predictions for threshold tuning (with --pred)")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="analysis tables as TSV")
    p.add_argument("analysis", choices=["percentiles", "heatmap", "relation-delta", "pp-attach"])
    p.add_argument("--pred")
    p.add_argument("--pred-b", dest="pred_b")
    p.add_argument("--test")
    p.add_argument("--pairs")
    p.add_argument("--checkpoint")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("transfer", help="initialize a new model from another checkpoint's components")
    _model_flags(p)
    p.add_argument("--checkpoint", required=True, help="source checkpoint")
    p.add_argument("--train", required=True, help="corpus defining the new vocabulary")
    p.add_argument("--components", default="encoder,syntactic_biaffine")
    p.add_argument("--strict-vocab", dest="strict_vocab", action="store_true",
                   help="fail instead of remapping when vocabularies differ")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("synth", help="write a synthetic toy corpus")
    p.add_argument("--sentences", type=int, default=32)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def _check_analyze(args):
    need = {
        "percentiles": ("pred",),
        "heatmap": ("pred",),
        "relation-delta": ("pred", "pred_b", "test"),
        "pp-attach": ("pairs", "checkpoint"),
    }[args.analysis]
    missing = [f"--{n.replace('_', '-')}" for n in need if not getattr(args, n)]
    if missing:
        raise ConfigurationError(f"analyze {args.analysis} needs {', '.join(missing)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "analyze":
            _check_analyze(args)
        return args.func(args)
    except STRUCTURED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
