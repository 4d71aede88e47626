"""Training, prediction, scoring and hyperparameter search."""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import random
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autograd import Adam
from .graph_core import AttributeValue, LinearizedGraph, UDSGraph, UDTree, delinearize, linearize, uds_to_arborescence
from .io import (
    Corpus,
    CorpusEntry,
    Vocabulary,
    build_vocab,
    entry_to_json,
    linearized_from_json,
    linearized_to_json,
)
from .metrics import (
    MetricsReport,
    NodePrediction,
    attribute_pairs,
    attribute_rho,
    corpus_s_score,
    corpus_uas_las,
    tune_threshold_f1,
)
from .model import (
    ConfigurationError,
    JointParser,
    Mode,
    ModelConfig,
    checkpoint_bytes,
    load_checkpoint_bytes,
    transfer_init,
)
from .model.checkpoint import COMPONENT_ALIASES

log = logging.getLogger(__name__)


# --------------------------------------------------------------------- prediction


@dataclass
class Prediction:
    """Model output for one sentence, in a form that survives a JSON round trip."""

    sent_id: str
    tree: Optional[UDTree]
    graph: Optional[UDSGraph]
    linearized: Optional[LinearizedGraph]
    nodes: List[NodePrediction] = field(default_factory=list)
    edges: List[NodePrediction] = field(default_factory=list)
    semantics_only: bool = True
    warnings: List[str] = field(default_factory=list)

    def arborescence(self):
        return delinearize(self.linearized) if self.linearized is not None else None


def predict(model: JointParser, corpus: Sequence[CorpusEntry], oracle: bool = True) -> List[Prediction]:
    out = []
    for entry in corpus:
        parse = model.generate(entry.tree)
        nodes, edges = [], []
        if oracle and model.mode.uses_decoder and entry.graph is not None:
            o = model.oracle_attributes(entry.tree, entry.graph)
            nodes, edges = o.nodes, o.edges
        semantic = model.mode.uses_decoder
        out.append(Prediction(
            entry.sent_id,
            parse.tree,
            parse.graph if semantic else None,
            parse.linearized if semantic else None,
            nodes,
            edges,
            model.config.semantics_only,
            list(parse.warnings),
        ))
    return out


def _attrs_json(attrs: Mapping[str, AttributeValue]) -> dict:
    return {k: {"value": v.value, "applies": v.applies} for k, v in sorted(attrs.items())}


def _node_prediction_json(p: NodePrediction) -> dict:
    return {
        "sentence_length": p.sentence_length,
        "head_token": p.head_token,
        "relation": p.relation,
        "predicted": dict(sorted(p.predicted.items())),
        "gold": _attrs_json(p.gold),
    }


def _node_prediction_from_json(obj: dict) -> NodePrediction:
    gold = {k: AttributeValue(float(v["value"]), bool(v.get("applies", True))) for k, v in obj["gold"].items()}
    return NodePrediction(obj["sentence_length"], obj["head_token"], obj["relation"],
                          {k: float(v) for k, v in obj["predicted"].items()}, gold)


def _dump_graph(graph: UDSGraph) -> UDSGraph:
    """Drop unanchored nodes (and their edges), which the JSON-lines format cannot hold."""
    keep = {n.id for n in graph.nodes if n.head_token is not None}
    edges = tuple(e for e in graph.edges if e.src in keep and e.dst in keep)
    targets = {e.dst for e in edges}
    nodes = tuple(n for n in graph.nodes if n.id in keep)
    return UDSGraph(nodes, edges, tuple(n.id for n in nodes if n.id not in targets))


def prediction_to_json(pred: Prediction, source: CorpusEntry) -> dict:
    tree = pred.tree if pred.tree is not None else source.tree
    graph = _dump_graph(pred.graph) if pred.graph is not None else None
    obj = entry_to_json(CorpusEntry(pred.sent_id, tree, graph))
    obj["predicted_tree"] = pred.tree is not None
    obj["semantics_only"] = pred.semantics_only
    obj["warnings"] = list(pred.warnings)
    if pred.linearized is not None:
        obj["linearized"] = linearized_to_json(pred.linearized)
    obj["oracle"] = {
        "nodes": [_node_prediction_json(n) for n in pred.nodes],
        "edges": [_node_prediction_json(n) for n in pred.edges],
    }
    return obj


def _gold_oracle(entry: CorpusEntry) -> Tuple[List[NodePrediction], List[NodePrediction]]:
    """Attribute predictions equal to the annotation, for scoring a gold file as a system."""
    tree, graph = entry.tree, entry.graph
    n = len(tree)

    def item(head_token, relation, attrs):
        predicted = {k: v.value for k, v in attrs.items() if v.applies}
        return NodePrediction(n, head_token, relation, predicted, dict(attrs))

    heads = {x.id: x.head_token for x in graph.nodes}
    nodes = [item(x.head_token, tree.deprels[x.head_token - 1], x.attributes)
             for x in graph.nodes if x.attributes]
    edges = [item(heads[e.dst], e.label, e.attributes) for e in graph.edges if e.attributes]
    return nodes, edges


def prediction_from_entry(entry: CorpusEntry) -> Prediction:
    """Read a prediction line; a plain annotated line is read as a perfect system output."""
    extra = entry.extra
    semantics_only = bool(extra.get("semantics_only", "linearized" not in extra and entry.graph is None))
    if "linearized" in extra:
        lin = linearized_from_json(extra["linearized"])
    elif entry.graph is not None:
        lin = linearize(uds_to_arborescence(entry.graph, entry.tree, semantics_only=semantics_only))
    else:
        lin = None
    if "oracle" in extra:
        nodes = [_node_prediction_from_json(o) for o in extra["oracle"].get("nodes", [])]
        edges = [_node_prediction_from_json(o) for o in extra["oracle"].get("edges", [])]
    elif entry.graph is not None:
        nodes, edges = _gold_oracle(entry)
    else:
        nodes, edges = [], []
    return Prediction(
        entry.sent_id,
        entry.tree if extra.get("predicted_tree", True) else None,
        entry.graph,
        lin,
        nodes,
        edges,
        semantics_only,
        list(extra.get("warnings", [])),
    )


# --------------------------------------------------------------------- scoring


def _oracle_items(preds: Sequence[Prediction]) -> List[NodePrediction]:
    return [n for p in preds for n in p.nodes] + [e for p in preds for e in p.edges]


def score(
    preds: Sequence[Prediction],
    gold: Sequence[CorpusEntry],
    restarts: int = 10,
    seed: int = 0,
    dev_preds: Optional[Sequence[Prediction]] = None,
) -> MetricsReport:
    """Corpus metrics for aligned predictions.

    Attribute F1 thresholds are tuned on ``dev_preds`` when given.
    """
    if len(preds) != len(gold):
        raise ValueError(f"{len(preds)} predictions for {len(gold)} gold sentences")
    for p, g in zip(preds, gold):
        if p.sent_id != g.sent_id:
            raise ValueError(f"prediction {p.sent_id!r} is aligned with gold {g.sent_id!r}")
    report = MetricsReport()
    if preds and all(p.tree is not None for p in preds):
        report.uas, report.las = corpus_uas_las([p.tree for p in preds], [g.tree for g in gold])

    scored = [(p, g) for p, g in zip(preds, gold) if p.linearized is not None and g.graph is not None]
    if scored:
        pred_arbs = [p.arborescence() for p, _ in scored]
        gold_arbs = [uds_to_arborescence(g.graph, g.tree, semantics_only=False) for _, g in scored]
        report.s_score_sem = corpus_s_score(pred_arbs, gold_arbs, False, restarts, seed)
        if not all(p.semantics_only for p, _ in scored):
            report.s_score_syn = corpus_s_score(pred_arbs, gold_arbs, True, restarts, seed)

    items = _oracle_items(preds)
    if items:
        report.attribute_rho = attribute_rho(items)
    if dev_preds is not None and items:
        dev_pairs = attribute_pairs(_oracle_items(dev_preds))
        test_pairs = attribute_pairs(items)
        for name, (dp, dg) in sorted(dev_pairs.items()):
            tp, tg = test_pairs.get(name, ([], []))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                report.attribute_f1[name] = tune_threshold_f1(dp, dg, tp or None, tg or None)
    return report


def evaluate_model(model: JointParser, corpus: Sequence[CorpusEntry], restarts: int = 10, seed: int = 0,
                   dev: Optional[Sequence[CorpusEntry]] = None) -> Tuple[MetricsReport, List[Prediction]]:
    preds = predict(model, corpus)
    dev_preds = predict(model, dev) if dev is not None else None
    return score(preds, corpus, restarts, seed, dev_preds), preds


def dev_metric(model: JointParser, report: MetricsReport) -> float:
    """Early-stopping criterion: LAS for the UD-only mode, S-score F1 otherwise."""
    if model.mode is Mode.BI:
        return report.las if report.las is not None else 0.0
    s = report.s_score_sem if model.config.semantics_only else report.s_score_syn
    return s.f1 if s is not None else 0.0


# --------------------------------------------------------------------- training


def git_hash(path) -> str:
    """Content hash as git computes it for a blob."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def grad_norms(model: JointParser) -> Dict[str, float]:
    out = {}
    for group, params in model.parameter_groups().items():
        total = 0.0
        for _, p in params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        out[group] = math.sqrt(total)
    return out


@dataclass
class TrainResult:
    model: JointParser
    manifest: dict
    best_checkpoint: bytes


def _check_data(config: ModelConfig, train: Sequence[CorpusEntry], dev: Optional[Sequence[CorpusEntry]]):
    if not len(train):
        raise ConfigurationError("training corpus is empty")
    if config.mode in (Mode.BASE, Mode.CB, Mode.CA):
        for name, corpus in (("train", train), ("dev", dev or [])):
            if any(e.graph is None for e in corpus):
                raise ConfigurationError(f"mode {config.mode.value} needs UDS graphs in every {name} sentence")
    if config.mode in (Mode.EN, Mode.IN) and not any(e.graph is not None for e in train):
        raise ConfigurationError(f"mode {config.mode.value} needs at least one UDS graph")


def train(
    config: ModelConfig,
    train_corpus: Sequence[CorpusEntry],
    dev_corpus: Optional[Sequence[CorpusEntry]] = None,
    seed: int = 0,
    vocab: Optional[Vocabulary] = None,
    init_from=None,
    components: Sequence[str] = (),
    eval_every: int = 1,
    restarts: Optional[int] = None,
    stop_when: Optional[Callable[[JointParser, MetricsReport], bool]] = None,
    data_paths: Optional[Mapping[str, str]] = None,
) -> TrainResult:
    """Teacher-forced training with early stopping on the dev metric.

    Without a dev corpus the training corpus doubles as dev. The manifest
    logs, per epoch, mean loss components, the largest gradient norm seen in
    each parameter group, and dev metrics; ``wall_clock`` is its only
    non-deterministic field.
    """
    started = time.time()
    _check_data(config, train_corpus, dev_corpus)
    dev = list(dev_corpus) if dev_corpus is not None else list(train_corpus)
    vocab = vocab or build_vocab(Corpus(tuple(train_corpus)), config.min_count)
    model = JointParser(config, vocab, seed)
    if init_from is not None:
        transfer_init(model, init_from, components)
    opt = Adam(model.parameters(), lr=config.lr, warmup=config.warmup, d_model=config.d_s)
    order_rng = random.Random(seed)
    restarts = config.restarts if restarts is None else restarts

    entries = list(train_corpus)
    best_metric, best_epoch = -math.inf, 0
    best_bytes = checkpoint_bytes(model)
    stale = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = list(range(len(entries)))
        order_rng.shuffle(order)
        sums: Dict[str, float] = {}
        peak = {g: 0.0 for g in model.parameter_groups()}
        steps = 0
        for start in range(0, len(order), config.batch_size):
            batch = [entries[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            loss, parts = model.compute_loss(batch)
            loss.backward()
            for g, v in grad_norms(model).items():
                peak[g] = max(peak[g], v)
            opt.step()
            steps += 1
            sums["total"] = sums.get("total", 0.0) + float(loss.data)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
        model.eval()
        row = {
            "epoch": epoch,
            "steps": steps,
            "lr": opt.current_lr(),
            "loss": {k: v / steps for k, v in sorted(sums.items())},
            "grad_norm_max": peak,
        }
        if epoch % eval_every == 0 or epoch == config.epochs:
            report, _ = evaluate_model(model, dev, restarts, seed)
            metric = dev_metric(model, report)
            row["dev"] = {
                "metric": metric,
                "uas": report.uas,
                "las": report.las,
                "s_f1_sem": report.s_score_sem.f1 if report.s_score_sem else None,
                "s_f1_syn": report.s_score_syn.f1 if report.s_score_syn else None,
                "mean_rho": report.mean_rho,
            }
            if metric > best_metric:
                best_metric, best_epoch, stale = metric, epoch, 0
                best_bytes = checkpoint_bytes(model)
            else:
                stale += 1
            history.append(row)
            log.info("epoch %d loss %.4f dev %.4f", epoch, row["loss"]["total"], metric)
            if stop_when is not None and stop_when(model, report):
                best_bytes = checkpoint_bytes(model)
                best_metric, best_epoch = metric, epoch
                break
            if stale >= config.patience:
                break
        else:
            history.append(row)

    manifest = {
        "config": config.to_json(),
        "seed": seed,
        "data": {k: {"path": str(v), "sha1": git_hash(v)} for k, v in sorted((data_paths or {}).items())},
        "vocab_fingerprint": vocab.fingerprint(),
        "init_from": str(init_from) if isinstance(init_from, (str, Path)) else None,
        "components": [COMPONENT_ALIASES.get(c, c) for c in components],
        "history": history,
        "best": {"epoch": best_epoch, "metric": best_metric},
        "checkpoint_sha256": hashlib.sha256(best_bytes).hexdigest(),
        "wall_clock": {"started": started, "seconds": time.time() - started},
    }
    return TrainResult(load_checkpoint_bytes(best_bytes), manifest, best_bytes)


def comparable(manifest: dict) -> dict:
    """Manifest without run-time fields, for reproducibility checks."""
    return {k: v for k, v in manifest.items() if k != "wall_clock"}


# --------------------------------------------------------------------- search


def grid_points(grid: Mapping[str, Sequence]) -> List[dict]:
    keys = sorted(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("search grid must have at least one value per dimension")
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def sample_configs(grid: Mapping[str, Sequence], replicants: int, seed: int = 0) -> List[dict]:
    """Uniform samples without replacement; with replacement (and a warning) if the grid is too small."""
    if replicants < 1:
        raise ValueError("replicants must be positive")
    points = grid_points(grid)
    rng = random.Random(seed)
    if replicants <= len(points):
        return rng.sample(points, replicants)
    warnings.warn(
        f"{replicants} replicants exceed {len(points)} grid points; sampling with replacement",
        stacklevel=2,
    )
    return [rng.choice(points) for _ in range(replicants)]


def leaderboard(rows: Sequence[dict], key: str = "dev_metric") -> List[dict]:
    """Stable sort by ``key`` descending (ties keep run order)."""
    return sorted(rows, key=lambda r: -r[key])


def search(
    base: ModelConfig,
    grid: Mapping[str, Sequence],
    train_corpus: Sequence[CorpusEntry],
    dev_corpus: Optional[Sequence[CorpusEntry]],
    replicants: int,
    seed: int = 0,
    epochs: Optional[int] = None,
) -> List[dict]:
    rows = []
    for k, point in enumerate(sample_configs(grid, replicants, seed)):
        changes = dict(point)
        if epochs is not None:
            changes["epochs"] = epochs
        config = base.replace(**changes)
        result = train(config, train_corpus, dev_corpus, seed=seed + k)
        rows.append({
            "run": k,
            "point": point,
            "dev_metric": result.manifest["best"]["metric"],
            "best_epoch": result.manifest["best"]["epoch"],
            "config": config.to_json(),
        })
    return leaderboard(rows)
