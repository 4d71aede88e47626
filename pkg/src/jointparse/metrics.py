"""Evaluation and analysis: attachment scores, S-score, attribute correlation and F1,
positional and relation-conditioned breakdowns, PP-attachment robustness."""

from __future__ import annotations

import math
import random
import warnings
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .graph_core import Arborescence, AttributeValue, NodeKind, UDSGraph, UDTree
from .io import Direction, PPPair

SIGNIFICANCE = 0.05


# --------------------------------------------------------------------- UAS / LAS


def _check_aligned(pred: UDTree, gold: UDTree):
    if len(pred) != len(gold):
        raise ValueError(f"token count mismatch: predicted {len(pred)}, gold {len(gold)}")


def attachment_counts(pred: UDTree, gold: UDTree) -> Tuple[int, int, int]:
    """(tokens, correct heads, correct heads and labels)."""
    _check_aligned(pred, gold)
    heads = labels = 0
    for ph, pr, gh, gr in zip(pred.heads, pred.deprels, gold.heads, gold.deprels):
        if ph == gh:
            heads += 1
            labels += pr == gr
    return len(gold), heads, labels


def uas_las(pred: UDTree, gold: UDTree) -> Tuple[float, float]:
    n, h, l = attachment_counts(pred, gold)
    return h / n, l / n


def corpus_uas_las(preds: Sequence[UDTree], golds: Sequence[UDTree]) -> Tuple[float, float]:
    """Token-level (micro-averaged) UAS and LAS over aligned corpora."""
    if len(preds) != len(golds):
        raise ValueError(f"corpus misalignment: {len(preds)} predicted vs {len(golds)} gold trees")
    n = h = l = 0
    for p, g in zip(preds, golds):
        a, b, c = attachment_counts(p, g)
        n, h, l = n + a, h + b, l + c
    if n == 0:
        return 0.0, 0.0
    return h / n, l / n


# --------------------------------------------------------------------- S-score


@dataclass(frozen=True)
class Triples:
    """Node/edge rendering of a graph for matching.

    Triple inventory: one ``instance`` triple per node (its label), one
    ``top`` triple per node hanging from the virtual root, and one relation
    triple per distinct labelled edge. Attributes are not rendered.
    """

    labels: Tuple[str, ...]
    top: Tuple[bool, ...]
    edges: Tuple[Tuple[int, int, str], ...]

    @property
    def size(self) -> int:
        return len(self.labels) + sum(self.top) + len(self.edges)


def graph_triples(graph: UDSGraph) -> Triples:
    index = {n.id: i for i, n in enumerate(graph.nodes)}
    labels = tuple(n.label if n.label is not None else f"@{n.head_token}" for n in graph.nodes)
    roots = set(graph.roots)
    top = tuple(n.id in roots for n in graph.nodes)
    edges = tuple(sorted({(index[e.src], index[e.dst], e.label) for e in graph.edges}))
    return Triples(labels, top, edges)


def arborescence_triples(arb: Arborescence, include_syntax: bool = True) -> Triples:
    """Render with co-indexed copies merged into one node."""
    var: Dict[int, int] = {}
    labels: List[str] = []
    top: List[bool] = []
    keep = []
    for i, node in enumerate(arb.nodes):
        if i == 0:
            continue
        if node.kind is NodeKind.SYNTACTIC and not include_syntax:
            continue
        keep.append(i)
        if node.coindex not in var:
            var[node.coindex] = len(labels)
            labels.append(node.label)
            top.append(False)
    edges = set()
    for i in keep:
        v = var[arb.nodes[i].coindex]
        p = arb.parent[i]
        if p == 0:
            top[v] = True
        elif arb.nodes[p].coindex in var:
            edges.add((var[arb.nodes[p].coindex], v, arb.edge_labels[i] or ""))
    return Triples(tuple(labels), tuple(top), tuple(sorted(edges)))


def as_triples(g, include_syntax: bool = True) -> Triples:
    if isinstance(g, Triples):
        return g
    if isinstance(g, Arborescence):
        return arborescence_triples(g, include_syntax)
    if isinstance(g, UDSGraph):
        return graph_triples(g)
    raise TypeError(f"cannot render {type(g).__name__} as triples")


class _Matcher:
    def __init__(self, pred: Triples, gold: Triples):
        self.pred, self.gold = pred, gold
        self.n, self.m = len(pred.labels), len(gold.labels)
        self.gold_edges = set(gold.edges)
        self.incident: List[List[int]] = [[] for _ in range(self.n)]
        for k, (s, d, _) in enumerate(pred.edges):
            self.incident[s].append(k)
            if d != s:
                self.incident[d].append(k)
        # pairs that can contribute anything; other mappings score like None
        gold_out = defaultdict(set)
        gold_in = defaultdict(set)
        for s, d, l in gold.edges:
            gold_out[s].add(l)
            gold_in[d].add(l)
        pred_out = defaultdict(set)
        pred_in = defaultdict(set)
        for s, d, l in pred.edges:
            pred_out[s].add(l)
            pred_in[d].add(l)
        self.candidates: List[List[int]] = []
        for p in range(self.n):
            cands = []
            for g in range(self.m):
                if (
                    pred.labels[p] == gold.labels[g]
                    or (pred.top[p] and gold.top[g])
                    or pred_out[p] & gold_out[g]
                    or pred_in[p] & gold_in[g]
                ):
                    cands.append(g)
            self.candidates.append(cands)

    def node_score(self, p: int, g: Optional[int]) -> int:
        if g is None:
            return 0
        return int(self.pred.labels[p] == self.gold.labels[g]) + int(self.pred.top[p] and self.gold.top[g])

    def edge_score(self, k: int, f: List[Optional[int]]) -> int:
        s, d, l = self.pred.edges[k]
        fs, fd = f[s], f[d]
        if fs is None or fd is None:
            return 0
        return int((fs, fd, l) in self.gold_edges)

    def total(self, f) -> int:
        return sum(self.node_score(p, f[p]) for p in range(self.n)) + sum(
            self.edge_score(k, f) for k in range(len(self.pred.edges))
        )

    def local(self, nodes, f) -> int:
        edges = set()
        for p in nodes:
            edges.update(self.incident[p])
        return sum(self.node_score(p, f[p]) for p in nodes) + sum(self.edge_score(k, f) for k in edges)

    def climb(self, f: List[Optional[int]]) -> int:
        score = self.total(f)
        while True:
            used = {g for g in f if g is not None}
            best_delta, best_move = 0, None
            for p in range(self.n):
                before = self.local((p,), f)
                old = f[p]
                for g in self.candidates[p] + [None]:
                    if g == old or (g is not None and g in used):
                        continue
                    f[p] = g
                    delta = self.local((p,), f) - before
                    if delta > best_delta:
                        best_delta, best_move = delta, ("set", p, g)
                f[p] = old
            for p in range(self.n):
                for q in range(p + 1, self.n):
                    if f[p] == f[q]:
                        continue
                    before = self.local((p, q), f)
                    f[p], f[q] = f[q], f[p]
                    delta = self.local((p, q), f) - before
                    f[p], f[q] = f[q], f[p]
                    if delta > best_delta:
                        best_delta, best_move = delta, ("swap", p, q)
            if best_move is None:
                return score
            if best_move[0] == "set":
                f[best_move[1]] = best_move[2]
            else:
                _, p, q = best_move
                f[p], f[q] = f[q], f[p]
            score += best_delta

    def smart_init(self) -> List[Optional[int]]:
        f: List[Optional[int]] = [None] * self.n
        used = set()
        for p in range(self.n):
            for g in self.candidates[p]:
                if g not in used and self.pred.labels[p] == self.gold.labels[g]:
                    f[p] = g
                    used.add(g)
                    break
        return f

    def random_init(self, rng: random.Random) -> List[Optional[int]]:
        f: List[Optional[int]] = [None] * self.n
        gold = list(range(self.m))
        rng.shuffle(gold)
        for p in range(min(self.n, self.m)):
            f[p] = gold[p]
        return f


def match_count(pred, gold, include_syntax: bool = True, restarts: int = 10, seed: int = 0) -> int:
    """Hill-climbing estimate of the maximum number of matched triples."""
    pt, gt = as_triples(pred, include_syntax), as_triples(gold, include_syntax)
    if not pt.labels or not gt.labels:
        return 0
    matcher = _Matcher(pt, gt)
    rng = random.Random(seed)
    best = matcher.climb(matcher.smart_init())
    if restarts > 1:
        # renderings follow canonical node order, so the positional map is a cheap seed
        aligned = [p if p < matcher.m else None for p in range(matcher.n)]
        best = max(best, matcher.climb(aligned))
        restarts -= 1
    for _ in range(max(restarts, 1) - 1):
        best = max(best, matcher.climb(matcher.random_init(rng)))
    return best


def prf(matched: int, n_pred: int, n_gold: int) -> Tuple[float, float, float]:
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass(frozen=True)
class SScore:
    precision: float
    recall: float
    f1: float
    matched: int = 0
    predicted: int = 0
    gold: int = 0


def s_score(pred, gold, include_syntax: bool = True, restarts: int = 10, seed: int = 0) -> SScore:
    """Smatch-style precision / recall / F1 over node and edge triples."""
    pt, gt = as_triples(pred, include_syntax), as_triples(gold, include_syntax)
    m = match_count(pt, gt, restarts=restarts, seed=seed)
    return SScore(*prf(m, pt.size, gt.size), m, pt.size, gt.size)


def corpus_s_score(preds: Sequence, golds: Sequence, include_syntax: bool = True,
                   restarts: int = 10, seed: int = 0) -> SScore:
    """Micro-averaged S-score: matched, predicted and gold triple counts are summed."""
    if len(preds) != len(golds):
        raise ValueError("corpus misalignment")
    m = np_ = ng = 0
    for k, (p, g) in enumerate(zip(preds, golds)):
        s = s_score(p, g, include_syntax, restarts, seed + k)
        m, np_, ng = m + s.matched, np_ + s.predicted, ng + s.gold
    return SScore(*prf(m, np_, ng), m, np_, ng)


# --------------------------------------------------------------------- attributes


@dataclass(frozen=True)
class Correlation:
    rho: float
    p_value: float
    n: int

    @property
    def significant(self) -> bool:
        return self.n >= 3 and self.p_value < SIGNIFICANCE


def pearson_rho(pred: Sequence[float], gold: Sequence[float]) -> Optional[Correlation]:
    """Pearson correlation with a two-tailed t-test p-value.

    Returns None (not 0) when fewer than 3 pairs or either side is constant.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gold, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("prediction and gold lengths differ")
    n = x.size
    if n < 3:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return Correlation(r, p, n)


def binary_f1(pred: Sequence[float], gold: Sequence[float], theta: float) -> float:
    """F1 of the positive class: gold positive iff > 0, prediction positive iff > theta."""
    p = np.asarray(pred, dtype=np.float64) > theta
    g = np.asarray(gold, dtype=np.float64) > 0.0
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def threshold_grid(pred: Sequence[float]) -> List[float]:
    """-inf, the midpoints between consecutive distinct values, and +inf."""
    u = np.unique(np.asarray(pred, dtype=np.float64))
    mids = ((u[:-1] + u[1:]) / 2.0).tolist()
    return [-math.inf] + mids + [math.inf]


@dataclass(frozen=True)
class ThresholdResult:
    theta: float
    dev_f1: float
    test_f1: Optional[float]


def tune_threshold_f1(dev_pred, dev_gold, test_pred=None, test_gold=None) -> ThresholdResult:
    """Pick the prediction threshold maximizing dev F1 (first maximum in ascending order)."""
    if len(dev_pred) == 0:
        raise ValueError("threshold tuning needs a nonempty dev set")
    g = np.asarray(dev_gold, dtype=np.float64) > 0
    if g.all() or not g.any():
        warnings.warn("dev gold labels are single-class; F1 is degenerate", stacklevel=2)
    best_theta, best = -math.inf, -1.0
    for theta in threshold_grid(dev_pred):
        f = binary_f1(dev_pred, dev_gold, theta)
        if f > best:
            best_theta, best = theta, f
    test = None
    if test_pred is not None and len(test_pred):
        test = binary_f1(test_pred, test_gold, best_theta)
    return ThresholdResult(best_theta, best, test)


@dataclass(frozen=True)
class NodePrediction:
    """Attribute predictions for one gold node under oracle decoding."""

    sentence_length: int
    head_token: int
    relation: str
    predicted: Mapping[str, float]
    gold: Mapping[str, AttributeValue]

    @property
    def position_ratio(self) -> float:
        return (self.head_token - 1) / self.sentence_length


def attribute_pairs(nodes: Iterable[NodePrediction]) -> Dict[str, Tuple[List[float], List[float]]]:
    """Per attribute, predicted and gold values over nodes where the gold attribute applies."""
    out: Dict[str, Tuple[List[float], List[float]]] = {}
    for n in nodes:
        for name, av in n.gold.items():
            if not av.applies or name not in n.predicted:
                continue
            p, g = out.setdefault(name, ([], []))
            p.append(float(n.predicted[name]))
            g.append(float(av.value))
    return out


def attribute_rho(nodes: Iterable[NodePrediction]) -> Dict[str, Optional[Correlation]]:
    return {name: pearson_rho(p, g) for name, (p, g) in sorted(attribute_pairs(nodes).items())}


def mean_rho(correlations: Mapping[str, Optional[Correlation]]) -> Optional[float]:
    vals = [c.rho for c in correlations.values() if c is not None]
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class PercentileBin:
    index: int
    count: int
    mean_rho: Optional[float]


def percentile_rho(nodes: Sequence[NodePrediction], bins: int = 10) -> List[PercentileBin]:
    """Mean (over attributes) of per-attribute rho within sentence-position bins.

    Bin b holds nodes whose ``(head_token - 1) / sentence_length`` lies in
    ``[b/bins, (b+1)/bins)``.
    """
    grouped: Dict[int, List[NodePrediction]] = defaultdict(list)
    for n in nodes:
        b = min(int(math.floor(n.position_ratio * bins)), bins - 1)
        grouped[b].append(n)
    return [
        PercentileBin(b, len(grouped.get(b, [])), mean_rho(attribute_rho(grouped[b])) if b in grouped else None)
        for b in range(bins)
    ]


@dataclass(frozen=True)
class HeatmapCell:
    attribute: str
    relation: str
    n: int
    rho: Optional[float]
    p_value: Optional[float]
    significant: bool


def relation_attribute_rho(nodes: Sequence[NodePrediction]) -> List[HeatmapCell]:
    """Rho per (attribute, UD relation of the node's head token).

    Cells with fewer than 3 nodes, an undefined correlation or p >= 0.05 are
    marked not significant. Relations absent from ``nodes`` have no cells.
    """
    by_rel: Dict[str, List[NodePrediction]] = defaultdict(list)
    for n in nodes:
        by_rel[n.relation].append(n)
    cells = []
    for rel in sorted(by_rel):
        for attr, (p, g) in sorted(attribute_pairs(by_rel[rel]).items()):
            c = pearson_rho(p, g)
            cells.append(HeatmapCell(
                attr, rel, len(p),
                c.rho if c else None,
                c.p_value if c else None,
                bool(c and c.significant),
            ))
    return cells


# --------------------------------------------------------------------- relation deltas


@dataclass(frozen=True)
class RelationDelta:
    relation: str
    count: int
    uas_a: float
    uas_b: float

    @property
    def delta(self) -> float:
        return self.uas_a - self.uas_b


def per_relation_uas_delta(a_trees: Sequence[UDTree], b_trees: Sequence[UDTree],
                           gold_trees: Sequence[UDTree], top: int = 10) -> List[RelationDelta]:
    """UAS(A) - UAS(B) restricted to tokens of each of the ``top`` most frequent gold relations."""
    if not (len(a_trees) == len(b_trees) == len(gold_trees)):
        raise ValueError("corpus misalignment between systems and gold")
    freq: Counter = Counter()
    hit_a: Counter = Counter()
    hit_b: Counter = Counter()
    for a, b, g in zip(a_trees, b_trees, gold_trees):
        _check_aligned(a, g)
        _check_aligned(b, g)
        for i, rel in enumerate(g.deprels):
            freq[rel] += 1
            hit_a[rel] += a.heads[i] == g.heads[i]
            hit_b[rel] += b.heads[i] == g.heads[i]
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    return [RelationDelta(rel, c, hit_a[rel] / c, hit_b[rel] / c) for rel, c in ranked]


# --------------------------------------------------------------------- PP attachment


def pp_attachment_eval(pairs: Sequence[PPPair], predictions: Sequence[Tuple[UDTree, UDTree]]) -> dict:
    """UAS/LAS on original and altered sentences per alteration direction.

    ``predictions[k]`` holds the predicted trees for ``pairs[k].original`` and
    ``pairs[k].altered``. ``drop`` is original minus altered. Directions with
    no pairs are absent from the result.
    """
    if len(pairs) != len(predictions):
        raise ValueError("one prediction pair per PP pair is required")
    groups: Dict[Direction, List[int]] = defaultdict(list)
    for k, pair in enumerate(pairs):
        groups[pair.direction].append(k)
    out = {}
    for direction in Direction:
        ks = groups.get(direction)
        if not ks:
            continue
        ou, ol = corpus_uas_las([predictions[k][0] for k in ks], [pairs[k].original for k in ks])
        au, al = corpus_uas_las([predictions[k][1] for k in ks], [pairs[k].altered for k in ks])
        out[direction.value] = {
            "n": len(ks),
            "original": {"uas": ou, "las": ol},
            "altered": {"uas": au, "las": al},
            "drop": {"uas": ou - au, "las": ol - al},
        }
    return out


# --------------------------------------------------------------------- report


@dataclass
class MetricsReport:
    uas: Optional[float] = None
    las: Optional[float] = None
    s_score_syn: Optional[SScore] = None
    s_score_sem: Optional[SScore] = None
    attribute_rho: Dict[str, Optional[Correlation]] = field(default_factory=dict)
    attribute_f1: Dict[str, ThresholdResult] = field(default_factory=dict)
    tables: Dict[str, list] = field(default_factory=dict)

    @property
    def mean_rho(self) -> Optional[float]:
        return mean_rho(self.attribute_rho)

    @property
    def mean_attribute_f1(self) -> Optional[float]:
        vals = [r.test_f1 for r in self.attribute_f1.values() if r.test_f1 is not None]
        return float(np.mean(vals)) if vals else None

    def to_json(self) -> dict:
        def enc(x):
            if x is None:
                return None
            if isinstance(x, float) and math.isinf(x):
                return "inf" if x > 0 else "-inf"
            if hasattr(x, "__dataclass_fields__"):
                return {k: enc(v) for k, v in asdict(x).items()}
            if isinstance(x, dict):
                return {k: enc(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [enc(v) for v in x]
            return x

        return {
            "uas": self.uas,
            "las": self.las,
            "s_score_syn": enc(self.s_score_syn),
            "s_score_sem": enc(self.s_score_sem),
            "attribute_rho": enc(self.attribute_rho),
            "mean_rho": self.mean_rho,
            "attribute_f1": enc(self.attribute_f1),
            "mean_attribute_f1": self.mean_attribute_f1,
            "tables": enc(self.tables),
        }
