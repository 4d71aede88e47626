"""Joint transductive parser for UD trees and UDS graphs.

A Transformer encoder reads the sentence. Depending on the mode a biaffine
head/label scorer parses it into a UD tree, and an autoregressive decoder
emits the pre-order linearization of the UDS arborescence, one node per step.
Each decoder step chooses a node label from a three-way mixture (generate a
vocabulary symbol, copy a source token, copy an earlier node), a head among
earlier nodes, an edge label, and node/edge attributes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autograd import (
    Tensor,
    binary_cross_entropy,
    concat,
    cross_entropy,
    dropout,
    embedding,
    init_scaled,
    log_softmax,
    logsumexp,
    matmul,
    mse,
    no_grad,
    relu,
    softmax,
    zeros,
)
from ..autograd.init import normal
from ..decoding import Parse, chu_liu_edmonds
from ..graph_core import (
    ATTR_MAX,
    ATTR_MIN,
    Arborescence,
    ArbNode,
    AttributeValue,
    LinearizedGraph,
    NodeKind,
    ROOT_LABEL,
    UDSGraph,
    UDTree,
    arborescence_to_tree,
    delinearize,
    linearize,
    recover_dag,
    tree_to_arborescence,
    uds_to_arborescence,
)
from ..io import BOS, EOS, PAD, SEP, SPECIALS, SYNTAX_EDGE_PREFIX, CorpusEntry, Vocabulary
from ..metrics import NodePrediction
from .config import ConfigurationError, Mode, ModelConfig
from .layers import (
    MLP,
    DecoderLayer,
    EncoderLayer,
    LayerCache,
    Linear,
    Module,
    ScaleNorm,
    causal_mask,
    sinusoid,
)

NEG_INF = -np.inf
SWITCH_GEN, SWITCH_SRC, SWITCH_TGT = 0, 1, 2


class DecodeLengthError(ValueError):
    pass


# --------------------------------------------------------------------- scorers


class Bilinear(Module):
    """``x U_r y + W1 x + W2 y + b`` for each output channel r."""

    def __init__(self, d1: int, d2: int, d_out: int, rng):
        self.u = init_scaled((d_out, d1, d2), 1.0, rng)
        self.w1 = init_scaled((d1, d_out), 1.0, rng)
        self.w2 = init_scaled((d2, d_out), 1.0, rng)
        self.b = zeros((d_out,))

    def pairs(self, x, y) -> Tensor:
        """Row-aligned scores, ``(n, d_out)``."""
        xu = matmul(x, self.u)  # (d_out, n, d2)
        bil = (xu * y).sum(axis=-1).transpose(1, 0)
        return bil + matmul(x, self.w1) + matmul(y, self.w2) + self.b

    def grid(self, x, y) -> Tensor:
        """All-pairs scores, ``(n, m, d_out)``."""
        n, m = x.shape[0], y.shape[0]
        bil = matmul(matmul(x, self.u), y.T).transpose(1, 2, 0)
        lin_x = matmul(x, self.w1).reshape(n, 1, -1)
        lin_y = matmul(y, self.w2).reshape(1, m, -1)
        return bil + lin_x + lin_y + self.b


class BiaffineArc(Module):
    """``dep U headᵀ + head u``: one score per (dependent, head) pair."""

    def __init__(self, d: int, rng):
        self.u = init_scaled((d, d), 1.0, rng)
        self.bias = init_scaled((d, 1), 1.0, rng)

    def __call__(self, dep, head) -> Tensor:
        return matmul(matmul(dep, self.u), head.T) + matmul(head, self.bias).T


# --------------------------------------------------------------------- encoder


class Embeddings(Module):
    def __init__(self, n_tokens: int, n_upos: int, d: int, rng):
        self.tokens = normal((n_tokens, d), 1.0, rng)
        self.upos = normal((n_upos, d), 1.0, rng)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, rng):
        d = cfg.d_s
        self.embed = Embeddings(len(vocab.tokens), len(vocab.upos), d, rng)
        self.layers = [
            EncoderLayer(d, cfg.heads, cfg.d_ff, rng, cfg.init_scale, cfg.dropout)
            for _ in range(cfg.layers)
        ]
        self.norm = ScaleNorm(d)
        for layer in self.layers[: cfg.frozen_encoder_layers]:
            layer.freeze()
        self._rate = cfg.dropout

    def __call__(self, token_ids, upos_ids, rng=None) -> Tensor:
        T = len(token_ids)
        x = embedding(self.embed.tokens, token_ids) + embedding(self.embed.upos, upos_ids)
        x = x + sinusoid(T, x.shape[1])
        x = dropout(x, self._rate, rng, self.training)
        for layer in self.layers:
            x = layer(x, rng)
        return self.norm(x)


@dataclass
class SyntacticParse:
    """Biaffine outputs over ``T`` tokens; column / row 0 of the head side is ROOT."""

    arc_scores: Tensor           # T x (T+1)
    arc_mask: np.ndarray         # additive, -inf on self-attachment
    arc_head: Tensor             # (T+1) x d_h
    rel_dep: Tensor              # T x d_t
    rel_head: Tensor             # (T+1) x d_t
    scorer: "SyntacticBiaffine"

    def label_scores(self) -> Tensor:
        """``T x (T+1) x |relations|``."""
        return self.scorer.rel.grid(self.rel_dep, self.rel_head)

    def head_distribution(self) -> Tensor:
        return softmax(self.arc_scores, self.arc_mask)


def self_attachment_mask(T: int) -> np.ndarray:
    mask = np.zeros((T, T + 1))
    mask[np.arange(T), np.arange(1, T + 1)] = NEG_INF
    return mask


class SyntacticBiaffine(Module):
    def __init__(self, cfg: ModelConfig, n_rels: int, rng):
        self.root = normal((1, cfg.d_s), 1.0, rng)
        self.arc_dep = MLP(cfg.d_s, cfg.d_h, rng, rate=cfg.dropout)
        self.arc_head = MLP(cfg.d_s, cfg.d_h, rng, rate=cfg.dropout)
        self.arc = BiaffineArc(cfg.d_h, rng)
        self.rel_dep = MLP(cfg.d_s, cfg.d_t, rng, rate=cfg.dropout)
        self.rel_head = MLP(cfg.d_s, cfg.d_t, rng, rate=cfg.dropout)
        self.rel = Bilinear(cfg.d_t, cfg.d_t, n_rels, rng)

    def __call__(self, s: Tensor, rng=None) -> SyntacticParse:
        T = s.shape[0]
        s_root = concat([self.root, s], axis=0)
        arc_dep = self.arc_dep(s, rng)
        arc_head = self.arc_head(s_root, rng)
        return SyntacticParse(
            arc_scores=self.arc(arc_dep, arc_head),
            arc_mask=self_attachment_mask(T),
            arc_head=arc_head,
            rel_dep=self.rel_dep(s, rng),
            rel_head=self.rel_head(s_root, rng),
            scorer=self,
        )


class Fusion(Module):
    """Re-encode a soft parse: ``s' = [s; P H; P Tᵀ] W``."""

    def __init__(self, cfg: ModelConfig, rng):
        self.w = init_scaled((cfg.d_s + cfg.d_h + cfg.d_t, cfg.d_s), 1.0, rng)

    def __call__(self, s: Tensor, parse: SyntacticParse) -> Tensor:
        p = parse.head_distribution()
        soft_head = matmul(p, parse.arc_head)
        soft_type = matmul(p, parse.rel_head)
        return matmul(concat([s, soft_head, soft_type], axis=1), self.w)


# --------------------------------------------------------------------- targets


@dataclass
class Target:
    """Decoder supervision for one sentence; position j (1..N) is node j."""

    labels: List[str]
    label_ids: np.ndarray
    source_indices: List[Optional[int]]
    keys: List[Optional[Tuple[int, int]]]      # (segment, coindex); None for SEP
    occurrence: np.ndarray                     # first-occurrence rank, 0 for SEP
    kinds: List[Optional[NodeKind]]
    heads: np.ndarray                          # absolute positions, 0 = ROOT
    edge_labels: List[str]
    edge_label_ids: np.ndarray
    segment: np.ndarray                        # -1 for SEP
    node_attr_values: np.ndarray
    node_attr_mask: np.ndarray
    edge_attr_values: np.ndarray
    edge_attr_mask: np.ndarray
    copy_of: List[List[int]]                   # earlier positions with the same key

    def __len__(self):
        return len(self.labels)

    @property
    def is_sep(self) -> np.ndarray:
        return self.segment < 0

    @property
    def semantic_positions(self) -> np.ndarray:
        return np.array([j + 1 for j, k in enumerate(self.kinds) if k is NodeKind.SEMANTIC], dtype=np.int64)

    @property
    def semantic_edge_positions(self) -> np.ndarray:
        out = []
        for j, k in enumerate(self.kinds):
            h = int(self.heads[j])
            if k is NodeKind.SEMANTIC and h > 0 and self.kinds[h - 1] is NodeKind.SEMANTIC:
                out.append(j + 1)
        return np.array(out, dtype=np.int64)


def _segment_rows(lin: LinearizedGraph, segment: int, offset: int, syntactic_segment: bool):
    rows = []
    for k in range(len(lin)):
        h = lin.head_positions[k]
        kind = lin.kinds[k]
        label = lin.edge_labels[k]
        if kind is NodeKind.SYNTACTIC and not syntactic_segment:
            label = SYNTAX_EDGE_PREFIX + label
        rows.append(dict(
            label=lin.node_tokens[k],
            source=lin.source_indices[k],
            key=(segment, lin.coindices[k]),
            kind=kind,
            head=0 if h == 0 else h + offset,
            edge=label,
            segment=segment,
            nv=lin.node_attr_values[k], nm=lin.node_attr_mask[k],
            ev=lin.edge_attr_values[k], em=lin.edge_attr_mask[k],
        ))
    return rows


def build_target(
    tree: UDTree, graph: UDSGraph, vocab: Vocabulary, mode: Mode, semantics_only: bool
) -> Target:
    """Linearize the gold structure for ``mode`` (syntax and SEP included in concat modes)."""
    nn, ne = vocab.node_attributes, vocab.edge_attributes
    sem = linearize(uds_to_arborescence(graph, tree, semantics_only), nn, ne)
    segments = [(sem, False)]
    if mode.concat:
        syn = linearize(tree_to_arborescence(tree), nn, ne)
        segments = [(syn, True), (sem, False)] if mode is Mode.CB else [(sem, False), (syn, True)]

    rows = []
    for seg, (lin, is_syn) in enumerate(segments):
        if seg:
            rows.append(dict(label=SEP, source=None, key=None, kind=None, head=0, edge=PAD,
                             segment=-1, nv=np.zeros(len(nn)), nm=np.zeros(len(nn), bool),
                             ev=np.zeros(len(ne)), em=np.zeros(len(ne), bool)))
        rows.extend(_segment_rows(lin, seg, len(rows), is_syn))

    first: Dict[Tuple[int, int], int] = {}
    occurrence, copy_of = [], []
    for j, r in enumerate(rows):
        key = r["key"]
        if key is None:
            occurrence.append(0)
            copy_of.append([])
            continue
        if key not in first:
            first[key] = len(first) + 1
            copy_of.append([])
        else:
            copy_of.append([i + 1 for i in range(j) if rows[i]["key"] == key])
        occurrence.append(first[key])

    def stack(name, width, dtype):
        return np.array([r[name] for r in rows], dtype=dtype).reshape(len(rows), width)

    return Target(
        labels=[r["label"] for r in rows],
        label_ids=np.array([vocab.lookup("node_labels", r["label"]) for r in rows], dtype=np.int64),
        source_indices=[r["source"] for r in rows],
        keys=[r["key"] for r in rows],
        occurrence=np.array(occurrence, dtype=np.int64),
        kinds=[r["kind"] for r in rows],
        heads=np.array([r["head"] for r in rows], dtype=np.int64),
        edge_labels=[r["edge"] for r in rows],
        edge_label_ids=np.array([vocab.lookup("edge_labels", r["edge"]) for r in rows], dtype=np.int64),
        segment=np.array([r["segment"] for r in rows], dtype=np.int64),
        node_attr_values=stack("nv", len(nn), np.float64),
        node_attr_mask=stack("nm", len(nn), bool),
        edge_attr_values=stack("ev", len(ne), np.float64),
        edge_attr_mask=stack("em", len(ne), bool),
        copy_of=copy_of,
    )


# --------------------------------------------------------------------- decoder


@dataclass
class StepFeatures:
    """Categorical inputs describing one generated node."""

    label_id: int
    occurrence: int
    head_label_id: int
    head_occurrence: int
    edge_label_id: int
    source_index: Optional[int]


@dataclass
class DecoderState:
    """Incremental decoding state: per-layer caches plus node representations."""

    enc: Tensor
    caches: List[LayerCache]
    max_steps: int
    rows: List[Tensor] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.rows)

    def z(self) -> Tensor:
        return concat(self.rows, axis=0)


@dataclass(frozen=True)
class MixtureLayout:
    """Column blocks of the label mixture: generate | source-copy | target-copy."""

    vocab: int
    source: int
    target: int  # includes one placeholder column used when no node precedes

    @property
    def src_offset(self) -> int:
        return self.vocab

    @property
    def tgt_offset(self) -> int:
        return self.vocab + self.source

    @property
    def width(self) -> int:
        return self.vocab + self.source + self.target


class SemanticDecoder(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, rng):
        d, k = cfg.d_s, cfg.init_scale
        n_labels, n_edges = len(vocab.node_labels), len(vocab.edge_labels)
        self.label_embed = normal((n_labels, d), 1.0, rng)
        self.occurrence_embed = normal((cfg.max_nodes, d), 1.0, rng)
        self.head_label_embed = normal((n_labels, d), 1.0, rng)
        self.head_occurrence_embed = normal((cfg.max_nodes, d), 1.0, rng)
        self.edge_embed = normal((n_edges, d), 1.0, rng)
        self.anchor = Linear(d, d, rng, bias=False)
        self.layers = [DecoderLayer(d, cfg.heads, cfg.d_ff, rng, k, cfg.dropout) for _ in range(cfg.layers)]
        self.norm = ScaleNorm(d)
        # label mixture
        self.generate = Linear(d, n_labels, rng)
        self.switch = Linear(d, 3, rng)
        self.src_query = Linear(d, d, rng, bias=False)
        self.src_key = Linear(d, d, rng, bias=False)
        self.tgt_query = Linear(d, d, rng, bias=False)
        self.tgt_key = Linear(d, d, rng, bias=False)
        # relations
        self.arc_dep = MLP(d, cfg.d_h, rng, rate=cfg.dropout)
        self.arc_head = MLP(d, cfg.d_h, rng, rate=cfg.dropout)
        self.arc = BiaffineArc(cfg.d_h, rng)
        self.lab_dep = MLP(d, cfg.d_t, rng, rate=cfg.dropout)
        self.lab_head = MLP(d, cfg.d_t, rng, rate=cfg.dropout)
        self.lab = Bilinear(cfg.d_t, cfg.d_t, n_edges, rng)
        # attributes
        self.node_value = MLP(d, cfg.d_h, rng, d_out=len(vocab.node_attributes), rate=cfg.dropout)
        self.node_mask = MLP(d, cfg.d_h, rng, d_out=len(vocab.node_attributes), rate=cfg.dropout)
        self.edge_pair = Bilinear(d, d, cfg.d_edge, rng)
        self.edge_value = Linear(cfg.d_edge, len(vocab.edge_attributes), rng)
        self.edge_mask = Linear(cfg.d_edge, len(vocab.edge_attributes), rng)
        self._max_nodes = cfg.max_nodes
        self._rate = cfg.dropout

    # inputs ------------------------------------------------------------------
    def embed(self, feats: Sequence[StepFeatures], enc: Tensor, offset: int = 0) -> Tensor:
        cap = self._max_nodes - 1

        def ids(name):
            return np.array([getattr(f, name) for f in feats], dtype=np.int64)

        x = (
            embedding(self.label_embed, ids("label_id"))
            + embedding(self.occurrence_embed, np.minimum(ids("occurrence"), cap))
            + embedding(self.head_label_embed, ids("head_label_id"))
            + embedding(self.head_occurrence_embed, np.minimum(ids("head_occurrence"), cap))
            + embedding(self.edge_embed, ids("edge_label_id"))
        )
        select = np.zeros((len(feats), enc.shape[0]))
        for r, f in enumerate(feats):
            if f.source_index is not None and 1 <= f.source_index <= enc.shape[0]:
                select[r, f.source_index - 1] = 1.0
        if select.any():
            x = x + self.anchor(matmul(select, enc))
        return x + sinusoid(offset + len(feats), x.shape[1])[offset:]

    # teacher-forced pass ------------------------------------------------------
    def __call__(self, x: Tensor, enc: Tensor, rng=None) -> Tensor:
        x = dropout(x, self._rate, rng, self.training)
        for layer in self.layers:
            x = layer(x, enc, rng)
        return self.norm(x)

    # incremental pass ---------------------------------------------------------
    def start(self, enc: Tensor, max_steps: int) -> DecoderState:
        return DecoderState(enc, [layer.start(enc) for layer in self.layers], max_steps)

    def step(self, state: DecoderState, feats: StepFeatures) -> Tensor:
        if state.steps >= state.max_steps:
            raise DecodeLengthError(f"decoder step {state.steps} exceeds the limit of {state.max_steps}")
        x = self.embed([feats], state.enc, offset=state.steps)
        for layer, cache in zip(self.layers, state.caches):
            x = layer.step(x, cache)
        z = self.norm(x)
        state.rows.append(z)
        return z

    # heads ---------------------------------------------------------------------
    def label_distribution(
        self, z: Tensor, enc: Tensor, prior: Optional[Tensor], prior_mask: Optional[np.ndarray] = None,
        gen_mask: Optional[np.ndarray] = None,
    ) -> Tuple[Tensor, MixtureLayout]:
        """Log-probabilities over generate | source-copy | target-copy columns.

        ``prior`` holds representations of earlier nodes (may be None); row r
        of ``prior_mask`` (additive) restricts which of them row r may copy.
        A row with no admissible prior node gets zero target-copy mass.
        """
        n, d = z.shape
        m = 0 if prior is None else prior.shape[0]
        layout = MixtureLayout(self.generate.w.shape[1], enc.shape[0], m + 1)
        pmask = np.zeros((n, m)) if prior_mask is None else np.asarray(prior_mask, dtype=np.float64)
        empty = ~np.isfinite(pmask).any(axis=1) if m else np.ones(n, dtype=bool)

        log_gen = log_softmax(self.generate(z), gen_mask)
        src_scores = matmul(self.src_query(z), self.src_key(enc).T) * (1.0 / math.sqrt(d))
        log_src = log_softmax(src_scores)

        placeholder = np.where(empty, 0.0, NEG_INF)[:, None]
        if m:
            tgt_scores = matmul(self.tgt_query(z), self.tgt_key(prior).T) * (1.0 / math.sqrt(d))
            tgt_scores = concat([Tensor(np.zeros((n, 1))), tgt_scores], axis=1)
            log_tgt = log_softmax(tgt_scores, np.concatenate([placeholder, pmask], axis=1))
        else:
            log_tgt = log_softmax(Tensor(np.zeros((n, 1))), placeholder)

        switch_mask = np.zeros((n, 3))
        switch_mask[empty, SWITCH_TGT] = NEG_INF
        log_sw = log_softmax(self.switch(z), switch_mask)
        mix = concat([
            log_gen + log_sw[:, SWITCH_GEN:SWITCH_GEN + 1],
            log_src + log_sw[:, SWITCH_SRC:SWITCH_SRC + 1],
            log_tgt + log_sw[:, SWITCH_TGT:SWITCH_TGT + 1],
        ], axis=1)
        return mix, layout

    def relation_scores(self, query: Tensor, keys: Tensor, rng=None) -> Tensor:
        """Head scores of each query row against every key row."""
        return self.arc(self.arc_dep(query, rng), self.arc_head(keys, rng))

    def edge_label_scores(self, query: Tensor, heads: Tensor, rng=None) -> Tensor:
        return self.lab.pairs(self.lab_dep(query, rng), self.lab_head(heads, rng))

    def node_attributes(self, z: Tensor, rng=None) -> Tuple[Tensor, Tensor]:
        """(raw values, applies logits) per attribute."""
        return self.node_value(z, rng), self.node_mask(z, rng)

    def edge_attributes(self, z_head: Tensor, z_dep: Tensor) -> Tuple[Tensor, Tensor]:
        h = relu(self.edge_pair.pairs(z_head, z_dep))
        return self.edge_value(h), self.edge_mask(h)


# --------------------------------------------------------------------- parser


@dataclass
class OracleOutput:
    """Attribute predictions under teacher forcing along the gold linearization."""

    num_positions: int
    node_values: np.ndarray
    node_probs: np.ndarray
    edge_values: np.ndarray
    edge_probs: np.ndarray
    nodes: List[NodePrediction]
    edges: List[NodePrediction]


@dataclass
class _Node:
    label: str
    source_index: Optional[int]
    occurrence: int
    kind: NodeKind
    head: int
    edge_label: str
    segment: int
    node_attrs: Dict[str, AttributeValue] = field(default_factory=dict)
    edge_attrs: Dict[str, AttributeValue] = field(default_factory=dict)


def _as_tree(sentence: Union[UDTree, Sequence[str]]) -> UDTree:
    if isinstance(sentence, UDTree):
        return sentence
    forms = list(sentence)
    if not forms:
        raise ValueError("cannot parse an empty sentence")
    return UDTree.from_lists(forms, [0] + [1] * (len(forms) - 1), ["root"] + ["dep"] * (len(forms) - 1))


def _report_attrs(names, values, logits) -> Dict[str, AttributeValue]:
    out = {}
    for name, v, l in zip(names, values, logits):
        if l > 0.0:  # applies iff sigmoid(l) > 0.5
            out[name] = AttributeValue(float(np.clip(v, ATTR_MIN, ATTR_MAX)), True)
    return out


class JointParser(Module):
    """Encoder, optional biaffine UD parser, optional fusion, optional semantic decoder."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.seed = seed
        rng = np.random.default_rng(seed)
        mode = config.mode
        self.encoder = Encoder(config, vocab, rng)
        # present in every mode so its weights can be transferred in and out;
        # only BI/EN/IN feed it a loss
        self.biaffine = SyntacticBiaffine(config, len(vocab.deprels), rng)
        if mode is Mode.IN:
            self.fusion = Fusion(config, rng)
        if mode.uses_decoder:
            self.decoder = SemanticDecoder(config, vocab, rng)
        self._rng = np.random.default_rng([seed, 1])
        self._deprels = vocab.inverse("deprels")
        self._node_labels = vocab.inverse("node_labels")
        self._edge_labels = vocab.inverse("edge_labels")
        self.eval()

    # parameters ---------------------------------------------------------------
    @property
    def mode(self) -> Mode:
        return self.config.mode

    def named_parameters(self, prefix: str = ""):
        for name in ("encoder", "biaffine", "fusion", "decoder"):
            if hasattr(self, name):
                yield from getattr(self, name).named_parameters(f"{prefix}{name}.")

    def parameter_groups(self) -> Dict[str, List[Tuple[str, Tensor]]]:
        groups = {"encoder": [], "syntactic": [], "fusion": [], "decoder": []}
        alias = {"encoder": "encoder", "biaffine": "syntactic", "fusion": "fusion", "decoder": "decoder"}
        for name, p in self.named_parameters():
            groups[alias[name.split(".", 1)[0]]].append((name, p))
        return groups

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def reset_rng(self, seed: Optional[int] = None):
        self._rng = np.random.default_rng([self.seed if seed is None else seed, 1])

    # encoder side ----------------------------------------------------------
    def encode(self, sentence: Union[UDTree, Sequence[str]], upos: Optional[Sequence[str]] = None) -> Tensor:
        tree = sentence if isinstance(sentence, UDTree) else None
        forms = tree.forms if tree is not None else list(sentence)
        if not forms:
            raise ValueError("cannot encode an empty sentence")
        tags = tree.upos if tree is not None else (list(upos) if upos is not None else ["X"] * len(forms))
        token_ids = [self.vocab.lookup("tokens", f) for f in forms]
        upos_ids = [self.vocab.lookup("upos", u) for u in tags]
        return self.encoder(token_ids, upos_ids, self._rng)

    def syntactic_biaffine(self, enc: Tensor) -> SyntacticParse:
        return self.biaffine(enc, self._rng)

    def intermediate_fusion(self, enc: Tensor, parse: SyntacticParse) -> Tensor:
        if not hasattr(self, "fusion"):
            raise ConfigurationError(f"mode {self.mode.value} has no fusion layer")
        return self.fusion(enc, parse)

    def _encode_all(self, tree: UDTree):
        s = self.encode(tree)
        parse = self.syntactic_biaffine(s) if self.mode.uses_biaffine else None
        memory = self.intermediate_fusion(s, parse) if self.mode is Mode.IN else s
        return s, parse, memory

    # decoder side ------------------------------------------------------------
    def _features(self, target: Target) -> List[StepFeatures]:
        lookup = self.vocab.lookup
        feats = [StepFeatures(lookup("node_labels", BOS), 0, lookup("node_labels", ROOT_LABEL), 0,
                              lookup("edge_labels", PAD), None)]
        for j in range(len(target)):
            h = int(target.heads[j])
            feats.append(StepFeatures(
                label_id=int(target.label_ids[j]),
                occurrence=int(target.occurrence[j]),
                head_label_id=int(target.label_ids[h - 1]) if h else lookup("node_labels", ROOT_LABEL),
                head_occurrence=int(target.occurrence[h - 1]) if h else 0,
                edge_label_id=int(target.edge_label_ids[j]),
                source_index=target.source_indices[j],
            ))
        return feats

    def _gen_mask(self, allow_sep: bool) -> np.ndarray:
        mask = np.zeros(len(self.vocab.node_labels))
        for sym in (PAD, BOS, ROOT_LABEL):
            mask[self.vocab.node_labels[sym]] = NEG_INF
        if not allow_sep:
            mask[self.vocab.node_labels[SEP]] = NEG_INF
        return mask

    def target(self, tree: UDTree, graph: UDSGraph, semantics_only: Optional[bool] = None) -> Target:
        so = self.config.semantics_only if semantics_only is None else semantics_only
        return build_target(tree, graph, self.vocab, self.mode, so)

    def teacher_force(self, memory: Tensor, target: Target) -> Tensor:
        """Decoder states ``Z`` of shape ``(N+1) x d``; row 0 consumed BOS."""
        return self.decoder(self.decoder.embed(self._features(target), memory), memory, self._rng)

    def _head_mask(self, target: Target) -> np.ndarray:
        """Additive ``N x N`` mask: node s+1 may attach to ROOT or earlier nodes of its segment."""
        N = len(target)
        mask = causal_mask(N)
        for s in range(N):
            for j in range(1, s + 1):
                if target.segment[j - 1] != target.segment[s]:
                    mask[s, j] = NEG_INF
        return mask

    def _gold_action_mask(self, target: Target, layout: MixtureLayout) -> np.ndarray:
        N = len(target)
        gold = np.full((N + 1, layout.width), NEG_INF)
        eos = self.vocab.lookup("node_labels", EOS)
        gold[N, eos] = 0.0
        for s in range(N):
            if target.is_sep[s]:
                gold[s, target.label_ids[s]] = 0.0
            elif target.copy_of[s]:
                for j in target.copy_of[s]:
                    gold[s, layout.tgt_offset + j] = 0.0
            elif target.source_indices[s] is not None:
                gold[s, layout.src_offset + target.source_indices[s] - 1] = 0.0
            else:
                gold[s, target.label_ids[s]] = 0.0
        return gold

    def decoder_losses(self, memory: Tensor, target: Target) -> Dict[str, Tensor]:
        dec = self.decoder
        N = len(target)
        Z = self.teacher_force(memory, target)
        prior = Z[1:] if N else None
        prior_mask = causal_mask(N + 1, N, offset=-1) if N else None
        if N:
            prior_mask[:, target.is_sep] = NEG_INF
        mix, layout = dec.label_distribution(Z, memory, prior, prior_mask, self._gen_mask(self.mode.concat))
        node = -logsumexp(mix + self._gold_action_mask(target, layout), axis=-1).mean()

        zero = Z.sum() * 0.0
        rows = np.array([s for s in range(N) if not target.is_sep[s]], dtype=np.int64)
        if len(rows):
            scores = dec.relation_scores(Z[:N], Z[:N], self._rng)
            heads = target.heads[rows]
            edge = cross_entropy(scores[rows], heads, self._head_mask(target)[rows])
            lab = dec.edge_label_scores(Z[rows], Z[heads], self._rng)
            label = cross_entropy(lab, target.edge_label_ids[rows])
        else:
            edge = label = zero

        value, applies = zero, zero
        sem = target.semantic_positions
        if len(sem) and target.node_attr_values.shape[1]:
            v, m = dec.node_attributes(Z[sem], self._rng)
            gv, gm = target.node_attr_values[sem - 1], target.node_attr_mask[sem - 1]
            value = value + mse(v, gv, gm)
            applies = applies + binary_cross_entropy(m, gm.astype(np.float64))
        epos = target.semantic_edge_positions
        if len(epos) and target.edge_attr_values.shape[1]:
            v, m = dec.edge_attributes(Z[target.heads[epos - 1]], Z[epos])
            gv, gm = target.edge_attr_values[epos - 1], target.edge_attr_mask[epos - 1]
            value = value + mse(v, gv, gm)
            applies = applies + binary_cross_entropy(m, gm.astype(np.float64))
        return {"node": node, "edge": edge, "label": label, "attr_value": value, "attr_mask": applies}

    def syntax_loss(self, parse: SyntacticParse, tree: UDTree) -> Tensor:
        heads = np.array(tree.heads, dtype=np.int64)
        arcs = cross_entropy(parse.arc_scores, heads, parse.arc_mask)
        rel_ids = np.array([self.vocab.lookup("deprels", r) for r in tree.deprels], dtype=np.int64)
        rels = cross_entropy(self.biaffine.rel.pairs(parse.rel_dep, parse.rel_head[heads]), rel_ids)
        return arcs + rels

    # training objective ----------------------------------------------------------
    def check_supervision(self, batch: Sequence[CorpusEntry]):
        if self.mode in (Mode.BASE, Mode.CB, Mode.CA):
            missing = [e.sent_id for e in batch if e.graph is None]
            if missing:
                raise ConfigurationError(
                    f"mode {self.mode.value} needs UDS graphs; missing for {missing[:5]}"
                )

    def compute_loss(self, batch: Sequence[CorpusEntry]) -> Tuple[Tensor, Dict[str, float]]:
        """Weighted sum of per-component means over the batch.

        Semantic components average over sentences with a graph, the syntactic
        one over all sentences. Components a mode does not train are 0.
        """
        if not batch:
            raise ValueError("empty batch")
        self.check_supervision(batch)
        sums: Dict[str, List[Tensor]] = {c: [] for c in self.config.loss_weights}
        for entry in batch:
            s, parse, memory = self._encode_all(entry.tree)
            if parse is not None:
                sums["syntax"].append(self.syntax_loss(parse, entry.tree))
            if self.mode.uses_decoder and entry.graph is not None:
                for name, t in self.decoder_losses(memory, self.target(entry.tree, entry.graph)).items():
                    sums[name].append(t)
        total = None
        parts: Dict[str, float] = {}
        for name, weight in self.config.loss_weights.items():
            terms = sums[name]
            if not terms:
                parts[name] = 0.0
                continue
            comp = terms[0]
            for t in terms[1:]:
                comp = comp + t
            comp = comp * (1.0 / len(terms))
            parts[name] = float(comp.data)
            weighted = comp * weight
            total = weighted if total is None else total + weighted
        if total is None:
            total = Tensor(0.0)
        return total, parts

    # inference ---------------------------------------------------------------
    def predict_tree(self, tree: UDTree, parse: SyntacticParse) -> UDTree:
        scores = parse.arc_scores.data
        heads = chu_liu_edmonds(scores)
        labels = parse.label_scores().data
        n_special = len(SPECIALS)
        rels = []
        for i, h in enumerate(heads):
            row = labels[i, h].copy()
            row[:n_special] = NEG_INF
            rels.append(self._deprels[int(np.argmax(row))])
        return UDTree(tree.tokens, tuple(heads), tuple(rels))

    def generate(self, sentence, mode=None, max_length: Optional[int] = None) -> Parse:
        """Greedy decoding of one sentence; returns the graph and (mode permitting) a UD tree."""
        if mode is not None and Mode(mode) is not self.mode:
            raise ConfigurationError(f"model was built for mode {self.mode.value}, not {Mode(mode).value}")
        tree = _as_tree(sentence)
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self._generate(tree, max_length)
        finally:
            self.train(was_training)

    def _generate(self, tree: UDTree, max_length: Optional[int]) -> Parse:
        s, parse, memory = self._encode_all(tree)
        pred_tree = self.predict_tree(tree, parse) if parse is not None else None
        if not self.mode.uses_decoder:
            return Parse(UDSGraph((), (), ()), pred_tree)
        limit = self.config.decode_limit(len(tree)) if max_length is None else max_length
        nodes, notes = self._decode_nodes(tree, memory, limit)
        return self._assemble(tree, nodes, pred_tree, notes)

    def _decode_nodes(self, tree: UDTree, memory: Tensor, limit: int):
        dec, vocab = self.decoder, self.vocab
        forms = tree.forms
        eos, sep = vocab.node_labels[EOS], vocab.node_labels[SEP]
        state = dec.start(memory, limit + 1)
        root_label = vocab.lookup("node_labels", ROOT_LABEL)
        dec.step(state, StepFeatures(vocab.lookup("node_labels", BOS), 0, root_label, 0,
                                     vocab.lookup("edge_labels", PAD), None))
        nodes: List[Optional[_Node]] = []   # None marks SEP
        notes: List[str] = []
        segment, next_occurrence = 0, 1
        label_ids: List[int] = []
        nn, ne = vocab.node_attributes, vocab.edge_attributes

        while True:
            s = state.steps - 1
            Z = state.z()
            z = Z[s:s + 1]
            prior = Z[1:] if s else None
            prior_mask = np.array([[0.0 if n is not None else NEG_INF for n in nodes]]) if s else None
            allow_sep = self.mode.concat and segment == 0
            mix, layout = dec.label_distribution(z, memory, prior, prior_mask, self._gen_mask(allow_sep))
            action = int(np.argmax(mix.data[0]))
            if action == eos:
                break
            if len(nodes) >= limit:
                notes.append(f"truncated: no end-of-graph symbol within {limit} nodes")
                break
            if action == sep:
                nodes.append(None)
                label_ids.append(sep)
                segment = 1
                dec.step(state, StepFeatures(sep, 0, root_label, 0, vocab.lookup("edge_labels", PAD), None))
                continue

            if action < layout.src_offset:
                label = self._node_labels[action]
                source = next((t + 1 for t, f in enumerate(forms) if f == label), None)
                occurrence, next_occurrence = next_occurrence, next_occurrence + 1
            elif action < layout.tgt_offset:
                t = action - layout.src_offset
                label, source = forms[t], t + 1
                occurrence, next_occurrence = next_occurrence, next_occurrence + 1
            else:
                ref = nodes[action - layout.tgt_offset - 1]
                label, source, occurrence = ref.label, ref.source_index, ref.occurrence

            # head among ROOT and earlier nodes of the current segment
            keys = Z[: s + 1]
            scores = dec.relation_scores(z, keys).data[0].copy()
            for j in range(1, s + 1):
                if nodes[j - 1] is None or nodes[j - 1].segment != segment:
                    scores[j] = NEG_INF
            head = int(np.argmax(scores))
            lab = dec.edge_label_scores(z, Z[head:head + 1]).data[0].copy()
            lab[: len(SPECIALS)] = NEG_INF
            edge_label = self._edge_labels[int(np.argmax(lab))]

            syntactic_segment = self.mode.concat and segment == (0 if self.mode is Mode.CB else 1)
            kind = NodeKind.SYNTACTIC if syntactic_segment else NodeKind.SEMANTIC
            if not syntactic_segment and edge_label.startswith(SYNTAX_EDGE_PREFIX):
                kind = NodeKind.SYNTACTIC
                edge_label = edge_label[len(SYNTAX_EDGE_PREFIX):]
            node = _Node(label, source, occurrence, kind, head, edge_label, segment)
            nodes.append(node)
            label_id = vocab.lookup("node_labels", label)
            label_ids.append(label_id)
            hnode = nodes[head - 1] if head else None
            z_new = dec.step(state, StepFeatures(
                label_id=label_id,
                occurrence=occurrence,
                head_label_id=label_ids[head - 1] if head else root_label,
                head_occurrence=hnode.occurrence if hnode is not None else 0,
                edge_label_id=vocab.lookup("edge_labels", (SYNTAX_EDGE_PREFIX if kind is NodeKind.SYNTACTIC
                                                           and not syntactic_segment else "") + edge_label),
                source_index=source,
            ))
            if kind is NodeKind.SEMANTIC:
                if nn:
                    v, m = dec.node_attributes(z_new)
                    node.node_attrs = _report_attrs(nn, v.data[0], m.data[0])
                if ne and hnode is not None and hnode.kind is NodeKind.SEMANTIC:
                    v, m = dec.edge_attributes(Z[head:head + 1], z_new)
                    node.edge_attrs = _report_attrs(ne, v.data[0], m.data[0])
        return nodes, notes

    @staticmethod
    def _arborescence(nodes: List[_Node], offset: int) -> Arborescence:
        arb_nodes = [ArbNode(ROOT_LABEL, None, 0, NodeKind.ROOT)]
        parent, labels, nattrs, eattrs = [-1], [None], [{}], [{}]
        for node in nodes:
            arb_nodes.append(ArbNode(node.label, node.source_index, node.occurrence, node.kind))
            parent.append(0 if node.head == 0 else node.head - offset)
            labels.append(node.edge_label)
            nattrs.append(node.node_attrs)
            eattrs.append(node.edge_attrs)
        return Arborescence(tuple(arb_nodes), tuple(parent), tuple(labels), tuple(nattrs), tuple(eattrs))

    def _assemble(self, tree: UDTree, nodes, pred_tree, notes) -> Parse:
        if self.mode.concat:
            cut = next((i for i, n in enumerate(nodes) if n is None), None)
            if cut is None:
                notes.append("no separator emitted; whole output read as the first segment")
                first, second, second_offset = nodes, [], len(nodes) + 1
            else:
                first, second, second_offset = nodes[:cut], nodes[cut + 1:], cut + 1
            if self.mode is Mode.CB:
                syn, syn_off, sem, sem_off = first, 0, second, second_offset
            else:
                sem, sem_off, syn, syn_off = first, 0, second, second_offset
            syn_arb = self._arborescence(syn, syn_off)
            pred_tree = arborescence_to_tree(syn_arb, tree.tokens)
        else:
            sem, sem_off = nodes, 0
        # canonical order, so a dumped linearization reproduces the same arborescence
        lin = linearize(self._arborescence(sem, sem_off))
        arb = delinearize(lin)
        graph = recover_dag(arb, strict=False)
        return Parse(graph, pred_tree, arb, lin, notes)

    # oracle decoding ------------------------------------------------------------
    def oracle_attributes(self, tree: UDTree, graph: UDSGraph, semantics_only: Optional[bool] = None) -> OracleOutput:
        """Attribute heads evaluated along the gold linearization."""
        if not self.mode.uses_decoder:
            raise ConfigurationError(f"mode {self.mode.value} has no semantic decoder")
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self._oracle(tree, graph, semantics_only)
        finally:
            self.train(was_training)

    def _oracle(self, tree, graph, semantics_only) -> OracleOutput:
        dec = self.decoder
        _, _, memory = self._encode_all(tree)
        target = self.target(tree, graph, semantics_only)
        Z = self.teacher_force(memory, target)
        N = len(target)
        nn, ne = self.vocab.node_attributes, self.vocab.edge_attributes
        node_values = np.zeros((N, len(nn)))
        node_probs = np.zeros((N, len(nn)))
        edge_values = np.zeros((N, len(ne)))
        edge_probs = np.zeros((N, len(ne)))
        if N:
            v, m = dec.node_attributes(Z[1:])
            node_values, node_probs = np.clip(v.data, ATTR_MIN, ATTR_MAX), 1.0 / (1.0 + np.exp(-m.data))
            heads = target.heads
            v, m = dec.edge_attributes(Z[heads], Z[1:])
            edge_values, edge_probs = np.clip(v.data, ATTR_MIN, ATTR_MAX), 1.0 / (1.0 + np.exp(-m.data))

        T = len(tree)
        seen = set()
        nodes, edges = [], []
        for j in range(N):
            if target.kinds[j] is not NodeKind.SEMANTIC:
                continue
            src = target.source_indices[j]
            if target.keys[j] not in seen:
                seen.add(target.keys[j])
                gold = {name: AttributeValue(float(target.node_attr_values[j, a]), True)
                        for a, name in enumerate(nn) if target.node_attr_mask[j, a]}
                nodes.append(NodePrediction(
                    T, src, tree.deprels[src - 1],
                    {name: float(node_values[j, a]) for a, name in enumerate(nn)}, gold,
                ))
            h = int(target.heads[j])
            if h and target.kinds[h - 1] is NodeKind.SEMANTIC:
                gold = {name: AttributeValue(float(target.edge_attr_values[j, a]), True)
                        for a, name in enumerate(ne) if target.edge_attr_mask[j, a]}
                edges.append(NodePrediction(
                    T, src, target.edge_labels[j],
                    {name: float(edge_values[j, a]) for a, name in enumerate(ne)}, gold,
                ))
        return OracleOutput(N, node_values, node_probs, edge_values, edge_probs, nodes, edges)
