"""Syntactic and semantic graph data model.

Holds the UD tree and UDS graph types together with the conversions the
transductive parser needs: DAG to co-indexed arborescence, pre-order
linearization, its inverse, and DAG recovery by merging co-indexed copies.
"""

from __future__ import annotations

import enum
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

ATTR_MIN = -3.0
ATTR_MAX = 3.0

ROOT_LABEL = "@root@"
ROOT_EDGE = "root"
DEFAULT_EDGE_LABEL = "arg"


class GraphError(ValueError):
    """Base class for structural errors in trees, graphs and sequences."""


class TreeError(GraphError):
    pass


class DanglingLinkError(GraphError):
    def __init__(self, node_id, head_token, num_tokens):
        self.node_id = node_id
        self.head_token = head_token
        super().__init__(
            f"node {node_id!r} links to token {head_token}, "
            f"sentence has {num_tokens} tokens"
        )


class CycleError(GraphError):
    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"graph has a cycle through edge {edge[0]!r} -> {edge[1]!r}")


class MalformedSequenceError(GraphError):
    def __init__(self, position, message):
        self.position = position
        super().__init__(f"position {position}: {message}")


class CoindexConflictError(GraphError):
    pass


def clamp_attribute(value: float, name: str = "") -> float:
    """Clamp an attribute value to the annotation scale, warning when it moves."""
    value = float(value)
    if value < ATTR_MIN or value > ATTR_MAX:
        clamped = min(max(value, ATTR_MIN), ATTR_MAX)
        warnings.warn(
            f"attribute {name or '?'} value {value} outside [{ATTR_MIN}, {ATTR_MAX}]; "
            f"clamped to {clamped}",
            stacklevel=2,
        )
        return clamped
    return value


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    upos: str = "X"
    lemma: str = "_"
    xpos: str = "_"
    feats: str = "_"
    deps: str = "_"
    misc: str = "_"

    def __post_init__(self):
        if self.index < 1:
            raise TreeError(f"token index must be >= 1, got {self.index}")
        if not self.form:
            raise TreeError(f"token {self.index} has an empty form")


@dataclass(frozen=True)
class UDTree:
    tokens: Tuple[Token, ...]
    heads: Tuple[int, ...]
    deprels: Tuple[str, ...]
    metadata: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "deprels", tuple(self.deprels))
        object.__setattr__(self, "metadata", tuple(self.metadata))
        validate_heads(self.heads, len(self.tokens))
        if len(self.deprels) != len(self.tokens):
            raise TreeError(
                f"{len(self.deprels)} relations for {len(self.tokens)} tokens"
            )

    def __len__(self):
        return len(self.tokens)

    @property
    def forms(self) -> List[str]:
        return [t.form for t in self.tokens]

    @property
    def upos(self) -> List[str]:
        return [t.upos for t in self.tokens]

    @classmethod
    def from_lists(cls, forms, heads, deprels, upos=None):
        upos = upos or ["X"] * len(forms)
        tokens = tuple(Token(i + 1, f, u) for i, (f, u) in enumerate(zip(forms, upos)))
        return cls(tokens, tuple(heads), tuple(deprels))


def validate_heads(heads: Sequence[int], num_tokens: int) -> None:
    """Check that ``heads`` is a single-rooted tree over ``num_tokens`` tokens."""
    if len(heads) != num_tokens:
        raise TreeError(f"{len(heads)} heads for {num_tokens} tokens")
    if num_tokens == 0:
        raise TreeError("empty sentence")
    roots = [i + 1 for i, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        raise TreeError(f"expected exactly one root, found {len(roots)}")
    for i, h in enumerate(heads):
        if not 0 <= h <= num_tokens:
            raise TreeError(f"token {i + 1} has head {h} outside [0, {num_tokens}]")
        if h == i + 1:
            raise TreeError(f"token {i + 1} heads itself")
    for start in range(1, num_tokens + 1):
        seen = set()
        node = start
        while node != 0:
            if node in seen:
                raise TreeError(f"head cycle through token {node}")
            seen.add(node)
            node = heads[node - 1]


@dataclass(frozen=True)
class AttributeValue:
    value: float
    applies: bool = True


@dataclass(frozen=True, eq=True)
class SemanticNode:
    id: str
    head_token: Optional[int]
    attributes: Mapping[str, AttributeValue] = field(default_factory=dict)
    label: Optional[str] = None


@dataclass(frozen=True, eq=True)
class SemanticEdge:
    src: str
    dst: str
    attributes: Mapping[str, AttributeValue] = field(default_factory=dict)
    label: str = DEFAULT_EDGE_LABEL

    def __post_init__(self):
        if self.src == self.dst:
            raise GraphError(f"self-loop on node {self.src!r}")


@dataclass(frozen=True)
class UDSGraph:
    nodes: Tuple[SemanticNode, ...] = ()
    edges: Tuple[SemanticEdge, ...] = ()
    roots: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "roots", tuple(self.roots))

    def node_map(self) -> Dict[str, SemanticNode]:
        return {n.id: n for n in self.nodes}

    def in_degree(self) -> Dict[str, int]:
        deg = {n.id: 0 for n in self.nodes}
        for e in self.edges:
            deg[e.dst] += 1
        return deg

    def validate(self, num_tokens: Optional[int] = None) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate node ids")
        known = set(ids)
        for e in self.edges:
            for end in (e.src, e.dst):
                if end not in known:
                    raise GraphError(f"edge {e.src!r} -> {e.dst!r} names unknown node {end!r}")
        if num_tokens is not None:
            for n in self.nodes:
                if n.head_token is None or not 1 <= n.head_token <= num_tokens:
                    raise DanglingLinkError(n.id, n.head_token, num_tokens)
        _check_acyclic(ids, self.edges)
        if not self.nodes:
            if self.roots:
                raise GraphError("roots listed for an empty graph")
            return
        if not self.roots:
            raise GraphError("graph has nodes but no roots")
        deg = self.in_degree()
        for r in self.roots:
            if r not in known:
                raise GraphError(f"unknown root {r!r}")
            if deg[r]:
                raise GraphError(f"root {r!r} has incoming edges")
        children = defaultdict(list)
        for e in self.edges:
            children[e.src].append(e.dst)
        reached = set()
        stack = list(self.roots)
        while stack:
            n = stack.pop()
            if n in reached:
                continue
            reached.add(n)
            stack.extend(children[n])
        missing = known - reached
        if missing:
            raise GraphError(f"nodes unreachable from roots: {sorted(missing)}")


def _check_acyclic(ids: Iterable[str], edges: Iterable[SemanticEdge]) -> None:
    children = defaultdict(list)
    for e in edges:
        children[e.src].append(e.dst)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {i: WHITE for i in ids}
    for start in sorted(color, key=str):
        if color[start] != WHITE:
            continue
        color[start] = GREY
        stack = [(start, iter(children[start]))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                raise CycleError((node, nxt))
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(children[nxt])))


class NodeKind(str, enum.Enum):
    ROOT = "ROOT"
    SEMANTIC = "SEMANTIC"
    SYNTACTIC = "SYNTACTIC"


@dataclass(frozen=True)
class ArbNode:
    label: str
    source_index: Optional[int]
    coindex: int
    kind: NodeKind


@dataclass(frozen=True)
class Arborescence:
    """Tree with node 0 as the virtual root; ``parent[0] == -1``.

    ``edge_labels[i]`` and ``edge_attrs[i]`` describe the edge into node i.
    """

    nodes: Tuple[ArbNode, ...]
    parent: Tuple[int, ...]
    edge_labels: Tuple[Optional[str], ...]
    node_attrs: Tuple[Mapping[str, AttributeValue], ...]
    edge_attrs: Tuple[Mapping[str, AttributeValue], ...]

    def __post_init__(self):
        n = len(self.nodes)
        if not n or self.nodes[0].kind is not NodeKind.ROOT:
            raise GraphError("arborescence must start with a ROOT node")
        for seq in (self.parent, self.edge_labels, self.node_attrs, self.edge_attrs):
            if len(seq) != n:
                raise GraphError("arborescence fields are not aligned")
        if self.parent[0] != -1:
            raise GraphError("ROOT cannot have a parent")
        for i in range(1, n):
            if not 0 <= self.parent[i] < n or self.parent[i] == i:
                raise GraphError(f"node {i} has invalid parent {self.parent[i]}")
            if self.nodes[i].kind is NodeKind.ROOT:
                raise GraphError("only node 0 may be ROOT")

    def children(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in self.nodes]
        for i in range(1, len(self.nodes)):
            out[self.parent[i]].append(i)
        return out

    def semantic_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind is NodeKind.SEMANTIC)


@dataclass(frozen=True, eq=False)
class LinearizedGraph:
    """Pre-order node sequence of an arborescence, without the virtual root.

    Positions are 1-based in ``head_positions``; 0 denotes the root.
    """

    node_tokens: Tuple[str, ...]
    source_indices: Tuple[Optional[int], ...]
    coindices: Tuple[int, ...]
    kinds: Tuple[NodeKind, ...]
    head_positions: Tuple[int, ...]
    edge_labels: Tuple[str, ...]
    node_attr_names: Tuple[str, ...]
    node_attr_values: np.ndarray
    node_attr_mask: np.ndarray
    edge_attr_names: Tuple[str, ...]
    edge_attr_values: np.ndarray
    edge_attr_mask: np.ndarray

    def __len__(self):
        return len(self.node_tokens)

    def __eq__(self, other):
        if not isinstance(other, LinearizedGraph):
            return NotImplemented
        seq_fields = (
            "node_tokens", "source_indices", "coindices", "kinds",
            "head_positions", "edge_labels", "node_attr_names", "edge_attr_names",
        )
        arr_fields = (
            "node_attr_values", "node_attr_mask", "edge_attr_values", "edge_attr_mask",
        )
        return all(tuple(getattr(self, f)) == tuple(getattr(other, f)) for f in seq_fields) and all(
            getattr(self, f).shape == getattr(other, f).shape
            and np.array_equal(getattr(self, f), getattr(other, f))
            for f in arr_fields
        )

    __hash__ = None


def _child_key(node: ArbNode, edge_label: Optional[str]):
    si = node.source_index
    return (si is None, si if si is not None else 0, edge_label or "", node.coindex)


def canonical_coindices(graph: UDSGraph) -> Dict[str, int]:
    """Coindex per node: rank by (head token, id), starting at 1."""
    order = sorted(
        graph.nodes,
        key=lambda n: (n.head_token if n.head_token is not None else 0, str(n.id)),
    )
    return {n.id: i + 1 for i, n in enumerate(order)}


def uds_to_arborescence(
    graph: UDSGraph, tree: UDTree, semantics_only: bool = True
) -> Arborescence:
    """Tree-ify a UDS DAG.

    Each node with k parents yields k co-indexed copies; the parent visited
    first in canonical pre-order keeps the expanded original and the rest get
    leaf copies. With ``semantics_only=False`` every token not used as a
    semantic label hangs as a SYNTACTIC leaf under the semantic node whose
    label is its nearest labelled UD ancestor.
    """
    num_tokens = len(tree)
    graph.validate(num_tokens=num_tokens)
    forms = tree.forms
    coindex = canonical_coindices(graph)
    by_id = graph.node_map()

    out_edges: Dict[str, List[SemanticEdge]] = defaultdict(list)
    for e in graph.edges:
        out_edges[e.src].append(e)

    def key(node_id: str, label: str):
        n = by_id[node_id]
        return (n.head_token, label, coindex[node_id])

    nodes = [ArbNode(ROOT_LABEL, None, 0, NodeKind.ROOT)]
    parent = [-1]
    labels: List[Optional[str]] = [None]
    nattrs: List[Mapping[str, AttributeValue]] = [{}]
    eattrs: List[Mapping[str, AttributeValue]] = [{}]
    expanded: Dict[str, int] = {}

    # stack of (node id, parent arb index, edge label, edge attrs)
    stack = [
        (r, 0, ROOT_EDGE, {})
        for r in sorted(graph.roots, key=lambda r: key(r, ROOT_EDGE), reverse=True)
    ]
    while stack:
        node_id, par, label, attrs = stack.pop()
        n = by_id[node_id]
        idx = len(nodes)
        nodes.append(ArbNode(forms[n.head_token - 1], n.head_token, coindex[node_id], NodeKind.SEMANTIC))
        parent.append(par)
        labels.append(label)
        nattrs.append(dict(n.attributes))
        eattrs.append(dict(attrs))
        if node_id in expanded:
            continue
        expanded[node_id] = idx
        kids = sorted(out_edges[node_id], key=lambda e: key(e.dst, e.label), reverse=True)
        stack.extend((e.dst, idx, e.label, e.attributes) for e in kids)

    if not semantics_only:
        owner_by_token: Dict[int, str] = {}
        for n in sorted(graph.nodes, key=lambda n: coindex[n.id], reverse=True):
            owner_by_token[n.head_token] = n.id
        fallback = min(graph.roots, key=lambda r: coindex[r]) if graph.roots else None
        base = len(graph.nodes)
        for t in range(1, num_tokens + 1):
            if t in owner_by_token:
                continue
            owner = None
            h = tree.heads[t - 1]
            while h != 0:
                if h in owner_by_token:
                    owner = owner_by_token[h]
                    break
                h = tree.heads[h - 1]
            owner = owner if owner is not None else fallback
            par = expanded[owner] if owner is not None else 0
            nodes.append(ArbNode(forms[t - 1], t, base + t, NodeKind.SYNTACTIC))
            parent.append(par)
            labels.append(tree.deprels[t - 1])
            nattrs.append({})
            eattrs.append({})

    return Arborescence(tuple(nodes), tuple(parent), tuple(labels), tuple(nattrs), tuple(eattrs))


def tree_to_arborescence(tree: UDTree) -> Arborescence:
    """Wrap a UD tree as an arborescence of SYNTACTIC nodes (coindex = token index)."""
    nodes = [ArbNode(ROOT_LABEL, None, 0, NodeKind.ROOT)]
    nodes += [ArbNode(t.form, t.index, t.index, NodeKind.SYNTACTIC) for t in tree.tokens]
    parent = (-1,) + tuple(tree.heads)
    labels = (None,) + tuple(tree.deprels)
    empty = tuple({} for _ in nodes)
    return Arborescence(tuple(nodes), parent, labels, empty, empty)


def arborescence_to_tree(
    arb: Arborescence, tokens: Sequence[Token], default_label: str = "dep"
) -> UDTree:
    """Read a UD tree off arborescence nodes anchored to source tokens.

    The first node anchored at a token decides its head; tokens without a node
    (or whose head chain would loop) attach to ROOT with ``default_label``.
    """
    num_tokens = len(tokens)
    anchor: Dict[int, int] = {}
    for i, node in enumerate(arb.nodes):
        if i == 0 or node.source_index is None:
            continue
        if 1 <= node.source_index <= num_tokens and node.source_index not in anchor:
            anchor[node.source_index] = i
    heads = [0] * num_tokens
    rels = [default_label] * num_tokens
    for t, i in anchor.items():
        p = arb.parent[i]
        ps = arb.nodes[p].source_index if p > 0 else 0
        if p == 0:
            heads[t - 1], rels[t - 1] = 0, arb.edge_labels[i] or default_label
        elif ps is not None and 1 <= ps <= num_tokens and ps != t:
            heads[t - 1], rels[t - 1] = ps, arb.edge_labels[i] or default_label
    _repair_tree(heads, rels, default_label)
    return UDTree(tuple(tokens), tuple(heads), tuple(rels))


def _repair_tree(heads: List[int], rels: List[str], default_label: str) -> None:
    """Break cycles and extra roots in place so the heads form a valid tree."""
    n = len(heads)
    for start in range(1, n + 1):
        seen = []
        node = start
        while node != 0 and node not in seen:
            seen.append(node)
            node = heads[node - 1]
        if node != 0:
            heads[node - 1], rels[node - 1] = 0, default_label
    roots = [i for i, h in enumerate(heads) if h == 0]
    keep = next((i for i in roots if rels[i] == ROOT_EDGE), roots[0])
    for i in roots:
        if i != keep:
            heads[i] = keep + 1
            rels[i] = rels[i] if rels[i] != ROOT_EDGE else default_label


def _attr_names(maps: Iterable[Mapping[str, AttributeValue]]) -> Tuple[str, ...]:
    names = set()
    for m in maps:
        names.update(m)
    return tuple(sorted(names))


def _attr_matrix(maps, names):
    values = np.zeros((len(maps), len(names)), dtype=np.float64)
    mask = np.zeros((len(maps), len(names)), dtype=bool)
    col = {n: j for j, n in enumerate(names)}
    for i, m in enumerate(maps):
        for name, av in m.items():
            if name not in col or not av.applies:
                continue
            values[i, col[name]] = av.value
            mask[i, col[name]] = True
    return values, mask


def preorder(arb: Arborescence) -> List[int]:
    """Canonical pre-order of arborescence node indices, ROOT excluded."""
    kids = arb.children()
    for lst in kids:
        lst.sort(key=lambda i: _child_key(arb.nodes[i], arb.edge_labels[i]))
    order = []
    stack = list(reversed(kids[0]))
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(kids[i]))
    return order


def linearize(
    arb: Arborescence,
    node_attr_names: Optional[Sequence[str]] = None,
    edge_attr_names: Optional[Sequence[str]] = None,
) -> LinearizedGraph:
    """Pre-order linearization.

    Children are visited by ascending source token, then edge label, then
    coindex. Non-applying attribute entries are written as (0, False).
    """
    order = preorder(arb)
    position = {idx: k + 1 for k, idx in enumerate(order)}
    position[0] = 0
    nnames = tuple(node_attr_names) if node_attr_names is not None else _attr_names(arb.node_attrs)
    enames = tuple(edge_attr_names) if edge_attr_names is not None else _attr_names(arb.edge_attrs)
    nvals, nmask = _attr_matrix([arb.node_attrs[i] for i in order], nnames)
    evals, emask = _attr_matrix([arb.edge_attrs[i] for i in order], enames)
    return LinearizedGraph(
        node_tokens=tuple(arb.nodes[i].label for i in order),
        source_indices=tuple(arb.nodes[i].source_index for i in order),
        coindices=tuple(arb.nodes[i].coindex for i in order),
        kinds=tuple(arb.nodes[i].kind for i in order),
        head_positions=tuple(position[arb.parent[i]] for i in order),
        edge_labels=tuple(arb.edge_labels[i] or "" for i in order),
        node_attr_names=nnames,
        node_attr_values=nvals,
        node_attr_mask=nmask,
        edge_attr_names=enames,
        edge_attr_values=evals,
        edge_attr_mask=emask,
    )


def _row_attrs(names, values, mask, i) -> Dict[str, AttributeValue]:
    return {
        name: AttributeValue(float(values[i, j]), True)
        for j, name in enumerate(names)
        if mask[i, j]
    }


def delinearize(lin: LinearizedGraph) -> Arborescence:
    n = len(lin.node_tokens)
    for name in ("source_indices", "coindices", "kinds", "head_positions", "edge_labels"):
        if len(getattr(lin, name)) != n:
            raise MalformedSequenceError(0, f"{name} has length {len(getattr(lin, name))}, expected {n}")
    for k, h in enumerate(lin.head_positions):
        if not 0 <= h <= k:
            raise MalformedSequenceError(k, f"head position {h} does not precede node {k + 1}")
    nodes = [ArbNode(ROOT_LABEL, None, 0, NodeKind.ROOT)]
    nodes += [
        ArbNode(lin.node_tokens[k], lin.source_indices[k], lin.coindices[k], NodeKind(lin.kinds[k]))
        for k in range(n)
    ]
    nattrs = [{}] + [
        _row_attrs(lin.node_attr_names, lin.node_attr_values, lin.node_attr_mask, k) for k in range(n)
    ]
    eattrs = [{}] + [
        _row_attrs(lin.edge_attr_names, lin.edge_attr_values, lin.edge_attr_mask, k) for k in range(n)
    ]
    return Arborescence(
        tuple(nodes),
        (-1,) + tuple(lin.head_positions),
        (None,) + tuple(lin.edge_labels),
        tuple(nattrs),
        tuple(eattrs),
    )


def recover_dag(arb: Arborescence, strict: bool = True) -> UDSGraph:
    """Merge co-indexed SEMANTIC copies back into a DAG.

    The first occurrence of a coindex supplies label and node attributes; every
    copy contributes its incoming edge. With ``strict=False`` (decoder output)
    edges that would close a cycle or duplicate an existing edge are dropped
    instead of raising.
    """
    first: Dict[int, int] = {}
    for i, node in enumerate(arb.nodes):
        if node.kind is not NodeKind.SEMANTIC:
            continue
        if node.coindex in first:
            ref = arb.nodes[first[node.coindex]]
            if (ref.label, ref.source_index) != (node.label, node.source_index):
                raise CoindexConflictError(
                    f"coindex {node.coindex} shared by {ref.label!r}@{ref.source_index} "
                    f"and {node.label!r}@{node.source_index}"
                )
        else:
            first[node.coindex] = i

    def node_id(c):
        return f"n{c}"

    sem_nodes = []
    for c, i in first.items():
        node = arb.nodes[i]
        sem_nodes.append(
            SemanticNode(node_id(c), node.source_index, dict(arb.node_attrs[i]), node.label)
        )

    edges: List[SemanticEdge] = []
    seen_pairs = set()
    children = defaultdict(set)

    def reaches(a, b):
        stack, seen = [a], set()
        while stack:
            x = stack.pop()
            if x == b:
                return True
            if x in seen:
                continue
            seen.add(x)
            stack.extend(children[x])
        return False

    for i, node in enumerate(arb.nodes):
        if node.kind is not NodeKind.SEMANTIC:
            continue
        p = arb.parent[i]
        pnode = arb.nodes[p]
        if pnode.kind is not NodeKind.SEMANTIC:
            continue
        src, dst = pnode.coindex, node.coindex
        if src == dst or (src, dst) in seen_pairs or reaches(dst, src):
            if strict:
                raise CycleError((node_id(src), node_id(dst)))
            continue
        seen_pairs.add((src, dst))
        children[src].add(dst)
        edges.append(
            SemanticEdge(node_id(src), node_id(dst), dict(arb.edge_attrs[i]), arb.edge_labels[i] or DEFAULT_EDGE_LABEL)
        )

    indeg = defaultdict(int)
    for e in edges:
        indeg[e.dst] += 1
    roots = tuple(n.id for n in sem_nodes if indeg[n.id] == 0)
    return UDSGraph(tuple(sem_nodes), tuple(edges), roots)
