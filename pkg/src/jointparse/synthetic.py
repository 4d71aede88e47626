"""Seeded toy corpora with UD trees, re-entrant UDS graphs and attributes.

Every label and attribute is a fixed function of word identity, so a model
can fit the corpus exactly. Used for smoke runs, tests and demos.
"""

from __future__ import annotations

import random
from typing import Dict, List, Optional, Set, Tuple

from .graph_core import AttributeValue, SemanticEdge, SemanticNode, UDSGraph, UDTree
from .io import Corpus, CorpusEntry

UPOS = ("NOUN", "VERB", "ADJ", "ADP", "PRON")
DEPRELS = ("nsubj", "obj", "amod", "case", "obl", "advmod")
NODE_ATTRIBUTES = ("factuality", "genericity")
EDGE_ATTRIBUTES = ("volition",)


def word(i: int) -> str:
    return f"w{i:02d}"


def _word_id(form: str) -> int:
    return int(form[1:])


def _node_attrs(wid: int) -> Dict[str, AttributeValue]:
    attrs = {"factuality": AttributeValue(round((wid * 7) % 13 / 2.0 - 3.0, 2))}
    # genericity only applies to odd words
    attrs["genericity"] = AttributeValue(round((wid * 5) % 11 / 2.0 - 2.5, 2), applies=bool(wid % 2))
    return attrs


def _edge_attrs(src: int, dst: int) -> Dict[str, AttributeValue]:
    return {"volition": AttributeValue(round(((src + 3 * dst) % 9) * 0.75 - 3.0, 2))}


def random_tree(rng: random.Random, forms: List[str], upos: Optional[List[str]] = None) -> UDTree:
    """Uniformly shuffled attachment order; deprels follow the dependent's word."""
    n = len(forms)
    order = list(range(1, n + 1))
    rng.shuffle(order)
    heads = [0] * n
    for k, t in enumerate(order[1:], start=1):
        heads[t - 1] = order[rng.randrange(k)]
    rels = []
    for t in range(1, n + 1):
        if heads[t - 1] == 0:
            rels.append("root")
        else:
            rels.append(DEPRELS[_word_id(forms[t - 1]) % len(DEPRELS)] if forms[t - 1][0] == "w" else "dep")
    tags = upos or [UPOS[_word_id(f) % len(UPOS)] if f[0] == "w" else "X" for f in forms]
    return UDTree.from_lists(forms, heads, rels, tags)


def _reaches(children: Dict[str, Set[str]], a: str, b: str) -> bool:
    stack, seen = [a], set()
    while stack:
        x = stack.pop()
        if x == b:
            return True
        if x not in seen:
            seen.add(x)
            stack.extend(children[x])
    return False


def graph_over_tree(
    rng: random.Random, tree: UDTree, keep: List[int], reentrancy: float, with_attributes: bool = True
) -> UDSGraph:
    """Project the UD tree onto the kept tokens, then add extra parents for re-entrancy."""
    forms = tree.forms
    ids = {t: f"s{t}" for t in keep}
    kept = set(keep)
    children: Dict[str, Set[str]] = {ids[t]: set() for t in keep}
    edges: List[SemanticEdge] = []

    def add(src_t: int, dst_t: int):
        s, d = ids[src_t], ids[dst_t]
        sw, dw = _word_id(forms[src_t - 1]), _word_id(forms[dst_t - 1])
        label = "arg" if dw % 3 else "mod"
        attrs = _edge_attrs(sw, dw) if with_attributes else {}
        edges.append(SemanticEdge(s, d, attrs, label))
        children[s].add(d)

    for t in keep:
        h = tree.heads[t - 1]
        while h and h not in kept:
            h = tree.heads[h - 1]
        if h:
            add(h, t)
    if len(keep) > 2:
        for t in keep:
            if rng.random() >= reentrancy:
                continue
            candidates = [u for u in keep if u != t and ids[t] not in children[ids[u]]
                          and not _reaches(children, ids[t], ids[u])]
            if candidates:
                add(rng.choice(candidates), t)

    nodes = tuple(
        SemanticNode(ids[t], t, _node_attrs(_word_id(forms[t - 1])) if with_attributes else {}, forms[t - 1])
        for t in keep
    )
    indeg = {n.id: 0 for n in nodes}
    for e in edges:
        indeg[e.dst] += 1
    roots = tuple(n.id for n in nodes if indeg[n.id] == 0)
    return UDSGraph(nodes, tuple(edges), roots)


def make_corpus(
    n_sentences: int = 32,
    vocab_size: int = 50,
    seed: int = 0,
    min_len: int = 4,
    max_len: int = 8,
    reentrancy: float = 0.2,
) -> Corpus:
    """Toy corpus; a token gets a semantic node unless its word id is a multiple of 4."""
    rng = random.Random(seed)
    entries = []
    for k in range(n_sentences):
        n = rng.randint(min_len, max_len)
        forms = [word(rng.randrange(vocab_size)) for _ in range(n)]
        tree = random_tree(rng, forms)
        keep = [t for t in range(1, n + 1) if _word_id(forms[t - 1]) % 4] or [1]
        graph = graph_over_tree(rng, tree, keep, reentrancy)
        entries.append(CorpusEntry(f"toy-{k:03d}", tree, graph))
    return Corpus(entries)


def random_dag_instance(
    rng: random.Random, max_nodes: int = 12, reentrancy: float = 0.2, vocab_size: int = 50
) -> Tuple[UDTree, UDSGraph]:
    """Random sentence with a random semantic DAG of at most ``max_nodes`` nodes.

    Node heads are arbitrary tokens (several nodes may share one), and edges
    follow a random topological order so the result is always acyclic.
    """
    n_tokens = rng.randint(1, max_nodes + 2)
    forms = [word(rng.randrange(vocab_size)) for _ in range(n_tokens)]
    tree = random_tree(rng, forms)
    n_nodes = rng.randint(0, max_nodes)
    order = list(range(n_nodes))
    rng.shuffle(order)
    nodes = []
    for i in range(n_nodes):
        t = rng.randint(1, n_tokens)
        attrs = {}
        if rng.random() < 0.7:
            attrs["factuality"] = AttributeValue(round(rng.uniform(-3, 3), 3), applies=rng.random() < 0.8)
        nodes.append(SemanticNode(f"v{i}", t, attrs, forms[t - 1]))
    rank = {i: r for r, i in enumerate(order)}
    edges = []
    pairs = set()
    for i in range(n_nodes):
        earlier = [j for j in range(n_nodes) if rank[j] < rank[i]]
        if not earlier or rng.random() < 0.2:
            continue  # another root
        parents = [rng.choice(earlier)]
        if rng.random() < reentrancy and len(earlier) > 1:
            parents.append(rng.choice([j for j in earlier if j != parents[0]]))
        for p in parents:
            if (p, i) in pairs:
                continue
            pairs.add((p, i))
            attrs = {"volition": AttributeValue(round(rng.uniform(-3, 3), 3))} if rng.random() < 0.5 else {}
            edges.append(SemanticEdge(f"v{p}", f"v{i}", attrs, rng.choice(("arg", "mod", "arg"))))
    indeg = {f"v{i}": 0 for i in range(n_nodes)}
    for e in edges:
        indeg[e.dst] += 1
    roots = tuple(k for k, d in indeg.items() if d == 0)
    return tree, UDSGraph(tuple(nodes), tuple(edges), roots)
