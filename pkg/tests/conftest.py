import random
from importlib import resources
from pathlib import Path

import networkx as nx
import pytest

from jointparse.io import build_vocab, read_corpus
from jointparse.metrics import Triples
from jointparse.model import JointParser, Mode, ModelConfig
from jointparse.synthetic import make_corpus

DATA = Path(resources.files("jointparse") / "data")


def tiny_config(mode=Mode.EN, **kw) -> ModelConfig:
    base = dict(layers=2, heads=2, d_s=16, d_ff=24, d_h=8, d_t=6, d_edge=5, mode=mode, warmup=10)
    base.update(kw)
    return ModelConfig(**base)


def random_triples(rng: random.Random, max_nodes=6) -> Triples:
    """Small random graph with few distinct labels, so that matching is ambiguous."""
    n = rng.randint(1, max_nodes)
    labels = tuple(rng.choice("abc") for _ in range(n))
    top = tuple(rng.random() < 0.3 for _ in range(n))
    edges = set()
    for _ in range(rng.randint(0, 2 * n)):
        s, d = rng.randrange(n), rng.randrange(n)
        if s != d:
            edges.add((s, d, rng.choice("xy")))
    return Triples(labels, top, tuple(sorted(edges)))


def graph_to_nx(graph) -> nx.DiGraph:
    """Label-and-attribute view of a UDS graph, independent of node ids."""
    g = nx.DiGraph()
    for n in graph.nodes:
        attrs = tuple(sorted((k, v.value) for k, v in n.attributes.items() if v.applies))
        g.add_node(n.id, key=(n.head_token, attrs))
    for e in graph.edges:
        attrs = tuple(sorted((k, v.value) for k, v in e.attributes.items() if v.applies))
        g.add_edge(e.src, e.dst, key=(e.label, attrs))
    return g


def isomorphic(a, b) -> bool:
    return nx.is_isomorphic(
        graph_to_nx(a), graph_to_nx(b),
        node_match=lambda x, y: x["key"] == y["key"],
        edge_match=lambda x, y: x["key"] == y["key"],
    )


@pytest.fixture(scope="session")
def toy_corpus():
    return make_corpus(8, vocab_size=20, seed=3, max_len=6)


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus):
    return build_vocab(toy_corpus)


@pytest.fixture(scope="session")
def sample_corpus():
    return read_corpus(DATA / "sample.jsonl")


@pytest.fixture
def make_model(toy_vocab):
    def make(mode=Mode.EN, seed=0, **kw):
        return JointParser(tiny_config(mode, **kw), toy_vocab, seed)
    return make


_ACCEPTANCE: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
