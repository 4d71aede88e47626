import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointparse.graph_core import (
    AttributeValue,
    CoindexConflictError,
    CycleError,
    DanglingLinkError,
    GraphError,
    MalformedSequenceError,
    NodeKind,
    SemanticEdge,
    SemanticNode,
    TreeError,
    UDSGraph,
    UDTree,
    arborescence_to_tree,
    clamp_attribute,
    delinearize,
    linearize,
    preorder,
    recover_dag,
    tree_to_arborescence,
    uds_to_arborescence,
)
from jointparse.synthetic import random_dag_instance, random_tree, word

from conftest import isomorphic


def chain_tree(n):
    forms = [f"t{i}" for i in range(1, n + 1)]
    return UDTree.from_lists(forms, [0] + list(range(1, n)), ["root"] + ["dep"] * (n - 1))


def diamond():
    """root -> A, root -> B, A -> C, B -> C over a 4-token sentence."""
    tree = chain_tree(4)
    nodes = [SemanticNode(x, t, {}, f"t{t}") for x, t in (("R", 1), ("A", 2), ("B", 3), ("C", 4))]
    edges = [SemanticEdge("R", "A"), SemanticEdge("R", "B"), SemanticEdge("A", "C"), SemanticEdge("B", "C")]
    return tree, UDSGraph(tuple(nodes), tuple(edges), ("R",))


def round_trip(graph, tree, semantics_only=True):
    return recover_dag(delinearize(linearize(uds_to_arborescence(graph, tree, semantics_only))))


def recursive_preorder(arb):
    kids = arb.children()
    for k in kids:
        k.sort(key=lambda i: (arb.nodes[i].source_index is None, arb.nodes[i].source_index or 0,
                              arb.edge_labels[i] or "", arb.nodes[i].coindex))
    out = []

    def visit(i):
        out.append(i)
        for c in kids[i]:
            visit(c)

    for c in kids[0]:
        visit(c)
    return out


class TestTreeValidation:
    @pytest.mark.parametrize("heads", [[0, 0], [2, 1], [3, 0], [0, 5]])
    def test_invalid_heads(self, heads):
        with pytest.raises(TreeError):
            UDTree.from_lists(["a", "b"], heads, ["x", "y"])

    def test_deprel_count_mismatch(self):
        with pytest.raises(TreeError):
            UDTree.from_lists(["a", "b"], [0, 1], ["root"])

    def test_empty_form(self):
        with pytest.raises(TreeError):
            UDTree.from_lists([""], [0], ["root"])


class TestGraphValidation:
    def test_cycle_names_an_edge(self):
        nodes = (SemanticNode("a", 1), SemanticNode("b", 2))
        g = UDSGraph(nodes, (SemanticEdge("a", "b"), SemanticEdge("b", "a")), ("a",))
        with pytest.raises(CycleError) as info:
            uds_to_arborescence(g, chain_tree(2))
        assert set(info.value.edge) == {"a", "b"}

    def test_dangling_instance_link_names_node(self):
        g = UDSGraph((SemanticNode("p", 7),), (), ("p",))
        with pytest.raises(DanglingLinkError, match="p"):
            uds_to_arborescence(g, chain_tree(3))

    def test_self_loop(self):
        with pytest.raises(GraphError):
            SemanticEdge("a", "a")

    def test_unreachable_node(self):
        nodes = (SemanticNode("a", 1), SemanticNode("b", 2), SemanticNode("c", 3))
        g = UDSGraph(nodes, (SemanticEdge("b", "c"), SemanticEdge("c", "b")), ("a",))
        with pytest.raises(GraphError):
            g.validate(3)

    def test_clamp_warns(self):
        with pytest.warns(UserWarning, match="clamped"):
            assert clamp_attribute(4.2, "factuality") == 3.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert clamp_attribute(-2.5) == -2.5


class TestConversion:
    def test_single_node(self):
        g = UDSGraph((SemanticNode("p", 1, {}, "t1"),), (), ("p",))
        arb = uds_to_arborescence(g, chain_tree(1))
        assert [n.kind for n in arb.nodes] == [NodeKind.ROOT, NodeKind.SEMANTIC]
        assert arb.edge_labels[1] == "root"

    def test_diamond_copies(self):
        tree, g = diamond()
        arb = uds_to_arborescence(g, tree)
        sem = [n for n in arb.nodes if n.kind is NodeKind.SEMANTIC]
        assert len(sem) == 5
        c = [n for n in sem if n.source_index == 4]
        assert len(c) == 2 and c[0].coindex == c[1].coindex
        back = recover_dag(arb)
        assert len(back.nodes) == 4 and len(back.edges) == 4
        assert isomorphic(back, g)

    def test_syntactic_leaves_cover_remaining_tokens(self):
        forms = [word(i) for i in range(6)]
        tree = UDTree.from_lists(forms, [2, 0, 2, 5, 2, 5], ["a", "root", "b", "c", "d", "e"])
        nodes = tuple(SemanticNode(f"n{t}", t, {}, forms[t - 1]) for t in (2, 1, 5))
        g = UDSGraph(nodes, (SemanticEdge("n2", "n1"), SemanticEdge("n2", "n5")), ("n2",))
        arb = uds_to_arborescence(g, tree, semantics_only=False)
        syn = [i for i, n in enumerate(arb.nodes) if n.kind is NodeKind.SYNTACTIC]
        assert sorted(arb.nodes[i].source_index for i in syn) == [3, 4, 6]
        assert all(arb.nodes[arb.parent[i]].kind is NodeKind.SEMANTIC for i in syn)
        # token 4's nearest labelled ancestor is token 5
        leaf4 = next(i for i in syn if arb.nodes[i].source_index == 4)
        assert arb.nodes[arb.parent[leaf4]].source_index == 5
        assert arb.edge_labels[leaf4] == "c"

    def test_conflicting_coindex(self):
        tree, g = diamond()
        arb = uds_to_arborescence(g, tree)
        i = next(k for k, n in enumerate(arb.nodes) if n.source_index == 4)
        nodes = list(arb.nodes)
        nodes[i] = type(nodes[i])("other", nodes[i].source_index, nodes[i].coindex, nodes[i].kind)
        bad = type(arb)(tuple(nodes), arb.parent, arb.edge_labels, arb.node_attrs, arb.edge_attrs)
        with pytest.raises(CoindexConflictError):
            recover_dag(bad)

    def test_tree_wrapping_inverts(self):
        tree = random_tree(random.Random(4), [word(i) for i in range(7)])
        assert arborescence_to_tree(tree_to_arborescence(tree), tree.tokens) == tree


class TestLinearize:
    def test_single_node(self):
        g = UDSGraph((SemanticNode("p", 1, {}, "t1"),), (), ("p",))
        lin = linearize(uds_to_arborescence(g, chain_tree(1)))
        assert len(lin) == 1 and lin.head_positions == (0,)

    def test_chain(self):
        tree = chain_tree(4)
        nodes = tuple(SemanticNode(f"n{t}", t, {}, f"t{t}") for t in range(1, 5))
        edges = tuple(SemanticEdge(f"n{t}", f"n{t + 1}") for t in range(1, 4))
        lin = linearize(uds_to_arborescence(UDSGraph(nodes, edges, ("n1",)), tree))
        assert lin.head_positions == (0, 1, 2, 3)

    def test_balanced_tree_matches_recursive_preorder(self):
        tree = chain_tree(7)
        nodes = tuple(SemanticNode(f"n{t}", t, {}, f"t{t}") for t in range(1, 8))
        edges = tuple(SemanticEdge(f"n{p}", f"n{c}") for p, c in ((1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7)))
        arb = uds_to_arborescence(UDSGraph(nodes, edges, ("n1",)), tree)
        assert preorder(arb) == recursive_preorder(arb)
        assert linearize(arb).source_indices == (1, 2, 4, 5, 3, 6, 7)

    def test_precedence_violation(self):
        tree, g = diamond()
        lin = linearize(uds_to_arborescence(g, tree))
        bad = type(lin)(**{**lin.__dict__, "head_positions": (0, 2, 1) + lin.head_positions[3:]})
        with pytest.raises(MalformedSequenceError) as info:
            delinearize(bad)
        assert info.value.position == 1

    def test_non_applying_attributes_are_dropped(self):
        attrs = {"f": AttributeValue(1.5), "g": AttributeValue(2.0, applies=False)}
        g = UDSGraph((SemanticNode("p", 1, attrs, "t1"),), (), ("p",))
        back = round_trip(g, chain_tree(1))
        assert back.nodes[0].attributes == {"f": AttributeValue(1.5)}


@st.composite
def dag_instances(draw):
    seed = draw(st.integers(0, 10 ** 6))
    return random_dag_instance(random.Random(seed), max_nodes=12, reentrancy=0.2)


class TestRoundTripProperties:
    @given(dag_instances(), st.booleans())
    @settings(max_examples=150, deadline=None)
    def test_round_trip_isomorphic(self, inst, semantics_only):
        tree, g = inst
        assert isomorphic(round_trip(g, tree, semantics_only), g)

    @given(dag_instances())
    @settings(max_examples=100, deadline=None)
    def test_linearize_delinearize_exact(self, inst):
        tree, g = inst
        lin = linearize(uds_to_arborescence(g, tree, semantics_only=False))
        # the attribute column schema is not part of an arborescence
        assert linearize(delinearize(lin), lin.node_attr_names, lin.edge_attr_names) == lin

    @given(dag_instances())
    @settings(max_examples=100, deadline=None)
    def test_node_count_law(self, inst):
        tree, g = inst
        arb = uds_to_arborescence(g, tree)
        extra = sum(max(d - 1, 0) for d in g.in_degree().values())
        assert arb.semantic_count() == len(g.nodes) + extra

    @given(dag_instances())
    @settings(max_examples=100, deadline=None)
    def test_token_coverage(self, inst):
        tree, g = inst
        arb = uds_to_arborescence(g, tree, semantics_only=False)
        labelled = {n.head_token for n in g.nodes}
        syn = [n.source_index for n in arb.nodes if n.kind is NodeKind.SYNTACTIC]
        assert sorted(syn) == sorted(set(range(1, len(tree) + 1)) - labelled)

    @given(dag_instances())
    @settings(max_examples=100, deadline=None)
    def test_parents_precede_children(self, inst):
        tree, g = inst
        lin = linearize(uds_to_arborescence(g, tree, semantics_only=False))
        assert all(h <= k for k, h in enumerate(lin.head_positions))

    @given(dag_instances(), st.randoms(use_true_random=False))
    @settings(max_examples=60, deadline=None)
    def test_edge_listing_order_irrelevant(self, inst, rnd):
        tree, g = inst
        edges = list(g.edges)
        rnd.shuffle(edges)
        shuffled = UDSGraph(g.nodes, tuple(edges), g.roots)
        assert linearize(uds_to_arborescence(shuffled, tree)) == linearize(uds_to_arborescence(g, tree))


def test_linearized_attr_matrices_are_float64():
    tree, g = random_dag_instance(random.Random(0))
    lin = linearize(uds_to_arborescence(g, tree))
    assert lin.node_attr_values.dtype == np.float64 and lin.node_attr_mask.dtype == bool
