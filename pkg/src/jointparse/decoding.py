"""Structure recovery at test time.

Chu-Liu-Edmonds for syntactic trees, greedy head selection, and the
autoregressive semantic graph generator built on a trained model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence

import numpy as np

from .graph_core import (
    Arborescence,
    UDSGraph,
    UDTree,
)

if TYPE_CHECKING:  # pragma: no cover
    from .model.parser import JointParser

NEG_INF = -np.inf


# --------------------------------------------------------------------- trees


def _find_cycle(heads: np.ndarray) -> Optional[List[int]]:
    n = len(heads)
    color = np.zeros(n, dtype=np.int8)  # 0 new, 1 on current path, 2 done
    color[0] = 2
    for start in range(1, n):
        if color[start]:
            continue
        path = []
        v = start
        while v != -1 and color[v] == 0:
            color[v] = 1
            path.append(v)
            v = heads[v]
        if v != -1 and color[v] == 1:
            cycle = path[path.index(v):]
            for u in path:
                color[u] = 2
            return cycle
        for u in path:
            color[u] = 2
    return None


def _mst(S: np.ndarray) -> np.ndarray:
    """Maximum spanning arborescence rooted at 0 of square ``S[dep, head]``."""
    n = S.shape[0]
    heads = np.full(n, -1, dtype=np.int64)
    for d in range(1, n):
        heads[d] = int(np.argmax(S[d]))
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    rest = [v for v in range(n) if not in_cycle[v]]
    idx = {v: i for i, v in enumerate(rest)}
    m = len(rest)
    cyc = np.array(cycle)
    S2 = np.full((m + 1, m + 1), NEG_INF)
    rest_arr = np.array(rest)
    S2[:m, :m] = S[np.ix_(rest_arr, rest_arr)]

    # edges leaving the cycle: best cycle head for each outside dependent
    out_block = S[np.ix_(rest_arr, cyc)]
    leave = cyc[np.argmax(out_block, axis=1)]
    S2[:m, m] = out_block.max(axis=1)

    # edges entering the cycle: best cycle dependent to break for each outside head
    own = S[cyc, heads[cyc]]
    with np.errstate(invalid="ignore"):
        in_block = S[np.ix_(cyc, rest_arr)] - own[:, None]
    enter = cyc[np.argmax(in_block, axis=0)]
    S2[m, :m] = in_block.max(axis=0)

    np.fill_diagonal(S2, NEG_INF)
    S2[0, :] = NEG_INF
    h2 = _mst(S2)

    result = heads.copy()
    for v in rest:
        if v == 0:
            continue
        h = h2[idx[v]]
        result[v] = leave[idx[v]] if h == m else rest[h]
    u = rest[h2[m]]
    result[enter[idx[u]]] = u
    return result


def tree_score(scores: np.ndarray, heads: Sequence[int]) -> float:
    return float(sum(scores[i, h] for i, h in enumerate(heads)))


def chu_liu_edmonds(scores) -> List[int]:
    """Best single-root dependency tree for a ``T x (T+1)`` score matrix.

    Column 0 is ROOT. Self-attachment is excluded. When the unconstrained
    optimum has several root children, every token is tried as the sole root
    child and the best tree kept (ties favour the smaller index).
    """
    scores = np.asarray(scores, dtype=np.float64)
    T = scores.shape[0]
    if scores.shape != (T, T + 1) or T < 1:
        raise ValueError(f"expected a T x (T+1) score matrix, got {scores.shape}")
    if T == 1:
        return [0]
    S = np.full((T + 1, T + 1), NEG_INF)
    S[1:, :] = scores
    np.fill_diagonal(S, NEG_INF)

    heads = _mst(S)
    if int(np.sum(heads[1:] == 0)) == 1:
        return [int(h) for h in heads[1:]]

    best, best_score = None, NEG_INF
    for r in range(1, T + 1):
        Sr = S.copy()
        keep = Sr[r, 0]
        Sr[1:, 0] = NEG_INF
        Sr[r, 0] = keep
        h = _mst(Sr)
        s = tree_score(scores, h[1:])
        if s > best_score:
            best, best_score = h, s
    return [int(h) for h in best[1:]]


def precedence_mask(n: int) -> np.ndarray:
    """Additive ``n x (n+1)`` mask letting node i (1-based) attach only to positions < i."""
    mask = np.full((n, n + 1), NEG_INF)
    for i in range(n):
        mask[i, : i + 1] = 0.0
    return mask


def greedy_heads(scores, mask=None) -> List[int]:
    """Row-wise argmax over a ``T x (T+1)`` matrix (self-attachment excluded)."""
    scores = np.array(scores, dtype=np.float64)
    T = scores.shape[0]
    scores[np.arange(T), np.arange(1, T + 1)] = NEG_INF
    if mask is not None:
        scores = scores + mask
    return [int(np.argmax(row)) for row in scores]


# --------------------------------------------------------------------- graphs


@dataclass
class Parse:
    """Decoder output for one sentence."""

    graph: UDSGraph
    tree: Optional[UDTree]
    arborescence: Optional[Arborescence] = None
    linearized: Optional[object] = None
    warnings: List[str] = field(default_factory=list)


def generate_graph(model: "JointParser", tree_or_tokens, mode=None, max_length: Optional[int] = None) -> Parse:
    """Greedy autoregressive decoding of one sentence; see ``JointParser.generate``."""
    return model.generate(tree_or_tokens, mode=mode, max_length=max_length)


def oracle_decode(model: "JointParser", tree: UDTree, graph: UDSGraph, semantics_only: Optional[bool] = None):
    """Teacher-force the decoder along the gold linearization; return attribute predictions."""
    return model.oracle_attributes(tree, graph, semantics_only=semantics_only)
