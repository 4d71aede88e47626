"""Independent reference implementations used as test oracles.

Each one is written for clarity rather than speed and shares no code with
the package: brute-force tree enumeration, exhaustive node-mapping search,
a dense threshold sweep, and per-op gradient-check cases.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from jointparse import autograd as ag
from jointparse.autograd import Tensor


# --------------------------------------------------------------------- trees


def is_tree(heads: Sequence[int]) -> bool:
    """Single ROOT child, every token reaches ROOT."""
    if sum(1 for h in heads if h == 0) != 1:
        return False
    for start in range(1, len(heads) + 1):
        seen, v = set(), start
        while v != 0:
            if v in seen:
                return False
            seen.add(v)
            v = heads[v - 1]
    return True


def brute_force_tree(scores: np.ndarray) -> Tuple[float, List[int]]:
    T = scores.shape[0]
    best, best_heads = -np.inf, None
    for heads in itertools.product(range(T + 1), repeat=T):
        if any(h == i + 1 for i, h in enumerate(heads)) or not is_tree(heads):
            continue
        s = float(sum(scores[i, h] for i, h in enumerate(heads)))
        if s > best:
            best, best_heads = s, list(heads)
    return best, best_heads


# --------------------------------------------------------------------- graph matching


def exhaustive_match(pred, gold) -> int:
    """Max matched triples over every injection of pred nodes into gold nodes.

    Slots ``>= m`` stand for "unmatched"; leaving a node unmatched never
    scores more than matching it, so these maps cover the optimum.
    """
    n, m = len(pred.labels), len(gold.labels)
    gold_edges = set(gold.edges)
    pred_edges = set(pred.edges)
    best = 0
    for perm in itertools.permutations(range(max(n, m)), n):
        f = [g if g < m else None for g in perm]
        score = 0
        for p, g in enumerate(f):
            if g is None:
                continue
            score += pred.labels[p] == gold.labels[g]
            score += bool(pred.top[p] and gold.top[g])
        for s, d, lab in pred_edges:
            if f[s] is not None and f[d] is not None and (f[s], f[d], lab) in gold_edges:
                score += 1
        best = max(best, score)
    return best


# --------------------------------------------------------------------- thresholds


def f1_at(pred, gold, theta) -> float:
    p = np.asarray(pred) > theta
    g = np.asarray(gold) > 0
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def dense_sweep_f1(pred, gold, steps: int = 20001) -> float:
    """Best F1 over a dense grid spanning the prediction range, plus the exact extremes."""
    lo, hi = float(np.min(pred)), float(np.max(pred))
    grid = np.concatenate([np.linspace(lo - 1, hi + 1, steps), np.asarray(pred, dtype=float)])
    grid = np.concatenate([grid, np.nextafter(grid, np.inf), np.nextafter(grid, -np.inf)])
    p = np.asarray(pred, dtype=float)[None, :] > grid[:, None]
    g = (np.asarray(gold) > 0)[None, :]
    tp = np.sum(p & g, axis=1)
    wrong = np.sum(p != g, axis=1)
    f1 = np.where(tp == 0, 0.0, 2 * tp / np.maximum(2 * tp + wrong, 1))
    return float(np.max(f1))


# --------------------------------------------------------------------- gradient cases


def _param(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng, shape):
    x = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def op_cases() -> Dict[str, Callable[[np.random.Generator], Tuple[Callable[[], Tensor], List[Tensor]]]]:
    """Name -> builder returning (scalar function, parameters) for every differentiable op."""

    def scalarize(build):
        def make(rng):
            fn, params = build(rng)
            out = fn().data
            finite = np.nonzero(np.isfinite(out))  # masked log-probabilities are -inf
            r = rng.normal(size=len(finite[0]))
            return (lambda: ag.tensor_sum(ag.multiply(ag.getitem(fn(), finite), r))), params
        return make

    cases = {}

    def case(name):
        def deco(build):
            cases[name] = scalarize(build)
            return build
        return deco

    @case("add_broadcast")
    def _(rng):
        a, b = _param(rng, (3, 4)), _param(rng, (4,))
        return (lambda: ag.add(a, b)), [a, b]

    @case("neg")
    def _(rng):
        a = _param(rng, (2, 3))
        return (lambda: ag.neg(a)), [a]

    @case("multiply_broadcast")
    def _(rng):
        a, b = _param(rng, (3, 1)), _param(rng, (3, 4))
        return (lambda: ag.multiply(a, b)), [a, b]

    @case("log")
    def _(rng):
        a = _param(rng, (3, 2), 0.5, 2.0)
        return (lambda: ag.log(a)), [a]

    @case("exp")
    def _(rng):
        a = _param(rng, (3, 2))
        return (lambda: ag.exp(a)), [a]

    @case("relu")
    def _(rng):
        a = _away_from_zero(rng, (4, 3))
        return (lambda: ag.relu(a)), [a]

    @case("sigmoid")
    def _(rng):
        a = _param(rng, (4,), -4, 4)
        return (lambda: ag.sigmoid(a)), [a]

    @case("matmul")
    def _(rng):
        a, b = _param(rng, (3, 4)), _param(rng, (4, 2))
        return (lambda: ag.matmul(a, b)), [a, b]

    @case("matmul_batched")
    def _(rng):
        a, b = _param(rng, (2, 3, 4)), _param(rng, (4, 5))
        return (lambda: ag.matmul(a, b)), [a, b]

    @case("reshape")
    def _(rng):
        a = _param(rng, (2, 6))
        return (lambda: ag.reshape(a, (3, 4))), [a]

    @case("transpose")
    def _(rng):
        a = _param(rng, (2, 3, 4))
        return (lambda: ag.transpose(a, (2, 0, 1))), [a]

    @case("concat")
    def _(rng):
        a, b = _param(rng, (2, 3)), _param(rng, (2, 2))
        return (lambda: ag.concat([a, b], axis=1)), [a, b]

    @case("slice")
    def _(rng):
        a = _param(rng, (5, 3))
        idx = np.array([4, 0, 4, 2])
        return (lambda: ag.getitem(a, (idx, slice(1, 3)))), [a]

    @case("embedding")
    def _(rng):
        w = _param(rng, (6, 3))
        ids = np.array([1, 5, 1, 0])
        return (lambda: ag.embedding(w, ids)), [w]

    @case("sum_axis")
    def _(rng):
        a = _param(rng, (3, 4))
        return (lambda: ag.tensor_sum(a, axis=0, keepdims=True)), [a]

    @case("mean_axis")
    def _(rng):
        a = _param(rng, (3, 4))
        return (lambda: ag.mean(a, axis=1)), [a]

    @case("softmax_masked")
    def _(rng):
        a = _param(rng, (3, 5), -2, 2)
        mask = np.zeros((3, 5))
        mask[0, 1] = mask[2, 4] = -np.inf
        return (lambda: ag.softmax(a, mask)), [a]

    @case("log_softmax_masked")
    def _(rng):
        a = _param(rng, (3, 5), -2, 2)
        mask = np.zeros((3, 5))
        mask[1, 0] = -np.inf
        return (lambda: ag.log_softmax(a, mask)), [a]

    @case("logsumexp")
    def _(rng):
        a = _param(rng, (3, 4), -2, 2)
        return (lambda: ag.logsumexp(a, axis=-1)), [a]

    @case("scalenorm")
    def _(rng):
        x = _param(rng, (3, 4))
        g = Tensor(np.array(1.7), requires_grad=True)
        return (lambda: ag.scalenorm(x, g)), [x, g]

    def loss_case(name, build):
        cases[name] = build

    def ce(rng):
        a = _param(rng, (4, 5), -2, 2)
        mask = np.zeros((4, 5))
        mask[0, 3] = -np.inf
        return (lambda: ag.cross_entropy(a, np.array([1, 0, 4, 2]), mask)), [a]

    def mse_case(rng):
        a = _param(rng, (4, 3))
        target = rng.normal(size=(4, 3))
        mask = rng.random((4, 3)) < 0.6
        mask[0, 0] = True
        return (lambda: ag.mse(a, target, mask)), [a]

    def bce(rng):
        a = _param(rng, (4, 3), -3, 3)
        target = (rng.random((4, 3)) < 0.5).astype(float)
        return (lambda: ag.binary_cross_entropy(a, target)), [a]

    loss_case("cross_entropy", ce)
    loss_case("mse_masked", mse_case)
    loss_case("binary_cross_entropy", bce)
    return cases


def finite_difference(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6) -> List[np.ndarray]:
    """Plain central differences, written independently of the package helper."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p.data[i]
            p.data[i] = old + h
            up = float(fn().data)
            p.data[i] = old - h
            down = float(fn().data)
            p.data[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def analytic(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> List[np.ndarray]:
    for p in params:
        p.zero_grad()
    fn().backward()
    return [p.grad.copy() for p in params]


def fusion_loop(s: np.ndarray, probs: np.ndarray, arc_head: np.ndarray, rel_head: np.ndarray,
                w: np.ndarray) -> np.ndarray:
    """Row-by-row soft-head fusion."""
    T = s.shape[0]
    out = np.zeros((T, w.shape[1]))
    for i in range(T):
        h = np.zeros(arc_head.shape[1])
        t = np.zeros(rel_head.shape[1])
        for j in range(T + 1):
            h += probs[i, j] * arc_head[j]
            t += probs[i, j] * rel_head[j]
        out[i] = np.concatenate([s[i], h, t]) @ w
    return out
