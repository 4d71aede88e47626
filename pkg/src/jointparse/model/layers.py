"""Transformer building blocks on top of the autograd engine."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..autograd import (
    Tensor,
    concat,
    dropout,
    init_scaled,
    matmul,
    relu,
    scalenorm,
    softmax,
    zeros,
)

NEG_INF = -np.inf


class Module:
    """Parameter container.

    Tensor attributes are parameters; Module attributes and lists of Modules
    are children. Names follow attribute paths (``encoder.layers.0.ffn.w1``).
    """

    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for child in value:
                    if isinstance(child, Module):
                        yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng, bias: bool = True, k: float = 1.0):
        self.w = init_scaled((d_in, d_out), k, rng)
        if bias:
            self.b = zeros((d_out,))

    def __call__(self, x) -> Tensor:
        y = matmul(x, self.w)
        return y + self.b if hasattr(self, "b") else y


class MLP(Module):
    """One hidden ReLU layer; with ``d_out`` set, a linear read-out follows."""

    def __init__(self, d_in: int, d_hidden: int, rng, d_out: Optional[int] = None, rate: float = 0.0):
        self.hidden = Linear(d_in, d_hidden, rng)
        if d_out is not None:
            self.out = Linear(d_hidden, d_out, rng)
        self._rate = rate

    def __call__(self, x, rng=None) -> Tensor:
        h = dropout(relu(self.hidden(x)), self._rate, rng, self.training)
        return self.out(h) if hasattr(self, "out") else h


class ScaleNorm(Module):
    def __init__(self, d: int):
        self.g = Tensor(np.array(math.sqrt(d)), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return scalenorm(x, self.g)


def sinusoid(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(n: int, m: Optional[int] = None, offset: int = 0) -> np.ndarray:
    """Additive mask letting query row i see key columns ``<= i + offset``."""
    m = n if m is None else m
    rows = np.arange(n)[:, None] + offset
    cols = np.arange(m)[None, :]
    return np.where(cols <= rows, 0.0, NEG_INF)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng, k: float = 1.0):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self._heads = heads
        self.wq = init_scaled((d, d), k, rng)
        self.wk = init_scaled((d, d), k, rng)
        self.wv = init_scaled((d, d), k, rng)
        self.wo = init_scaled((d, d), k, rng)

    def _split(self, x: Tensor) -> Tensor:
        n, d = x.shape
        return x.reshape(n, self._heads, d // self._heads).transpose(1, 0, 2)

    def project_kv(self, kv) -> Tuple[Tensor, Tensor]:
        """Per-head keys and values, shape ``(H, m, d/H)``."""
        return self._split(matmul(kv, self.wk)), self._split(matmul(kv, self.wv))

    def attend(self, q_in, keys: Tensor, values: Tensor, mask=None, rng=None, rate=0.0) -> Tensor:
        n, d = q_in.shape
        q = self._split(matmul(q_in, self.wq))
        scores = matmul(q, keys.transpose(0, 2, 1)) * (1.0 / math.sqrt(d // self._heads))
        weights = softmax(scores, mask)
        weights = dropout(weights, rate, rng, self.training)
        out = matmul(weights, values).transpose(1, 0, 2).reshape(n, d)
        return matmul(out, self.wo)

    def __call__(self, q_in, kv, mask=None, rng=None, rate=0.0) -> Tensor:
        k, v = self.project_kv(kv)
        return self.attend(q_in, k, v, mask, rng, rate)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng):
        self.w1 = Linear(d, d_ff, rng)
        self.w2 = Linear(d_ff, d, rng)

    def __call__(self, x, rng=None, rate=0.0) -> Tensor:
        return self.w2(dropout(relu(self.w1(x)), rate, rng, self.training))


class EncoderLayer(Module):
    def __init__(self, d: int, heads: int, d_ff: int, rng, k: float, rate: float):
        self.attn_norm = ScaleNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, k)
        self.ffn_norm = ScaleNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)
        self._rate = rate

    def __call__(self, x, rng=None) -> Tensor:
        r = self._rate if self.training else 0.0
        h = self.attn_norm(x)
        x = x + dropout(self.attn(h, h, None, rng, r), r, rng, self.training)
        return x + dropout(self.ffn(self.ffn_norm(x), rng, r), r, rng, self.training)


class LayerCache:
    """Keys and values seen so far by one decoder layer."""

    def __init__(self, src_kv: Tuple[Tensor, Tensor]):
        self.src_kv = src_kv
        self.keys: Optional[Tensor] = None
        self.values: Optional[Tensor] = None

    def extend(self, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
        if self.keys is None:
            self.keys, self.values = k, v
        else:
            self.keys = concat([self.keys, k], axis=1)
            self.values = concat([self.values, v], axis=1)
        return self.keys, self.values


class DecoderLayer(Module):
    def __init__(self, d: int, heads: int, d_ff: int, rng, k: float, rate: float):
        self.self_norm = ScaleNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng, k)
        self.src_norm = ScaleNorm(d)
        self.src_attn = MultiHeadAttention(d, heads, rng, k)
        self.ffn_norm = ScaleNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)
        self._rate = rate

    def _tail(self, x, enc_kv, rng, r) -> Tensor:
        x = x + dropout(self.src_attn.attend(self.src_norm(x), *enc_kv, None, rng, r), r, rng, self.training)
        return x + dropout(self.ffn(self.ffn_norm(x), rng, r), r, rng, self.training)

    def __call__(self, x, enc, rng=None) -> Tensor:
        r = self._rate if self.training else 0.0
        h = self.self_norm(x)
        x = x + dropout(self.self_attn(h, h, causal_mask(x.shape[0]), rng, r), r, rng, self.training)
        return self._tail(x, self.src_attn.project_kv(enc), rng, r)

    def start(self, enc) -> LayerCache:
        return LayerCache(self.src_attn.project_kv(enc))

    def step(self, x, cache: LayerCache) -> Tensor:
        """Process new rows ``x`` given everything cached; inference only (no dropout)."""
        h = self.self_norm(x)
        past = 0 if cache.keys is None else cache.keys.shape[1]
        k, v = cache.extend(*self.self_attn.project_kv(h))
        mask = causal_mask(x.shape[0], past + x.shape[0], offset=past)
        x = x + self.self_attn.attend(h, k, v, mask)
        return self._tail(x, cache.src_kv, None, 0.0)


def named_parameter_dict(module: Module) -> Dict[str, Tensor]:
    return dict(module.named_parameters())
