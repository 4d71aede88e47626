"""Checkpoint save/load and component transfer between models."""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple, Union

import numpy as np

from ..autograd.serialize import dumps, loads
from ..io import Vocabulary, atomic_write
from .config import ModelConfig
from .parser import JointParser

COMPONENT_PREFIXES = {
    "encoder": ("encoder.",),
    "embeddings": ("encoder.embed.",),
    "syntactic_biaffine": ("biaffine.",),
}
COMPONENT_ALIASES = {"biaffine": "syntactic_biaffine"}

# parameters indexed by a vocabulary table, with the axis that table spans
_VOCAB_AXES = {
    "encoder.embed.tokens": ("tokens", 0),
    "encoder.embed.upos": ("upos", 0),
    "biaffine.rel.u": ("deprels", 0),
    "biaffine.rel.w1": ("deprels", 1),
    "biaffine.rel.w2": ("deprels", 1),
    "biaffine.rel.b": ("deprels", 0),
}


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: JointParser) -> bytes:
    meta = {
        "config": model.config.to_json(),
        "vocab": model.vocab.to_json(),
        "fingerprint": model.vocab.fingerprint(),
        "seed": model.seed,
    }
    return dumps(model.state_dict(), meta)


def save_checkpoint(model: JointParser, path) -> Path:
    path = Path(path)
    with atomic_write(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))
    return path


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def _assign(model: JointParser, params: Mapping[str, np.ndarray], names: Iterable[str]):
    own = dict(model.named_parameters())
    for name in names:
        if name not in own:
            raise CheckpointError(f"parameter {name} does not exist in the target model")
        src = params[name]
        if own[name].data.shape != src.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {src.shape}, model {own[name].data.shape}"
            )
        own[name].data = np.array(src, dtype=np.float64, copy=True)


def load_checkpoint(path) -> JointParser:
    return load_checkpoint_bytes(Path(path).read_bytes())


def load_checkpoint_bytes(blob: bytes) -> JointParser:
    params, meta = loads(blob)
    model = JointParser(ModelConfig.from_json(meta["config"]), Vocabulary.from_json(meta["vocab"]), meta.get("seed", 0))
    own = {name for name, _ in model.named_parameters()}
    if own != set(params):
        missing, extra = sorted(own - set(params)), sorted(set(params) - own)
        raise CheckpointError(f"checkpoint does not match config: missing {missing[:5]}, unexpected {extra[:5]}")
    _assign(model, params, sorted(params))
    return model


def _resolve_components(components: Iterable[str]) -> List[str]:
    out = []
    for c in components:
        c = COMPONENT_ALIASES.get(c, c)
        if c not in COMPONENT_PREFIXES:
            raise CheckpointError(f"unknown component {c!r}; choose from {sorted(COMPONENT_PREFIXES)}")
        out.append(c)
    return out


def _remap(name: str, src: np.ndarray, dst: np.ndarray, src_vocab: Vocabulary, dst_vocab: Vocabulary) -> np.ndarray:
    table, axis = _VOCAB_AXES[name]
    src_map, dst_map = getattr(src_vocab, table), getattr(dst_vocab, table)
    other_src = tuple(s for k, s in enumerate(src.shape) if k != axis)
    other_dst = tuple(s for k, s in enumerate(dst.shape) if k != axis)
    if other_src != other_dst:
        raise CheckpointError(f"shape mismatch for {name}: checkpoint {src.shape}, model {dst.shape}")
    out = np.array(dst, copy=True)
    for sym, j in dst_map.items():
        i = src_map.get(sym)
        if i is None:
            continue
        index_dst = [slice(None)] * dst.ndim
        index_src = [slice(None)] * src.ndim
        index_dst[axis], index_src[axis] = j, i
        out[tuple(index_dst)] = src[tuple(index_src)]
    return out


def transfer_init(
    target: JointParser,
    source: Union[str, Path, JointParser],
    components: Iterable[str] = ("encoder", "syntactic_biaffine"),
) -> List[str]:
    """Copy the named components from ``source`` into ``target``; return copied names.

    On a vocabulary mismatch, vocabulary-indexed parameters are remapped row
    by row for symbols both vocabularies share; other rows keep their fresh
    initialization.
    """
    if isinstance(source, JointParser):
        params, src_vocab = source.state_dict(), source.vocab
    else:
        params, meta = read_checkpoint(source)
        src_vocab = Vocabulary.from_json(meta["vocab"])
    prefixes = tuple(p for c in _resolve_components(components) for p in COMPONENT_PREFIXES[c])
    names = sorted(n for n in params if n.startswith(prefixes))
    if not names:
        raise CheckpointError(f"source has no parameters for components {list(components)}")

    own = dict(target.named_parameters())
    same_vocab = src_vocab.fingerprint() == target.vocab.fingerprint()
    if not same_vocab:
        warnings.warn("vocabulary fingerprint mismatch; remapping shared symbols by name", stacklevel=2)
    for name in names:
        if name not in own:
            raise CheckpointError(f"parameter {name} does not exist in the target model")
        if not same_vocab and name in _VOCAB_AXES:
            own[name].data = _remap(name, params[name], own[name].data, src_vocab, target.vocab)
        else:
            _assign(target, params, [name])
    return names
