"""Readers and writers: CoNLL-U, UDS JSON-lines, PP-attachment pairs, vocabularies."""

from __future__ import annotations

import contextlib
import enum
import hashlib
import json
import os
import tempfile
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import jsonschema
import numpy as np

from .graph_core import (
    AttributeValue,
    DEFAULT_EDGE_LABEL,
    GraphError,
    LinearizedGraph,
    NodeKind,
    ROOT_EDGE,
    SemanticEdge,
    SemanticNode,
    Token,
    UDSGraph,
    UDTree,
    clamp_attribute,
)

PathLike = Union[str, os.PathLike]

PAD, UNK, BOS, EOS, SEP, ROOT = "@pad@", "@unk@", "@bos@", "@eos@", "@sep@", "@root@"
SPECIALS = (PAD, UNK, BOS, EOS, SEP, ROOT)
# edge labels of syntactic leaves inside a semantic target carry this prefix
SYNTAX_EDGE_PREFIX = "syn:"


class FormatError(ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message: str, path=None, line: Optional[int] = None, field_path: str = ""):
        self.path = str(path) if path is not None else None
        self.line = line
        self.field_path = field_path
        where = ""
        if self.path:
            where += f"{self.path}:"
        if line is not None:
            where += f"{line}:"
        if field_path:
            where += f" [{field_path}]"
        super().__init__(f"{where} {message}".strip())


@contextlib.contextmanager
def atomic_write(path: PathLike, mode: str = "w", **kwargs):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------- CoNLL-U


def _parse_conllu_lines(lines: Iterable[Tuple[int, str]], path=None) -> Iterator[UDTree]:
    comments: List[str] = []
    rows: List[Tuple[int, List[str]]] = []

    def flush():
        if not rows:
            comments.clear()
            return None
        tokens, heads, rels = [], [], []
        for lineno, cols in rows:
            try:
                idx = int(cols[0])
            except ValueError:
                raise FormatError(f"non-integer token id {cols[0]!r}", path, lineno)
            if idx != len(tokens) + 1:
                raise FormatError(f"token id {idx} out of sequence", path, lineno)
            try:
                head = int(cols[6])
            except ValueError:
                raise FormatError(f"non-integer head {cols[6]!r}", path, lineno)
            try:
                tokens.append(Token(idx, cols[1], cols[3], cols[2], cols[4], cols[5], cols[8], cols[9]))
            except GraphError as exc:
                raise FormatError(str(exc), path, lineno)
            heads.append(head)
            rels.append(cols[7])
        first = rows[0][0]
        try:
            tree = UDTree(tuple(tokens), tuple(heads), tuple(rels), tuple(comments))
        except GraphError as exc:
            raise FormatError(f"invalid tree: {exc}", path, first)
        rows.clear()
        comments.clear()
        return tree

    for lineno, raw in lines:
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            tree = flush()
            if tree is not None:
                yield tree
            continue
        if line.startswith("#"):
            comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise FormatError(f"expected 10 tab-separated columns, got {len(cols)}", path, lineno)
        if "-" in cols[0] or "." in cols[0]:
            continue
        rows.append((lineno, cols))
    tree = flush()
    if tree is not None:
        yield tree


def read_conllu(path: PathLike) -> List[UDTree]:
    with open(path, encoding="utf-8") as fh:
        return list(_parse_conllu_lines(enumerate(fh, 1), path))


def parse_conllu_string(text: str, path=None) -> List[UDTree]:
    return list(_parse_conllu_lines(enumerate(text.splitlines(), 1), path))


def format_conllu(trees: Iterable[UDTree]) -> str:
    out = []
    for tree in trees:
        out.extend(tree.metadata)
        for tok, head, rel in zip(tree.tokens, tree.heads, tree.deprels):
            out.append(
                "\t".join(
                    [str(tok.index), tok.form, tok.lemma, tok.upos, tok.xpos, tok.feats,
                     str(head), rel, tok.deps, tok.misc]
                )
            )
        out.append("")
    return "".join(line + "\n" for line in out)


def write_conllu(trees: Iterable[UDTree], path: PathLike) -> None:
    text = format_conllu(trees)
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write(text)


# --------------------------------------------------------------------- UDS JSON-lines

_ATTRS_SCHEMA = {
    "type": "object",
    "additionalProperties": {
        "type": "object",
        "required": ["value"],
        "properties": {"value": {"type": "number"}, "applies": {"type": "boolean"}},
    },
}

UDS_LINE_SCHEMA = {
    "type": "object",
    "required": ["id", "tokens", "ud"],
    "properties": {
        "id": {"type": ["string", "integer"]},
        "tokens": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["form"],
                "properties": {"form": {"type": "string", "minLength": 1}, "upos": {"type": "string"}},
            },
        },
        "ud": {
            "type": "object",
            "required": ["heads", "deprels"],
            "properties": {
                "heads": {"type": "array", "items": {"type": "integer"}},
                "deprels": {"type": "array", "items": {"type": "string"}},
            },
        },
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "head_token"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "head_token": {"type": "integer"},
                    "attributes": _ATTRS_SCHEMA,
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["src", "dst"],
                "properties": {
                    "src": {"type": ["string", "integer"]},
                    "dst": {"type": ["string", "integer"]},
                    "label": {"type": "string"},
                    "attributes": _ATTRS_SCHEMA,
                },
            },
        },
        "roots": {"type": "array", "items": {"type": ["string", "integer"]}},
    },
}

_VALIDATOR = jsonschema.Draft7Validator(UDS_LINE_SCHEMA)


@dataclass(frozen=True)
class CorpusEntry:
    sent_id: str
    tree: UDTree
    graph: Optional[UDSGraph] = None
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Corpus:
    entries: Tuple[CorpusEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.sent_id in seen:
                raise FormatError(f"duplicate sentence id {e.sent_id!r}")
            seen.add(e.sent_id)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def trees(self) -> List[UDTree]:
        return [e.tree for e in self.entries]

    @classmethod
    def from_trees(cls, trees: Sequence[UDTree]) -> "Corpus":
        return cls(tuple(CorpusEntry(str(i), t) for i, t in enumerate(trees)))


def _attrs_from_json(obj, where: str) -> Dict[str, AttributeValue]:
    out = {}
    for name, spec in (obj or {}).items():
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            value = clamp_attribute(spec["value"], name)
        for w in caught:
            warnings.warn(f"{where}: {w.message}", stacklevel=3)
        out[name] = AttributeValue(value, bool(spec.get("applies", True)))
    return out


def entry_from_json(obj: dict, path=None, lineno: Optional[int] = None) -> CorpusEntry:
    errors = sorted(_VALIDATOR.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        fpath = "/".join(str(p) for p in err.absolute_path)
        raise FormatError(err.message, path, lineno, fpath)
    toks = obj["tokens"]
    ud = obj["ud"]
    try:
        tokens = tuple(Token(i + 1, t["form"], t.get("upos", "X")) for i, t in enumerate(toks))
        tree = UDTree(tokens, tuple(ud["heads"]), tuple(ud["deprels"]))
    except GraphError as exc:
        raise FormatError(f"invalid UD tree: {exc}", path, lineno, "ud")
    graph = None
    if "nodes" in obj:
        where = f"line {lineno}" if lineno else "entry"
        nodes = []
        for k, n in enumerate(obj["nodes"]):
            ht = n["head_token"]
            label = tokens[ht - 1].form if 1 <= ht <= len(tokens) else None
            nodes.append(
                SemanticNode(str(n["id"]), ht, _attrs_from_json(n.get("attributes"), where), label)
            )
        try:
            edges = tuple(
                SemanticEdge(
                    str(e["src"]), str(e["dst"]),
                    _attrs_from_json(e.get("attributes"), where),
                    e.get("label", DEFAULT_EDGE_LABEL),
                )
                for e in obj.get("edges", [])
            )
            roots = obj.get("roots")
            if roots is None:
                targets = {e.dst for e in edges}
                roots = [n.id for n in nodes if n.id not in targets]
            graph = UDSGraph(tuple(nodes), edges, tuple(str(r) for r in roots))
            graph.validate(num_tokens=len(tokens))
        except GraphError as exc:
            raise FormatError(f"invalid UDS graph: {exc}", path, lineno, "nodes")
    extra = {k: v for k, v in obj.items() if k not in UDS_LINE_SCHEMA["properties"]}
    return CorpusEntry(str(obj["id"]), tree, graph, extra)


def read_uds_jsonl(path: PathLike) -> Corpus:
    entries = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", path, lineno)
            entry = entry_from_json(obj, path, lineno)
            if entry.sent_id in seen:
                raise FormatError(
                    f"duplicate id {entry.sent_id!r} (first on line {seen[entry.sent_id]})",
                    path, lineno, "id",
                )
            seen[entry.sent_id] = lineno
            entries.append(entry)
    return Corpus(tuple(entries))


def _attrs_to_json(attrs) -> dict:
    return {
        name: {"value": av.value, "applies": av.applies}
        for name, av in sorted(attrs.items())
    }


def entry_to_json(entry: CorpusEntry) -> dict:
    tree = entry.tree
    obj = {
        "id": entry.sent_id,
        "tokens": [{"form": t.form, "upos": t.upos} for t in tree.tokens],
        "ud": {"heads": list(tree.heads), "deprels": list(tree.deprels)},
    }
    g = entry.graph
    if g is not None:
        obj["nodes"] = [
            {"id": n.id, "head_token": n.head_token, "attributes": _attrs_to_json(n.attributes)}
            for n in g.nodes
        ]
        obj["edges"] = [
            {"src": e.src, "dst": e.dst, "label": e.label, "attributes": _attrs_to_json(e.attributes)}
            for e in g.edges
        ]
        obj["roots"] = list(g.roots)
    obj.update(entry.extra)
    return obj


def linearized_to_json(lin: LinearizedGraph) -> dict:
    return {
        "node_tokens": list(lin.node_tokens),
        "source_indices": list(lin.source_indices),
        "coindices": list(lin.coindices),
        "kinds": [NodeKind(k).value for k in lin.kinds],
        "head_positions": list(lin.head_positions),
        "edge_labels": list(lin.edge_labels),
        "node_attr_names": list(lin.node_attr_names),
        "node_attr_values": lin.node_attr_values.tolist(),
        "node_attr_mask": lin.node_attr_mask.tolist(),
        "edge_attr_names": list(lin.edge_attr_names),
        "edge_attr_values": lin.edge_attr_values.tolist(),
        "edge_attr_mask": lin.edge_attr_mask.tolist(),
    }


def linearized_from_json(obj: dict) -> LinearizedGraph:
    n = len(obj["node_tokens"])

    def matrix(key, names, dtype):
        return np.array(obj[key], dtype=dtype).reshape(n, len(obj[names]))

    return LinearizedGraph(
        node_tokens=tuple(obj["node_tokens"]),
        source_indices=tuple(obj["source_indices"]),
        coindices=tuple(obj["coindices"]),
        kinds=tuple(NodeKind(k) for k in obj["kinds"]),
        head_positions=tuple(obj["head_positions"]),
        edge_labels=tuple(obj["edge_labels"]),
        node_attr_names=tuple(obj["node_attr_names"]),
        node_attr_values=matrix("node_attr_values", "node_attr_names", np.float64),
        node_attr_mask=matrix("node_attr_mask", "node_attr_names", bool),
        edge_attr_names=tuple(obj["edge_attr_names"]),
        edge_attr_values=matrix("edge_attr_values", "edge_attr_names", np.float64),
        edge_attr_mask=matrix("edge_attr_mask", "edge_attr_names", bool),
    )


def format_uds_jsonl(entries: Iterable[CorpusEntry]) -> str:
    return "".join(json.dumps(entry_to_json(e), sort_keys=True) + "\n" for e in entries)


def write_uds_jsonl(entries: Iterable[CorpusEntry], path: PathLike) -> None:
    text = format_uds_jsonl(entries)
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write(text)


def read_corpus(path: PathLike) -> Corpus:
    """Load either a UDS JSON-lines file or a plain CoNLL-U treebank."""
    if str(path).endswith(".conllu"):
        return Corpus.from_trees(read_conllu(path))
    return read_uds_jsonl(path)


# --------------------------------------------------------------------- PP pairs


class Direction(str, enum.Enum):
    NOUN_TO_VERB = "NOUN_TO_VERB"
    VERB_TO_NOUN = "VERB_TO_NOUN"


@dataclass(frozen=True)
class PPPair:
    original: UDTree
    altered: UDTree
    direction: Direction
    pp_token: int


def read_pp_pairs(path: PathLike) -> List[PPPair]:
    """Read JSON-lines of ``{"original", "altered", "direction", "pp_token"}``.

    ``original`` and ``altered`` are CoNLL-U blocks holding one sentence each;
    ``pp_token`` must index a token in both (token counts may differ).
    """
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", path, lineno)
            trees = {}
            for key in ("original", "altered"):
                if not isinstance(obj.get(key), str):
                    raise FormatError(f"missing CoNLL-U block {key!r}", path, lineno, key)
                try:
                    parsed = parse_conllu_string(obj[key])
                except FormatError as exc:
                    raise FormatError(str(exc), path, lineno, key)
                if len(parsed) != 1:
                    raise FormatError(f"expected one sentence, got {len(parsed)}", path, lineno, key)
                trees[key] = parsed[0]
            try:
                direction = Direction(obj.get("direction"))
            except ValueError:
                raise FormatError(f"unknown direction {obj.get('direction')!r}", path, lineno, "direction")
            pp = obj.get("pp_token")
            if not isinstance(pp, int) or not all(1 <= pp <= len(t) for t in trees.values()):
                raise FormatError(f"pp_token {pp!r} out of bounds", path, lineno, "pp_token")
            pairs.append(PPPair(trees["original"], trees["altered"], direction, pp))
    return pairs


def write_pp_pairs(pairs: Iterable[PPPair], path: PathLike) -> None:
    lines = []
    for p in pairs:
        lines.append(json.dumps({
            "original": format_conllu([p.original]),
            "altered": format_conllu([p.altered]),
            "direction": p.direction.value,
            "pp_token": p.pp_token,
        }, sort_keys=True))
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines))


# --------------------------------------------------------------------- vocabulary


def _ranked(counter: Counter, min_count: int, specials=SPECIALS) -> Dict[str, int]:
    table = {s: i for i, s in enumerate(specials)}
    for sym, c in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_count and sym not in table:
            table[sym] = len(table)
    return table


@dataclass(frozen=True)
class Vocabulary:
    tokens: Dict[str, int]
    upos: Dict[str, int]
    deprels: Dict[str, int]
    edge_labels: Dict[str, int]
    node_labels: Dict[str, int]
    node_attributes: Tuple[str, ...] = ()
    edge_attributes: Tuple[str, ...] = ()

    def lookup(self, table: str, sym: str) -> int:
        return getattr(self, table).get(sym, 1)

    def inverse(self, table: str) -> List[str]:
        m = getattr(self, table)
        out = [""] * len(m)
        for s, i in m.items():
            out[i] = s
        return out

    def to_json(self) -> dict:
        return {
            "tokens": self.inverse("tokens"),
            "upos": self.inverse("upos"),
            "deprels": self.inverse("deprels"),
            "edge_labels": self.inverse("edge_labels"),
            "node_labels": self.inverse("node_labels"),
            "node_attributes": list(self.node_attributes),
            "edge_attributes": list(self.edge_attributes),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        maps = {k: {s: i for i, s in enumerate(obj[k])}
                for k in ("tokens", "upos", "deprels", "edge_labels", "node_labels")}
        return cls(**maps, node_attributes=tuple(obj["node_attributes"]),
                   edge_attributes=tuple(obj["edge_attributes"]))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_vocab(corpus: Corpus, min_count: int = 1) -> Vocabulary:
    """Build id maps with specials first, then symbols by (count desc, lexicographic).

    Symbols seen fewer than ``min_count`` times fall back to UNK; label and
    attribute inventories keep every symbol.
    """
    if not len(corpus):
        raise ValueError("cannot build a vocabulary from an empty corpus")
    forms, upos, rels, elabels = Counter(), Counter(), Counter(), Counter()
    nattrs, eattrs = set(), set()
    elabels[ROOT_EDGE] += 1
    for entry in corpus:
        forms.update(entry.tree.forms)
        upos.update(entry.tree.upos)
        rels.update(entry.tree.deprels)
        elabels.update(entry.tree.deprels)
        elabels.update(SYNTAX_EDGE_PREFIX + r for r in entry.tree.deprels)
        if entry.graph is not None:
            for n in entry.graph.nodes:
                nattrs.update(n.attributes)
            for e in entry.graph.edges:
                elabels[e.label] += 1
                eattrs.update(e.attributes)
    return Vocabulary(
        tokens=_ranked(forms, min_count),
        upos=_ranked(upos, 1),
        deprels=_ranked(rels, 1),
        edge_labels=_ranked(elabels, 1),
        node_labels=_ranked(forms, min_count),
        node_attributes=tuple(sorted(nattrs)),
        edge_attributes=tuple(sorted(eattrs)),
    )
