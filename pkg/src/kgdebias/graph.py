"""Simple networks and knowledge graphs: containers, TSV ingestion, splits.

Both containers are treated as immutable once built. Ids are dense integers;
knowledge-graph vocabularies are interned in first-appearance order so that a
given file always produces the same ids.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class EmptyGraphError(ValueError):
    pass


# --------------------------------------------------------------------------
# Simple networks
# --------------------------------------------------------------------------


class Network:
    """Undirected simple graph stored as a canonical edge array plus CSR adjacency.

    ``edges`` has shape (E, 2) with ``u < v`` in each row, rows sorted
    lexicographically. Self-loops and duplicates are removed on construction.
    """

    def __init__(self, node_count: int, edges):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= node_count):
            raise ValueError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        edges = np.sort(edges, axis=1)
        edges = np.unique(edges, axis=0) if len(edges) else edges
        self.node_count = int(node_count)
        self.edges = edges
        self.edges.setflags(write=False)

        both = np.concatenate([edges, edges[:, ::-1]]) if len(edges) else edges
        order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.array([], dtype=np.int64)
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=node_count) if len(both) else np.zeros(node_count, np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.indices = both[:, 1].copy() if len(both) else np.array([], dtype=np.int64)
        self.degrees = counts.astype(np.int64)
        self._keys = None
        for a in (self.indptr, self.indices, self.degrees):
            a.setflags(write=False)

    def __repr__(self):
        return f"Network(nodes={self.node_count}, edges={len(self.edges)})"

    def __eq__(self, other):
        return (
            isinstance(other, Network)
            and self.node_count == other.node_count
            and np.array_equal(self.edges, other.edges)
        )

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def edge_keys(self) -> np.ndarray:
        """Sorted int64 keys ``u * n + v`` for both orientations; used for fast membership."""
        if self._keys is None:
            n, e = self.node_count, self.edges
            self._keys = np.sort(np.concatenate([e[:, 0] * n + e[:, 1], e[:, 1] * n + e[:, 0]]))
        return self._keys

    def has_edges(self, u, v) -> np.ndarray:
        keys = self.edge_keys()
        q = np.asarray(u, dtype=np.int64) * self.node_count + np.asarray(v, dtype=np.int64)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        return (keys[pos] == q) if len(keys) else np.zeros(np.shape(q), dtype=bool)


def load_edge_list(path) -> Network:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(path, lineno, f"expected 2 fields, got {len(parts)}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(path, lineno, f"non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(path, lineno, "negative node id")
            pairs.append((u, v))
    if not pairs:
        raise EmptyGraphError(f"{path}: no edges")
    arr = np.array(pairs, dtype=np.int64)
    return Network(int(arr.max()) + 1, arr)


def save_edge_list(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# nodes {net.node_count}\n")
        for u, v in net.edges:
            fh.write(f"{u}\t{v}\n")


# --------------------------------------------------------------------------
# Knowledge graphs
# --------------------------------------------------------------------------


class Vocab:
    """Bidirectional string <-> id map, ids assigned in insertion order."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        i = self.index.get(name)
        if i is None:
            i = len(self.names)
            self.index[name] = i
            self.names.append(name)
        return i

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> int:
        return self.index[name]

    def __contains__(self, name) -> bool:
        return name in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.names == other.names


class KnowledgeGraph:
    """Entities, relations and a duplicate-free (T, 3) array of (head, rel, tail) ids."""

    def __init__(self, entities: Vocab, relations: Vocab, triples):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(triples):
            if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= len(entities):
                raise ValueError("entity id out of range")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= len(relations):
                raise ValueError("relation id out of range")
            _, first = np.unique(triples, axis=0, return_index=True)
            triples = triples[np.sort(first)]
        self.entities = entities
        self.relations = relations
        self.triples = triples
        self.triples.setflags(write=False)
        deg = np.bincount(triples[:, 0], minlength=len(entities)) + np.bincount(
            triples[:, 2], minlength=len(entities)
        )
        self.entity_degree = deg.astype(np.int64)
        self.entity_degree.setflags(write=False)
        self._keys = None

    def __repr__(self):
        return (
            f"KnowledgeGraph(entities={len(self.entities)}, relations={len(self.relations)}, "
            f"triples={len(self.triples)})"
        )

    def __eq__(self, other):
        return (
            isinstance(other, KnowledgeGraph)
            and self.entities == other.entities
            and self.relations == other.relations
            and np.array_equal(self.triples, other.triples)
        )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def triple_keys(self) -> np.ndarray:
        """Sorted scalar keys for O(log T) membership tests."""
        if self._keys is None:
            self._keys = np.sort(self.encode(self.triples))
        return self._keys

    def encode(self, triples) -> np.ndarray:
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        ne, nr = self.n_entities, self.n_relations
        return (t[:, 0] * nr + t[:, 1]) * ne + t[:, 2]

    def contains(self, triples) -> np.ndarray:
        keys = self.triple_keys()
        q = self.encode(triples)
        if not len(keys):
            return np.zeros(len(q), dtype=bool)
        pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
        return keys[pos] == q

    def with_triples(self, triples) -> "KnowledgeGraph":
        return KnowledgeGraph(self.entities, self.relations, triples)


@dataclass(frozen=True)
class RelationFilter:
    """Ingestion rules: drop rare relations and blacklisted ones.

    The default threshold of 11 drops relations occurring in 10 triples or fewer.
    """

    min_relation_count: int = 11
    blacklist: frozenset = field(default_factory=frozenset)


def _read_triples(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise GraphFormatError(path, lineno, "expected head<TAB>relation<TAB>tail")
            rows.append(tuple(p.strip() for p in parts))
    return rows


def load_triples(path, filters: RelationFilter | None = None) -> KnowledgeGraph:
    rows = _read_triples(path)
    if filters is not None:
        freq = Counter(r for _, r, _ in rows)
        rows = [
            row
            for row in rows
            if row[1] not in filters.blacklist and freq[row[1]] >= filters.min_relation_count
        ]
    if not rows:
        raise EmptyGraphError(f"{path}: no triples after filtering")
    ents, rels = Vocab(), Vocab()
    ids = [(ents.add(h), rels.add(r), ents.add(t)) for h, r, t in rows]
    return KnowledgeGraph(ents, rels, ids)


def save_triples(kg: KnowledgeGraph, path) -> None:
    en, rn = kg.entities.names, kg.relations.names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{en[h]}\t{rn[r]}\t{en[t]}\n")


def kg_from_named(triples: Sequence[tuple[str, str, str]]) -> KnowledgeGraph:
    ents, rels = Vocab(), Vocab()
    ids = [(ents.add(h), rels.add(r), ents.add(t)) for h, r, t in triples]
    return KnowledgeGraph(ents, rels, ids)


@dataclass
class AttributeLabels:
    """Class labels for a subset of entities (``entities[i]`` has class ``classes[i]``)."""

    attribute_name: str
    entities: np.ndarray
    classes: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.entities = np.asarray(self.entities, dtype=np.int64)
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if self.entities.shape != self.classes.shape:
            raise ValueError("entities and classes differ in length")
        if len(np.unique(self.entities)) != len(self.entities):
            raise ValueError("entity labelled twice")
        if len(self.classes) and (self.classes.min() < 0 or self.classes.max() >= len(self.class_names)):
            raise ValueError("class id out of range")

    def __len__(self):
        return len(self.entities)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def is_binary(self) -> bool:
        return self.n_classes == 2

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.entities.tolist(), self.classes.tolist()))

    def counts(self) -> np.ndarray:
        return np.bincount(self.classes, minlength=self.n_classes)


def load_labels(path, kg: KnowledgeGraph, attribute_name: str | None = None) -> AttributeLabels:
    """Read ``entity<TAB>class_name`` lines. Class ids follow sorted class names."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(path, lineno, "expected entity<TAB>class_name")
            ent, cls = parts[0].strip(), parts[1].strip()
            if ent not in kg.entities:
                raise GraphFormatError(path, lineno, f"unknown entity {ent!r}")
            pairs.append((kg.entities[ent], cls))
    names = sorted({c for _, c in pairs})
    idx = {c: i for i, c in enumerate(names)}
    return AttributeLabels(
        attribute_name or Path(path).stem,
        [e for e, _ in pairs],
        [idx[c] for _, c in pairs],
        names,
    )


def save_labels(labels: AttributeLabels, kg: KnowledgeGraph, path) -> None:
    en = kg.entities.names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e, c in zip(labels.entities, labels.classes):
            fh.write(f"{en[e]}\t{labels.class_names[c]}\n")


# --------------------------------------------------------------------------
# Splits, degrees, relation removal
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _split_index(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_test = int(round(spec.test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split_edges(net: Network, spec: SplitSpec):
    """Hold out ``round(test_fraction * |E|)`` edges.

    Returns ``(train, test_edges, warnings)``. Warnings name nodes that lose all
    their edges in ``train``; the split itself is never refused.
    """
    tr, te = _split_index(net.edge_count, spec)
    train = Network(net.node_count, net.edges[tr])
    test = net.edges[te].copy()
    orphaned = np.flatnonzero((net.degrees > 0) & (train.degrees == 0))
    warnings = [f"node {v} has no training edges" for v in orphaned]
    for w in warnings[:5]:
        log.warning(w)
    return train, test, warnings


def split_triples(kg: KnowledgeGraph, spec: SplitSpec):
    """Hold out triples; returns ``(train_kg, test_triples, warnings)``. Vocabularies are shared."""
    tr, te = _split_index(len(kg.triples), spec)
    train = kg.with_triples(kg.triples[tr])
    test = kg.triples[te].copy()
    cold = np.flatnonzero((kg.entity_degree > 0) & (train.entity_degree == 0))
    warnings = [f"entity {kg.entities.names[e]} appears only in test triples" for e in cold]
    return train, test, warnings


def degree(graph, node: int) -> int:
    """Neighbor count for a Network, incident-triple count (head or tail) for a KG."""
    if isinstance(graph, Network):
        if not 0 <= node < graph.node_count:
            raise IndexError(f"node {node} out of range")
        return int(graph.degrees[node])
    if not 0 <= node < graph.n_entities:
        raise IndexError(f"entity {node} out of range")
    return int(graph.entity_degree[node])


def remove_relation(kg: KnowledgeGraph, relation) -> KnowledgeGraph:
    """Drop every triple of ``relation`` (id or name). Ids stay stable."""
    if isinstance(relation, str):
        if relation not in kg.relations:
            raise KeyError(f"unknown relation {relation!r}")
        rid = kg.relations[relation]
    else:
        rid = int(relation)
        if not 0 <= rid < kg.n_relations:
            raise KeyError(f"unknown relation id {rid}")
    return kg.with_triples(kg.triples[kg.triples[:, 1] != rid])
