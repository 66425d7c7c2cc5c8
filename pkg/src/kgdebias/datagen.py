"""Synthetic networks and knowledge graphs with planted, tunable bias.

``gen_network`` grows a preferential-attachment graph (heavy-tailed degrees).
``gen_kg`` builds a person-centred KG: every person has a gender, an
occupation, and a heavy-tailed number of extra triples whose tails come from
gender-specific entity pools with probability ``structural_leak``. Removing
the gender relation therefore leaves gender recoverable from the structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AttributeLabels, KnowledgeGraph, Network, Vocab, kg_from_named

GENDER_RELATION = "hasGender"
OCCUPATION_RELATION = "hasOccupation"
GENDER_CLASSES = ["female", "male"]


@dataclass(frozen=True)
class SyntheticNetSpec:
    """``triad_probability`` is the chance that each attachment after the first
    closes a triangle with a neighbour of the previous target instead of
    drawing preferentially (Holme-Kim); 0 gives plain Barabasi-Albert."""

    n_nodes: int = 1000
    attachment_m: int = 2
    triad_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.attachment_m < 1:
            raise ValueError("attachment_m: must be >= 1")
        if not 0.0 <= self.triad_probability <= 1.0:
            raise ValueError("triad_probability: must lie in [0, 1]")
        if self.n_nodes <= self.attachment_m:
            raise ValueError("n_nodes: must exceed attachment_m")
        if self.seed < 0:
            raise ValueError("seed: must be non-negative")


def expected_edge_count(spec: SyntheticNetSpec) -> int:
    """Seed clique on ``m + 1`` nodes, then ``m`` edges per later node."""
    m = spec.attachment_m
    return m * (m + 1) // 2 + m * (spec.n_nodes - m - 1)


def gen_network(spec: SyntheticNetSpec) -> Network:
    """Preferential-attachment growth from a seed clique of ``m + 1`` nodes."""
    rng = np.random.default_rng(spec.seed)
    m, n = spec.attachment_m, spec.n_nodes
    edges = [(u, v) for u in range(m + 1) for v in range(u + 1, m + 1)]
    adj = [set(range(m + 1)) - {u} for u in range(m + 1)]
    # each node appears once per incident edge, so uniform draws are degree-proportional
    ends = [x for e in edges for x in e]
    for v in range(m + 1, n):
        targets: list[int] = []
        while len(targets) < m:
            u = -1
            if targets and spec.triad_probability and rng.random() < spec.triad_probability:
                cand = sorted(adj[targets[-1]] - set(targets))
                if cand:
                    u = cand[int(rng.integers(len(cand)))]
            if u < 0:
                u = ends[int(rng.integers(len(ends)))]
            if u not in targets:
                targets.append(u)
        adj.append(set())
        for u in sorted(targets):
            edges.append((u, v))
            adj[u].add(v)
            adj[v].add(u)
            ends += [u, v]
    return Network(n, edges)


@dataclass(frozen=True)
class SyntheticKgSpec:
    """Knobs for :func:`gen_kg`.

    ``gender_balance`` is the probability a person is ``male`` (class 1).
    ``occupation_gender_correlation`` is the probability that an occupation is
    drawn from the gender's preferred half of the occupations instead of
    uniformly. Extra-triple counts per person follow a Pareto law with
    exponent ``activity_exponent`` truncated to ``[1, max_extra]``.
    """

    n_persons: int = 2000
    n_occupations: int = 10
    gender_balance: float = 0.5
    structural_leak: float = 0.8
    occupation_gender_correlation: float = 0.0
    extra_relations: int = 4
    pool_size: int = 10
    activity_exponent: float = 1.2
    max_extra: int = 60
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gender_balance < 1.0:
            raise ValueError(f"gender_balance: must lie in (0, 1), got {self.gender_balance}")
        if not 0.0 <= self.structural_leak <= 1.0:
            raise ValueError(f"structural_leak: must lie in [0, 1], got {self.structural_leak}")
        if not 0.0 <= self.occupation_gender_correlation <= 1.0:
            raise ValueError(
                "occupation_gender_correlation: must lie in [0, 1], "
                f"got {self.occupation_gender_correlation}"
            )
        for name in ("n_persons", "n_occupations", "extra_relations", "pool_size", "max_extra"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be positive")
        if self.n_occupations < 2:
            raise ValueError("n_occupations: need at least 2")
        if self.activity_exponent <= 0:
            raise ValueError("activity_exponent: must be positive")
        if self.seed < 0:
            raise ValueError("seed: must be non-negative")


def gen_kg(spec: SyntheticKgSpec):
    """Return ``(kg, gender_labels, occupation_labels)``.

    Entity and relation ids follow first appearance in the triple list, which
    is what the TSV loader reproduces; unused pool entities are not interned.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_persons
    ents, rels = Vocab(), Vocab()
    width = len(str(n - 1))
    persons = [ents.add(f"person_{i:0{width}d}") for i in range(n)]
    gender = (rng.random(n) < spec.gender_balance).astype(np.int64)

    k = spec.n_occupations
    uniform_occ = rng.integers(0, k, n)
    # preferred half for class c: occupations with parity c
    pref = rng.integers(0, (k - gender + 1) // 2) * 2 + gender
    use_pref = rng.random(n) < spec.occupation_gender_correlation
    occupation = np.where(use_pref, pref, uniform_occ)

    r_gender = rels.add(GENDER_RELATION)
    r_occ = rels.add(OCCUPATION_RELATION)
    extra_rels = [rels.add(f"related_{j}") for j in range(spec.extra_relations)]
    gender_ents = [ents.add(g) for g in GENDER_CLASSES]
    occ_width = len(str(k - 1))
    occ_ents = [ents.add(f"occupation_{j:0{occ_width}d}") for j in range(k)]
    # pools[j][0] shared, pools[j][1 + c] gender c
    pools = [
        [[ents.add(f"r{j}_e{b * spec.pool_size + i}") for i in range(spec.pool_size)] for b in range(3)]
        for j in range(spec.extra_relations)
    ]

    u = rng.random(n)
    activity = np.floor((1.0 - u) ** (-1.0 / spec.activity_exponent)).astype(np.int64)
    activity = np.clip(activity, 1, spec.max_extra)

    triples = []
    for i in range(n):
        p, g = persons[i], int(gender[i])
        triples.append((p, r_gender, gender_ents[g]))
        triples.append((p, r_occ, occ_ents[occupation[i]]))
        m = int(activity[i])
        rel_idx = rng.integers(0, spec.extra_relations, m)
        leak = rng.random(m) < spec.structural_leak
        pick = rng.integers(0, spec.pool_size, m)
        for j, lk, x in zip(rel_idx, leak, pick):
            pool = pools[j][1 + g] if lk else pools[j][0]
            triples.append((p, extra_rels[j], pool[x]))
    kg = kg_from_named([(ents.names[h], rels.names[r], ents.names[t]) for h, r, t in triples])
    ids = np.array([kg.entities[ents.names[p]] for p in persons], dtype=np.int64)
    gender_labels = AttributeLabels("gender", ids, gender, list(GENDER_CLASSES))
    occ_labels = AttributeLabels("occupation", ids, occupation, [ents.names[e] for e in occ_ents])
    return kg, gender_labels, occ_labels


def leak_oracle_accuracy(
    kg: KnowledgeGraph,
    labels: AttributeLabels,
    exclude_relations=(GENDER_RELATION,),
    seed: int = 0,
    alpha: float = 1.0,
) -> float:
    """Held-out accuracy of a naive-Bayes classifier on (relation, tail) count features.

    No embeddings are involved: this measures how much of ``labels`` is
    recoverable from the raw graph once ``exclude_relations`` are dropped.
    Persons are split in half; the classifier is fit on one half.
    """
    drop = {kg.relations[r] for r in exclude_relations if r in kg.relations}
    keep = ~np.isin(kg.triples[:, 1], list(drop))
    tri = kg.triples[keep]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(labels))
    half = len(perm) // 2
    train_idx, test_idx = perm[:half], perm[half:]
    ent_class = np.full(kg.n_entities, -1, dtype=np.int64)
    ent_class[labels.entities] = labels.classes
    n_feat = kg.n_relations * kg.n_entities
    feat = tri[:, 1] * kg.n_entities + tri[:, 2]

    is_train = np.zeros(kg.n_entities, dtype=bool)
    is_train[labels.entities[train_idx]] = True
    c = labels.n_classes
    counts = np.zeros((c, n_feat))
    rows = is_train[tri[:, 0]]
    np.add.at(counts, (ent_class[tri[rows, 0]], feat[rows]), 1.0)
    used = np.unique(feat)
    logp = np.log(counts[:, used] + alpha) - np.log(counts[:, used].sum(axis=1, keepdims=True) + alpha * len(used))
    prior = np.log(np.bincount(labels.classes[train_idx], minlength=c) + 1.0)

    col = np.searchsorted(used, feat)
    scores = np.zeros((kg.n_entities, c)) + prior
    np.add.at(scores, tri[:, 0], logp[:, col].T)
    test_ents = labels.entities[test_idx]
    pred = scores[test_ents].argmax(axis=1)
    return float((pred == labels.classes[test_idx]).mean())
