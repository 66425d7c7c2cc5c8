"""Translational knowledge-graph embeddings: TransE, TransH and TransD.

All three score a triple by the Euclidean distance ``||h' + r - t'||`` where
``h'``/``t'`` are the (possibly projected) head and tail vectors:

* TransE: no projection.
* TransH: projection onto the hyperplane with unit normal ``w_r``,
  ``x' = x - (w_r . x) w_r``.
* TransD: ``x' = (w_r w_x^T + I) x = x + (w_x . x) w_r`` with an entity
  projection vector ``w_x`` and a relation projection vector ``w_r``.

Training minimizes the margin ranking loss ``max(0, margin + f(pos) - f(neg))``
with plain minibatch SGD, one corrupted triple per positive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingTable
from .graph import KnowledgeGraph

log = logging.getLogger(__name__)

KINDS = ("transE", "transH", "transD")


@dataclass
class KgeModel:
    kind: str
    dim: int
    entity: np.ndarray
    relation: np.ndarray
    normal: np.ndarray | None = None  # transH hyperplane normals
    entity_proj: np.ndarray | None = None  # transD
    relation_proj: np.ndarray | None = None  # transD
    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "transH" and self.normal is None:
            raise ValueError("transH needs relation normals")
        if self.kind == "transD" and (self.entity_proj is None or self.relation_proj is None):
            raise ValueError("transD needs projection vectors")

    @property
    def tables(self) -> dict[str, np.ndarray]:
        """Parameter tables in file order."""
        out = {"entity": self.entity, "relation": self.relation}
        if self.kind == "transH":
            out["normal"] = self.normal
        if self.kind == "transD":
            out["entity_proj"] = self.entity_proj
            out["relation_proj"] = self.relation_proj
        return out

    def entity_table(self) -> EmbeddingTable:
        names = self.entity_names or [str(i) for i in range(len(self.entity))]
        return EmbeddingTable(names, self.entity.copy())

    def copy(self) -> "KgeModel":
        return KgeModel(
            self.kind,
            self.dim,
            **{k: v.copy() for k, v in self.tables.items()},
            entity_names=list(self.entity_names),
            relation_names=list(self.relation_names),
        )


@dataclass(frozen=True)
class KgeTrainConfig:
    dim: int = 50
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 128
    corruption: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.dim < 1 or self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError(f"invalid KgeTrainConfig {self}")
        if self.corruption != "uniform":
            raise ValueError("only uniform head-or-tail corruption is supported")


def init_model(kind: str, n_entities: int, n_relations: int, dim: int, rng) -> KgeModel:
    rng = np.random.default_rng(rng)
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, (n_entities, dim))
    rel = rng.uniform(-bound, bound, (n_relations, dim))
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    extra = {}
    if kind == "transH":
        w = rng.normal(size=(n_relations, dim))
        extra["normal"] = w / np.linalg.norm(w, axis=1, keepdims=True)
    elif kind == "transD":
        extra["entity_proj"] = rng.uniform(-bound, bound, (n_entities, dim)) / np.sqrt(dim)
        extra["relation_proj"] = rng.uniform(-bound, bound, (n_relations, dim)) / np.sqrt(dim)
    model = KgeModel(kind, dim, ent, rel, **extra)
    enforce_constraints(model)
    return model


def enforce_constraints(model: KgeModel) -> None:
    """Clip entity vectors into the unit ball; rescale TransH normals to unit length."""
    norms = np.linalg.norm(model.entity, axis=1, keepdims=True)
    model.entity /= np.maximum(norms, 1.0)
    if model.kind == "transH":
        model.normal /= np.linalg.norm(model.normal, axis=1, keepdims=True)


def project_hyperplane(x, w):
    """TransH projection of rows of ``x`` onto hyperplanes with normals ``w``."""
    return x - np.sum(w * x, axis=-1, keepdims=True) * w


def _residual(model: KgeModel, h, r, t):
    """Translation residual ``h' + r - t'`` for index arrays (broadcastable)."""
    H, T, R = model.entity[h], model.entity[t], model.relation[r]
    if model.kind == "transE":
        return H + R - T
    if model.kind == "transH":
        w = model.normal[r]
        return project_hyperplane(H, w) + R - project_hyperplane(T, w)
    wr = model.relation_proj[r]
    hp = H + np.sum(model.entity_proj[h] * H, axis=-1, keepdims=True) * wr
    tp = T + np.sum(model.entity_proj[t] * T, axis=-1, keepdims=True) * wr
    return hp + R - tp


def score(model: KgeModel, h, r, t):
    """Distance score; lower means more plausible. Accepts scalars or index arrays."""
    h, r, t = (np.asarray(a, dtype=np.int64) for a in (h, r, t))
    for a, n in ((h, len(model.entity)), (t, len(model.entity)), (r, len(model.relation))):
        if a.size and (a.min() < 0 or a.max() >= n):
            raise IndexError("id out of range")
    out = np.linalg.norm(_residual(model, h, r, t), axis=-1)
    return float(out) if out.ndim == 0 else out


def _accumulate_score_grads(model: KgeModel, h, r, t, coef, grads):
    """Add ``coef[i] * d f(h_i, r_i, t_i) / d params`` into the dense ``grads`` dict."""
    e = _residual(model, h, r, t)
    norm = np.linalg.norm(e, axis=1, keepdims=True)
    g = np.divide(e, norm, out=np.zeros_like(e), where=norm > 0) * coef[:, None]
    H, T = model.entity[h], model.entity[t]
    if model.kind == "transE":
        dh, dt = g, -g
    elif model.kind == "transH":
        w = model.normal[r]
        wg = np.sum(w * g, axis=1, keepdims=True)
        dh = g - wg * w
        dt = -dh
        u = H - T
        wu = np.sum(w * u, axis=1, keepdims=True)
        np.add.at(grads["normal"], r, -(wg * u + wu * g))
    else:
        wr, wh, wt = model.relation_proj[r], model.entity_proj[h], model.entity_proj[t]
        wrg = np.sum(wr * g, axis=1, keepdims=True)
        whH = np.sum(wh * H, axis=1, keepdims=True)
        wtT = np.sum(wt * T, axis=1, keepdims=True)
        dh = g + wh * wrg
        dt = -(g + wt * wrg)
        np.add.at(grads["relation_proj"], r, g * (whH - wtT))
        np.add.at(grads["entity_proj"], h, H * wrg)
        np.add.at(grads["entity_proj"], t, -T * wrg)
    np.add.at(grads["entity"], h, dh)
    np.add.at(grads["entity"], t, dt)
    np.add.at(grads["relation"], r, g)


def margin_loss_and_grads(model: KgeModel, pos, neg, margin: float):
    """Summed hinge loss over the batch and dense gradients for every table."""
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 3)
    fp = score(model, pos[:, 0], pos[:, 1], pos[:, 2])
    fn = score(model, neg[:, 0], neg[:, 1], neg[:, 2])
    hinge = margin + np.atleast_1d(fp) - np.atleast_1d(fn)
    active = (hinge > 0).astype(float)
    grads = {k: np.zeros_like(v) for k, v in model.tables.items()}
    if active.any():
        _accumulate_score_grads(model, pos[:, 0], pos[:, 1], pos[:, 2], active, grads)
        _accumulate_score_grads(model, neg[:, 0], neg[:, 1], neg[:, 2], -active, grads)
    return float(np.maximum(hinge, 0).sum()), grads


def corrupt_triples(kg: KnowledgeGraph, triples, rng, max_retries: int = 10):
    """Replace head or tail (fair coin) by a uniform entity, avoiding known triples.

    Returns ``(negatives, corrupted_head_mask, exhausted_mask)``. Rows that still
    hit a known triple after ``max_retries`` redraws are accepted and flagged.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = len(triples)
    head = rng.random(n) < 0.5
    out = triples.copy()
    todo = np.arange(n)
    for _ in range(max_retries + 1):
        ents = rng.integers(0, kg.n_entities, len(todo))
        out[todo] = triples[todo]
        out[todo[head[todo]], 0] = ents[head[todo]]
        out[todo[~head[todo]], 2] = ents[~head[todo]]
        todo = todo[kg.contains(out[todo])]
        if not len(todo):
            break
    exhausted = np.zeros(n, dtype=bool)
    exhausted[todo] = True
    return out, head, exhausted


def corrupt_triple(kg: KnowledgeGraph, triple, rng, max_retries: int = 10):
    """Single-triple form of :func:`corrupt_triples`; returns ``(negative, exhausted)``."""
    out, _, exhausted = corrupt_triples(kg, [triple], rng, max_retries)
    if exhausted[0]:
        log.warning("corruption retries exhausted for %s", tuple(triple))
    return tuple(int(v) for v in out[0]), bool(exhausted[0])


def train_kge(kg: KnowledgeGraph, kind: str, cfg: KgeTrainConfig, on_step=None):
    """Train a model on every triple of ``kg``. Returns ``(model, per-epoch mean loss)``.

    ``on_step(model)`` is called after each constrained SGD step.
    """
    if not len(kg.triples):
        raise ValueError("knowledge graph has no triples")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(kind, kg.n_entities, kg.n_relations, cfg.dim, rng)
    model.entity_names = list(kg.entities.names)
    model.relation_names = list(kg.relations.names)
    n = len(kg.triples)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            pos = kg.triples[order[s : s + cfg.batch_size]]
            neg, _, _ = corrupt_triples(kg, pos, rng)
            loss, grads = margin_loss_and_grads(model, pos, neg, cfg.margin)
            total += loss
            for name, table in model.tables.items():
                table -= cfg.learning_rate * grads[name]
            enforce_constraints(model)
            if on_step is not None:
                on_step(model)
        trace.append(total / n)
        if not np.isfinite(trace[-1]):
            raise FloatingPointError(
                f"{kind} loss became {trace[-1]} at epoch {epoch}; lower the learning rate"
            )
    return model, trace


def filtered_ranks(model: KgeModel, kg: KnowledgeGraph, test_triples) -> np.ndarray:
    """Rank of the true head and tail among all corruptions, skipping known true triples.

    Known triples are those of ``kg`` plus the test triples. Returns shape (n, 2)
    as ``(rank_head, rank_tail)``; ties resolve in favour of the true entity.
    """
    test = np.asarray(test_triples, dtype=np.int64).reshape(-1, 3)
    known = kg.with_triples(np.concatenate([kg.triples, test]))
    ents = np.arange(kg.n_entities)
    out = np.empty((len(test), 2), dtype=np.int64)
    for i, (h, r, t) in enumerate(test):
        true = score(model, h, r, t)
        for slot, col in ((0, 0), (2, 1)):
            cand = np.tile(test[i], (len(ents), 1))
            cand[:, slot] = ents
            s = score(model, cand[:, 0], cand[:, 1], cand[:, 2])
            better = (s < true) & ~known.contains(cand)
            out[i, col] = 1 + int(better.sum())
    return out


# --------------------------------------------------------------------------
# Model files
# --------------------------------------------------------------------------

KGE_MAGIC = "kgdebias-kge 1"


def save_model(model: KgeModel, path) -> None:
    """Text model file: header, then each table as ``table <name> <rows>`` and named rows."""
    ent_names = model.entity_names or [str(i) for i in range(len(model.entity))]
    rel_names = model.relation_names or [str(i) for i in range(len(model.relation))]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(KGE_MAGIC + "\n")
        fh.write(f"kind {model.kind}\ndim {model.dim}\n")
        fh.write(f"entities {len(model.entity)}\nrelations {len(model.relation)}\n")
        for name, table in model.tables.items():
            keys = ent_names if name.startswith("entity") else rel_names
            fh.write(f"table {name} {len(table)}\n")
            for key, row in zip(keys, table):
                fh.write(key + " " + " ".join(format(float(v), ".17g") for v in row) + "\n")


def load_model(path) -> KgeModel:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != KGE_MAGIC:
            raise ValueError(f"{path}: not a KGE model file")
        header = {}
        for _ in range(4):
            k, v = fh.readline().split()
            header[k] = v
        kind, dim = header["kind"], int(header["dim"])
        tables, names = {}, {}
        line = fh.readline()
        while line:
            tag, name, rows = line.split()
            if tag != "table":
                raise ValueError(f"{path}: expected table header, got {line!r}")
            keys, data = [], []
            for _ in range(int(rows)):
                parts = fh.readline().split()
                keys.append(parts[0])
                data.append([float(v) for v in parts[1:]])
            tables[name] = np.array(data, dtype=float).reshape(int(rows), dim)
            names[name] = keys
            line = fh.readline()
    return KgeModel(
        kind,
        dim,
        **tables,
        entity_names=names.get("entity", []),
        relation_names=names.get("relation", []),
    )


def save_model_npz(model: KgeModel, path) -> None:
    np.savez(
        path,
        kind=np.array(model.kind),
        entity_names=np.array(model.entity_names, dtype=str),
        relation_names=np.array(model.relation_names, dtype=str),
        **model.tables,
    )


def load_model_npz(path) -> KgeModel:
    with np.load(path) as z:
        tables = {k: z[k] for k in ("entity", "relation", "normal", "entity_proj", "relation_proj") if k in z}
        return KgeModel(
            str(z["kind"]),
            tables["entity"].shape[1],
            **tables,
            entity_names=z["entity_names"].tolist(),
            relation_names=z["relation_names"].tolist(),
        )
