"""Bias audits: link-prediction and attribute probes, degree-binned reports.

Embeddings are passed as a 2-D array indexed by node/entity id.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .graph import AttributeLabels, KnowledgeGraph, Network
from .nn import Mlp, TrainConfig, predict_classes, train_classifier

log = logging.getLogger(__name__)

Z95 = 1.959963984540054


@dataclass(frozen=True)
class ProbeConfig:
    """Probe MLP and training settings. ``hidden_dims=None`` means one hidden layer of width d."""

    hidden_dims: tuple | None = None
    activation: str = "relu"
    dropout: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    test_fraction: float = 0.2
    cv_folds: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ValueError("cv_folds must be 0 (single split) or >= 2")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.epochs, seed, "adam")

    def build(self, n_in: int, n_out: int, head: str, rng) -> Mlp:
        hidden = self.hidden_dims if self.hidden_dims is not None else (n_in,)
        return Mlp([n_in, *hidden, n_out], self.activation, head, self.dropout, rng=rng)


# --------------------------------------------------------------------------
# Link prediction probe
# --------------------------------------------------------------------------


@dataclass
class LinkProbeDataset:
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray
    source_split: str = "train"
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.label)


def build_link_dataset(graph, positives, rng, source_split: str = "train", orient: bool = True, max_retries: int = 50):
    """One tail-corrupted negative per positive pair.

    ``graph`` is the full Network (or KG) negatives must avoid. For a Network
    each undirected positive is first given a random orientation when
    ``orient`` is set, so "tail" is not tied to the stored ``u < v`` order. For
    a KG, ``positives`` are triples and a negative ``(h, r, t')`` must not be
    a known triple.
    """
    rng = np.random.default_rng(rng)
    pos = np.asarray(positives, dtype=np.int64)
    is_kg = isinstance(graph, KnowledgeGraph)
    if is_kg:
        h, r, t = pos[:, 0].copy(), pos[:, 1].copy(), pos[:, 2].copy()
        n = graph.n_entities
    else:
        h, t = pos[:, 0].copy(), pos[:, 1].copy()
        n = graph.node_count
        if orient:
            flip = rng.random(len(h)) < 0.5
            h[flip], t[flip] = t[flip], h[flip].copy()
    neg_t = np.empty_like(t)
    todo = np.arange(len(h))
    for _ in range(max_retries):
        cand = rng.integers(0, n, len(todo))
        if is_kg:
            bad = graph.contains(np.stack([h[todo], r[todo], cand], axis=1))
        else:
            bad = graph.has_edges(h[todo], cand) | (cand == h[todo])
        neg_t[todo] = cand
        todo = todo[bad]
        if not len(todo):
            break
    warnings = []
    if len(todo):
        warnings.append(f"{len(todo)} positives without a valid negative")
        log.warning(warnings[-1])
        keep = np.setdiff1d(np.arange(len(h)), todo)
        h, t, neg_t = h[keep], t[keep], neg_t[keep]
    u = np.concatenate([h, h])
    v = np.concatenate([t, neg_t])
    label = np.concatenate([np.ones(len(h), np.int64), np.zeros(len(h), np.int64)])
    return LinkProbeDataset(u, v, label, source_split, warnings)


def _check_cover(emb, ids):
    if len(ids) and ids.max() >= len(emb):
        raise KeyError(f"no embedding for id {int(ids.max())}")


def link_features(dataset: LinkProbeDataset, emb) -> np.ndarray:
    emb = np.asarray(emb, dtype=float)
    _check_cover(emb, dataset.u)
    _check_cover(emb, dataset.v)
    return np.concatenate([emb[dataset.u], emb[dataset.v]], axis=1)


def train_link_probe(dataset: LinkProbeDataset, emb, cfg: ProbeConfig = ProbeConfig()) -> Mlp:
    """Sigmoid MLP on the concatenated endpoint vectors."""
    x = link_features(dataset, emb)
    rng = np.random.default_rng(cfg.seed)
    net = cfg.build(x.shape[1], 1, "sigmoid", rng)
    train_classifier(net, x, dataset.label, cfg.train_config(int(rng.integers(2**31))))
    return net


def link_correct(probe: Mlp, dataset: LinkProbeDataset, emb) -> np.ndarray:
    return predict_classes(probe, link_features(dataset, emb)) == dataset.label


def per_node_accuracies(probe: Mlp, dataset: LinkProbeDataset, emb):
    """Accuracy over every example touching each node. Returns ``(nodes, acc, n_examples)``."""
    ok = link_correct(probe, dataset, emb).astype(float)
    ends = np.concatenate([dataset.u, dataset.v])
    hits = np.concatenate([ok, ok])
    # an example whose endpoints coincide counts once for that node
    same = np.concatenate([np.zeros(len(ok), bool), dataset.u == dataset.v])
    ends, hits = ends[~same], hits[~same]
    nodes, inv, counts = np.unique(ends, return_inverse=True, return_counts=True)
    acc = np.bincount(inv, weights=hits) / counts
    return nodes, acc, counts


def per_node_accuracy(probe: Mlp, dataset: LinkProbeDataset, emb, node: int):
    """Fraction of ``node``'s examples classified correctly, or None if it never appears."""
    mask = (dataset.u == node) | (dataset.v == node)
    if not mask.any():
        return None
    sub = LinkProbeDataset(dataset.u[mask], dataset.v[mask], dataset.label[mask], dataset.source_split)
    return float(link_correct(probe, sub, emb).mean())


# --------------------------------------------------------------------------
# Degree-binned reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Binning:
    """Equal-width bins in log2(degree + 1) (``scheme='log2'``) or in degree (``'linear'``).

    Bins holding fewer than ``min_count`` nodes are merged into their right
    neighbour; a short final bin is merged leftward.
    """

    n_bins: int = 10
    scheme: str = "log2"
    min_count: int = 1

    def __post_init__(self):
        if self.n_bins < 1 or self.min_count < 1:
            raise ValueError("n_bins and min_count must be positive")
        if self.scheme not in ("log2", "linear"):
            raise ValueError(f"unknown binning scheme {self.scheme!r}")


REPORT_HEADER = ["deg_lo", "deg_hi", "n", "acc", "ci_lo", "ci_hi"]


@dataclass
class AuditReport:
    """``bins`` rows are ``(deg_lo, deg_hi, n, acc, ci_lo, ci_hi)``; metadata values are strings."""

    bins: list
    overall_accuracy: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bins = [
            (int(a), int(b), int(n), float(acc), float(lo), float(hi)) for a, b, n, acc, lo, hi in self.bins
        ]
        self.overall_accuracy = float(self.overall_accuracy)
        self.metadata = {str(k): str(v) for k, v in self.metadata.items()}
        for k in self.metadata:
            if "=" in k or "\n" in k or "\n" in self.metadata[k]:
                raise ValueError(f"metadata key/value not serializable: {k!r}")

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([b[3] for b in self.bins])

    def spearman(self) -> float:
        """Rank correlation between bin order (increasing degree) and bin accuracy."""
        acc = self.accuracies
        if len(acc) < 2 or np.all(acc == acc[0]):
            return float("nan")
        return float(spearmanr(np.arange(len(acc)), acc)[0])

    def trend(self) -> str:
        rho = self.spearman()
        if math.isnan(rho):
            return "flat"
        return "increasing" if rho > 0 else "decreasing" if rho < 0 else "flat"

    def save(self, path) -> None:
        """Write ``path`` (CSV) and ``path + '.meta'`` (key=value lines, sorted)."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(REPORT_HEADER) + "\n")
            for a, b, n, acc, lo, hi in self.bins:
                fh.write(f"{a},{b},{n},{acc!r},{lo!r},{hi!r}\n")
        meta = dict(self.metadata)
        meta["overall_accuracy"] = repr(self.overall_accuracy)
        with open(str(path) + ".meta", "w", encoding="utf-8", newline="\n") as fh:
            for k in sorted(meta):
                fh.write(f"{k}={meta[k]}\n")

    @classmethod
    def load(cls, path) -> "AuditReport":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if header != REPORT_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            bins = []
            for line in fh:
                if line.strip():
                    a, b, n, acc, lo, hi = line.strip().split(",")
                    bins.append((int(a), int(b), int(n), float(acc), float(lo), float(hi)))
        meta = read_meta(str(path) + ".meta")
        overall = float(meta.pop("overall_accuracy"))
        return cls(bins, overall, meta)


def read_meta(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                k, _, v = line.partition("=")
                out[k] = v
    return out


def _bin_assign(deg: np.ndarray, binning: Binning) -> np.ndarray:
    x = np.log2(deg + 1.0) if binning.scheme == "log2" else deg.astype(float)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(len(x), dtype=np.int64)
    edges = np.linspace(lo, hi, binning.n_bins + 1)
    return np.clip(np.searchsorted(edges, x, side="right") - 1, 0, binning.n_bins - 1)


def degree_binned_report(accuracies, degrees, binning: Binning = Binning(), weights=None, metadata=None) -> AuditReport:
    """Bin nodes by degree; per-bin mean accuracy with a normal-approximation 95% CI.

    ``weights`` (examples per node) define the overall accuracy as a weighted
    mean; without them every node counts once.
    """
    acc = np.asarray(accuracies, dtype=float)
    deg = np.asarray(degrees, dtype=np.int64)
    if not len(acc):
        raise ValueError("no nodes to report")
    if acc.shape != deg.shape:
        raise ValueError("accuracies and degrees differ in length")
    w = np.ones_like(acc) if weights is None else np.asarray(weights, dtype=float)
    raw = _bin_assign(deg, binning)
    groups, current = [], []
    for b in range(binning.n_bins):
        current.extend(np.flatnonzero(raw == b).tolist())
        if len(current) >= binning.min_count:
            groups.append(current)
            current = []
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            groups.append(current)
    bins = []
    for g in groups:
        g = np.array(g)
        a = acc[g]
        m = float(a.mean())
        half = Z95 * float(a.std(ddof=1)) / math.sqrt(len(a)) if len(a) > 1 else 0.0
        bins.append((int(deg[g].min()), int(deg[g].max()), len(g), m, max(0.0, m - half), min(1.0, m + half)))
    overall = float(np.sum(w * acc) / np.sum(w))
    report = AuditReport(bins, overall, metadata or {})
    report.metadata.setdefault("spearman", repr(report.spearman()))
    return report


# --------------------------------------------------------------------------
# Attribute probes
# --------------------------------------------------------------------------


@dataclass
class AttrProbeDataset:
    entities: np.ndarray
    classes: np.ndarray
    attribute_name: str
    class_count: int

    @classmethod
    def from_labels(cls, labels: AttributeLabels) -> "AttrProbeDataset":
        return cls(labels.entities.copy(), labels.classes.copy(), labels.attribute_name, labels.n_classes)

    def __len__(self):
        return len(self.entities)


@dataclass
class AttrProbeResult:
    """Trained probe(s) with held-out predictions.

    With cross-validation every entity is held out exactly once; ``nets`` holds
    one network per fold.
    """

    nets: list
    accuracy: float
    baseline: float
    entities: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def net(self) -> Mlp:
        return self.nets[0]


def _stratified_folds(classes: np.ndarray, k: int, rng):
    """Assign fold ids per class in shuffled round-robin. Singleton classes get fold -1."""
    fold = np.full(len(classes), -1, dtype=np.int64)
    warnings = []
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        if len(idx) < 2:
            warnings.append(f"class {c} has {len(idx)} member(s); cannot stratify, kept in training only")
            continue
        idx = rng.permutation(idx)
        offset = int(rng.integers(k))
        fold[idx] = (np.arange(len(idx)) + offset) % k
    return fold, warnings


def _stratified_split(classes: np.ndarray, test_fraction: float, rng):
    is_test = np.zeros(len(classes), dtype=bool)
    warnings = []
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        if len(idx) < 2:
            warnings.append(f"class {c} has {len(idx)} member(s); cannot stratify, kept in training only")
            continue
        idx = rng.permutation(idx)
        n_test = min(max(1, int(round(test_fraction * len(idx)))), len(idx) - 1)
        is_test[idx[:n_test]] = True
    return is_test, warnings


def train_attr_probe(dataset: AttrProbeDataset, emb, cfg: ProbeConfig = ProbeConfig()) -> AttrProbeResult:
    """Predict the attribute from entity vectors; sigmoid head for 2 classes, softmax otherwise.

    ``cfg.cv_folds = 0`` uses one stratified train/test split; ``>= 2`` runs
    stratified k-fold and pools the out-of-fold predictions.
    """
    emb = np.asarray(emb, dtype=float)
    _check_cover(emb, dataset.entities)
    x = emb[dataset.entities]
    y = dataset.classes
    binary = dataset.class_count == 2
    rng = np.random.default_rng(cfg.seed)
    if cfg.cv_folds:
        fold, warnings = _stratified_folds(y, cfg.cv_folds, rng)
        splits = [(fold != f, fold == f) for f in range(cfg.cv_folds)]
    else:
        is_test, warnings = _stratified_split(y, cfg.test_fraction, rng)
        splits = [(~is_test, is_test)]
    for w in warnings:
        log.warning(w)
    nets, test_rows, preds, base_hits = [], [], [], 0
    for tr, te in splits:
        net = cfg.build(x.shape[1], 1 if binary else dataset.class_count, "sigmoid" if binary else "softmax", rng)
        train_classifier(net, x[tr], y[tr], cfg.train_config(int(rng.integers(2**31))))
        nets.append(net)
        rows = np.flatnonzero(te)
        test_rows.append(rows)
        preds.append(predict_classes(net, x[rows]))
        majority = np.bincount(y[tr], minlength=dataset.class_count).argmax()
        base_hits += int((y[rows] == majority).sum())
    rows = np.concatenate(test_rows)
    pred = np.concatenate(preds)
    order = np.argsort(rows, kind="stable")
    rows, pred = rows[order], pred[order]
    return AttrProbeResult(
        nets,
        float((pred == y[rows]).mean()),
        base_hits / len(rows),
        dataset.entities[rows],
        y[rows],
        pred,
        warnings,
    )


def attr_degree_report(probe, dataset: AttrProbeDataset, emb, degrees, binning: Binning = Binning(), metadata=None) -> AuditReport:
    """Degree-binned attribute accuracy.

    ``probe`` is an :class:`AttrProbeResult` (its held-out predictions are
    used) or a bare :class:`Mlp` evaluated on every entity of ``dataset``.
    ``degrees`` is indexed by entity id.
    """
    degrees = np.asarray(degrees)
    if isinstance(probe, AttrProbeResult):
        ents, correct = probe.entities, (probe.predicted == probe.truth)
    else:
        x = np.asarray(emb, dtype=float)[dataset.entities]
        ents, correct = dataset.entities, predict_classes(probe, x) == dataset.classes
    meta = {"attribute": dataset.attribute_name}
    meta.update(metadata or {})
    return degree_binned_report(correct.astype(float), degrees[ents], binning, metadata=meta)
