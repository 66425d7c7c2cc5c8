"""End-to-end flows shared by the command line, the demos and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .fan import FanTrainConfig, apply_filter, train_fan
from .graph import AttributeLabels, Network
from .probe import (
    AttrProbeDataset,
    AttrProbeResult,
    AuditReport,
    Binning,
    ProbeConfig,
    attr_degree_report,
    build_link_dataset,
    degree_binned_report,
    per_node_accuracies,
    train_attr_probe,
    train_link_probe,
)
from .walks import NodeEmbedding, SgnsConfig, WalkConfig, generate_walks, train_sgns

ATTR_PROBE = ProbeConfig(cv_folds=5)
LINK_BINNING = Binning(n_bins=10, scheme="log2", min_count=20)
ATTR_BINNING = Binning(n_bins=6, scheme="log2", min_count=50)


def embed_network(net: Network, walk_cfg: WalkConfig, sgns_cfg: SgnsConfig) -> NodeEmbedding:
    return train_sgns(generate_walks(net, walk_cfg), net.node_count, sgns_cfg)


def link_popularity_report(
    net: Network,
    train_net: Network,
    heldout,
    emb,
    probe_cfg: ProbeConfig = ProbeConfig(),
    binning: Binning = LINK_BINNING,
    seed: int = 0,
    metadata=None,
) -> AuditReport:
    """Train a link probe on training edges, score held-out edges per node, bin by full-graph degree.

    Negatives for both sets replace the tail with a random node that is not a
    neighbour in ``net``.
    """
    rng = np.random.default_rng(seed)
    train_ds = build_link_dataset(net, train_net.edges, rng)
    test_ds = build_link_dataset(net, heldout, rng, "test")
    probe = train_link_probe(train_ds, emb, probe_cfg)
    nodes, acc, counts = per_node_accuracies(probe, test_ds, emb)
    meta = {"task": "link", "examples": str(len(test_ds))}
    meta.update(metadata or {})
    return degree_binned_report(acc, net.degrees[nodes], binning, weights=counts, metadata=meta)


def attribute_audit(
    emb,
    labels: AttributeLabels,
    probe_cfg: ProbeConfig = ATTR_PROBE,
    degrees=None,
    binning: Binning = ATTR_BINNING,
    metadata=None,
) -> tuple[AttrProbeResult, AuditReport | None]:
    """Fresh probe for ``labels``; with ``degrees`` also a degree-binned report of its held-out predictions."""
    ds = AttrProbeDataset.from_labels(labels)
    result = train_attr_probe(ds, emb, probe_cfg)
    report = None
    if degrees is not None:
        meta = {"task": "attribute"}
        meta.update(metadata or {})
        report = attr_degree_report(result, ds, emb, degrees, binning, meta)
    return result, report


def debias(emb, labels: AttributeLabels, lam: float, cfg: FanTrainConfig = FanTrainConfig()):
    """Train a FAN on the labelled rows and filter them; other rows are copied unchanged.

    Returns ``(filtered, model, trace)``.
    """
    if not labels.is_binary:
        raise ValueError(
            f"attribute {labels.attribute_name!r} has {labels.n_classes} classes; the filter handles binary attributes only"
        )
    emb = np.asarray(emb, dtype=float)
    rows = labels.entities
    model, trace = train_fan(emb[rows], labels.classes, lam, cfg)
    out = emb.copy()
    out[rows] = apply_filter(model, emb[rows])
    return out, model, trace

