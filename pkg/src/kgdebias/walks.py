"""DeepWalk / node2vec corpora and SkipGram with negative sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .embeddings import EmbeddingTable
from .graph import Network
from .nn import sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 40
    p: float = 1.0
    q: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.walks_per_node < 1 or self.walk_length < 2:
            raise ValueError("walks_per_node >= 1 and walk_length >= 2 required")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")

    @property
    def is_deepwalk(self) -> bool:
        return self.p == 1.0 and self.q == 1.0


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 64
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 1
    learning_rate: float = 0.025
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if min(self.dim, self.window, self.negatives_per_positive, self.epochs, self.batch_size) < 1:
            raise ValueError(f"invalid SgnsConfig {self}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class NodeEmbedding:
    vectors: np.ndarray
    context_vectors: np.ndarray
    loss_trace: list = field(default_factory=list)

    def table(self) -> EmbeddingTable:
        return EmbeddingTable([str(i) for i in range(len(self.vectors))], self.vectors)


def transition_weights(net: Network, prev: int, cur: int, p: float, q: float) -> np.ndarray:
    """Unnormalized node2vec weights from ``cur`` to each of its neighbors, having arrived from ``prev``."""
    nbrs = net.neighbors(cur)
    w = np.full(len(nbrs), 1.0 / q)
    w[net.has_edges(np.full(len(nbrs), prev), nbrs)] = 1.0
    w[nbrs == prev] = 1.0 / p
    return w


def generate_walks(net: Network, cfg: WalkConfig) -> list[np.ndarray]:
    """``walks_per_node`` walks from every node, rounds ordered node 0..n-1.

    Second-order steps use rejection sampling against the max weight, which
    draws exactly from the normalized 1/p, 1, 1/q distribution.
    """
    if net.node_count == 0:
        raise ValueError("empty network")
    rng = np.random.default_rng(cfg.seed)
    n, L = net.node_count, cfg.walk_length
    starts = np.tile(np.arange(n, dtype=np.int64), cfg.walks_per_node)
    walks = np.full((len(starts), L), -1, dtype=np.int64)
    walks[:, 0] = starts
    deg = net.degrees
    alive = deg[starts] > 0
    keys = net.edge_keys() if not cfg.is_deepwalk else None
    wmax = max(1.0 / cfg.p, 1.0, 1.0 / cfg.q)

    def uniform_step(cur):
        return net.indices[net.indptr[cur] + (rng.random(len(cur)) * deg[cur]).astype(np.int64)]

    rows = np.flatnonzero(alive)
    if len(rows):
        walks[rows, 1] = uniform_step(walks[rows, 0])
    for step in range(2, L):
        cur = walks[rows, step - 1]
        if cfg.is_deepwalk:
            walks[rows, step] = uniform_step(cur)
            continue
        prev = walks[rows, step - 2]
        pending = np.arange(len(rows))
        while len(pending):
            c = cur[pending]
            x = uniform_step(c)
            t = prev[pending]
            w = np.full(len(x), 1.0 / cfg.q)
            k = t * n + x
            pos = np.minimum(np.searchsorted(keys, k), len(keys) - 1)
            w[keys[pos] == k] = 1.0
            w[x == t] = 1.0 / cfg.p
            ok = rng.random(len(x)) * wmax < w
            walks[rows[pending[ok]], step] = x[ok]
            pending = pending[~ok]
    return [w if a else w[:1] for w, a in zip(walks, alive)]


def save_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in corpus:
            fh.write(" ".join(map(str, w)) + "\n")


def load_corpus(path) -> list[np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        return [np.array(line.split(), dtype=np.int64) for line in fh if line.strip()]


def _pad(corpus) -> np.ndarray:
    L = max(len(w) for w in corpus)
    out = np.full((len(corpus), L), -1, dtype=np.int64)
    for i, w in enumerate(corpus):
        out[i, : len(w)] = w
    return out


def skipgram_pairs(corpus, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs with ``0 < |i - j| <= window`` inside each walk."""
    w = _pad(corpus)
    centers, contexts = [], []
    for off in range(1, window + 1):
        a, b = w[:, :-off], w[:, off:]
        ok = (a >= 0) & (b >= 0)
        centers += [a[ok], b[ok]]
        contexts += [b[ok], a[ok]]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def sgns_pair_loss(v, u_pos, u_neg):
    """Loss ``-log s(u_pos.v) - sum_k log s(-u_neg[k].v)`` and its gradients.

    Returns ``(loss, dv, du_pos, du_neg)``.
    """
    s = u_pos @ v
    sn = u_neg @ v
    loss = np.logaddexp(0.0, -s) + np.logaddexp(0.0, sn).sum()
    gs = sigmoid(np.array([s]))[0] - 1.0
    gn = sigmoid(sn)
    dv = gs * u_pos + gn @ u_neg
    return float(loss), dv, gs * v, gn[:, None] * v[None, :]


def noise_distribution(corpus, vocab_size: int, power: float = 0.75) -> np.ndarray:
    counts = np.bincount(np.concatenate([np.asarray(w) for w in corpus]), minlength=vocab_size)
    p = counts.astype(float) ** power
    return p / p.sum()


def _scatter_add(table, rows, upd):
    """``table[rows] += upd`` with repeated rows summed, as one sparse product."""
    uniq, inv = np.unique(rows, return_inverse=True)
    m = len(rows)
    table[uniq] += csr_matrix((np.ones(m), (inv, np.arange(m))), shape=(len(uniq), m)) @ upd


def train_sgns(corpus, vocab_size: int, cfg: SgnsConfig) -> NodeEmbedding:
    """SkipGram with negative sampling over minibatches of (center, context) pairs.

    Each pair gets its own gradient; a minibatch accumulates them into the
    tables at once. The learning rate decays linearly to 1e-4 of its start.
    """
    if not len(corpus):
        raise ValueError("empty corpus")
    flat_max = max(int(np.max(w)) for w in corpus)
    if flat_max >= vocab_size:
        raise ValueError(f"node id {flat_max} >= vocab_size {vocab_size}")
    rng = np.random.default_rng(cfg.seed)
    d, k = cfg.dim, cfg.negatives_per_positive
    V = (rng.random((vocab_size, d)) - 0.5) / d
    U = np.zeros((vocab_size, d))
    centers, contexts = skipgram_pairs(corpus, cfg.window)
    if not len(centers):
        raise ValueError("corpus yields no training pairs")
    cdf = np.cumsum(noise_distribution(corpus, vocab_size))
    cdf[-1] = 1.0
    n_pairs = len(centers)
    total_steps = cfg.epochs * n_pairs
    done = 0
    trace = []
    # overflow is caught by the finiteness check after each epoch
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n_pairs)
            epoch_loss = 0.0
            for s in range(0, n_pairs, cfg.batch_size):
                idx = order[s : s + cfg.batch_size]
                b = len(idx)
                lr = cfg.learning_rate * max(1e-4, 1.0 - done / total_steps)
                done += b
                c, o = centers[idx], contexts[idx]
                neg = np.searchsorted(cdf, rng.random((b, k)), side="right")
                vc, uo, un = V[c], U[o], U[neg]
                sp = np.einsum("ij,ij->i", vc, uo)
                sn = np.einsum("ij,ikj->ik", vc, un)
                epoch_loss += np.logaddexp(0.0, -sp).sum() + np.logaddexp(0.0, sn).sum()
                gs = sigmoid(sp) - 1.0
                gn = sigmoid(sn)
                dv = gs[:, None] * uo + np.einsum("ik,ikj->ij", gn, un)
                u_rows = np.concatenate([o, neg.ravel()])
                u_upd = np.concatenate([gs[:, None] * vc, (gn[:, :, None] * vc[:, None, :]).reshape(-1, d)])
                _scatter_add(U, u_rows, -lr * u_upd)
                _scatter_add(V, c, -lr * dv)
            trace.append(epoch_loss / n_pairs)
            log.info("sgns epoch %d loss %.5f", epoch, trace[-1])
            if not (np.isfinite(trace[-1]) and np.isfinite(V).all() and np.isfinite(U).all()):
                raise FloatingPointError(f"SGNS diverged at epoch {epoch}; lower the learning rate")
    return NodeEmbedding(V, U, trace)
