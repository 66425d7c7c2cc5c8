import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgdebias.embeddings import EmbeddingTable, load_embeddings, save_embeddings
from kgdebias.graph import Network
from kgdebias.walks import (
    SgnsConfig,
    WalkConfig,
    generate_walks,
    load_corpus,
    noise_distribution,
    save_corpus,
    sgns_pair_loss,
    skipgram_pairs,
    train_sgns,
    transition_weights,
)


def central_diff(f, arr, h=1e-6):
    out = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))


def triangle_plus_pendant():
    return Network(4, [(0, 1), (1, 2), (0, 2), (2, 3)])


def exact_transition(net, t, v, p, q):
    """Enumerate the normalized second-order distribution from first principles."""
    adj = {u: set(net.neighbors(u).tolist()) for u in range(net.node_count)}
    probs = {}
    for x in adj[v]:
        if x == t:
            probs[x] = 1.0 / p
        elif x in adj[t]:
            probs[x] = 1.0
        else:
            probs[x] = 1.0 / q
    z = sum(probs.values())
    return {x: w / z for x, w in probs.items()}


class TestTransitions:
    def test_path_graph_weights(self):
        net = Network(3, [(0, 1), (1, 2)])
        w = transition_weights(net, 0, 1, p=4.0, q=0.25)
        assert dict(zip(net.neighbors(1).tolist(), w)) == {0: 0.25, 2: 4.0}

    def test_p_q_one_is_uniform(self):
        w = transition_weights(triangle_plus_pendant(), 0, 2, 1.0, 1.0)
        np.testing.assert_array_equal(w, np.ones(3))

    @pytest.mark.parametrize("p,q", [(1.0, 1.0), (0.5, 2.0), (4.0, 0.25)])
    def test_empirical_frequencies_within_3_sigma(self, p, q):
        net = triangle_plus_pendant()
        walks = generate_walks(net, WalkConfig(walks_per_node=2500, walk_length=12, p=p, q=q, seed=0))
        counts: dict = {}
        steps = 0
        for w in walks:
            for t, v, x in zip(w[:-2], w[1:-1], w[2:]):
                counts.setdefault((t, v), {}).setdefault(x, 0)
                counts[(t, v)][x] += 1
                steps += 1
        assert steps >= 100_000
        for (t, v), row in counts.items():
            n = sum(row.values())
            for x, prob in exact_transition(net, t, v, p, q).items():
                sd = np.sqrt(n * prob * (1 - prob))
                assert abs(row.get(x, 0) - n * prob) <= 3 * sd + 1e-9, (t, v, x)


class TestWalks:
    def test_counts_and_isolated(self):
        net = Network(5, [(0, 1), (1, 2), (2, 3)])
        walks = generate_walks(net, WalkConfig(walks_per_node=3, walk_length=6, p=0.5, q=2.0, seed=0))
        assert len(walks) == 15
        starts = np.array([w[0] for w in walks])
        assert np.bincount(starts).tolist() == [3] * 5
        assert all(len(w) == 1 for w in walks if w[0] == 4)
        assert all(len(w) == 6 for w in walks if w[0] != 4)

    def test_deterministic(self):
        net = triangle_plus_pendant()
        cfg = WalkConfig(walks_per_node=4, walk_length=9, p=2.0, q=0.5, seed=7)
        a, b = generate_walks(net, cfg), generate_walks(net, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_corpus_round_trip(self, tmp_path):
        walks = generate_walks(triangle_plus_pendant(), WalkConfig(2, 5, seed=0))
        save_corpus(walks, tmp_path / "c.txt")
        back = load_corpus(tmp_path / "c.txt")
        assert all(np.array_equal(x, y) for x, y in zip(walks, back))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            WalkConfig(walk_length=1)
        with pytest.raises(ValueError):
            WalkConfig(p=0.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=40),
    st.sampled_from([(1.0, 1.0), (0.5, 2.0), (3.0, 0.3)]),
    st.integers(0, 2**32 - 1),
)
def test_walks_are_valid_paths(pairs, pq, seed):
    net = Network(16, pairs)
    walks = generate_walks(net, WalkConfig(walks_per_node=2, walk_length=7, p=pq[0], q=pq[1], seed=seed))
    assert len(walks) == 2 * net.node_count
    for w in walks:
        if len(w) > 1:
            assert net.has_edges(w[:-1], w[1:]).all()


class TestSkipgram:
    def test_window_one(self):
        c, o = skipgram_pairs([np.array([0, 1, 2])], 1)
        assert sorted(zip(c.tolist(), o.tolist())) == [(0, 1), (1, 0), (1, 2), (2, 1)]

    def test_window_larger_than_walk(self):
        c, _ = skipgram_pairs([np.array([0, 1, 2])], 5)
        assert len(c) == 6

    def test_noise_distribution(self):
        p = noise_distribution([np.array([0, 0, 0, 0, 1])], 3)
        np.testing.assert_allclose(p, np.array([4**0.75, 1, 0]) / (4**0.75 + 1))

    def test_pair_gradient_matches_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v, up, un = rng.normal(size=6), rng.normal(size=6), rng.normal(size=(5, 6))
            _, dv, dup, dun = sgns_pair_loss(v, up, un)

            def f():
                return sgns_pair_loss(v, up, un)[0]

            assert rel_err(dv, central_diff(f, v)) < 1e-4
            assert rel_err(dup, central_diff(f, up)) < 1e-4
            assert rel_err(dun, central_diff(f, un)) < 1e-4

    def test_loss_at_zero_vectors(self):
        loss, *_ = sgns_pair_loss(np.zeros(3), np.zeros(3), np.zeros((2, 3)))
        assert loss == pytest.approx(3 * np.log(2))


class TestSgns:
    def test_two_node_alternating_walk(self):
        corpus = [np.array([0, 1] * 20)]
        emb = train_sgns(corpus, 2, SgnsConfig(dim=8, window=1, negatives_per_positive=1, epochs=30,
                                               learning_rate=0.05, batch_size=8, seed=0))
        assert emb.loss_trace[-1] < emb.loss_trace[0]
        assert emb.vectors[0] @ emb.context_vectors[1] > 0
        assert emb.vectors[1] @ emb.context_vectors[0] > 0

    def test_loss_decreases_small_lr(self):
        net = Network(30, [(i, (i + 1) % 30) for i in range(30)] + [(i, (i + 7) % 30) for i in range(30)])
        corpus = generate_walks(net, WalkConfig(5, 20, seed=0))
        emb = train_sgns(corpus, 30, SgnsConfig(dim=16, epochs=5, learning_rate=0.01, batch_size=64, seed=0))
        assert emb.loss_trace[-1] < emb.loss_trace[0]
        assert np.isfinite(emb.vectors).all()

    def test_deterministic(self):
        corpus = generate_walks(triangle_plus_pendant(), WalkConfig(5, 10, seed=0))
        cfg = SgnsConfig(dim=4, epochs=2, batch_size=16, seed=3)
        a, b = train_sgns(corpus, 4, cfg), train_sgns(corpus, 4, cfg)
        np.testing.assert_array_equal(a.vectors, b.vectors)
        np.testing.assert_array_equal(a.context_vectors, b.context_vectors)

    def test_divergence_raises(self):
        corpus = generate_walks(triangle_plus_pendant(), WalkConfig(5, 10, seed=0))
        with pytest.raises(FloatingPointError, match="diverged"):
            train_sgns(corpus, 4, SgnsConfig(dim=4, learning_rate=1e200, batch_size=4, seed=0))

    def test_vocab_mismatch(self):
        with pytest.raises(ValueError):
            train_sgns([np.array([0, 5])], 3, SgnsConfig(dim=2))

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_sgns([], 3, SgnsConfig(dim=2))


class TestEmbeddingFile:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tab = EmbeddingTable(["a", "b", "c"], rng.normal(size=(3, 5)))
        save_embeddings(tab, tmp_path / "e.txt")
        back = load_embeddings(tmp_path / "e.txt")
        assert back.keys == tab.keys
        np.testing.assert_array_equal(back.vectors, tab.vectors)
        assert (tmp_path / "e.txt").read_text().splitlines()[0] == "3 5"

    def test_bad_row(self, tmp_path):
        (tmp_path / "e.txt").write_text("1 2\na 1.0\n")
        with pytest.raises(ValueError):
            load_embeddings(tmp_path / "e.txt")
