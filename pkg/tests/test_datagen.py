import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from kgdebias.datagen import (
    GENDER_RELATION,
    OCCUPATION_RELATION,
    SyntheticKgSpec,
    SyntheticNetSpec,
    expected_edge_count,
    gen_kg,
    gen_network,
    leak_oracle_accuracy,
)
from kgdebias.graph import load_edge_list, load_labels, load_triples, save_edge_list, save_labels, save_triples


class TestNetwork:
    def test_edge_count(self):
        net = gen_network(SyntheticNetSpec(100, 2, seed=0))
        assert net.node_count == 100
        assert net.edge_count == expected_edge_count(SyntheticNetSpec(100, 2)) == 3 + 2 * 97

    @pytest.mark.parametrize("m", [1, 3])
    def test_connected(self, m):
        net = gen_network(SyntheticNetSpec(300, m, seed=4))
        a = csr_matrix((np.ones(net.edge_count), (net.edges[:, 0], net.edges[:, 1])), shape=(300, 300))
        assert connected_components(a, directed=False)[0] == 1

    def test_max_degree_grows(self):
        small = [gen_network(SyntheticNetSpec(100, 2, seed=s)).degrees.max() for s in range(10)]
        large = [gen_network(SyntheticNetSpec(1000, 2, seed=s)).degrees.max() for s in range(10)]
        assert np.mean(large) > np.mean(small)

    def test_heavy_tail(self):
        deg = gen_network(SyntheticNetSpec(2000, 2, seed=0)).degrees
        assert deg.max() > 10 * np.median(deg)

    def test_deterministic_and_round_trip(self, tmp_path):
        a = gen_network(SyntheticNetSpec(200, 2, seed=9))
        assert a == gen_network(SyntheticNetSpec(200, 2, seed=9))
        save_edge_list(a, tmp_path / "n.tsv")
        assert load_edge_list(tmp_path / "n.tsv") == a

    def test_validation(self):
        with pytest.raises(ValueError, match="attachment_m"):
            SyntheticNetSpec(10, 0)
        with pytest.raises(ValueError, match="n_nodes"):
            SyntheticNetSpec(2, 2)
        for bad in (-0.1, 1.5):
            with pytest.raises(ValueError, match="triad_probability"):
                SyntheticNetSpec(10, 2, bad)


def clustering(net):
    a = csr_matrix((np.ones(2 * net.edge_count), (np.r_[net.edges[:, 0], net.edges[:, 1]],
                                                  np.r_[net.edges[:, 1], net.edges[:, 0]])), shape=(net.node_count,) * 2)
    triangles = (a @ a).multiply(a).sum() / 6
    wedges = np.sum(net.degrees * (net.degrees - 1) / 2)
    return 3 * triangles / wedges


class TestTriadFormation:
    @pytest.mark.parametrize("pt", [0.3, 1.0])
    def test_edge_count_unchanged(self, pt):
        spec = SyntheticNetSpec(500, 3, pt, seed=1)
        assert gen_network(spec).edge_count == expected_edge_count(spec)

    def test_raises_clustering(self):
        plain = clustering(gen_network(SyntheticNetSpec(2000, 2, 0.0, seed=0)))
        triads = clustering(gen_network(SyntheticNetSpec(2000, 2, 0.8, seed=0)))
        assert triads > 5 * plain

    def test_still_heavy_tailed_and_connected(self):
        net = gen_network(SyntheticNetSpec(2000, 2, 0.5, seed=3))
        assert net.degrees.max() > 10 * np.median(net.degrees)
        a = csr_matrix((np.ones(net.edge_count), (net.edges[:, 0], net.edges[:, 1])), shape=(2000, 2000))
        assert connected_components(a, directed=False)[0] == 1


class TestKg:
    def test_one_gender_and_occupation_each(self):
        kg, g, o = gen_kg(SyntheticKgSpec(n_persons=300, seed=1))
        for rel in (GENDER_RELATION, OCCUPATION_RELATION):
            heads = kg.triples[kg.triples[:, 1] == kg.relations[rel], 0]
            assert sorted(heads.tolist()) == sorted(g.entities.tolist())
        assert len(g) == len(o) == 300
        gender_of = {kg.entities.names[t]: None for t in kg.triples[kg.triples[:, 1] == kg.relations[GENDER_RELATION], 2]}
        assert set(gender_of) == {"female", "male"}

    def test_gender_triples_match_labels(self):
        kg, g, _ = gen_kg(SyntheticKgSpec(n_persons=200, seed=2))
        rows = kg.triples[kg.triples[:, 1] == kg.relations[GENDER_RELATION]]
        named = {int(h): kg.entities.names[t] for h, _, t in rows}
        for e, c in zip(g.entities, g.classes):
            assert named[int(e)] == g.class_names[c]

    def test_balance_binomial(self):
        _, g, _ = gen_kg(SyntheticKgSpec(n_persons=10_000, max_extra=1, seed=3))
        assert abs(g.counts()[1] - 5000) <= 3 * np.sqrt(10_000 * 0.25)

    def test_full_leak_means_no_shared_tails(self):
        kg, g, _ = gen_kg(SyntheticKgSpec(n_persons=400, structural_leak=1.0, seed=0))
        extra = np.isin(kg.triples[:, 1], [kg.relations[f"related_{j}"] for j in range(4)])
        cls = dict(zip(g.entities.tolist(), g.classes.tolist()))
        owners: dict = {}
        for h, _, t in kg.triples[extra]:
            owners.setdefault(int(t), set()).add(cls[int(h)])
        assert all(len(v) == 1 for v in owners.values())

    def test_correlation_one_uses_preferred_half(self):
        _, g, o = gen_kg(SyntheticKgSpec(n_persons=500, occupation_gender_correlation=1.0, seed=0))
        assert (o.classes % 2 == g.classes).all()

    def test_deterministic(self):
        a = gen_kg(SyntheticKgSpec(n_persons=150, seed=5))
        b = gen_kg(SyntheticKgSpec(n_persons=150, seed=5))
        assert a[0] == b[0]
        assert a[1].as_dict() == b[1].as_dict() and a[2].as_dict() == b[2].as_dict()

    def test_round_trip_through_tsv(self, tmp_path):
        kg, g, o = gen_kg(SyntheticKgSpec(n_persons=150, seed=5))
        save_triples(kg, tmp_path / "t.tsv")
        save_labels(g, kg, tmp_path / "g.tsv")
        back = load_triples(tmp_path / "t.tsv")
        assert back == kg
        assert load_labels(tmp_path / "g.tsv", back, "gender").as_dict() == g.as_dict()

    @pytest.mark.parametrize(
        "field,value",
        [("gender_balance", 0.0), ("structural_leak", 1.5), ("occupation_gender_correlation", -0.1), ("n_persons", 0)],
    )
    def test_validation_names_field(self, field, value):
        with pytest.raises(ValueError, match=field):
            SyntheticKgSpec(**{field: value})


class TestLeakOracle:
    def test_monotone_in_leak(self):
        grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        acc = [leak_oracle_accuracy(*gen_kg(SyntheticKgSpec(structural_leak=s, seed=0))[:2]) for s in grid]
        assert all(b >= a for a, b in zip(acc, acc[1:]))
        assert abs(acc[0] - 0.5) < 0.05
        assert acc[-1] > 0.99

    def test_gender_relation_is_excluded(self):
        kg, g, _ = gen_kg(SyntheticKgSpec(structural_leak=0.0, seed=1))
        assert abs(leak_oracle_accuracy(kg, g) - 0.5) < 0.05
        assert leak_oracle_accuracy(kg, g, exclude_relations=()) == 1.0
