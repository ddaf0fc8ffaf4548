"""Graph construction, splitting, capping, and the synthetic generator."""

import os

import numpy as np
import pytest

from gtgs.graph import (EdgeFileError, HypergraphSet, IncidenceMatrix,
                        InteractionGraph, build_group_view_user_hypergraph,
                        build_item_view_user_hypergraph,
                        build_user_view_group_hypergraph, cap_group_degree,
                        concat_hyperedges, generate_synthetic, graph_statistics,
                        load_interactions, load_split_manifest,
                        save_split_manifest, split_train_test,
                        write_interactions)


def _write(path, lines):
    path.write_text("".join(f"{a}\t{b}\n" for a, b in lines), encoding="utf-8")


@pytest.fixture
def toy_files(tmp_path):
    ug = tmp_path / "ug.tsv"
    ui = tmp_path / "ui.tsv"
    _write(ug, [(0, 0), (0, 0), (1, 2)])
    _write(ui, [(0, 0), (1, 1)])
    return ug, ui


class TestLoading:
    def test_duplicate_edges_are_removed(self, toy_files):
        graph = load_interactions(*toy_files)
        assert len(graph.user_group_edges) == 2
        assert graph.user_group_edges.tolist() == [[0, 0], [1, 2]]

    def test_counts_default_to_max_id_plus_one(self, toy_files):
        graph = load_interactions(*toy_files)
        assert (graph.num_users, graph.num_groups, graph.num_items) == (2, 3, 2)

    def test_count_overrides(self, toy_files):
        graph = load_interactions(*toy_files, num_groups=10)
        assert graph.num_groups == 10
        with pytest.raises(ValueError):
            load_interactions(*toy_files, num_groups=1)

    def test_empty_user_item_file_is_an_error(self, tmp_path):
        ug = tmp_path / "ug.tsv"
        ui = tmp_path / "ui.tsv"
        _write(ug, [(0, 0)])
        ui.write_text("", encoding="utf-8")
        with pytest.raises(EdgeFileError, match="no user-item edges"):
            load_interactions(ug, ui)

    def test_malformed_line_reports_line_number(self, tmp_path):
        ug = tmp_path / "ug.tsv"
        ui = tmp_path / "ui.tsv"
        ug.write_text("0\t0\nnot-a-number\t1\n", encoding="utf-8")
        _write(ui, [(0, 0)])
        with pytest.raises(EdgeFileError, match=":2"):
            load_interactions(ug, ui)

    def test_wrong_field_count(self, tmp_path):
        ug = tmp_path / "ug.tsv"
        ui = tmp_path / "ui.tsv"
        ug.write_text("0 0\n", encoding="utf-8")  # space, not TAB
        _write(ui, [(0, 0)])
        with pytest.raises(EdgeFileError, match=":1"):
            load_interactions(ug, ui)

    def test_roundtrip(self, tmp_path):
        graph = generate_synthetic(2, 4, 3, 3, 0.5, 0.1, seed=11)
        ug = tmp_path / "ug.tsv"
        ui = tmp_path / "ui.tsv"
        write_interactions(graph, ug, ui)
        back = load_interactions(ug, ui)
        assert back.user_group_edges.tolist() == graph.user_group_edges.tolist()
        assert back.user_item_edges.tolist() == graph.user_item_edges.tolist()

    @pytest.mark.skipif("GTGS_STEAM_DIR" not in os.environ,
                        reason="set GTGS_STEAM_DIR to the Steam edge lists to run")
    def test_steam_ingestion_matches_published_counts(self):
        root = os.environ["GTGS_STEAM_DIR"]
        graph = load_interactions(os.path.join(root, "user_group.tsv"),
                                  os.path.join(root, "user_item.tsv"))
        stats = graph_statistics(graph)
        assert stats["num_users"] == 19608
        assert stats["num_groups"] == 46587
        assert stats["num_items"] == 3951
        assert stats["num_user_group_edges"] == 105271
        assert round(stats["avg_groups_per_user"], 2) == 5.37
        assert round(stats["avg_items_per_user"], 2) == 61.71


class TestSplit:
    def test_single_group_user_keeps_it_in_train(self):
        graph = InteractionGraph.from_edges([(0, 0)], [(0, 0)])
        split = split_train_test(graph, 0.3, 0.0, seed=1)
        assert 0 not in split.test_positives
        assert split.train.user_group_edges.tolist() == [[0, 0]]

    def test_floor_counts_for_ten_groups(self):
        # 10 groups at test 0.3 / val 0.2: floor(3.0)=3 test, floor(0.2*7)=1 val, 6 train
        edges = [(0, g) for g in range(10)]
        graph = InteractionGraph.from_edges(edges, [(0, 0)])
        split = split_train_test(graph, 0.3, 0.2, seed=5)
        assert len(split.test_positives[0]) == 3
        assert len(split.val_positives[0]) == 1
        assert len(split.train.groups_per_user()[0]) == 6

    def test_same_seed_gives_identical_split(self):
        graph = generate_synthetic(3, 10, 5, 4, 0.4, 0.05, seed=2)
        a = split_train_test(graph, 0.3, 0.2, seed=9)
        b = split_train_test(graph, 0.3, 0.2, seed=9)
        assert a.train.user_group_edges.tolist() == b.train.user_group_edges.tolist()
        assert {u: v.tolist() for u, v in a.test_positives.items()} \
            == {u: v.tolist() for u, v in b.test_positives.items()}

    def test_split_soundness(self):
        graph = generate_synthetic(3, 15, 6, 5, 0.4, 0.05, seed=3)
        split = split_train_test(graph, 0.3, 0.2, seed=4)
        per_user = graph.groups_per_user()
        train_per_user = split.train.groups_per_user()
        for user in range(graph.num_users):
            train = set(map(int, train_per_user[user]))
            val = set(map(int, split.val_positives.get(user, ())))
            test = set(map(int, split.test_positives.get(user, ())))
            # pairwise disjoint, union preserved
            assert not (train & val) and not (train & test) and not (val & test)
            assert train | val | test == set(map(int, per_user[user]))
            n = len(per_user[user])
            assert len(test) == int(0.3 * n + 1e-9)
            assert len(val) == int(0.2 * (n - len(test)) + 1e-9)
            assert len(train) >= 1 or n == 0

    def test_user_item_edges_never_split(self):
        graph = generate_synthetic(2, 10, 4, 5, 0.5, 0.1, seed=6)
        split = split_train_test(graph, 0.5, 0.3, seed=6)
        assert split.train.user_item_edges.tolist() == graph.user_item_edges.tolist()

    def test_manifest_roundtrip_and_determinism(self, tmp_path):
        graph = generate_synthetic(2, 10, 4, 5, 0.3, 0.05, seed=8)
        split = split_train_test(graph, 0.3, 0.2, seed=8)
        path = tmp_path / "split.json"
        save_split_manifest(split, path)
        first = path.read_bytes()
        save_split_manifest(split, path)
        assert path.read_bytes() == first
        back = load_split_manifest(graph, path)
        assert back.train.user_group_edges.tolist() == split.train.user_group_edges.tolist()
        assert {u: v.tolist() for u, v in back.val_positives.items()} \
            == {u: v.tolist() for u, v in split.val_positives.items()}


class TestIncidence:
    def test_toy_group_hypergraph(self):
        train = InteractionGraph.from_edges([(0, 0), (0, 1), (1, 1)], [(0, 0), (1, 0)])
        h = build_user_view_group_hypergraph(train)
        assert (h.num_nodes, h.num_hyperedges) == (2, 2)
        assert h.num_incidences == 3
        assert h.hyperedge_degrees.tolist() == [2, 1]
        assert h.node_degrees.tolist() == [1, 2]

    def test_isolated_node_has_degree_zero(self):
        train = InteractionGraph.from_edges([(0, 0)], [(0, 0)], num_groups=3)
        h = build_user_view_group_hypergraph(train)
        assert h.node_degrees[2] == 0

    def test_group_view_is_the_transpose(self):
        train = generate_synthetic(2, 8, 4, 4, 0.5, 0.1, seed=12)
        h = build_user_view_group_hypergraph(train)
        ug = build_group_view_user_hypergraph(train)
        for user in range(train.num_users):
            assert ug.node_to_edges(user).tolist() == h.edge_to_nodes(user).tolist()
        for group in range(train.num_groups):
            assert ug.edge_to_nodes(group).tolist() == h.node_to_edges(group).tolist()

    def test_item_hyperedge_members(self):
        train = InteractionGraph.from_edges([(0, 0)], [(0, 0), (1, 0)])
        ui = build_item_view_user_hypergraph(train)
        assert ui.edge_to_nodes(0).tolist() == [0, 1]

    def test_degree_duality(self):
        for seed in range(5):
            train = generate_synthetic(2, 10, 4, 6, 0.4, 0.1, seed=seed)
            for inc in HypergraphSet.from_graph(train).__dict__.values():
                assert inc.node_degrees.sum() == inc.hyperedge_degrees.sum() == inc.num_incidences

    def test_adjacencies_describe_identical_incidences(self):
        inc = IncidenceMatrix.from_pairs(4, 3, [(0, 0), (1, 0), (1, 2), (3, 1)])
        from_nodes = {(n, e) for n in range(4) for e in inc.node_to_edges(n)}
        from_edges = {(n, e) for e in range(3) for n in inc.edge_to_nodes(e)}
        assert from_nodes == from_edges

    def test_concat_adds_degrees(self):
        a = IncidenceMatrix.from_pairs(3, 2, [(0, 0), (1, 1)])
        b = IncidenceMatrix.from_pairs(3, 1, [(0, 0), (2, 0)])
        joint = concat_hyperedges(a, b)
        assert joint.num_hyperedges == 3
        assert joint.node_degrees.tolist() == (a.node_degrees + b.node_degrees).tolist()
        assert joint.hyperedge_degrees.tolist() == [1, 1, 2]

    def test_empty_train_graph_rejected(self):
        train = InteractionGraph.from_edges([], [(0, 0)], num_users=1, num_groups=1)
        with pytest.raises(ValueError):
            build_user_view_group_hypergraph(train)


class TestCapGroupDegree:
    def test_below_threshold_unchanged(self):
        train = InteractionGraph.from_edges([(0, 0), (0, 1)], [(0, 0)], num_groups=5)
        capped = cap_group_degree(train, 4, seed=0)
        assert capped.user_group_edges.tolist() == train.user_group_edges.tolist()

    def test_cap_applies(self):
        train = InteractionGraph.from_edges([(0, g) for g in range(6)], [(0, 0)])
        capped = cap_group_degree(train, 1, seed=0)
        assert len(capped.groups_per_user()[0]) == 1

    def test_never_increases_degree_and_items_untouched(self):
        train = generate_synthetic(3, 10, 5, 4, 0.5, 0.1, seed=13)
        for k in (1, 2, 3, 4):
            capped = cap_group_degree(train, k, seed=1)
            for before, after in zip(train.groups_per_user(), capped.groups_per_user()):
                assert len(after) <= min(len(before), k)
                assert set(after.tolist()) <= set(before.tolist())
            assert capped.user_item_edges.tolist() == train.user_item_edges.tolist()

    def test_deterministic(self):
        train = generate_synthetic(2, 10, 5, 4, 0.5, 0.1, seed=14)
        a = cap_group_degree(train, 2, seed=3)
        b = cap_group_degree(train, 2, seed=3)
        assert a.user_group_edges.tolist() == b.user_group_edges.tolist()


class TestSyntheticGenerator:
    def test_zero_noise_keeps_edges_in_cluster(self):
        graph = generate_synthetic(4, 10, 5, 5, 0.4, 0.0, seed=20)
        user_cluster = np.repeat(np.arange(4), 10)
        group_cluster = np.repeat(np.arange(4), 5)
        item_cluster = np.repeat(np.arange(4), 5)
        for u, g in graph.user_group_edges:
            assert user_cluster[u] == group_cluster[g]
        for u, i in graph.user_item_edges:
            assert user_cluster[u] == item_cluster[i]

    def test_minimum_degree_guarantees(self):
        graph = generate_synthetic(3, 20, 2, 1, 0.05, 0.0, seed=21)
        assert all(len(g) >= 2 for g in graph.groups_per_user())
        assert all(len(i) >= 1 for i in graph.items_per_user())

    def test_impossible_guarantee_is_an_error(self):
        with pytest.raises(ValueError):
            generate_synthetic(3, 5, 1, 2, 0.5, 0.0, seed=0)

    def test_null_model_symmetry(self):
        # equal probabilities: in- and cross-cluster edge rates agree within noise
        graph = generate_synthetic(4, 50, 40, 10, 0.3, 0.3, seed=22)
        user_cluster = np.repeat(np.arange(4), 50)
        group_cluster = np.repeat(np.arange(4), 40)
        same = sum(user_cluster[u] == group_cluster[g] for u, g in graph.user_group_edges)
        frac = same / len(graph.user_group_edges)
        # in-cluster pair share is 1/4; binomial 3-sigma band
        n = len(graph.user_group_edges)
        assert abs(frac - 0.25) < 3 * np.sqrt(0.25 * 0.75 / n) + 0.01

    def test_cross_cluster_fraction_matches_noise_share(self):
        # derived by counting edges by cluster label in the generated graph
        graph = generate_synthetic(5, 100, 40, 10, 0.2, 0.01, seed=23)
        user_cluster = np.repeat(np.arange(5), 100)
        group_cluster = np.repeat(np.arange(5), 40)
        cross = sum(user_cluster[u] != group_cluster[g] for u, g in graph.user_group_edges)
        frac = cross / len(graph.user_group_edges)
        expected_in = 40 * 0.2
        expected_cross = 160 * 0.01
        expected = expected_cross / (expected_in + expected_cross)
        assert abs(frac - expected) < 0.03

    def test_deterministic(self):
        a = generate_synthetic(2, 5, 3, 3, 0.5, 0.1, seed=30)
        b = generate_synthetic(2, 5, 3, 3, 0.5, 0.1, seed=30)
        assert a.user_group_edges.tolist() == b.user_group_edges.tolist()
        assert a.user_item_edges.tolist() == b.user_item_edges.tolist()


class TestStatistics:
    def test_average_densities(self):
        graph = InteractionGraph.from_edges(
            [(0, 0), (0, 1), (1, 0)], [(0, 0), (1, 1), (1, 0)], num_items=4)
        stats = graph_statistics(graph)
        assert stats["avg_groups_per_user"] == pytest.approx(3 / 2)
        assert stats["avg_users_per_group"] == pytest.approx(3 / 2)
        assert stats["avg_items_per_user"] == pytest.approx(3 / 2)
        assert stats["avg_users_per_item"] == pytest.approx(3 / 4)
