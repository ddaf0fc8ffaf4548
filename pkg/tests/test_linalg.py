"""Sparse gather/scatter against the dense loop-based reference."""

import numpy as np
import pytest

from gtgs.graph import IncidenceMatrix
from gtgs.linalg import (dense_reference_product, gather_adjoint,
                         hyperedge_gather, node_scatter, scatter_adjoint)


def random_instance(num_nodes, num_edges, density, seed, d=3):
    rng = np.random.default_rng(seed)
    mask = rng.random((num_nodes, num_edges)) < density
    inc = IncidenceMatrix.from_pairs(num_nodes, num_edges, np.argwhere(mask))
    x = rng.normal(size=(num_nodes, d))
    q = rng.normal(size=(num_edges, d))
    return inc, mask.astype(float), x, q


class TestGather:
    def test_mean_of_basis_rows(self):
        inc = IncidenceMatrix.from_pairs(2, 1, [(0, 0), (1, 0)])
        out = hyperedge_gather(inc, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert out.tolist() == [[0.5, 0.5]]

    def test_degree_one_hyperedge_copies_the_row(self):
        inc = IncidenceMatrix.from_pairs(3, 1, [(2, 0)])
        x = np.arange(6.0).reshape(3, 2)
        assert hyperedge_gather(inc, x).tolist() == [x[2].tolist()]

    def test_degree_zero_hyperedge_gives_zero_row(self):
        inc = IncidenceMatrix.from_pairs(2, 2, [(0, 0)])
        out = hyperedge_gather(inc, np.ones((2, 3)))
        assert out[1].tolist() == [0.0, 0.0, 0.0]

    def test_against_dense_oracle(self):
        inc, h, x, _ = random_instance(5, 3, 0.5, seed=0)
        expected = dense_reference_product(h, x, "gather")
        assert np.abs(hyperedge_gather(inc, x) - expected).max() < 1e-12

    def test_dimension_mismatch(self):
        inc = IncidenceMatrix.from_pairs(2, 1, [(0, 0)])
        with pytest.raises(ValueError):
            hyperedge_gather(inc, np.ones((3, 2)))


class TestScatter:
    def test_single_incident_hyperedge_copies_the_row(self):
        inc = IncidenceMatrix.from_pairs(2, 2, [(0, 1)])
        q = np.array([[5.0, 5.0], [1.0, 2.0]])
        out = node_scatter(inc, q)
        assert out[0].tolist() == [1.0, 2.0]
        assert out[1].tolist() == [0.0, 0.0]

    def test_mean_of_two_hyperedges(self):
        inc = IncidenceMatrix.from_pairs(1, 2, [(0, 0), (0, 1)])
        out = node_scatter(inc, np.array([[2.0, 0.0], [0.0, 2.0]]))
        assert out.tolist() == [[1.0, 1.0]]

    def test_against_dense_oracle(self):
        inc, h, _, q = random_instance(6, 4, 0.4, seed=1)
        expected = dense_reference_product(h, q, "scatter")
        assert np.abs(node_scatter(inc, q) - expected).max() < 1e-12

    def test_dimension_mismatch(self):
        inc = IncidenceMatrix.from_pairs(2, 1, [(0, 0)])
        with pytest.raises(ValueError):
            node_scatter(inc, np.ones((2, 2)))


class TestDenseReference:
    def test_identity_incidence_returns_input(self):
        h = np.eye(4)
        x = np.random.default_rng(2).normal(size=(4, 3))
        assert np.array_equal(dense_reference_product(h, x, "gather"), x)
        assert np.array_equal(dense_reference_product(h, x, "scatter"), x)

    def test_all_zero_incidence_gives_zeros(self):
        h = np.zeros((3, 2))
        out = dense_reference_product(h, np.ones((3, 2)), "gather")
        assert not out.any()

    def test_unknown_side(self):
        with pytest.raises(ValueError):
            dense_reference_product(np.eye(2), np.eye(2), "sideways")

    def test_sparse_and_dense_paths_agree_on_random_instances(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n = rng.integers(1, 100)
            m = rng.integers(1, 100)
            inc, h, x, q = random_instance(n, m, rng.uniform(0.05, 0.6), seed=seed + 100, d=4)
            assert np.abs(hyperedge_gather(inc, x)
                          - dense_reference_product(h, x, "gather")).max() < 1e-12
            assert np.abs(node_scatter(inc, q)
                          - dense_reference_product(h, q, "scatter")).max() < 1e-12


class TestProperties:
    def test_linearity(self):
        inc, _, x, q = random_instance(8, 5, 0.4, seed=3)
        y = np.random.default_rng(4).normal(size=x.shape)
        a, b = 1.7, -0.4
        lhs = hyperedge_gather(inc, a * x + b * y)
        rhs = a * hyperedge_gather(inc, x) + b * hyperedge_gather(inc, y)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_output_rows_in_convex_hull_of_inputs(self):
        for seed in range(10):
            inc, h, x, q = random_instance(7, 5, 0.5, seed=seed)
            out = hyperedge_gather(inc, x)
            for edge in range(inc.num_hyperedges):
                members = inc.edge_to_nodes(edge)
                if members.size == 0:
                    continue
                lo = x[members].min(axis=0) - 1e-12
                hi = x[members].max(axis=0) + 1e-12
                assert ((out[edge] >= lo) & (out[edge] <= hi)).all()

    def test_adjoints_satisfy_inner_product_identity(self):
        # <gather(x), g> == <x, gather_adjoint(g)> and likewise for scatter
        inc, _, x, q = random_instance(9, 6, 0.4, seed=5, d=4)
        rng = np.random.default_rng(6)
        g_edge = rng.normal(size=(inc.num_hyperedges, 4))
        g_node = rng.normal(size=(inc.num_nodes, 4))
        lhs = float((hyperedge_gather(inc, x) * g_edge).sum())
        rhs = float((x * gather_adjoint(inc, g_edge)).sum())
        assert abs(lhs - rhs) < 1e-10
        lhs = float((node_scatter(inc, q) * g_node).sum())
        rhs = float((q * scatter_adjoint(inc, g_node)).sum())
        assert abs(lhs - rhs) < 1e-10
