"""Degree-normalized incidence products: gather to hyperedges, scatter to nodes.

The sparse path runs on the incidence CSR structure; `dense_reference_product`
is a deliberately loop-based reference used by the test suites. Both apply the
1/0 := 0 convention, so isolated nodes and empty hyperedges yield zero rows.
"""

from __future__ import annotations

import numpy as np

from .graph import IncidenceMatrix


def _as_matrix(values, rows: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{what}: expected a 2-d array, got ndim={arr.ndim}")
    if arr.shape[0] != rows:
        raise ValueError(f"{what}: expected {rows} rows, got {arr.shape[0]}")
    return arr


def hyperedge_gather(inc: IncidenceMatrix, node_emb) -> np.ndarray:
    """Mean of member-node rows per hyperedge (degree-0 hyperedges give zeros)."""
    x = _as_matrix(node_emb, inc.num_nodes, "node embeddings")
    return inc.inv_hyperedge_degrees[:, None] * (inc.matrix.T @ x)


def node_scatter(inc: IncidenceMatrix, edge_emb) -> np.ndarray:
    """Mean of incident-hyperedge rows per node (degree-0 nodes give zeros)."""
    q = _as_matrix(edge_emb, inc.num_hyperedges, "hyperedge embeddings")
    return inc.inv_node_degrees[:, None] * (inc.matrix @ q)


def gather_adjoint(inc: IncidenceMatrix, edge_grad) -> np.ndarray:
    """Adjoint of hyperedge_gather: maps hyperedge-row gradients back to nodes."""
    g = _as_matrix(edge_grad, inc.num_hyperedges, "hyperedge gradients")
    return inc.matrix @ (inc.inv_hyperedge_degrees[:, None] * g)


def scatter_adjoint(inc: IncidenceMatrix, node_grad) -> np.ndarray:
    """Adjoint of node_scatter: maps node-row gradients back to hyperedges."""
    g = _as_matrix(node_grad, inc.num_nodes, "node gradients")
    return inc.matrix.T @ (inc.inv_node_degrees[:, None] * g)


def dense_reference_product(h_dense, x, side: str) -> np.ndarray:
    """Explicit dense evaluation of the normalized products, for small instances.

    side="gather": per hyperedge, mean of its member-node rows of x.
    side="scatter": per node, mean of its incident-hyperedge rows of x.
    """
    h = np.asarray(h_dense, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("incidence must be 2-d")
    num_nodes, num_edges = h.shape
    x = np.asarray(x, dtype=np.float64)
    if side == "gather":
        x = _as_matrix(x, num_nodes, "node embeddings")
        out = np.zeros((num_edges, x.shape[1]))
        for edge in range(num_edges):
            members = [node for node in range(num_nodes) if h[node, edge] != 0]
            if not members:
                continue
            total = np.zeros(x.shape[1])
            for node in members:
                total = total + x[node]
            out[edge] = total / len(members)
        return out
    if side == "scatter":
        x = _as_matrix(x, num_edges, "hyperedge embeddings")
        out = np.zeros((num_nodes, x.shape[1]))
        for node in range(num_nodes):
            incident = [edge for edge in range(num_edges) if h[node, edge] != 0]
            if not incident:
                continue
            total = np.zeros(x.shape[1])
            for edge in incident:
                total = total + x[edge]
            out[node] = total / len(incident)
        return out
    raise ValueError("side must be 'gather' or 'scatter'")


def normalize_rows(values, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-normalize; rows with norm below eps become zero rows.

    Returns (normalized, norms, nonzero_mask).
    """
    arr = np.asarray(values, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1)
    ok = norms >= eps
    out = np.zeros_like(arr)
    out[ok] = arr[ok] / norms[ok, None]
    return out, norms, ok
