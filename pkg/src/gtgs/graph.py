"""Interaction graphs, deterministic splits, and hypergraph incidence structures.

Entities carry dense 0-based integer ids. A graph couples two bipartite edge
sets (user-group and user-item). The same data is viewed three ways for
convolution: groups connected by user hyperedges, users connected by group
hyperedges, and users connected by item hyperedges.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# Guards floor(ratio * n) against products like 0.3 * 7 landing just below an
# integer they should reach in exact decimal arithmetic.
_FLOOR_EPS = 1e-9


class EdgeFileError(ValueError):
    """Malformed or empty edge-list file."""


def _normalize_edges(edges, what: str) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{what}: expected (n, 2) id pairs, got shape {arr.shape}")
    if arr.min() < 0:
        raise ValueError(f"{what}: negative id")
    return np.unique(arr, axis=0)


def _split_by_first(pairs: np.ndarray, count: int) -> list[np.ndarray]:
    """Split lexsorted (first, second) pairs into per-first sorted second arrays."""
    firsts = pairs[:, 0] if pairs.size else np.empty(0, dtype=np.int64)
    seconds = pairs[:, 1] if pairs.size else np.empty(0, dtype=np.int64)
    bounds = np.searchsorted(firsts, np.arange(count + 1))
    return [seconds[bounds[i]:bounds[i + 1]] for i in range(count)]


@dataclass(frozen=True)
class InteractionGraph:
    """User/group/item interactions with deduplicated, lexsorted edge lists."""

    num_users: int
    num_groups: int
    num_items: int
    user_group_edges: np.ndarray  # (n, 2) int64 rows (user, group)
    user_item_edges: np.ndarray   # (n, 2) int64 rows (user, item)

    @classmethod
    def from_edges(cls, user_group_edges, user_item_edges,
                   num_users: int | None = None,
                   num_groups: int | None = None,
                   num_items: int | None = None) -> "InteractionGraph":
        ug = _normalize_edges(user_group_edges, "user-group edges")
        ui = _normalize_edges(user_item_edges, "user-item edges")

        def count(explicit, what, *columns):
            observed = max((int(c.max()) + 1 for c in columns if c.size), default=0)
            if explicit is None:
                return observed
            if explicit < observed:
                raise ValueError(f"{what} count {explicit} below max referenced id {observed - 1}")
            return int(explicit)

        return cls(
            num_users=count(num_users, "user", ug[:, 0], ui[:, 0]),
            num_groups=count(num_groups, "group", ug[:, 1]),
            num_items=count(num_items, "item", ui[:, 1]),
            user_group_edges=ug,
            user_item_edges=ui,
        )

    def groups_per_user(self) -> list[np.ndarray]:
        return _split_by_first(self.user_group_edges, self.num_users)

    def items_per_user(self) -> list[np.ndarray]:
        return _split_by_first(self.user_item_edges, self.num_users)

    def users_per_group(self) -> list[np.ndarray]:
        flipped = np.unique(self.user_group_edges[:, ::-1], axis=0) \
            if self.user_group_edges.size else np.empty((0, 2), dtype=np.int64)
        return _split_by_first(flipped, self.num_groups)


def _parse_edge_file(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise EdgeFileError(f"{path}:{lineno}: expected two TAB-separated ids")
            try:
                a, b = int(fields[0]), int(fields[1])
            except ValueError:
                raise EdgeFileError(f"{path}:{lineno}: non-integer id") from None
            if a < 0 or b < 0:
                raise EdgeFileError(f"{path}:{lineno}: negative id")
            rows.append((a, b))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def load_interactions(ug_path, ui_path,
                      num_users: int | None = None,
                      num_groups: int | None = None,
                      num_items: int | None = None) -> InteractionGraph:
    """Load TAB-separated user-group and user-item edge lists."""
    ug = _parse_edge_file(ug_path)
    if ug.size == 0:
        raise EdgeFileError(f"no user-group edges in {ug_path}")
    ui = _parse_edge_file(ui_path)
    if ui.size == 0:
        raise EdgeFileError(f"no user-item edges in {ui_path}")
    return InteractionGraph.from_edges(ug, ui, num_users, num_groups, num_items)


def write_edge_file(path, edges: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for a, b in np.asarray(edges, dtype=np.int64):
            handle.write(f"{a}\t{b}\n")


def write_interactions(graph: InteractionGraph, ug_path, ui_path) -> None:
    write_edge_file(ug_path, graph.user_group_edges)
    write_edge_file(ui_path, graph.user_item_edges)


def graph_statistics(graph: InteractionGraph) -> dict:
    """Entity/edge counts plus the four average density figures."""
    def avg(edges: int, entities: int) -> float:
        return edges / entities if entities else 0.0

    n_ug = len(graph.user_group_edges)
    n_ui = len(graph.user_item_edges)
    return {
        "num_users": graph.num_users,
        "num_groups": graph.num_groups,
        "num_items": graph.num_items,
        "num_user_group_edges": n_ug,
        "num_user_item_edges": n_ui,
        "avg_groups_per_user": avg(n_ug, graph.num_users),
        "avg_users_per_group": avg(n_ug, graph.num_groups),
        "avg_items_per_user": avg(n_ui, graph.num_users),
        "avg_users_per_item": avg(n_ui, graph.num_items),
    }


@dataclass(frozen=True)
class SplitGraph:
    """Training graph plus held-out validation/test group sets per user."""

    train: InteractionGraph
    val_positives: dict[int, np.ndarray]
    test_positives: dict[int, np.ndarray]
    seed: int
    test_ratio: float
    val_ratio: float


def split_train_test(graph: InteractionGraph, test_ratio: float, val_ratio: float,
                     seed: int) -> SplitGraph:
    """Per-user split: floor(test_ratio*n) test groups, then floor(val_ratio*rest)
    validation groups out of the remainder; everything else stays in train.
    User-item edges are never split."""
    if not 0.0 <= test_ratio < 1.0:
        raise ValueError("test_ratio must be in [0, 1)")
    if not 0.0 <= val_ratio < 1.0:
        raise ValueError("val_ratio must be in [0, 1)")
    rng = np.random.default_rng(seed)
    per_user = graph.groups_per_user()
    train_rows = []
    test_pos: dict[int, np.ndarray] = {}
    val_pos: dict[int, np.ndarray] = {}
    for user in range(graph.num_users):
        groups = per_user[user]
        n = len(groups)
        if n == 0:
            continue
        perm = groups[rng.permutation(n)]
        n_test = math.floor(test_ratio * n + _FLOOR_EPS)
        n_val = math.floor(val_ratio * (n - n_test) + _FLOOR_EPS)
        if n_test:
            test_pos[user] = np.sort(perm[:n_test])
        if n_val:
            val_pos[user] = np.sort(perm[n_test:n_test + n_val])
        rest = perm[n_test + n_val:]
        train_rows.append(np.column_stack([np.full(rest.size, user, dtype=np.int64), rest]))
    train_edges = np.concatenate(train_rows) if train_rows else np.empty((0, 2), dtype=np.int64)
    train = InteractionGraph.from_edges(
        train_edges, graph.user_item_edges,
        num_users=graph.num_users, num_groups=graph.num_groups, num_items=graph.num_items)
    return SplitGraph(train, val_pos, test_pos, int(seed), float(test_ratio), float(val_ratio))


def save_split_manifest(split: SplitGraph, path) -> None:
    payload = {
        "seed": split.seed,
        "test_ratio": split.test_ratio,
        "val_ratio": split.val_ratio,
        "num_users": split.train.num_users,
        "num_groups": split.train.num_groups,
        "num_items": split.train.num_items,
        "validation": {str(u): [int(g) for g in groups] for u, groups in sorted(split.val_positives.items())},
        "test": {str(u): [int(g) for g in groups] for u, groups in sorted(split.test_positives.items())},
    }
    write_json(path, payload)


def load_split_manifest(graph: InteractionGraph, path) -> SplitGraph:
    """Rebuild a SplitGraph by removing the manifest's held-out edges from `graph`."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    for key in ("num_users", "num_groups", "num_items"):
        if payload[key] != getattr(graph, key):
            raise ValueError(f"split manifest {key}={payload[key]} does not match graph {getattr(graph, key)}")
    val_pos = {int(u): np.asarray(sorted(g), dtype=np.int64) for u, g in payload["validation"].items()}
    test_pos = {int(u): np.asarray(sorted(g), dtype=np.int64) for u, g in payload["test"].items()}
    held = {(u, int(g)) for u, groups in val_pos.items() for g in groups}
    held |= {(u, int(g)) for u, groups in test_pos.items() for g in groups}
    keep = np.array([(u, g) not in held for u, g in graph.user_group_edges], dtype=bool) \
        if graph.user_group_edges.size else np.empty(0, dtype=bool)
    train = InteractionGraph.from_edges(
        graph.user_group_edges[keep], graph.user_item_edges,
        num_users=graph.num_users, num_groups=graph.num_groups, num_items=graph.num_items)
    return SplitGraph(train, val_pos, test_pos,
                      int(payload["seed"]), float(payload["test_ratio"]), float(payload["val_ratio"]))


def write_json(path, payload) -> None:
    """Canonical JSON writer: sorted keys, fixed layout, trailing newline."""
    text = json.dumps(payload, sort_keys=True, indent=2)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text + "\n")


@dataclass
class IncidenceMatrix:
    """Binary node-by-hyperedge incidence with cached degree vectors."""

    num_nodes: int
    num_hyperedges: int
    matrix: sp.csr_array
    node_degrees: np.ndarray
    hyperedge_degrees: np.ndarray

    @classmethod
    def from_pairs(cls, num_nodes: int, num_hyperedges: int, pairs) -> "IncidenceMatrix":
        arr = _normalize_edges(pairs, "incidences")
        if arr.size:
            if arr[:, 0].max() >= num_nodes:
                raise ValueError("node id out of range")
            if arr[:, 1].max() >= num_hyperedges:
                raise ValueError("hyperedge id out of range")
        matrix = sp.csr_array(
            (np.ones(len(arr)), (arr[:, 0], arr[:, 1])),
            shape=(num_nodes, num_hyperedges))
        node_deg = np.diff(matrix.indptr).astype(np.int64)
        edge_deg = np.bincount(arr[:, 1], minlength=num_hyperedges).astype(np.int64) \
            if arr.size else np.zeros(num_hyperedges, dtype=np.int64)
        return cls(num_nodes, num_hyperedges, matrix, node_deg, edge_deg)

    @cached_property
    def _csc(self) -> sp.csc_array:
        return self.matrix.tocsc()

    @cached_property
    def inv_node_degrees(self) -> np.ndarray:
        # 1/0 := 0 so isolated nodes produce zero output rows.
        out = np.zeros(self.num_nodes)
        nz = self.node_degrees > 0
        out[nz] = 1.0 / self.node_degrees[nz]
        return out

    @cached_property
    def inv_hyperedge_degrees(self) -> np.ndarray:
        out = np.zeros(self.num_hyperedges)
        nz = self.hyperedge_degrees > 0
        out[nz] = 1.0 / self.hyperedge_degrees[nz]
        return out

    @property
    def num_incidences(self) -> int:
        return int(self.matrix.nnz)

    def node_to_edges(self, node: int) -> np.ndarray:
        row = self.matrix.indices[self.matrix.indptr[node]:self.matrix.indptr[node + 1]]
        return np.sort(row.astype(np.int64))

    def edge_to_nodes(self, edge: int) -> np.ndarray:
        csc = self._csc
        col = csc.indices[csc.indptr[edge]:csc.indptr[edge + 1]]
        return np.sort(col.astype(np.int64))

    def transposed(self) -> "IncidenceMatrix":
        pairs = np.column_stack(self.matrix.nonzero())[:, ::-1]
        return IncidenceMatrix.from_pairs(self.num_hyperedges, self.num_nodes, pairs)


def build_user_view_group_hypergraph(train: InteractionGraph) -> IncidenceMatrix:
    """Groups as nodes, users as hyperedges."""
    if train.user_group_edges.size == 0:
        raise ValueError("train graph has no user-group edges")
    return IncidenceMatrix.from_pairs(
        train.num_groups, train.num_users, train.user_group_edges[:, ::-1])


def build_group_view_user_hypergraph(train: InteractionGraph) -> IncidenceMatrix:
    """Users as nodes, groups as hyperedges (transpose of the group hypergraph)."""
    if train.user_group_edges.size == 0:
        raise ValueError("train graph has no user-group edges")
    return IncidenceMatrix.from_pairs(
        train.num_users, train.num_groups, train.user_group_edges)


def build_item_view_user_hypergraph(train: InteractionGraph) -> IncidenceMatrix:
    """Users as nodes, items as hyperedges."""
    if train.user_item_edges.size == 0:
        raise ValueError("train graph has no user-item edges")
    return IncidenceMatrix.from_pairs(
        train.num_users, train.num_items, train.user_item_edges)


def concat_hyperedges(first: IncidenceMatrix, second: IncidenceMatrix) -> IncidenceMatrix:
    """Column-wise concatenation over a shared node set; degree vectors add/append."""
    if first.num_nodes != second.num_nodes:
        raise ValueError("incidence matrices must share the node set")
    matrix = sp.csr_array(sp.hstack([first.matrix, second.matrix]))
    return IncidenceMatrix(
        num_nodes=first.num_nodes,
        num_hyperedges=first.num_hyperedges + second.num_hyperedges,
        matrix=matrix,
        node_degrees=first.node_degrees + second.node_degrees,
        hyperedge_degrees=np.concatenate([first.hyperedge_degrees, second.hyperedge_degrees]),
    )


@dataclass(frozen=True)
class HypergraphSet:
    """The three incidence views built from one training graph."""

    groups_by_users: IncidenceMatrix   # group nodes, user hyperedges
    users_by_groups: IncidenceMatrix   # user nodes, group hyperedges
    users_by_items: IncidenceMatrix    # user nodes, item hyperedges

    @classmethod
    def from_graph(cls, train: InteractionGraph) -> "HypergraphSet":
        return cls(
            groups_by_users=build_user_view_group_hypergraph(train),
            users_by_groups=build_group_view_user_hypergraph(train),
            users_by_items=build_item_view_user_hypergraph(train),
        )


def cap_group_degree(train: InteractionGraph, k: int, seed: int) -> InteractionGraph:
    """Keep a uniform random subset of exactly k training groups for users above k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for user, groups in enumerate(train.groups_per_user()):
        if len(groups) > k:
            groups = np.sort(rng.choice(groups, size=k, replace=False))
        if len(groups):
            rows.append(np.column_stack([np.full(len(groups), user, dtype=np.int64), groups]))
    edges = np.concatenate(rows) if rows else np.empty((0, 2), dtype=np.int64)
    return InteractionGraph.from_edges(
        edges, train.user_item_edges,
        num_users=train.num_users, num_groups=train.num_groups, num_items=train.num_items)


def generate_synthetic(num_clusters: int, users_per_cluster: int, groups_per_cluster: int,
                       items_per_cluster: int, in_cluster_prob: float, noise_prob: float,
                       seed: int) -> InteractionGraph:
    """Planted-cluster benchmark generator.

    Each user joins same-cluster groups/items with `in_cluster_prob` and foreign
    ones with `noise_prob`. Every user is topped up (from its own cluster) to at
    least two group edges and one item edge so splits stay non-degenerate.
    """
    for name, value in (("in_cluster_prob", in_cluster_prob), ("noise_prob", noise_prob)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")
    if min(num_clusters, users_per_cluster, groups_per_cluster, items_per_cluster) < 1:
        raise ValueError("all cluster size parameters must be >= 1")
    if groups_per_cluster < 2:
        raise ValueError("groups_per_cluster must be >= 2 to guarantee two in-cluster group edges")

    num_users = num_clusters * users_per_cluster
    num_groups = num_clusters * groups_per_cluster
    num_items = num_clusters * items_per_cluster
    user_cluster = np.repeat(np.arange(num_clusters), users_per_cluster)
    group_cluster = np.repeat(np.arange(num_clusters), groups_per_cluster)
    item_cluster = np.repeat(np.arange(num_clusters), items_per_cluster)

    rng = np.random.default_rng(seed)
    group_prob = np.where(user_cluster[:, None] == group_cluster[None, :], in_cluster_prob, noise_prob)
    item_prob = np.where(user_cluster[:, None] == item_cluster[None, :], in_cluster_prob, noise_prob)
    ug_mask = rng.random((num_users, num_groups)) < group_prob
    ui_mask = rng.random((num_users, num_items)) < item_prob

    for user in range(num_users):
        have = int(ug_mask[user].sum())
        if have < 2:
            own = np.flatnonzero((group_cluster == user_cluster[user]) & ~ug_mask[user])
            ug_mask[user, rng.choice(own, size=2 - have, replace=False)] = True
        if not ui_mask[user].any():
            own_items = np.flatnonzero(item_cluster == user_cluster[user])
            ui_mask[user, rng.choice(own_items)] = True

    ug = np.column_stack(np.nonzero(ug_mask))
    ui = np.column_stack(np.nonzero(ui_mask))
    return InteractionGraph.from_edges(
        ug, ui, num_users=num_users, num_groups=num_groups, num_items=num_items)
