"""Embedding tables, the transitional convolution layer, and full forward passes.

All layers are linear: gather node rows to hyperedges, add a scaled intrinsic
hyperedge embedding, scatter the fused rows back to nodes. Every intermediate
is retained on the trace so gradients can be accumulated analytically.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import HypergraphSet, IncidenceMatrix, concat_hyperedges
from .linalg import hyperedge_gather, node_scatter

VARIANT_MODES = ("default", "gcn_item", "joint_simultaneous", "joint_sequential")
SCORE_VIEWS = ("combined", "item")
INIT_STD = 0.1

_CHECKPOINT_MAGIC = b"GTGSCKP1"


@dataclass(frozen=True)
class Hyperparams:
    """Model and training knobs; validated on construction."""

    gamma: float = 1.0        # transition intensity
    beta: float = 0.5         # item-view share in the combined user embedding
    tau_u: float = 0.2        # cross-view contrastive temperature
    tau_g: float = 0.2        # group spread temperature
    lambda_ssl: float = 0.1   # weight on both self-supervised terms
    lambda_l2: float = 1e-7   # weight on the squared-parameter penalty
    lr: float = 0.05
    d: int = 64
    num_layers: int = 1
    seed: int = 0
    patience: int = 10        # evaluations without improvement before stopping
    k_list: tuple[int, ...] = (10, 20)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.tau_u <= 0 or self.tau_g <= 0:
            raise ValueError("temperatures must be > 0")
        if self.lambda_ssl < 0 or self.lambda_l2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.d < 1 or self.num_layers < 1:
            raise ValueError("d and num_layers must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        ks = tuple(int(k) for k in self.k_list)
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(ks):
            raise ValueError("k_list must be a nonempty sorted list of cutoffs >= 1")
        object.__setattr__(self, "k_list", ks)


@dataclass
class EmbeddingTable:
    """The trainable state: two user blocks (item view, group view) and one group block.

    Also reused as the container for gradients and optimizer moments, which share
    its shape.
    """

    item_view_user: np.ndarray
    group_view_user: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        for name, block in self.blocks():
            if block.ndim != 2:
                raise ValueError(f"{name} must be 2-d")
        if self.item_view_user.shape != self.group_view_user.shape:
            raise ValueError("user blocks must share a shape")
        if self.group.shape[1] != self.item_view_user.shape[1]:
            raise ValueError("group block dimension mismatch")

    @property
    def num_users(self) -> int:
        return self.item_view_user.shape[0]

    @property
    def num_groups(self) -> int:
        return self.group.shape[0]

    @property
    def d(self) -> int:
        return self.item_view_user.shape[1]

    @property
    def num_parameters(self) -> int:
        return self.d * (2 * self.num_users + self.num_groups)

    def blocks(self):
        yield "item_view_user", self.item_view_user
        yield "group_view_user", self.group_view_user
        yield "group", self.group

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.item_view_user.copy(),
                              self.group_view_user.copy(),
                              self.group.copy())

    @classmethod
    def zeros(cls, num_users: int, num_groups: int, d: int) -> "EmbeddingTable":
        return cls(np.zeros((num_users, d)), np.zeros((num_users, d)), np.zeros((num_groups, d)))

    @classmethod
    def zeros_like(cls, other: "EmbeddingTable") -> "EmbeddingTable":
        return cls.zeros(other.num_users, other.num_groups, other.d)

    @classmethod
    def initialize(cls, num_users: int, num_groups: int, d: int, seed: int,
                   std: float = INIT_STD) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        return cls(
            item_view_user=rng.normal(0.0, std, (num_users, d)),
            group_view_user=rng.normal(0.0, std, (num_users, d)),
            group=rng.normal(0.0, std, (num_groups, d)),
        )


@dataclass
class LayerStep:
    """One convolution layer with its retained intermediates."""

    inc: IncidenceMatrix
    gamma: float
    used_intrinsic: bool
    hyperedge_mean: np.ndarray   # per-hyperedge mean of member rows
    fused: np.ndarray            # mean plus gamma-scaled intrinsic rows
    out: np.ndarray


@dataclass
class PipelineTrace:
    start: np.ndarray
    steps: list[LayerStep]

    @property
    def final(self) -> np.ndarray:
        return self.steps[-1].out if self.steps else self.start


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, plus the final embeddings."""

    mode: str
    item_pipeline: PipelineTrace
    group_view_pipeline: PipelineTrace
    group_pipeline: PipelineTrace
    user_item: np.ndarray       # final item-view user embeddings
    user_group: np.ndarray      # final group-view user embeddings
    user_combined: np.ndarray   # beta-weighted combination of the two views
    group_final: np.ndarray     # final group embeddings


def thc_layer(node_emb, inc: IncidenceMatrix, gamma: float,
              intrinsic=None) -> tuple[np.ndarray, LayerStep]:
    """One transitional convolution: gather, add gamma-scaled intrinsic rows, scatter."""
    t = hyperedge_gather(inc, node_emb)
    if intrinsic is None:
        q = t
        used = False
    else:
        c = np.asarray(intrinsic, dtype=np.float64)
        if c.shape != t.shape:
            raise ValueError(f"intrinsic shape {c.shape} != hyperedge shape {t.shape}")
        q = t + gamma * c
        used = True
    out = node_scatter(inc, q)
    return out, LayerStep(inc, float(gamma), used, t, q, out)


def _run_pipeline(start, layer_specs) -> PipelineTrace:
    steps = []
    x = np.asarray(start, dtype=np.float64)
    trace = PipelineTrace(x, steps)
    for inc, gamma, intrinsic in layer_specs:
        x, step = thc_layer(x, inc, gamma, intrinsic)
        steps.append(step)
    return trace


def propagate_user_views(emb: EmbeddingTable, users_by_items: IncidenceMatrix,
                         users_by_groups: IncidenceMatrix, num_layers: int
                         ) -> tuple[np.ndarray, np.ndarray, tuple[PipelineTrace, PipelineTrace]]:
    """Run both user hypergraphs without any intrinsic term; return final-layer views."""
    item_trace = _run_pipeline(emb.item_view_user, [(users_by_items, 0.0, None)] * num_layers)
    group_trace = _run_pipeline(emb.group_view_user, [(users_by_groups, 0.0, None)] * num_layers)
    return item_trace.final, group_trace.final, (item_trace, group_trace)


def propagate_groups(emb: EmbeddingTable, groups_by_users: IncidenceMatrix,
                     user_item_emb, gamma: float, num_layers: int
                     ) -> tuple[np.ndarray, PipelineTrace]:
    """Run the group hypergraph, injecting the final item-view user rows at every layer."""
    c = np.asarray(user_item_emb, dtype=np.float64)
    if c.shape[0] != groups_by_users.num_hyperedges:
        raise ValueError("intrinsic rows must match the user hyperedge count")
    trace = _run_pipeline(emb.group, [(groups_by_users, gamma, c)] * num_layers)
    return trace.final, trace


def combine_user_views(item_view, group_view, beta: float) -> np.ndarray:
    a = np.asarray(item_view, dtype=np.float64)
    b = np.asarray(group_view, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"view shapes differ: {a.shape} vs {b.shape}")
    return beta * a + (1.0 - beta) * b


def _item_view_specs(hgs: HypergraphSet, hp: Hyperparams, mode: str) -> list:
    items = hgs.users_by_items
    groups = hgs.users_by_groups
    if mode == "default":
        return [(items, 0.0, None)] * hp.num_layers
    if mode == "gcn_item":
        # Item features (per-item means of the initial block) pushed to users
        # by a single mean aggregation, regardless of the layer count.
        return [(items, 0.0, None)]
    if mode == "joint_simultaneous":
        return [(concat_hyperedges(items, groups), 0.0, None)] * hp.num_layers
    if mode == "joint_sequential":
        specs = []
        if items.num_hyperedges:
            specs.extend([(items, 0.0, None)] * hp.num_layers)
        if groups.num_hyperedges:
            specs.extend([(groups, 0.0, None)] * hp.num_layers)
        return specs
    raise ValueError(f"unknown variant mode {mode!r}; expected one of {VARIANT_MODES}")


def forward(emb: EmbeddingTable, hypergraphs: HypergraphSet, hp: Hyperparams,
            mode: str = "default") -> ForwardTrace:
    """Full pass: both user views, group pipeline with item-view injection, combination."""
    if mode not in VARIANT_MODES:
        raise ValueError(f"unknown variant mode {mode!r}; expected one of {VARIANT_MODES}")
    hgs = hypergraphs
    if emb.num_users != hgs.users_by_items.num_nodes \
            or emb.num_users != hgs.users_by_groups.num_nodes \
            or emb.num_users != hgs.groups_by_users.num_hyperedges:
        raise ValueError("user count mismatch between embeddings and hypergraphs")
    if emb.num_groups != hgs.groups_by_users.num_nodes \
            or emb.num_groups != hgs.users_by_groups.num_hyperedges:
        raise ValueError("group count mismatch between embeddings and hypergraphs")

    item_trace = _run_pipeline(emb.item_view_user, _item_view_specs(hgs, hp, mode))
    group_view_trace = _run_pipeline(
        emb.group_view_user, [(hgs.users_by_groups, 0.0, None)] * hp.num_layers)
    user_item = item_trace.final
    user_group = group_view_trace.final
    group_trace = _run_pipeline(
        emb.group, [(hgs.groups_by_users, hp.gamma, user_item)] * hp.num_layers)
    user_combined = combine_user_views(user_item, user_group, hp.beta)
    return ForwardTrace(mode, item_trace, group_view_trace, group_trace,
                        user_item, user_group, user_combined, group_trace.final)


def variant_forward(mode: str, emb: EmbeddingTable, hypergraphs: HypergraphSet,
                    hp: Hyperparams) -> ForwardTrace:
    return forward(emb, hypergraphs, hp, mode=mode)


def scoring_embedding(trace: ForwardTrace, score_view: str = "combined") -> np.ndarray:
    """Pick the user embedding that prediction scores are taken from."""
    if score_view == "combined":
        return trace.user_combined
    if score_view == "item":
        return trace.user_item
    raise ValueError(f"unknown score view {score_view!r}; expected one of {SCORE_VIEWS}")


def predict_scores(user_emb, group_emb) -> np.ndarray:
    """Inner-product score matrix, users by groups."""
    u = np.asarray(user_emb, dtype=np.float64)
    g = np.asarray(group_emb, dtype=np.float64)
    if u.shape[1] != g.shape[1]:
        raise ValueError("embedding dimensions differ")
    return u @ g.T


def user_scores(user_emb, group_emb, user: int) -> np.ndarray:
    """Score row for one user, for callers that avoid the full matrix."""
    return np.asarray(group_emb, dtype=np.float64) @ np.asarray(user_emb, dtype=np.float64)[user]


def iter_user_scores(user_emb, group_emb):
    """Yield (user, score row) pairs without materializing the full matrix."""
    for user in range(np.asarray(user_emb).shape[0]):
        yield user, user_scores(user_emb, group_emb, user)


def oracle_hypergraph_conv(node_emb, inc: IncidenceMatrix) -> np.ndarray:
    """Plain two-sided mean convolution; no transition term."""
    return node_scatter(inc, hyperedge_gather(inc, node_emb))


def oracle_lightgcn_two_layer(group_emb, adjacency: IncidenceMatrix) -> np.ndarray:
    """Two chained degree-normalized bipartite propagation layers, composed.

    `adjacency` is read as the group-by-user interaction matrix. Computed with
    dense arrays so the route is independent of the sparse gather/scatter path.
    """
    x = np.asarray(group_emb, dtype=np.float64)
    if x.shape[0] != adjacency.num_nodes:
        raise ValueError("embedding rows must match the group count")
    a = adjacency.matrix.toarray()
    user_deg = a.sum(axis=0)
    group_deg = a.sum(axis=1)
    inv_user = np.divide(1.0, user_deg, out=np.zeros_like(user_deg), where=user_deg > 0)
    inv_group = np.divide(1.0, group_deg, out=np.zeros_like(group_deg), where=group_deg > 0)
    user_side = inv_user[:, None] * (a.T @ x)
    return inv_group[:, None] * (a @ user_side)


def save_checkpoint(path, emb: EmbeddingTable, hp: Hyperparams, meta: dict | None = None) -> None:
    """Write a deterministic, bit-exact checkpoint (JSON header + raw float64 blocks)."""
    header = {
        "num_users": emb.num_users,
        "num_groups": emb.num_groups,
        "d": emb.d,
        "hyperparams": {**asdict(hp), "k_list": list(hp.k_list)},
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as handle:
        handle.write(_CHECKPOINT_MAGIC)
        handle.write(struct.pack("<Q", len(header_bytes)))
        handle.write(header_bytes)
        for _, block in emb.blocks():
            handle.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[EmbeddingTable, Hyperparams, dict]:
    with open(path, "rb") as handle:
        magic = handle.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", handle.read(8))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        num_users, num_groups, d = header["num_users"], header["num_groups"], header["d"]

        def read_block(rows: int) -> np.ndarray:
            raw = handle.read(rows * d * 8)
            if len(raw) != rows * d * 8:
                raise ValueError(f"{path}: truncated checkpoint")
            return np.frombuffer(raw, dtype="<f8").reshape(rows, d).copy()

        emb = EmbeddingTable(read_block(num_users), read_block(num_users), read_block(num_groups))
    for name, block in emb.blocks():
        if not np.isfinite(block).all():
            raise ValueError(f"{path}: non-finite values in block {name!r}")
    hp_dict = dict(header["hyperparams"])
    hp_dict["k_list"] = tuple(hp_dict["k_list"])
    return emb, Hyperparams(**hp_dict), header["meta"]
