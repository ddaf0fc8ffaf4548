"""Full-batch training: negative sampling, Adam updates, early stopping.

One optimizer step per epoch over all triples and the full contrastive
denominators. Everything is deterministic given the split and the seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import rank_groups, recall_at_k
from .graph import HypergraphSet, SplitGraph
from .losses import LossBreakdown, backward, total_loss
from .model import EmbeddingTable, Hyperparams, forward, scoring_embedding

# Full contrastive denominators are quadratic in the user count; refuse larger
# instances unless the caller opts in explicitly.
MAX_USERS_FULL_SSL = 50_000


class TrainingError(RuntimeError):
    """Aborted or misconfigured training run."""


class SamplingError(ValueError):
    """Negative sampling is impossible for some user."""


def sample_negatives(split: SplitGraph, seed: int, epoch: int) -> np.ndarray:
    """One (user, positive, negative) triple per training edge.

    Negatives are uniform over the groups the user has not joined in train;
    the draw is deterministic given (seed, epoch) and fresh per epoch.
    """
    train = split.train
    edges = train.user_group_edges
    if edges.size == 0:
        raise SamplingError("no training user-group edges")
    num_groups = train.num_groups
    positive_sets = [set(map(int, groups)) for groups in train.groups_per_user()]
    for user, positives in enumerate(positive_sets):
        if len(positives) >= num_groups:
            raise SamplingError(f"user {user} has joined every group; no negative exists")

    rng = np.random.default_rng([int(seed), int(epoch)])
    users = edges[:, 0]
    negatives = rng.integers(0, num_groups, size=len(edges))
    bad = np.fromiter(
        (int(g) in positive_sets[int(u)] for u, g in zip(users, negatives)),
        dtype=bool, count=len(edges))
    while bad.any():
        idx = np.flatnonzero(bad)
        negatives[idx] = rng.integers(0, num_groups, size=idx.size)
        bad[idx] = [int(negatives[i]) in positive_sets[int(users[i])] for i in idx]
    return np.column_stack([users, edges[:, 1], negatives])


@dataclass
class AdamState:
    first_moment: EmbeddingTable
    second_moment: EmbeddingTable
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initialize(cls, emb: EmbeddingTable) -> "AdamState":
        return cls(EmbeddingTable.zeros_like(emb), EmbeddingTable.zeros_like(emb))


def adam_step(emb: EmbeddingTable, grads: EmbeddingTable, state: AdamState,
              lr: float) -> tuple[EmbeddingTable, AdamState]:
    """Bias-corrected Adam update, applied in place to all three blocks."""
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for (name, theta), (_, g), (_, m), (_, v) in zip(
            emb.blocks(), grads.blocks(),
            state.first_moment.blocks(), state.second_moment.blocks()):
        if not np.isfinite(g).all():
            i, j = np.argwhere(~np.isfinite(g))[0]
            raise TrainingError(f"non-finite gradient in block {name!r} at index ({i}, {j})")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return emb, state


@dataclass(frozen=True)
class EvalPoint:
    epoch: int
    metric: float


@dataclass
class TrainHistory:
    losses: list[LossBreakdown]
    evaluations: list[EvalPoint]
    best_epoch: int
    best_metric: float
    stop_reason: str

    @property
    def epochs_run(self) -> int:
        return len(self.losses)


def _validation_recall(emb, hgs, hp, mode, score_view, train_pos, val_pos, k) -> float:
    trace = forward(emb, hgs, hp, mode=mode)
    result = rank_groups(scoring_embedding(trace, score_view), trace.group_final,
                         train_pos, val_pos)
    return recall_at_k(result, k)


def train(split: SplitGraph, hp: Hyperparams, *, eval_every: int = 5,
          max_epochs: int = 300, mode: str = "default",
          disable_cssl: bool = False, disable_group_reg: bool = False,
          disable_thc: bool = False, score_view: str = "combined",
          allow_large: bool = False) -> tuple[EmbeddingTable, TrainHistory]:
    """Full-batch loop: resample negatives, forward, loss, backward, one Adam step.

    Validation Recall@max(k_list) is measured every `eval_every` epochs; training
    stops after `hp.patience` evaluations without improvement and the best-epoch
    parameters are restored.
    """
    train_graph = split.train
    if train_graph.num_users > MAX_USERS_FULL_SSL and not allow_large:
        raise TrainingError(
            f"{train_graph.num_users} users exceeds the full-denominator contrastive "
            f"envelope ({MAX_USERS_FULL_SSL}); pass allow_large=True to override")
    if disable_thc:
        hp = replace(hp, gamma=0.0)
    hgs = HypergraphSet.from_graph(train_graph)
    emb = EmbeddingTable.initialize(train_graph.num_users, train_graph.num_groups,
                                    hp.d, hp.seed)
    state = AdamState.initialize(emb)
    flags = dict(include_cssl=not disable_cssl, include_group_reg=not disable_group_reg,
                 score_view=score_view)
    eval_k = max(hp.k_list)
    train_pos = {u: groups for u, groups in enumerate(train_graph.groups_per_user())
                 if groups.size}
    val_pos = split.val_positives

    losses: list[LossBreakdown] = []
    evaluations: list[EvalPoint] = []
    best = emb.copy()
    best_epoch = 0
    best_metric = -math.inf
    evals_since_best = 0
    stop_reason = "max_epochs"

    for epoch in range(1, max_epochs + 1):
        triples = sample_negatives(split, hp.seed, epoch)
        trace = forward(emb, hgs, hp, mode=mode)
        breakdown = total_loss(trace, triples, emb, hp, **flags)
        if not math.isfinite(breakdown.total):
            raise TrainingError(f"non-finite loss at epoch {epoch}: {breakdown}")
        grads = backward(trace, triples, emb, hp, **flags)
        emb, state = adam_step(emb, grads, state, hp.lr)
        losses.append(breakdown)
        if val_pos and eval_every > 0 and epoch % eval_every == 0:
            metric = _validation_recall(emb, hgs, hp, mode, score_view,
                                        train_pos, val_pos, eval_k)
            evaluations.append(EvalPoint(epoch, metric))
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best = emb.copy()
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= hp.patience:
                    stop_reason = "early_stop"
                    break

    if evaluations:
        final = best
    else:
        final = emb
        best_epoch = len(losses)
        best_metric = float("nan")
    history = TrainHistory(losses, evaluations, best_epoch, best_metric, stop_reason)
    return final, history
