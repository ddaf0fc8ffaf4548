"""Ranking protocol, top-K metrics, and embedding-space diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import normalize_rows

DENOM_EPS = 1e-9


@dataclass
class RankingResult:
    """Per evaluated user: all non-training groups ordered best-first, plus
    the held-out positives the ordering is judged against."""

    num_groups: int
    ranked: dict[int, np.ndarray]
    positives: dict[int, np.ndarray]


def rank_groups(user_emb, group_emb, train_positives: dict, eval_positives: dict
                ) -> RankingResult:
    """Rank every non-training group for each user with held-out positives.

    Scores are inner products; ties break toward the lower group id.
    """
    user_emb = np.asarray(user_emb, dtype=np.float64)
    group_emb = np.asarray(group_emb, dtype=np.float64)
    num_groups = group_emb.shape[0]
    all_groups = np.arange(num_groups, dtype=np.int64)
    ranked: dict[int, np.ndarray] = {}
    positives: dict[int, np.ndarray] = {}
    for user in sorted(eval_positives):
        pos = np.asarray(eval_positives[user], dtype=np.int64)
        if pos.size == 0:
            continue
        seen = np.asarray(train_positives.get(user, ()), dtype=np.int64)
        candidates = np.setdiff1d(all_groups, seen)
        scores = group_emb[candidates] @ user_emb[user]
        order = np.lexsort((candidates, -scores))
        ranked[user] = candidates[order]
        positives[user] = np.sort(pos)
    return RankingResult(num_groups, ranked, positives)


def recall_at_k(result: RankingResult, k: int) -> float:
    """Mean over evaluated users of |top-k hits| / |held-out positives|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    values = []
    for user, ranked in result.ranked.items():
        pos = result.positives[user]
        hits = int(np.isin(ranked[:k], pos).sum())
        values.append(hits / pos.size)
    return float(np.mean(values)) if values else 0.0


def ndcg_at_k(result: RankingResult, k: int) -> float:
    """Binary-relevance NDCG with 1-based log2(position + 1) discounting."""
    if k < 1:
        raise ValueError("k must be >= 1")
    values = []
    for user, ranked in result.ranked.items():
        pos = result.positives[user]
        hit_positions = np.flatnonzero(np.isin(ranked[:k], pos)) + 1
        dcg = float((1.0 / np.log2(hit_positions + 1)).sum())
        ideal = np.arange(1, min(k, pos.size) + 1)
        idcg = float((1.0 / np.log2(ideal + 1)).sum())
        values.append(dcg / idcg)
    return float(np.mean(values)) if values else 0.0


@dataclass(frozen=True)
class MetricsReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    evaluated_users: int


def metrics_report(result: RankingResult, k_list) -> MetricsReport:
    ks = [int(k) for k in k_list]
    return MetricsReport(
        recall={k: recall_at_k(result, k) for k in ks},
        ndcg={k: ndcg_at_k(result, k) for k in ks},
        evaluated_users=len(result.ranked),
    )


@dataclass(frozen=True)
class ConsistencyResult:
    value: float
    defined: bool


def consistency(item_view, group_view) -> ConsistencyResult:
    """Mean same-user cross-view cosine over the mean all-pairs item-view cosine.

    The denominator averages over all ordered user pairs including the self
    pair; when its magnitude is below 1e-9 the result is flagged undefined.
    """
    xn, _, _ = normalize_rows(item_view)
    yn, _, _ = normalize_rows(group_view)
    if xn.shape != yn.shape or xn.shape[0] < 1:
        raise ValueError("views must share a nonempty shape")
    n = xn.shape[0]
    numerator = float(np.einsum("ij,ij->", xn, yn)) / n
    total = xn.sum(axis=0)
    denominator = float(total @ total) / (n * n)
    if abs(denominator) < DENOM_EPS:
        return ConsistencyResult(float("nan"), False)
    return ConsistencyResult(numerator / denominator, True)


def group_relatedness_analysis(group_emb, memberships, num_bins: int = 100
                               ) -> tuple[np.ndarray, float]:
    """Bin group pairs by embedding cosine and average their member-overlap ratio.

    `memberships` maps group id to its member user ids; groups without members
    are excluded. Pairs are sorted by relatedness and cut into contiguous bins
    (the last bin absorbs the remainder); each bin averages both axes. Returns
    the (num_bins, 2) binned points and their Pearson correlation.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    groups = sorted(g for g, members in memberships.items() if len(members) > 0)
    if len(groups) < 2:
        raise ValueError("need at least two groups with members")
    member_sets = {g: set(int(u) for u in memberships[g]) for g in groups}
    emb = np.asarray(group_emb, dtype=np.float64)
    en, _, _ = normalize_rows(emb[groups])
    sims = en @ en.T
    iu = np.triu_indices(len(groups), k=1)
    relatedness = sims[iu]
    ratios = np.empty(len(relatedness))
    for idx, (a, b) in enumerate(zip(iu[0], iu[1])):
        sa, sb = member_sets[groups[a]], member_sets[groups[b]]
        ratios[idx] = len(sa & sb) / len(sa | sb)

    order = np.argsort(relatedness, kind="stable")
    rel_sorted = relatedness[order]
    ratio_sorted = ratios[order]
    pairs = len(order)
    if pairs < num_bins:
        warnings.warn(f"only {pairs} group pairs; reducing bins from {num_bins}")
        num_bins = pairs
    size = pairs // num_bins
    starts = [i * size for i in range(num_bins)]
    ends = starts[1:] + [pairs]
    binned = np.array([
        [rel_sorted[s:e].mean(), ratio_sorted[s:e].mean()]
        for s, e in zip(starts, ends)
    ])
    pearson = float(np.corrcoef(binned[:, 0], binned[:, 1])[0, 1])
    return binned, pearson
