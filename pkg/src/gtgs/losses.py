"""Loss terms, the joint objective, and exact analytic gradients.

Every forward operation is linear and every loss is smooth, so gradients are
accumulated by hand through the retained trace: ranking pairs, both contrastive
terms, the view combination, and the intrinsic-injection path from the group
pipeline back into the item-view user block. `finite_diff_check` provides the
independent central-difference oracle.

Training triples are (T, 3) int arrays with columns (user, positive group,
negative group); the positive comes from the user's training groups and the
negative from their complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .linalg import gather_adjoint, normalize_rows, scatter_adjoint
from .model import (EmbeddingTable, ForwardTrace, HypergraphSet, Hyperparams,
                    PipelineTrace, forward, scoring_embedding)

NORM_EPS = 1e-12


def cosine_sim(a, b) -> float:
    """Cosine similarity, defined as 0 when either vector has near-zero norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0
    return float(a @ b / (na * nb))


def bpr_loss(pos_scores, neg_scores) -> float:
    """Sum of softplus(neg - pos); the stabilized form of -log sigmoid(pos - neg)."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0:
        raise ValueError("empty triple set")
    if pos.shape != neg.shape:
        raise ValueError("positive and negative score arrays must match")
    return float(np.logaddexp(0.0, neg - pos).sum())


def cssl_loss(item_view, group_view, tau_u: float) -> float:
    """Cross-view contrast: each user's item view against all group views.

    Per user: -log softmax of the matched pair among all cosine pairs at
    temperature tau_u, with the matched pair included in its own denominator.
    """
    x = np.asarray(item_view, dtype=np.float64)
    y = np.asarray(group_view, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("view shapes must match")
    if tau_u <= 0:
        raise ValueError("tau_u must be > 0")
    xn, _, _ = normalize_rows(x, NORM_EPS)
    yn, _, _ = normalize_rows(y, NORM_EPS)
    logits = (xn @ yn.T) / tau_u
    lse = logsumexp(logits, axis=1)
    return float((lse - np.diag(logits)).sum())


def group_reg_loss(group_emb, tau_g: float) -> float:
    """Spread penalty: each group's self pair against its similarities to all groups.

    The self pair (cosine 1 for any nonzero row) is one summand of its own
    denominator, so every term is nonnegative and a single group scores 0.
    """
    e = np.asarray(group_emb, dtype=np.float64)
    if tau_g <= 0:
        raise ValueError("tau_g must be > 0")
    en, _, _ = normalize_rows(e, NORM_EPS)
    logits = (en @ en.T) / tau_g
    lse = logsumexp(logits, axis=1)
    return float((lse - np.diag(logits)).sum())


def l2_penalty(emb: EmbeddingTable) -> float:
    """Sum of squares over all three embedding blocks (the only parameters)."""
    return float(sum((block * block).sum() for _, block in emb.blocks()))


@dataclass(frozen=True)
class LossBreakdown:
    bpr: float
    cssl: float
    group_reg: float
    l2: float
    total: float


def _triples_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("empty triple set")
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("triples must be (n, 3) of (user, pos, neg)")
    return arr


def _triple_scores(user_emb, group_emb, triples) -> tuple[np.ndarray, np.ndarray]:
    u, pos, neg = triples[:, 0], triples[:, 1], triples[:, 2]
    y_pos = np.einsum("ij,ij->i", user_emb[u], group_emb[pos])
    y_neg = np.einsum("ij,ij->i", user_emb[u], group_emb[neg])
    return y_pos, y_neg


def total_loss(trace: ForwardTrace, triples, emb: EmbeddingTable, hp: Hyperparams, *,
               include_cssl: bool = True, include_group_reg: bool = True,
               score_view: str = "combined") -> LossBreakdown:
    """Joint objective: ranking + lambda_ssl * (cssl + group spread) + lambda_l2 * ||params||^2."""
    triples = _triples_array(triples)
    user_emb = scoring_embedding(trace, score_view)
    y_pos, y_neg = _triple_scores(user_emb, trace.group_final, triples)
    bpr = bpr_loss(y_pos, y_neg)
    cssl = cssl_loss(trace.user_item, trace.user_group, hp.tau_u) if include_cssl else 0.0
    reg = group_reg_loss(trace.group_final, hp.tau_g) if include_group_reg else 0.0
    l2 = l2_penalty(emb)
    total = bpr + hp.lambda_ssl * (cssl + reg) + hp.lambda_l2 * l2
    return LossBreakdown(bpr, cssl, reg, l2, total)


def _bpr_gradients(user_emb, group_emb, triples) -> tuple[np.ndarray, np.ndarray]:
    u, pos, neg = triples[:, 0], triples[:, 1], triples[:, 2]
    y_pos, y_neg = _triple_scores(user_emb, group_emb, triples)
    coef = -expit(y_neg - y_pos)  # d softplus(neg - pos) / d (pos - neg)
    d_user = np.zeros_like(user_emb)
    d_group = np.zeros_like(group_emb)
    np.add.at(d_user, u, coef[:, None] * (group_emb[pos] - group_emb[neg]))
    np.add.at(d_group, pos, coef[:, None] * user_emb[u])
    np.add.at(d_group, neg, -coef[:, None] * user_emb[u])
    return d_user, d_group


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _cross_infonce_gradients(x, y, tau: float) -> tuple[np.ndarray, np.ndarray]:
    xn, x_norm, x_ok = normalize_rows(x, NORM_EPS)
    yn, y_norm, y_ok = normalize_rows(y, NORM_EPS)
    s = xn @ yn.T
    p = _softmax_rows(s / tau)
    w = (p - np.eye(len(p))) / tau
    dx = w @ yn - (w * s).sum(axis=1)[:, None] * xn
    dx[x_ok] /= x_norm[x_ok, None]
    dx[~x_ok] = 0.0
    dy = w.T @ xn - (w * s).sum(axis=0)[:, None] * yn
    dy[y_ok] /= y_norm[y_ok, None]
    dy[~y_ok] = 0.0
    return dx, dy


def _self_infonce_gradients(e, tau: float) -> np.ndarray:
    en, norms, ok = normalize_rows(e, NORM_EPS)
    s = en @ en.T
    p = _softmax_rows(s / tau)
    w = (p - np.eye(len(p))) / tau
    v = w + w.T
    np.fill_diagonal(v, 0.0)  # the self pair has zero cosine gradient
    de = v @ en - (v * s).sum(axis=1)[:, None] * en
    de[ok] /= norms[ok, None]
    de[~ok] = 0.0
    return de


def _pipeline_backward(pipeline: PipelineTrace, d_out: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray | None]:
    """Adjoint walk through the retained layers.

    Returns gradients for the pipeline input and, when layers consumed an
    intrinsic embedding, the accumulated intrinsic gradient.
    """
    d_intrinsic = None
    g = d_out
    for step in reversed(pipeline.steps):
        if step.fused is None or step.hyperedge_mean is None:
            raise ValueError("trace is missing layer intermediates")
        dq = scatter_adjoint(step.inc, g)
        if step.used_intrinsic and step.gamma != 0.0:
            contribution = step.gamma * dq
            d_intrinsic = contribution if d_intrinsic is None else d_intrinsic + contribution
        g = gather_adjoint(step.inc, dq)
    return g, d_intrinsic


def backward(trace: ForwardTrace, triples, emb: EmbeddingTable, hp: Hyperparams, *,
             include_cssl: bool = True, include_group_reg: bool = True,
             score_view: str = "combined") -> EmbeddingTable:
    """Exact gradient of total_loss with respect to every embedding entry."""
    triples = _triples_array(triples)
    user_emb = scoring_embedding(trace, score_view)
    d_user_scores, d_group_final = _bpr_gradients(user_emb, trace.group_final, triples)
    if include_group_reg:
        d_group_final = d_group_final + hp.lambda_ssl * _self_infonce_gradients(
            trace.group_final, hp.tau_g)

    if score_view == "combined":
        d_item_final = hp.beta * d_user_scores
        d_groupview_final = (1.0 - hp.beta) * d_user_scores
    else:
        d_item_final = d_user_scores.copy()
        d_groupview_final = np.zeros_like(trace.user_group)
    if include_cssl:
        d_item_ssl, d_group_ssl = _cross_infonce_gradients(
            trace.user_item, trace.user_group, hp.tau_u)
        d_item_final = d_item_final + hp.lambda_ssl * d_item_ssl
        d_groupview_final = d_groupview_final + hp.lambda_ssl * d_group_ssl

    d_group_start, d_intrinsic = _pipeline_backward(trace.group_pipeline, d_group_final)
    if d_intrinsic is not None:
        d_item_final = d_item_final + d_intrinsic
    d_item_start, _ = _pipeline_backward(trace.item_pipeline, d_item_final)
    d_groupview_start, _ = _pipeline_backward(trace.group_view_pipeline, d_groupview_final)

    two_l2 = 2.0 * hp.lambda_l2
    return EmbeddingTable(
        item_view_user=d_item_start + two_l2 * emb.item_view_user,
        group_view_user=d_groupview_start + two_l2 * emb.group_view_user,
        group=d_group_start + two_l2 * emb.group,
    )


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    num_parameters: int
    worst_block: str
    worst_index: tuple[int, int]
    tolerance: float
    passed: bool


def finite_diff_check(emb: EmbeddingTable, hypergraphs: HypergraphSet, triples,
                      hp: Hyperparams, *, h: float = 1e-5, tolerance: float = 1e-4,
                      mode: str = "default", include_cssl: bool = True,
                      include_group_reg: bool = True,
                      score_view: str = "combined") -> GradCheckReport:
    """Central-difference check of `backward` over every coordinate.

    Intended for small instances (a few hundred parameters); the loss is
    re-evaluated twice per coordinate.
    """
    flags = dict(include_cssl=include_cssl, include_group_reg=include_group_reg,
                 score_view=score_view)

    def loss_at(table: EmbeddingTable) -> float:
        tr = forward(table, hypergraphs, hp, mode=mode)
        return total_loss(tr, triples, table, hp, **flags).total

    analytic = backward(forward(emb, hypergraphs, hp, mode=mode), triples, emb, hp, **flags)
    max_err = 0.0
    sum_err = 0.0
    count = 0
    worst_block = ""
    worst_index = (0, 0)
    work = emb.copy()
    for (name, block), (_, grad) in zip(work.blocks(), analytic.blocks()):
        for i in range(block.shape[0]):
            for j in range(block.shape[1]):
                original = block[i, j]
                block[i, j] = original + h
                up = loss_at(work)
                block[i, j] = original - h
                down = loss_at(work)
                block[i, j] = original
                numeric = (up - down) / (2.0 * h)
                a = grad[i, j]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                sum_err += err
                count += 1
                if err > max_err:
                    max_err = err
                    worst_block = name
                    worst_index = (i, j)
    return GradCheckReport(
        max_rel_error=max_err,
        mean_rel_error=sum_err / count,
        num_parameters=count,
        worst_block=worst_block,
        worst_index=worst_index,
        tolerance=tolerance,
        passed=max_err < tolerance,
    )
