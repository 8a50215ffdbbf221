"""AUC metrics and training losses for multi-objective score ensembling.

Every loss returns its value together with the gradient w.r.t. the ensemble
scores; losses with their own parameters (calibration heads, min-max
auxiliaries) additionally return gradients or updated state for those.
Objectives whose mini-batch labels are all-positive or all-negative are
skipped for that batch: they contribute zero loss and zero gradient.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .softrank import SoftRankConfig, soft_rank, soft_rank_backward

__all__ = [
    "BatchLabels",
    "LossWeights",
    "AUCReport",
    "AUCMState",
    "exact_auc",
    "auc_report",
    "rank_auc_loss",
    "mbce_loss",
    "label_agg_loss",
    "pairwise_logistic_loss",
    "pairwise_square_loss",
    "aucm_step",
]


@dataclass
class BatchLabels:
    """Binary labels for one batch: one column per objective."""

    labels: np.ndarray  # [n, M], entries in {0, 1}
    objective_names: list

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("labels must be [n, M]")
        if self.labels.shape[1] != len(self.objective_names):
            raise ValueError("objective_names length mismatch")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def n_objectives(self):
        return self.labels.shape[1]


@dataclass
class LossWeights:
    """Per-objective loss weights, all strictly positive (default 1.0)."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or not (self.w > 0).all():
            raise ValueError("weights must be positive")

    @classmethod
    def ones(cls, m):
        return cls(np.ones(m))


@dataclass
class AUCReport:
    """Per-objective AUC and their sum; degenerate columns are absent (None)."""

    per_objective: list  # float or None per objective
    objective_names: list
    sum: float
    skipped: list = field(default_factory=list)  # names of degenerate columns

    def as_dict(self):
        return {
            "per_objective": {
                name: (None if a is None else float(a))
                for name, a in zip(self.objective_names, self.per_objective)
            },
            "sum": float(self.sum),
            "skipped": list(self.skipped),
        }


def _pos_neg_counts(y):
    p = int(y.sum())
    return p, y.shape[0] - p


def exact_auc(scores, labels, tie_credit="mid"):
    """Exact AUC via the rank-sum identity.

    ``tie_credit="mid"`` uses average ranks (tied pairs count 0.5), which
    matches the pairwise count with half credit for ties. ``tie_credit="ge"``
    counts a tied pair as correctly ordered (the strict >= convention).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    p, n_neg = _pos_neg_counts(y)
    if p == 0 or n_neg == 0:
        raise ValueError("degenerate labels")
    if tie_credit == "mid":
        r = rankdata(s)
        return (r[y == 1].sum() - p * (p + 1) / 2.0) / (p * n_neg)
    if tie_credit == "ge":
        neg_sorted = np.sort(s[y == 0])
        ge = np.searchsorted(neg_sorted, s[y == 1], side="right").sum()
        return ge / (p * n_neg)
    raise ValueError(f"unknown tie_credit {tie_credit!r}")


def auc_report(scores, batch, tie_credit="mid"):
    """Per-objective AUC over a batch; degenerate columns are flagged, not fatal."""
    per = []
    skipped = []
    for m, name in enumerate(batch.objective_names):
        y = batch.labels[:, m]
        p, n_neg = _pos_neg_counts(y)
        if p == 0 or n_neg == 0:
            per.append(None)
            skipped.append(name)
        else:
            per.append(exact_auc(scores, y, tie_credit=tie_credit))
    total = float(sum(a for a in per if a is not None))
    return AUCReport(per_objective=per, objective_names=batch.objective_names,
                     sum=total, skipped=skipped)


def rank_auc_loss(scores, batch, weights, cfg=SoftRankConfig()):
    """Negative soft-AUC sum through the differentiable ranking operator.

    One shared soft rank serves all objectives; each objective contributes
    -(w_m * soft AUC surrogate), normalized by |pos|*|neg| so the terms are
    commensurable. Cost: one O(n log n) soft rank plus O(nM).
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite scores")
    res = soft_rank(s, cfg)
    r = res.soft_ranks
    loss = 0.0
    upstream = np.zeros_like(s)
    for m in range(batch.n_objectives):
        y = batch.labels[:, m].astype(np.float64)
        p, n_neg = _pos_neg_counts(batch.labels[:, m])
        if p == 0 or n_neg == 0:
            continue
        w_m = weights.w[m]
        denom = p * n_neg
        loss -= w_m * (r @ y - p * (p + 1) / 2.0) / denom
        upstream -= (w_m / denom) * y
    grad = soft_rank_backward(res, upstream, cfg)
    return loss, grad


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def mbce_loss(scores, batch, weights, heads):
    """Multiple independent binary cross entropies over the ensemble score.

    ``heads`` is an [M, 2] array of per-objective (scale, bias) calibration
    parameters; the m-th BCE is applied to sigmoid(scale_m * s + bias_m).
    Returns (loss, grad_scores, grad_heads).
    """
    s = np.asarray(scores, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64)
    n = s.shape[0]
    loss = 0.0
    grad_s = np.zeros_like(s)
    grad_h = np.zeros_like(heads)
    for m in range(batch.n_objectives):
        y = batch.labels[:, m].astype(np.float64)
        scale, bias = heads[m]
        z = scale * s + bias
        w_m = weights.w[m]
        loss += w_m * np.mean(_softplus(z) - y * z)
        dz = w_m * (_sigmoid(z) - y) / n
        grad_s += dz * scale
        grad_h[m, 0] = dz @ s
        grad_h[m, 1] = dz.sum()
    return loss, grad_s, grad_h


def label_agg_loss(scores, batch, weights):
    """MSE against a weighted aggregation of the binary labels."""
    s = np.asarray(scores, dtype=np.float64)
    target = batch.labels.astype(np.float64) @ weights.w
    resid = s - target
    n = s.shape[0]
    loss = float(resid @ resid) / n
    return loss, 2.0 * resid / n


def _pairwise_loss(scores, batch, weights, per_pair, chunk=1024):
    """Shared O(n^2) driver for pairwise surrogates.

    ``per_pair(d)`` maps the pos-neg score differences to (loss terms,
    d loss / d diff). Losses are pair-mean normalized per objective.
    Positives are processed in chunks to bound memory.
    """
    s = np.asarray(scores, dtype=np.float64)
    loss = 0.0
    grad = np.zeros_like(s)
    for m in range(batch.n_objectives):
        y = batch.labels[:, m]
        p, n_neg = _pos_neg_counts(y)
        if p == 0 or n_neg == 0:
            continue
        w_m = weights.w[m]
        pos_idx = np.flatnonzero(y == 1)
        neg_idx = np.flatnonzero(y == 0)
        s_neg = s[neg_idx]
        denom = p * n_neg
        grad_neg = np.zeros(n_neg)
        for start in range(0, p, chunk):
            pi = pos_idx[start:start + chunk]
            d = s[pi][:, None] - s_neg[None, :]
            values, dd = per_pair(d)
            loss += w_m * values.sum() / denom
            dd *= w_m / denom
            grad[pi] += dd.sum(axis=1)
            grad_neg -= dd.sum(axis=0)
        grad[neg_idx] += grad_neg
    return loss, grad


def pairwise_logistic_loss(scores, batch, weights):
    """Pair-mean logistic surrogate log(1 + exp(-(s_pos - s_neg)))."""

    def per_pair(d):
        return _softplus(-d), -_sigmoid(-d)

    return _pairwise_loss(scores, batch, weights, per_pair)


def pairwise_square_loss(scores, batch, weights):
    """Pair-mean square surrogate (1 - (s_pos - s_neg))^2."""

    def per_pair(d):
        resid = 1.0 - d
        return resid * resid, -2.0 * resid

    return _pairwise_loss(scores, batch, weights, per_pair)


@dataclass
class AUCMState:
    """Auxiliaries of the margin-based min-max AUC objective.

    a/b are the positive/negative class centers, alpha the dual variable
    (kept >= 0 by projection), p the positive rate frozen from the training
    split. One state instance belongs to exactly one trainer.
    """

    a: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    margin: float = 1.0

    @classmethod
    def init(cls, positive_rates, margin=1.0):
        p = np.asarray(positive_rates, dtype=np.float64)
        m = p.shape[0]
        return cls(a=np.zeros(m), b=np.zeros(m), alpha=np.zeros(m),
                   p=p, margin=margin)


def aucm_step(scores, batch, weights, state, lr):
    """One stochastic step of the margin-based min-max AUC objective.

    Descends on (scores, a, b), ascends on alpha with projection onto
    alpha >= 0. Objectives with frozen positive rate in {0, 1} or a
    single-class batch column are skipped. Returns (loss, grad_scores,
    updated state); the state is mutated in place and returned.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    loss = 0.0
    grad_s = np.zeros_like(s)
    for m in range(batch.n_objectives):
        p_m = state.p[m]
        if p_m <= 0.0 or p_m >= 1.0:
            continue
        y = batch.labels[:, m]
        n_pos, n_neg = _pos_neg_counts(y)
        if n_pos == 0 or n_neg == 0:
            continue
        w_m = weights.w[m]
        pos = y == 1
        neg = ~pos
        a, b, alpha = state.a[m], state.b[m], state.alpha[m]
        mean_pos = s[pos].mean()
        mean_neg = s[neg].mean()
        coupling = (p_m * (1 - p_m) * state.margin
                    + p_m * mean_neg - (1 - p_m) * mean_pos)
        loss += w_m * ((1 - p_m) * np.mean((s[pos] - a) ** 2)
                       + p_m * np.mean((s[neg] - b) ** 2)
                       + 2 * alpha * coupling
                       - p_m * (1 - p_m) * alpha ** 2)
        grad_s[pos] += w_m * ((1 - p_m) * 2 * (s[pos] - a) / n_pos
                              - 2 * alpha * (1 - p_m) / n_pos)
        grad_s[neg] += w_m * (p_m * 2 * (s[neg] - b) / n_neg
                              + 2 * alpha * p_m / n_neg)
        grad_a = w_m * (-2 * (1 - p_m) * (mean_pos - a))
        grad_b = w_m * (-2 * p_m * (mean_neg - b))
        grad_alpha = w_m * (2 * coupling - 2 * p_m * (1 - p_m) * alpha)
        state.a[m] -= lr * grad_a
        state.b[m] -= lr * grad_b
        state.alpha[m] = max(0.0, state.alpha[m] + lr * grad_alpha)
    return loss, grad_s, state
