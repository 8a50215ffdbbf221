"""Training loop, evaluation, and the analysis suite.

Includes plain-SGD offline and streaming training for every supported loss,
Pareto sweeps over loss-weight grids, the attention-vs-label-correlation
analysis, label-skew robustness runs, and loss throughput benchmarking.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import losses as L
from . import model as M
from .data import batches, chunks, downsample_positives
from .losses import AUCMState, BatchLabels, LossWeights
from .softrank import SoftRankConfig

__all__ = [
    "TrainConfig",
    "AnalysisResult",
    "ParetoPoint",
    "train",
    "predict",
    "evaluate",
    "pareto_sweep",
    "mark_front",
    "attention_analysis",
    "skew_experiment",
    "bench_losses",
    "spearman_matrix",
]

LOSS_NAMES = ("rank_auc", "mbce", "label_agg", "pairwise_logistic",
              "pairwise_square", "aucm")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "rank_auc"
    lr: float = 1e-4
    batch_size: int = 10240
    epochs: int = 500
    mode: str = "offline"               # or "streaming"
    streaming_inner_epochs: int = 20
    loss_weights: tuple = ()            # empty -> all ones
    softrank_epsilon: float = 1.0
    momentum: float = 0.0
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1 or self.streaming_inner_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in ("offline", "streaming"):
            raise ValueError("mode must be offline or streaming")
        object.__setattr__(self, "loss_weights",
                           tuple(float(w) for w in self.loss_weights))

    def weights_for(self, n_objectives):
        if not self.loss_weights:
            return LossWeights.ones(n_objectives)
        if len(self.loss_weights) != n_objectives:
            raise ValueError("loss_weights length mismatch")
        return LossWeights(np.asarray(self.loss_weights))


class _LossStepper:
    """Dispatches one loss evaluation per batch, owning any loss-local state."""

    def __init__(self, cfg, n_objectives, train_positive_rates):
        self.name = cfg.loss
        self.lr = cfg.lr
        self.weights = cfg.weights_for(n_objectives)
        self.srcfg = SoftRankConfig(cfg.softrank_epsilon)
        self.heads = np.tile(np.array([1.0, 0.0]), (n_objectives, 1))
        self.aucm_state = AUCMState.init(train_positive_rates)

    def step(self, scores, batch):
        if self.name == "rank_auc":
            return L.rank_auc_loss(scores, batch, self.weights, self.srcfg)
        if self.name == "mbce":
            loss, gs, gh = L.mbce_loss(scores, batch, self.weights, self.heads)
            self.heads -= self.lr * gh
            return loss, gs
        if self.name == "label_agg":
            return L.label_agg_loss(scores, batch, self.weights)
        if self.name == "pairwise_logistic":
            return L.pairwise_logistic_loss(scores, batch, self.weights)
        if self.name == "pairwise_square":
            return L.pairwise_square_loss(scores, batch, self.weights)
        loss, gs, self.aucm_state = L.aucm_step(
            scores, batch, self.weights, self.aucm_state, self.lr)
        return loss, gs


def _sgd_update(params, grads, lr, momentum, velocity):
    for (name, p), (_, g) in zip(params.items(), grads.items()):
        if momentum > 0:
            v = velocity[name]
            v *= momentum
            v += g
            g = v
        p -= lr * g


def _epoch_seed(seed, epoch):
    return int(np.random.SeedSequence([int(seed), 11, int(epoch)]).generate_state(1)[0])


def train(train_ds, test_ds, model_cfg, cfg):
    """SGD training; returns (params, history).

    History entries carry the mean train loss of the pass and the test
    AUC report (evaluated every ``eval_every`` passes and at the end).
    Aborts with RuntimeError on non-finite loss.
    """
    n = len(train_ds)
    params = M.init_params(model_cfg, cfg.seed)
    stepper = _LossStepper(cfg, train_ds.n_objectives, train_ds.positive_rates())
    velocity = ({name: np.zeros_like(p) for name, p in params.items()}
                if cfg.momentum > 0 else None)
    history = []

    def run_pass(index_lists, pass_no):
        total, count = 0.0, 0
        for idx in index_lists:
            scores, trace = M.forward(train_ds.scores[idx],
                                      train_ds.features[idx], params, model_cfg)
            batch = BatchLabels(train_ds.labels[idx], train_ds.objective_names)
            loss, dscores = stepper.step(scores, batch)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at pass {pass_no}")
            grads = M.backward(trace, dscores, params, model_cfg)
            _sgd_update(params, grads, cfg.lr, cfg.momentum, velocity)
            total += loss
            count += 1
        return total / max(count, 1)

    if cfg.mode == "offline":
        for epoch in range(cfg.epochs):
            mean_loss = run_pass(
                batches(n, cfg.batch_size, shuffle_seed=_epoch_seed(cfg.seed, epoch)),
                epoch)
            entry = {"epoch": epoch, "train_loss": float(mean_loss)}
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                entry["test_auc"] = evaluate(params, model_cfg, test_ds).as_dict()
            history.append(entry)
    else:
        for chunk_no, idx in enumerate(chunks(n, cfg.batch_size)):
            mean_loss = 0.0
            for _ in range(cfg.streaming_inner_epochs):
                mean_loss = run_pass([idx], chunk_no)
            entry = {"chunk": chunk_no, "train_loss": float(mean_loss)}
            if chunk_no % cfg.eval_every == 0:
                entry["test_auc"] = evaluate(params, model_cfg, test_ds).as_dict()
            history.append(entry)
    return params, history


def predict(params, model_cfg, dataset, chunk_size=16384):
    """Forward the whole dataset in chunks; returns the ensemble scores."""
    out = np.empty(len(dataset))
    for idx in chunks(len(dataset), chunk_size):
        out[idx], _ = M.forward(dataset.scores[idx], dataset.features[idx],
                                params, model_cfg)
    return out


def evaluate(params, model_cfg, dataset):
    scores = predict(params, model_cfg, dataset)
    return L.auc_report(scores,
                        BatchLabels(dataset.labels, dataset.objective_names))


@dataclass
class ParetoPoint:
    weights: tuple
    auc_per_objective: tuple
    on_front: bool = False


def _dominates(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return bool((a >= b).all() and (a > b).any())


def mark_front(points):
    """Set on_front on each point: no other point dominates it."""
    for p in points:
        p.on_front = not any(
            _dominates(q.auc_per_objective, p.auc_per_objective)
            for q in points if q is not p)
    return points


def pareto_sweep(train_ds, test_ds, model_cfg, cfg, weight_grid, seeds=None):
    """Train one model per loss-weight vector and mark the non-dominated set.

    ``seeds`` defaults to (cfg.seed,); per grid point the per-objective test
    AUCs are averaged over seeds.
    """
    if not weight_grid:
        raise ValueError("empty weight grid")
    seeds = tuple(seeds) if seeds else (cfg.seed,)
    points = []
    for w in weight_grid:
        aucs = []
        for seed in seeds:
            run_cfg = replace(cfg, loss_weights=tuple(w), seed=seed)
            params, _ = train(train_ds, test_ds, model_cfg, run_cfg)
            report = evaluate(params, model_cfg, test_ds)
            aucs.append([a if a is not None else np.nan
                         for a in report.per_objective])
        points.append(ParetoPoint(weights=tuple(float(v) for v in w),
                                  auc_per_objective=tuple(np.mean(aucs, axis=0))))
    return mark_front(points)


def spearman_matrix(columns):
    """Spearman rank correlation between columns; nan for constant columns."""
    y = np.asarray(columns, dtype=np.float64)
    m = y.shape[1]
    rho = np.full((m, m), np.nan)
    for i in range(m):
        rho[i, i] = 1.0
        for j in range(i + 1, m):
            if np.ptp(y[:, i]) == 0 or np.ptp(y[:, j]) == 0:
                continue
            rho[i, j] = rho[j, i] = stats.spearmanr(y[:, i], y[:, j]).statistic
    return rho


@dataclass
class AnalysisResult:
    rho: np.ndarray             # [M, M] label Spearman matrix
    attention: np.ndarray       # [M, M] mean sigmoid self-attention logits
    pearson_r: float
    p_value: float

    def as_dict(self):
        return {
            "rho": [[None if not np.isfinite(v) else float(v) for v in row]
                    for row in self.rho],
            "attention": [[float(v) for v in row] for row in self.attention],
            "pearson_r": float(self.pearson_r),
            "p_value": float(self.p_value),
        }


def mean_sigmoid_attention(params, model_cfg, dataset, chunk_size=16384):
    """Dataset mean of sigmoid(Q_r K_r^T / sqrt(d_k)): the analysis view of
    the self-attention map (sigmoid preserves absolute correlation scale)."""
    m = model_cfg.n_objectives
    total = np.zeros((m, m))
    scale = 1.0 / np.sqrt(model_cfg.key_dim)
    for idx in chunks(len(dataset), chunk_size):
        x, _ = M.discretize(dataset.scores[idx], params, model_cfg)
        q = x @ params.W_qr
        k = x @ params.W_kr
        logits = np.einsum("nmd,nkd->nmk", q, k) * scale
        total += (1.0 / (1.0 + np.exp(-logits))).sum(axis=0)
    return total / len(dataset)


def attention_analysis(params, model_cfg, dataset, anchor_objective=None,
                       mode="full", n_permutations=10000, seed=0):
    """Correlate learned attention with empirical label correlation.

    ``mode="full"`` compares all off-diagonal entries; ``mode="anchor"``
    restricts to the anchor objective's row. Pairs with undefined rho
    (constant label column) are excluded. The two-sided p-value comes from a
    permutation test over the attention entries.
    """
    rho = spearman_matrix(dataset.labels)
    att = mean_sigmoid_attention(params, model_cfg, dataset)
    m = rho.shape[0]
    if mode == "anchor":
        if anchor_objective is None:
            raise ValueError("anchor mode requires anchor_objective")
        a = dataset.objective_names.index(anchor_objective)
        pairs = [(a, j) for j in range(m) if j != a]
    elif mode == "full":
        pairs = [(i, j) for i in range(m) for j in range(m) if i != j]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    pairs = [(i, j) for i, j in pairs if np.isfinite(rho[i, j])]
    rho_vec = np.array([rho[i, j] for i, j in pairs])
    att_vec = np.array([att[i, j] for i, j in pairs])
    r_obs = float(np.corrcoef(rho_vec, att_vec)[0, 1])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 13]))
    hits = 0
    for _ in range(n_permutations):
        r_perm = np.corrcoef(rho_vec, rng.permutation(att_vec))[0, 1]
        if abs(r_perm) >= abs(r_obs):
            hits += 1
    p = (1 + hits) / (n_permutations + 1)
    return AnalysisResult(rho=rho, attention=att, pearson_r=r_obs, p_value=p)


def skew_experiment(train_ds, test_ds, model_cfg, cfg, objective,
                    skew_factors, loss_names, seeds=None):
    """Label-skew robustness: downsample one objective's train positives.

    ``skew_factors`` are positive-thinning multipliers (1 = original ratio,
    10 = ten-fold fewer positives). Returns rows of
    {loss, skew_factor, auc_sum, rel_drop_pct}, seed-averaged.
    """
    seeds = tuple(seeds) if seeds else (cfg.seed,)
    m = train_ds.objective_names.index(objective)
    y = train_ds.labels[:, m]
    base_ratio = y.sum() / (y.shape[0] - y.sum())
    rows = []
    for loss_name in loss_names:
        baseline = None
        for factor in skew_factors:
            sums = []
            for seed in seeds:
                if factor == 1:
                    ds = train_ds
                else:
                    ds = downsample_positives(train_ds, objective,
                                              base_ratio / factor, seed)
                run_cfg = replace(cfg, loss=loss_name, seed=seed)
                params, _ = train(ds, test_ds, model_cfg, run_cfg)
                sums.append(evaluate(params, model_cfg, test_ds).sum)
            auc_sum = float(np.mean(sums))
            if baseline is None:
                baseline = auc_sum
            rows.append({
                "loss": loss_name,
                "skew_factor": float(factor),
                "auc_sum": auc_sum,
                "rel_drop_pct": 100.0 * (baseline - auc_sum) / baseline,
            })
    return rows


def _bench_callable(loss_name, scores, batch, weights, srcfg):
    heads = np.tile(np.array([1.0, 0.0]), (batch.n_objectives, 1))
    state = AUCMState.init(batch.labels.mean(axis=0))
    if loss_name == "rank_auc":
        return lambda: L.rank_auc_loss(scores, batch, weights, srcfg)
    if loss_name == "mbce":
        return lambda: L.mbce_loss(scores, batch, weights, heads)
    if loss_name == "label_agg":
        return lambda: L.label_agg_loss(scores, batch, weights)
    if loss_name == "pairwise_logistic":
        return lambda: L.pairwise_logistic_loss(scores, batch, weights)
    if loss_name == "pairwise_square":
        return lambda: L.pairwise_square_loss(scores, batch, weights)
    if loss_name == "aucm":
        return lambda: L.aucm_step(scores, batch, weights, state, lr=0.0)
    raise ValueError(f"unknown loss {loss_name!r}")


def bench_losses(n_values, loss_names, repeats=5, warmup=2, seed=0,
                 n_objectives=2, epsilon=1.0):
    """Time loss forward+backward on random batches.

    Returns rows {loss, n, samples_per_sec, growth_ratio}; growth_ratio is
    time(n) / time(previous n in the list), nan for the first entry.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 17]))
    weights = LossWeights.ones(n_objectives)
    srcfg = SoftRankConfig(epsilon)
    rows = []
    for loss_name in loss_names:
        prev_time = None
        for n in n_values:
            scores = rng.standard_normal(n)
            labels = (rng.random((n, n_objectives)) < 0.5).astype(np.int8)
            batch = BatchLabels(labels, [f"obj{i}" for i in range(n_objectives)])
            call = _bench_callable(loss_name, scores, batch, weights, srcfg)
            for _ in range(warmup):
                call()
            t0 = time.perf_counter()
            for _ in range(repeats):
                call()
            elapsed = (time.perf_counter() - t0) / repeats
            rows.append({
                "loss": loss_name,
                "n": int(n),
                "samples_per_sec": n / elapsed if elapsed > 0 else float("inf"),
                "growth_ratio": (elapsed / prev_time) if prev_time else float("nan"),
            })
            prev_time = elapsed
    return rows
