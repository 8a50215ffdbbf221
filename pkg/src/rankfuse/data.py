"""Synthetic multi-objective impression logs, CSV round-trip, and batching.

The generator plants a latent factor model: each objective's label and
upstream score are driven by the same latent projection, so upstream scores
are informative but imperfect, and the cosine similarity of two objectives'
loading vectors controls the correlation between their labels.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtri

__all__ = [
    "GeneratorSpec",
    "Dataset",
    "generate",
    "downsample_positives",
    "save_csv",
    "load_csv",
    "split",
    "batches",
    "chunks",
]

# named sub-streams derived from one seed
_STREAM_LATENT = 1
_STREAM_LABEL = 2
_STREAM_SCORE = 3
_STREAM_FEATURE = 4


@dataclass(frozen=True)
class GeneratorSpec:
    n_samples: int
    objective_names: tuple
    loading_matrix: tuple       # M rows of latent-space loading vectors
    objective_bias: tuple       # per-objective logit offset (controls skew)
    score_noise_sd: float = 0.5
    label_noise_sd: float = 0.0
    features: tuple = ()        # ((name, cardinality), ...)
    feature_noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.loading_matrix, dtype=np.float64)
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if a.ndim != 2 or a.shape[0] != len(self.objective_names):
            raise ValueError("loading_matrix must have one row per objective")
        if len(self.objective_bias) != len(self.objective_names):
            raise ValueError("objective_bias length mismatch")
        if self.score_noise_sd < 0 or self.label_noise_sd < 0:
            raise ValueError("noise sd must be >= 0")
        object.__setattr__(self, "objective_names", tuple(self.objective_names))
        object.__setattr__(self, "loading_matrix",
                           tuple(tuple(float(v) for v in row) for row in a))
        object.__setattr__(self, "objective_bias",
                           tuple(float(b) for b in self.objective_bias))
        object.__setattr__(self, "features",
                           tuple((str(n), int(c)) for n, c in self.features))

    @property
    def n_objectives(self):
        return len(self.objective_names)

    @property
    def latent_dim(self):
        return len(self.loading_matrix[0])


@dataclass
class Dataset:
    """Immutable struct-of-arrays impression log."""

    scores: np.ndarray          # [N, M] in [0, 1]
    labels: np.ndarray          # [N, M] in {0, 1}
    features: np.ndarray        # [N, F] category ids
    objective_names: list
    feature_names: list
    feature_cards: list
    provenance: object = None   # GeneratorSpec or source path

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.features = np.asarray(self.features, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores/labels shape mismatch")
        if (self.scores < 0).any() or (self.scores > 1).any():
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self):
        return self.scores.shape[0]

    @property
    def n_objectives(self):
        return self.scores.shape[1]

    def subset(self, idx):
        return Dataset(self.scores[idx], self.labels[idx], self.features[idx],
                       self.objective_names, self.feature_names,
                       self.feature_cards, provenance=self.provenance)

    def positive_rates(self):
        return self.labels.mean(axis=0)


def _stream(seed, stream_id):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream_id]))


def generate(spec):
    """Draw a dataset from the latent factor model; deterministic given seed."""
    n, m, k = spec.n_samples, spec.n_objectives, spec.latent_dim
    a = np.asarray(spec.loading_matrix)
    bias = np.asarray(spec.objective_bias)

    z = _stream(spec.seed, _STREAM_LATENT).standard_normal((n, k))
    logits = z @ a.T + bias

    label_rng = _stream(spec.seed, _STREAM_LABEL)
    label_logits = logits
    if spec.label_noise_sd > 0:
        label_logits = logits + spec.label_noise_sd * label_rng.standard_normal((n, m))
    labels = (label_rng.random((n, m)) < expit(label_logits)).astype(np.int8)

    score_rng = _stream(spec.seed, _STREAM_SCORE)
    score_logits = logits
    if spec.score_noise_sd > 0:
        score_logits = logits + spec.score_noise_sd * score_rng.standard_normal((n, m))
    scores = expit(score_logits)

    feat_rng = _stream(spec.seed, _STREAM_FEATURE)
    feats = np.zeros((n, len(spec.features)), dtype=np.int64)
    for f, (_, card) in enumerate(spec.features):
        proj = feat_rng.standard_normal(k)
        proj /= np.linalg.norm(proj)
        val = z @ proj + spec.feature_noise_sd * feat_rng.standard_normal(n)
        # equal-probability bins of the (known-variance) normal value
        sd = np.sqrt(1.0 + spec.feature_noise_sd ** 2)
        edges = ndtri(np.arange(1, card) / card) * sd
        feats[:, f] = np.digitize(val, edges)

    return Dataset(scores=scores, labels=labels, features=feats,
                   objective_names=list(spec.objective_names),
                   feature_names=[name for name, _ in spec.features],
                   feature_cards=[card for _, card in spec.features],
                   provenance=spec)


def downsample_positives(dataset, objective, target_ratio, seed):
    """Thin the positives of one objective to reach a pos:neg target ratio.

    All negatives (and all other samples' rows) are kept; positives are
    retained uniformly at random. Meant for training splits only.
    """
    m = dataset.objective_names.index(objective)
    y = dataset.labels[:, m]
    n_pos = int(y.sum())
    n_neg = int(y.shape[0] - n_pos)
    if n_neg == 0 or target_ratio <= 0:
        raise ValueError("invalid downsampling target")
    keep = int(round(target_ratio * n_neg))
    if keep > n_pos:
        raise ValueError(
            f"target ratio {target_ratio} unattainable: only {n_pos} positives")
    if keep == n_pos:
        return dataset
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    pos_idx = np.flatnonzero(y == 1)
    kept_pos = rng.choice(pos_idx, size=keep, replace=False)
    mask = np.ones(len(dataset), dtype=bool)
    mask[pos_idx] = False
    mask[kept_pos] = True
    return dataset.subset(np.flatnonzero(mask))


def _format_float(v):
    return repr(float(v))


def save_csv(dataset, path):
    """Write the dataset as UTF-8 CSV with a mandatory header row."""
    header = ([f"score_{n}" for n in dataset.objective_names]
              + [f"label_{n}" for n in dataset.objective_names]
              + [f"feat_{n}" for n in dataset.feature_names])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = ([_format_float(v) for v in dataset.scores[i]]
                   + [str(int(v)) for v in dataset.labels[i]]
                   + [str(int(v)) for v in dataset.features[i]])
            writer.writerow(row)


def load_csv(path):
    """Parse a dataset CSV; schema is recovered from the header row.

    Raises ValueError with the offending row number on any missing column,
    unparsable cell, or out-of-range value.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty file: header row is mandatory") from None
        objective_names = [c[len("score_"):] for c in header if c.startswith("score_")]
        feature_names = [c[len("feat_"):] for c in header if c.startswith("feat_")]
        expected = ([f"score_{n}" for n in objective_names]
                    + [f"label_{n}" for n in objective_names]
                    + [f"feat_{n}" for n in feature_names])
        if header != expected or not objective_names:
            raise ValueError(f"bad header: expected columns {expected}")
        m, f_cnt = len(objective_names), len(feature_names)
        scores, labels, feats = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValueError(f"row {row_no}: expected {len(expected)} columns")
            try:
                s = [float(v) for v in row[:m]]
                y = [int(v) for v in row[m:2 * m]]
                ft = [int(v) for v in row[2 * m:]]
            except ValueError:
                raise ValueError(f"row {row_no}: unparsable cell") from None
            if any(v < 0 or v > 1 for v in s):
                raise ValueError(f"row {row_no}: score out of [0, 1]")
            if any(v not in (0, 1) for v in y):
                raise ValueError(f"row {row_no}: label must be 0 or 1")
            if any(v < 0 for v in ft):
                raise ValueError(f"row {row_no}: negative category id")
            scores.append(s)
            labels.append(y)
            feats.append(ft)
    if not scores:
        raise ValueError("no data rows")
    feats_arr = np.asarray(feats, dtype=np.int64).reshape(len(scores), f_cnt)
    cards = (feats_arr.max(axis=0) + 1).tolist() if f_cnt else []
    return Dataset(scores=np.asarray(scores), labels=np.asarray(labels),
                   features=feats_arr, objective_names=objective_names,
                   feature_names=feature_names, feature_cards=cards,
                   provenance=str(path))


def split(dataset, test_fraction, seed):
    """Disjoint random (train, test) cover; deterministic under seed."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = int(n * test_fraction)
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 6])).permutation(n)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def batches(n, batch_size, shuffle_seed=None):
    """Yield index arrays covering [0, n) exactly once; short tail kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(
            np.random.SeedSequence([int(shuffle_seed), 7])).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def chunks(n, chunk_size):
    """Contiguous index ranges in generation order (pseudo-chronological)."""
    for start in range(0, n, chunk_size):
        yield np.arange(start, min(start + chunk_size, n))
