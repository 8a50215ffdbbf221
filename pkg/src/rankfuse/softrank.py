"""Differentiable ranking via isotonic regression and permutahedron projection.

Soft ranks are the Euclidean projection of (scores / epsilon) onto the
permutahedron spanned by the permutations of (1, ..., n).  The projection
reduces to a single descending sort plus one pass of pool-adjacent-violators,
so the forward pass is O(n log n) and the backward pass is O(n).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SoftRankConfig",
    "SoftRankResult",
    "isotonic_regression",
    "soft_rank",
    "soft_rank_backward",
]


@dataclass(frozen=True)
class SoftRankConfig:
    """Smoothness control for the soft rank operator.

    ``regularization_strength`` (epsilon) rescales the input before the
    projection; small epsilon pushes the result toward hard ascending ranks
    (rank 1 = smallest score), large epsilon pools everything toward the
    barycenter (n+1)/2.
    """

    regularization_strength: float = 1.0

    def __post_init__(self):
        if not (self.regularization_strength > 0):
            raise ValueError("invalid regularization")


@dataclass
class SoftRankResult:
    """Soft ranks plus the state needed for an O(n) backward pass.

    ``perm`` is the stable descending argsort of the input; ``blocks`` gives
    the PAV block id of every sorted position (contiguous, non-decreasing).
    """

    soft_ranks: np.ndarray
    perm: np.ndarray
    blocks: np.ndarray


def _pav_nonincreasing(w):
    """Pool-adjacent-violators for a non-increasing fit.

    Returns (block_means, block_counts). Each element is pushed and merged at
    most once, so the pass is O(n).
    """
    n = w.shape[0]
    means = np.empty(n, dtype=np.float64)
    counts = np.empty(n, dtype=np.intp)
    m = 0
    for i in range(n):
        means[m] = w[i]
        counts[m] = 1
        m += 1
        while m > 1 and means[m - 2] < means[m - 1]:
            total = means[m - 2] * counts[m - 2] + means[m - 1] * counts[m - 1]
            counts[m - 2] += counts[m - 1]
            means[m - 2] = total / counts[m - 2]
            m -= 1
    return means[:m], counts[:m]


def isotonic_regression(w):
    """Project ``w`` onto the cone of non-increasing vectors.

    Returns the minimizer of 0.5 * ||v - w||^2 subject to
    v[0] >= v[1] >= ... >= v[n-1]; the output is block-wise constant with
    each block value equal to the mean of its inputs.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("empty input")
    means, counts = _pav_nonincreasing(w)
    return np.repeat(means, counts)


def soft_rank(scores, config=SoftRankConfig()):
    """Project scores / epsilon onto the permutahedron of (1, ..., n).

    The result converges to hard ascending ranks as epsilon -> 0 for
    distinct scores, and always satisfies sum(soft_ranks) = n(n+1)/2.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite input")
    n = s.shape[0]
    z = s / config.regularization_strength
    perm = np.argsort(-z, kind="stable")
    rho = np.arange(n, 0, -1, dtype=np.float64)
    means, counts = _pav_nonincreasing(z[perm] - rho)
    t_sorted = z[perm] - np.repeat(means, counts)
    soft_ranks = np.empty(n, dtype=np.float64)
    soft_ranks[perm] = t_sorted
    blocks = np.repeat(np.arange(means.shape[0]), counts)
    return SoftRankResult(soft_ranks=soft_ranks, perm=perm, blocks=blocks)


def soft_rank_backward(result, upstream, config=SoftRankConfig()):
    """Vector-Jacobian product of soft_rank.

    In sorted coordinates the Jacobian is (I - B) / epsilon, where B is the
    block-diagonal averaging matrix of the PAV partition; the product is
    computed blockwise in O(n).
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != result.soft_ranks.shape:
        raise ValueError("upstream length mismatch")
    gs = g[result.perm]
    n_blocks = int(result.blocks[-1]) + 1
    sums = np.bincount(result.blocks, weights=gs, minlength=n_blocks)
    sizes = np.bincount(result.blocks, minlength=n_blocks)
    centered = gs - (sums / sizes)[result.blocks]
    grad = np.empty_like(g)
    grad[result.perm] = centered / config.regularization_strength
    return grad
