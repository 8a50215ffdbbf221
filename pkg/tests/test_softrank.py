import itertools

import numpy as np
import pytest

from rankfuse import (SoftRankConfig, isotonic_regression, soft_rank,
                      soft_rank_backward)


def isotonic_oracle(w):
    """Exhaustive oracle: enumerate contiguous block partitions, keep the
    feasible blockwise-mean vector with minimal squared error."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    best, best_cost = None, np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        v = np.concatenate([
            np.full(b - a, w[a:b].mean()) for a, b in zip(bounds, bounds[1:])])
        if np.all(np.diff(v) <= 1e-12):
            cost = np.sum((v - w) ** 2)
            if cost < best_cost:
                best, best_cost = v, cost
    return best


def projection_oracle(z):
    """Quadratic program over the permutahedron of (1..n) with all 2^n - 2
    subset constraints; independent of the PAV reduction."""
    import cvxpy as cp

    n = len(z)
    t = cp.Variable(n)
    ranks_desc = np.arange(n, 0, -1)
    cons = [cp.sum(t) == n * (n + 1) / 2]
    for size in range(1, n):
        cap = ranks_desc[:size].sum()
        for subset in itertools.combinations(range(n), size):
            cons.append(cp.sum(t[list(subset)]) <= cap)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(t - z)), cons)
    prob.solve(solver=cp.CLARABEL)
    return t.value


class TestIsotonicRegression:
    def test_already_monotone_is_identity(self):
        np.testing.assert_allclose(isotonic_regression([3, 2, 1]), [3, 2, 1])

    def test_single_violation_pools_to_mean(self):
        # frozen from the brute-force oracle on [1, 3, 2]
        np.testing.assert_allclose(isotonic_regression([1, 3, 2]), [2, 2, 2])

    def test_constant_input_is_feasible(self):
        np.testing.assert_allclose(isotonic_regression([5, 5]), [5, 5])

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="empty input"):
            isotonic_regression([])

    def test_matches_partition_enumeration_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = rng.integers(1, 9)
            w = rng.standard_normal(n) * rng.uniform(0.5, 3)
            np.testing.assert_allclose(isotonic_regression(w),
                                       isotonic_oracle(w), atol=1e-9)


class TestSoftRankForward:
    def test_vertex_input_unchanged(self):
        np.testing.assert_allclose(soft_rank([2, 1, 3]).soft_ranks, [2, 1, 3])

    def test_ties_take_barycentric_value(self):
        np.testing.assert_allclose(soft_rank([5, 5, 5]).soft_ranks, [2, 2, 2])

    def test_partial_tie_projection(self):
        # frozen from the cvxpy projection oracle
        np.testing.assert_allclose(soft_rank([0, 0, 1]).soft_ranks,
                                   [5 / 3, 5 / 3, 8 / 3], atol=1e-12)

    def test_matches_qp_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = int(rng.integers(2, 7))
            eps = float(rng.uniform(0.3, 3.0))
            s = rng.standard_normal(n) * 2
            got = soft_rank(s, SoftRankConfig(eps)).soft_ranks
            want = projection_oracle(s / eps)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_permutahedron_invariants(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 65))
            s = rng.standard_normal(n) * rng.uniform(0.1, 10)
            if rng.random() < 0.3:  # inject ties
                s = np.round(s, 1)
            r = soft_rank(s, SoftRankConfig(rng.uniform(0.1, 5))).soft_ranks
            assert abs(r.sum() - n * (n + 1) / 2) < 1e-9
            desc = np.sort(r)[::-1]
            caps = np.cumsum(np.arange(n, 0, -1))
            assert np.all(np.cumsum(desc) <= caps + 1e-9)
            assert r.min() >= 1 - 1e-9 and r.max() <= n + 1e-9
            # order preservation
            order = np.argsort(s, kind="stable")
            assert np.all(np.diff(r[order]) >= -1e-9)

    def test_hard_limit_reaches_exact_ranks(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            s = rng.permutation(n) * 1e-3 + rng.uniform(-1, 1)
            r = soft_rank(s, SoftRankConfig(1e-6)).soft_ranks
            hard = np.argsort(np.argsort(s)) + 1
            np.testing.assert_array_equal(r, hard)

    def test_idempotent_on_rank_vertices(self):
        rng = np.random.default_rng(5)
        for n in (2, 3, 5, 17):
            v = rng.permutation(n) + 1.0
            np.testing.assert_allclose(soft_rank(v).soft_ranks, v)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="non-finite"):
            soft_rank([1.0, np.nan])
        with pytest.raises(ValueError, match="invalid regularization"):
            SoftRankConfig(0.0)
        with pytest.raises(ValueError):
            soft_rank([])

    def test_stable_perm_for_tied_inputs(self):
        res = soft_rank([1.0, 1.0, 0.5])
        np.testing.assert_array_equal(res.perm, [0, 1, 2])


def fd_grad(s, upstream, cfg, h=1e-6):
    s = np.asarray(s, dtype=float)
    g = np.empty_like(s)
    for i in range(len(s)):
        e = np.zeros_like(s)
        e[i] = h
        fp = soft_rank(s + e, cfg).soft_ranks @ upstream
        fm = soft_rank(s - e, cfg).soft_ranks @ upstream
        g[i] = (fp - fm) / (2 * h)
    return g


class TestSoftRankBackward:
    def test_zero_upstream_gives_zero_grad(self):
        cfg = SoftRankConfig(1e-3)
        res = soft_rank([0.3, 0.9, 0.1], cfg)
        np.testing.assert_array_equal(
            soft_rank_backward(res, np.zeros(3), cfg), np.zeros(3))

    def test_fully_tied_point_matches_finite_differences(self):
        # all three scores pool into one block; the Jacobian there is
        # (I - ones/3), so upstream [1, 0, 0] maps to [2/3, -1/3, -1/3]
        cfg = SoftRankConfig(1.0)
        s = np.array([5.0, 5.0, 5.0])
        res = soft_rank(s, cfg)
        upstream = np.array([1.0, 0.0, 0.0])
        grad = soft_rank_backward(res, upstream, cfg)
        np.testing.assert_allclose(grad, [2 / 3, -1 / 3, -1 / 3], atol=1e-12)
        np.testing.assert_allclose(grad, fd_grad(s, upstream, cfg, h=1e-5),
                                   atol=1e-6)

    def test_partial_tie_matches_finite_differences(self):
        cfg = SoftRankConfig(1.0)
        s = np.array([0.0, 0.0, 1.0])
        upstream = np.array([0.0, 0.0, 1.0])
        res = soft_rank(s, cfg)
        grad = soft_rank_backward(res, upstream, cfg)
        fd = fd_grad(s, upstream, cfg)
        assert np.max(np.abs(grad - fd)) / max(np.abs(fd).max(), 1) < 1e-6

    def test_random_points_match_finite_differences(self):
        rng = np.random.default_rng(19)
        checked = 0
        while checked < 100:
            n = int(rng.integers(2, 33))
            eps = float(rng.choice([0.1, 1.0, 10.0]))
            cfg = SoftRankConfig(eps)
            s = rng.standard_normal(n) * rng.uniform(0.5, 3)
            res = soft_rank(s, cfg)
            # skip points near a block boundary (adjacent PAV block values
            # nearly equal), where the projection is not differentiable
            w = (s / eps)[res.perm] - np.arange(n, 0, -1)
            n_blocks = res.blocks[-1] + 1
            means = (np.bincount(res.blocks, weights=w)
                     / np.bincount(res.blocks))
            if n_blocks > 1 and np.min(means[:-1] - means[1:]) < 1e-3:
                continue
            upstream = rng.standard_normal(n)
            grad = soft_rank_backward(res, upstream, cfg)
            fd = fd_grad(s, upstream, cfg)
            # relative error < 1e-4; atol absorbs FD rounding noise where the
            # true gradient is exactly zero (hard-rank regime)
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)
            checked += 1

    def test_length_mismatch_rejected(self):
        res = soft_rank([1.0, 2.0])
        with pytest.raises(ValueError):
            soft_rank_backward(res, np.zeros(3))
