import numpy as np
import pytest
from scipy import stats

from rankfuse import (Dataset, GeneratorSpec, batches, chunks,
                      downsample_positives, generate, load_csv, save_csv,
                      split)


def make_spec(**kwargs):
    base = dict(
        n_samples=2000,
        objective_names=("a", "b"),
        loading_matrix=((1.0, 0.0), (0.0, 1.0)),
        objective_bias=(0.0, 0.0),
        score_noise_sd=0.5,
        features=(("age", 4), ("gender", 2)),
        seed=0,
    )
    base.update(kwargs)
    return GeneratorSpec(**base)


class TestGenerate:
    def test_deterministic(self):
        a = generate(make_spec())
        b = generate(make_spec())
        np.testing.assert_array_equal(a.scores, b.scores)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.features, b.features)

    def test_different_seed_differs(self):
        a = generate(make_spec())
        b = generate(make_spec(seed=1))
        assert not np.array_equal(a.labels, b.labels)

    def test_orthogonal_loadings_give_independent_labels(self):
        ds = generate(make_spec(n_samples=50000))
        rho = stats.spearmanr(ds.labels[:, 0], ds.labels[:, 1]).statistic
        assert abs(rho) < 0.05

    def test_identical_loadings_give_correlated_labels(self):
        # sharp logits (large loading norm) make the two Bernoulli draws
        # nearly deterministic copies of the same latent event
        ds = generate(make_spec(
            n_samples=50000,
            loading_matrix=((30.0, 0.0), (30.0, 0.0)), label_noise_sd=0.0))
        rho = stats.spearmanr(ds.labels[:, 0], ds.labels[:, 1]).statistic
        assert rho > 0.9

    def test_bias_controls_positive_rate(self):
        ds = generate(make_spec(n_samples=100000,
                                objective_bias=(-6.0, 0.0)))
        rate = ds.labels[:, 0].mean()
        expected = 1.0 / (1.0 + np.exp(6.0))
        # latent variance widens the marginal rate; 30% relative band
        assert 0.7 * expected < rate < 1.3 * expected * 2

    def test_correlation_monotone_in_planted_overlap(self):
        # ladder of 5 loading overlaps; measured label correlation must be
        # rank-aligned with the planted cosine similarity
        angles = np.linspace(0, np.pi / 2, 5)
        planted, measured = [], []
        for i, ang in enumerate(angles):
            row = (2 * np.cos(ang), 2 * np.sin(ang))
            spec = make_spec(n_samples=50000, seed=i,
                             loading_matrix=((2.0, 0.0), row))
            ds = generate(spec)
            planted.append(np.cos(ang))
            measured.append(stats.spearmanr(ds.labels[:, 0],
                                            ds.labels[:, 1]).statistic)
        tau = stats.spearmanr(planted, measured).statistic
        assert tau > 0.9

    def test_upstream_scores_informative_but_imperfect(self):
        from rankfuse import exact_auc
        ds = generate(make_spec(n_samples=20000))
        auc = exact_auc(ds.scores[:, 0], ds.labels[:, 0])
        assert 0.7 < auc < 0.999

    def test_feature_cardinalities_respected(self):
        ds = generate(make_spec())
        assert ds.features[:, 0].max() < 4
        assert ds.features[:, 1].max() < 2
        assert ds.features.min() >= 0

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            make_spec(n_samples=0)
        with pytest.raises(ValueError):
            make_spec(objective_bias=(0.0,))
        with pytest.raises(ValueError):
            make_spec(score_noise_sd=-1.0)


class TestDownsamplePositives:
    def test_current_ratio_is_noop(self):
        ds = generate(make_spec())
        y = ds.labels[:, 0]
        ratio = y.sum() / (len(y) - y.sum())
        out = downsample_positives(ds, "a", ratio, seed=0)
        assert len(out) == len(ds)

    def test_tenfold_reduction(self):
        ds = generate(make_spec(n_samples=100000, objective_bias=(-3.0, 0.0)))
        y = ds.labels[:, 0]
        ratio = y.sum() / (len(y) - y.sum())
        out = downsample_positives(ds, "a", ratio / 10, seed=0)
        kept = out.labels[:, 0].sum()
        assert abs(kept / y.sum() - 0.1) < 0.02
        # all negatives kept
        assert (out.labels[:, 0] == 0).sum() == (y == 0).sum()
        new_ratio = kept / (out.labels[:, 0] == 0).sum()
        assert abs(new_ratio - ratio / 10) / (ratio / 10) < 0.05

    def test_unattainable_target_rejected(self):
        ds = generate(make_spec())
        with pytest.raises(ValueError, match="unattainable"):
            downsample_positives(ds, "a", 100.0, seed=0)


class TestCsvRoundTrip:
    def test_save_load_save_byte_identical(self, tmp_path):
        ds = generate(make_spec(n_samples=500))
        p1 = tmp_path / "d1.csv"
        p2 = tmp_path / "d2.csv"
        save_csv(ds, p1)
        loaded = load_csv(p1)
        save_csv(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(ds.scores, loaded.scores)
        np.testing.assert_array_equal(ds.labels, loaded.labels)
        np.testing.assert_array_equal(ds.features, loaded.features)
        assert loaded.objective_names == ds.objective_names
        assert loaded.feature_names == ds.feature_names

    def test_hand_written_fixture(self, tmp_path):
        path = tmp_path / "fixture.csv"
        path.write_text(
            "score_a,score_b,label_a,label_b,feat_age\n"
            "0.25,0.5,1,0,3\n"
            "0.75,0.1,0,1,0\n"
            "1.0,0.0,1,1,2\n")
        ds = load_csv(path)
        assert len(ds) == 3
        np.testing.assert_array_equal(ds.scores[:, 0], [0.25, 0.75, 1.0])
        np.testing.assert_array_equal(ds.labels[:, 1], [0, 1, 1])
        np.testing.assert_array_equal(ds.features[:, 0], [3, 0, 2])

    def test_bad_label_reports_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("score_a,label_a\n0.5,1\n0.5,2\n")
        with pytest.raises(ValueError, match="row 3"):
            load_csv(path)

    def test_out_of_range_score_reports_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("score_a,label_a\n1.5,1\n")
        with pytest.raises(ValueError, match="row 2"):
            load_csv(path)

    def test_unparsable_cell_reports_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("score_a,label_a\nok,1\n")
        with pytest.raises(ValueError, match="row 2"):
            load_csv(path)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("score_a,feat_age\n0.5,1\n")
        with pytest.raises(ValueError, match="header"):
            load_csv(path)


class TestSplitAndBatches:
    def test_split_sizes(self):
        ds = generate(make_spec(n_samples=10))
        train, test = split(ds, 0.2, seed=0)
        assert len(train) == 8 and len(test) == 2

    def test_split_is_disjoint_cover(self):
        ds = generate(make_spec(n_samples=100))
        train, test = split(ds, 0.3, seed=1)
        all_scores = np.concatenate([train.scores, test.scores])
        assert len(all_scores) == 100
        assert len(np.unique(np.concatenate([train.scores[:, 0],
                                             test.scores[:, 0]]))) == 100

    def test_invalid_fraction_rejected(self):
        ds = generate(make_spec(n_samples=10))
        with pytest.raises(ValueError):
            split(ds, 1.5, seed=0)

    def test_batches_cover_every_index_once(self):
        idx = np.concatenate(list(batches(103, 10, shuffle_seed=3)))
        assert sorted(idx.tolist()) == list(range(103))
        sizes = [len(b) for b in batches(103, 10, shuffle_seed=3)]
        assert sizes[-1] == 3  # short tail kept

    def test_batches_deterministic(self):
        a = [b.tolist() for b in batches(50, 7, shuffle_seed=9)]
        b = [b.tolist() for b in batches(50, 7, shuffle_seed=9)]
        assert a == b

    def test_chunks_are_contiguous(self):
        got = list(chunks(10, 4))
        assert [c.tolist() for c in got] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
