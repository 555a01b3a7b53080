import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contextshap import context as ctx
from contextshap.errors import (
    ParameterError,
    ShapeError,
    SizingError,
    UndefinedSimilarityError,
)


class TestTransform:
    def test_zero_maps_to_one(self):
        gi = ctx.transform_gfi(np.array([0.0, 0.5, 0.5]))
        assert gi.transformed[0] == 1.0

    def test_peak_value(self):
        # exp(0.302) lands near 1.352
        gi = ctx.transform_gfi(np.array([0.302, 0.698]))
        assert gi.transformed[0] == pytest.approx(1.352, abs=1e-3)

    def test_equal_raw_equal_transformed(self):
        gi = ctx.transform_gfi(np.array([0.5, 0.5]))
        assert gi.transformed[0] == gi.transformed[1] == pytest.approx(np.exp(0.5))

    def test_argmax_preserved_and_floor_one(self):
        raw = np.array([0.1, 0.6, 0.3])
        gi = ctx.transform_gfi(raw)
        assert gi.transformed.argmax() == raw.argmax()
        assert (gi.transformed >= 1.0).all()

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            ctx.transform_gfi(np.array([0.5, -0.1]))


class TestWeightedCosine:
    def test_self_similarity(self):
        x = np.array([0.3, -1.2, 0.7])
        w = np.array([1.1, 2.0, 1.4])
        assert ctx.weighted_cosine(x, x, w) == pytest.approx(1.0, abs=1e-12)

    def test_positive_scaling_invariance(self):
        x = np.array([0.5, 1.5, -0.4])
        w = np.array([1.0, 1.3, 2.2])
        assert ctx.weighted_cosine(3.7 * x, x, w) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_under_diagonal_weighting(self):
        s = ctx.weighted_cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([2.0, 3.0]))
        assert s == 0.0

    def test_hand_computed_value(self):
        # w=[2,1], x_c=[1,1], x_a=[1,0]: 2 / (sqrt(3)*sqrt(2))
        s = ctx.weighted_cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0]), np.array([2.0, 1.0]))
        assert s == pytest.approx(2.0 / (np.sqrt(3.0) * np.sqrt(2.0)), abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(UndefinedSimilarityError):
            ctx.weighted_cosine(np.zeros(3), np.ones(3), np.ones(3))

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(ParameterError):
            ctx.weighted_cosine(np.ones(2), np.ones(2), np.array([1.0, 0.0]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            ctx.weighted_cosine(np.ones(2), np.ones(3), np.ones(3))

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_symmetry_and_range(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 12))
        a = rng.normal(size=d)
        b = rng.normal(size=d)
        w = rng.uniform(0.1, 5.0, size=d)
        s_ab = ctx.weighted_cosine(a, b, w)
        s_ba = ctx.weighted_cosine(b, a, w)
        assert abs(s_ab - s_ba) <= 1e-12
        assert -1.0 - 1e-12 <= s_ab <= 1.0 + 1e-12

    def test_squared_variant_changes_scores_not_selfdirection(self):
        a = np.array([0.5, 1.5, -0.4])
        b = np.array([1.0, 0.3, 0.2])
        w = np.array([1.0, 2.0, 3.0])
        linear = ctx.weighted_cosine(a, b, w)
        squared = ctx.weighted_cosine(a, b, w, norm_weighting="squared")
        assert linear != squared


def brute_force_topk(x_a, train, w, k, norm_weighting="linear"):
    scores = np.array(
        [ctx.weighted_cosine(row, x_a, w, norm_weighting) for row in train]
    )
    order = np.argsort(-scores, kind="stable")
    return set(order[:k].tolist())


class TestSelect:
    def make(self, n=300, d=8, seed=0):
        rng = np.random.default_rng(seed)
        train = rng.normal(size=(n, d)) + 0.1  # keep rows away from the origin
        x_a = rng.normal(size=d) + 0.1
        w = rng.uniform(0.5, 3.0, size=d)
        return x_a, train, w

    def test_matches_brute_force(self):
        for seed in range(5):
            x_a, train, w = self.make(seed=seed)
            bg = ctx.select_background(x_a, train, w, k=20)
            assert set(bg.indices.tolist()) == brute_force_topk(x_a, train, w, 20)

    def test_self_match_scores_one(self):
        x_a, train, w = self.make()
        train[57] = x_a
        bg = ctx.select_background(x_a, train, w, k=10)
        assert 57 in bg.indices
        assert bg.scores[list(bg.indices).index(57)] == pytest.approx(1.0, abs=1e-12)

    def test_k_equals_n(self):
        x_a, train, w = self.make(n=40)
        bg = ctx.select_background(x_a, train, w, k=40)
        assert set(bg.indices.tolist()) == set(range(40))

    def test_planted_near_duplicates_win(self):
        rng = np.random.default_rng(3)
        d = 10
        x_a = rng.normal(size=d) + 0.2
        train = rng.normal(size=(500, d))
        planted = rng.choice(500, size=5, replace=False)
        for i in planted:
            train[i] = x_a + rng.normal(0, 1e-4, size=d)
        w = rng.uniform(0.5, 2.0, size=d)
        bg = ctx.select_background(x_a, train, w, k=5)
        assert set(bg.indices.tolist()) == set(planted.tolist())

    def test_scores_sorted_nonincreasing(self):
        x_a, train, w = self.make()
        bg = ctx.select_background(x_a, train, w, k=50)
        assert (np.diff(bg.scores) <= 1e-15).all()

    def test_excluded_rows_score_no_higher(self):
        x_a, train, w = self.make()
        bg = ctx.select_background(x_a, train, w, k=25)
        all_scores = ctx.similarity_scores(x_a, train, w)
        excluded = np.setdiff1d(np.arange(train.shape[0]), bg.indices)
        assert all_scores[excluded].max() <= bg.scores.min() + 1e-15

    def test_tie_break_lower_index(self):
        rng = np.random.default_rng(1)
        d = 4
        x_a = np.array([1.0, 0.5, -0.2, 0.8])
        train = rng.normal(size=(20, d))
        train[7] = x_a  # bitwise-equal rows share one score exactly
        train[12] = x_a
        train[15] = x_a
        bg = ctx.select_background(x_a, train, np.ones(d), k=2)
        assert bg.indices.tolist() == [7, 12]

    def test_rescaled_weights_same_set_and_scores(self):
        x_a, train, w = self.make(seed=9)
        a = ctx.select_background(x_a, train, w, k=15)
        b = ctx.select_background(x_a, train, 41.0 * w, k=15)
        assert a.indices.tolist() == b.indices.tolist()
        assert np.allclose(a.scores, b.scores, atol=1e-12)

    def test_squared_variant_set_invariant_under_rescaling(self):
        x_a, train, w = self.make(seed=11)
        a = ctx.select_background(x_a, train, w, k=15, norm_weighting="squared")
        b = ctx.select_background(x_a, train, 5.0 * w, k=15, norm_weighting="squared")
        assert a.indices.tolist() == b.indices.tolist()

    def test_squared_variant_matches_its_brute_force(self):
        x_a, train, w = self.make(seed=13)
        bg = ctx.select_background(x_a, train, w, k=12, norm_weighting="squared")
        assert set(bg.indices.tolist()) == brute_force_topk(x_a, train, w, 12, "squared")

    def test_weight_shift_promotes_matching_cluster(self):
        # rows matching x_a on feature 0 outrank the others once
        # the weight concentrates there
        x_a = np.array([1.0, 1.0])
        match_f0 = np.array([1.0, -1.0])
        match_f1 = np.array([-1.0, 1.0])
        train = np.vstack([match_f0, match_f1])
        low = ctx.similarity_scores(x_a, train, np.array([0.5, 1.0]))
        high = ctx.similarity_scores(x_a, train, np.array([2.0, 1.0]))
        assert low[0] < low[1]
        assert high[0] > high[1]

    def test_n_below_k(self):
        x_a, train, w = self.make(n=10)
        with pytest.raises(SizingError):
            ctx.select_background(x_a, train, w, k=11)

    def test_samples_are_unmodified_rows(self):
        x_a, train, w = self.make()
        bg = ctx.select_background(x_a, train, w, k=5)
        for sample, idx in zip(bg.samples, bg.indices):
            assert np.array_equal(sample, train[idx])


class TestRandom:
    def test_determinism(self):
        train = np.random.default_rng(0).normal(size=(50, 4))
        a = ctx.random_background(train, k=10, seed=77)
        b = ctx.random_background(train, k=10, seed=77)
        assert a.indices.tolist() == b.indices.tolist()

    def test_k_equals_n(self):
        train = np.random.default_rng(0).normal(size=(12, 3))
        bg = ctx.random_background(train, k=12, seed=5)
        assert set(bg.indices.tolist()) == set(range(12))

    def test_uniformity(self):
        train = np.zeros((10, 2))
        counts = np.zeros(10)
        for seed in range(1000):
            bg = ctx.random_background(train, k=1, seed=seed)
            counts[bg.indices[0]] += 1
        assert (np.abs(counts - 100) <= 30).all()

    def test_without_replacement(self):
        train = np.zeros((20, 2))
        bg = ctx.random_background(train, k=20, seed=1)
        assert len(set(bg.indices.tolist())) == 20

    def test_n_below_k(self):
        with pytest.raises(SizingError):
            ctx.random_background(np.zeros((3, 2)), k=4, seed=0)


class TestExport:
    def test_json_round_trip(self, tmp_path):
        import json

        train = np.random.default_rng(0).normal(size=(30, 4)) + 0.1
        bg = ctx.select_background(np.ones(4), train, np.ones(4), k=3, anomaly_index=17)
        p = tmp_path / "bg.json"
        ctx.write_background(bg, p)
        payload = json.loads(p.read_text())
        assert payload["selection"] == "similar"
        assert payload["anomaly_index"] == 17
        assert len(payload["indices"]) == 3
        assert len(payload["scores"]) == 3
