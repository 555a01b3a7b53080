import numpy as np
import pytest

from contextshap import predictors as pred
from contextshap.dataset import WindowedDataset
from contextshap.errors import (
    DivergenceError,
    ParameterError,
    ShapeError,
    SolverError,
    StateError,
)


def make_windows(n=120, i=4, f=3, h=2, seed=0, target_fn=None):
    rng = np.random.default_rng(seed)
    inputs = rng.normal(size=(n, i, f))
    if target_fn is None:
        targets = rng.normal(size=(n, h))
    else:
        targets = target_fn(inputs.reshape(n, -1))
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        window_length=i,
        horizon=h,
        origin_indices=np.arange(n),
    )


class TestRidge:
    def test_zero_targets_zero_weights(self):
        train = make_windows(target_fn=lambda flat: np.zeros((flat.shape[0], 2)))
        model = pred.fit_ridge(train, l2_lambda=1e-3)
        assert np.allclose(model.weights_, 0.0, atol=1e-12)

    def test_recovers_single_feature_unregularized(self):
        train = make_windows(n=200, target_fn=lambda flat: flat[:, [0, 0]])
        model = pred.fit_ridge(train, l2_lambda=0.0)
        w, intercept = model.flat_coefficients(0)
        assert abs(w[0] - 1.0) < 1e-8
        assert np.abs(w[1:]).max() < 1e-8
        assert abs(intercept) < 1e-8

    def test_huge_lambda_predicts_intercept(self):
        train = make_windows(n=200, seed=2)
        model = pred.fit_ridge(train, l2_lambda=1e12)
        assert np.abs(model.weights_[1:]).max() < 1e-9
        out = model.predict(train.inputs[:5])
        assert np.allclose(out, train.targets.mean(axis=0), atol=1e-6)

    def test_singular_system_raises(self):
        # duplicate feature columns with no regularization cannot be solved
        rng = np.random.default_rng(0)
        base = rng.normal(size=(50, 2, 1))
        inputs = np.concatenate([base, base], axis=2)  # feature 1 == feature 0
        train = WindowedDataset(
            inputs=inputs, targets=rng.normal(size=(50, 1)),
            window_length=2, horizon=1, origin_indices=np.arange(50),
        )
        with pytest.raises(SolverError):
            pred.fit_ridge(train, l2_lambda=0.0)

    def test_prediction_matches_manual_dot(self):
        train = make_windows(n=150, seed=3)
        model = pred.fit_ridge(train, l2_lambda=1e-3)
        x = train.inputs[7]
        flat = x.reshape(-1)
        manual = flat @ model.weights_[1:] + model.weights_[0]
        assert np.allclose(model.predict(x[None])[0], manual, atol=1e-12)

    def test_affine_interpolation(self):
        train = make_windows(n=150, seed=4)
        model = pred.fit_ridge(train, l2_lambda=1e-3)
        x0, x1 = train.inputs[0], train.inputs[1]
        y0, y1 = model.predict(x0[None])[0], model.predict(x1[None])[0]
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            blend = alpha * x1 + (1 - alpha) * x0
            expected = alpha * y1 + (1 - alpha) * y0
            assert np.allclose(model.predict(blend[None])[0], expected, atol=1e-9)


class TestMlp:
    def test_zero_width_rejected(self):
        with pytest.raises(ParameterError):
            pred.MlpForecaster(hidden_width=0)

    def test_noiseless_linear_fixture(self):
        def target(flat):
            y = 0.6 * flat[:, 0] - 0.3 * flat[:, 5] + 0.1
            return np.column_stack([y, 0.5 * y])

        train = make_windows(n=300, i=4, f=3, seed=5, target_fn=target)
        val = make_windows(n=80, i=4, f=3, seed=6, target_fn=target)
        model = pred.fit_mlp(train, hidden_width=24, learning_rate=0.2, epochs=12000, seed=1)
        out = model.predict(val.inputs)
        mse = float(np.mean((out - val.targets) ** 2))
        assert mse < 1e-3 * float(np.var(val.targets))

    def test_loss_nonincreasing_over_window(self):
        def target(flat):
            return flat[:, [1, 2]]

        train = make_windows(n=200, seed=7, target_fn=target)
        model = pred.fit_mlp(train, hidden_width=16, learning_rate=0.1, epochs=600, seed=2)
        hist = np.array(model.loss_history_)
        assert (hist[10:] <= hist[:-10] + 1e-12).all()

    def test_determinism_same_seed(self):
        train = make_windows(n=100, seed=8)
        a = pred.fit_mlp(train, hidden_width=8, epochs=50, seed=3)
        b = pred.fit_mlp(train, hidden_width=8, epochs=50, seed=3)
        assert np.array_equal(a.w1_, b.w1_) and np.array_equal(a.w2_, b.w2_)
        assert np.array_equal(a.b1_, b.b1_) and np.array_equal(a.b2_, b.b2_)

    def test_divergence_reports_epoch(self):
        train = make_windows(n=100, seed=9)
        with pytest.raises(DivergenceError) as err:
            pred.fit_mlp(train, hidden_width=8, learning_rate=1e6, epochs=200, seed=0)
        assert err.value.epoch is not None

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(11)
        d, w, h, n = 6, 5, 2, 12
        params = [
            rng.normal(size=(d, w)),
            rng.normal(size=w),
            rng.normal(size=(w, h)),
            rng.normal(size=h),
        ]
        x = rng.normal(size=(n, d))
        y = rng.normal(size=(n, h))
        _, grads = pred.MlpForecaster.loss_and_grad(params, x, y)
        eps = 1e-6
        for pi, grad in enumerate(grads):
            flat_grad = np.ravel(grad)
            for k in rng.choice(flat_grad.size, size=min(8, flat_grad.size), replace=False):
                bump = np.zeros_like(np.ravel(params[pi]))
                bump[k] = eps
                plus = [p.copy() for p in params]
                minus = [p.copy() for p in params]
                plus[pi] = plus[pi] + bump.reshape(params[pi].shape)
                minus[pi] = minus[pi] - bump.reshape(params[pi].shape)
                lp, _ = pred.MlpForecaster.loss_and_grad(plus, x, y)
                lm, _ = pred.MlpForecaster.loss_and_grad(minus, x, y)
                numeric = (lp - lm) / (2 * eps)
                denom = max(abs(numeric), abs(flat_grad[k]), 1e-8)
                assert abs(numeric - flat_grad[k]) / denom <= 1e-4


class TestContract:
    @pytest.fixture(params=["ridge", "mlp"])
    def model(self, request):
        train = make_windows(n=150, seed=20)
        if request.param == "ridge":
            return pred.fit_ridge(train, l2_lambda=1e-3), train
        return pred.fit_mlp(train, hidden_width=8, epochs=60, seed=4), train

    def test_unfitted_predict_raises(self):
        with pytest.raises(StateError):
            pred.RidgeForecaster().predict(np.zeros((1, 4, 3)))

    def test_shape_mismatch(self, model):
        m, _ = model
        with pytest.raises(ShapeError):
            m.predict(np.zeros((2, 5, 3)))
        with pytest.raises(ShapeError):
            m.predict(np.zeros((4, 3)))

    def test_empty_batch(self, model):
        m, _ = model
        out = m.predict(np.zeros((0, 4, 3)))
        assert out.shape == (0, 2)

    def test_duplicate_rows_identical(self, model):
        m, train = model
        x = train.inputs[0]
        out = m.predict(np.stack([x, x]))
        assert np.array_equal(out[0], out[1])

    def test_single_row_equals_batch_row_bitwise(self, model):
        m, train = model
        batch = m.predict(train.inputs[:50])
        for idx in (0, 17, 49):
            single = m.predict(train.inputs[idx : idx + 1])
            assert np.array_equal(single[0], batch[idx])

    def test_repeated_calls_byte_identical(self, model):
        m, train = model
        first = m.predict(train.inputs[:20])
        for _ in range(100):
            assert np.array_equal(m.predict(train.inputs[:20]), first)

    def test_inputs_not_mutated(self, model):
        m, train = model
        x = train.inputs[:10].copy()
        before = x.copy()
        m.predict(x)
        assert np.array_equal(x, before)

    def test_predict_horizon_matches_column(self, model):
        m, train = model
        full = m.predict(train.inputs[:30])
        for hi in range(train.horizon):
            col = m.predict_horizon(train.inputs[:30], horizon_index=hi)
            assert np.allclose(col, full[:, hi], atol=1e-12)

    def test_save_load_round_trip(self, model, tmp_path):
        m, train = model
        p = tmp_path / "model.json"
        m.save(p)
        loaded = pred.load_model(p)
        assert type(loaded) is type(m)
        assert np.allclose(loaded.predict(train.inputs[:5]), m.predict(train.inputs[:5]), atol=1e-15)


class TestMetrics:
    def test_perfect_prediction(self):
        y = np.array([[1.0, 2.0], [3.0, 4.0]])
        m = pred.forecast_metrics(y, y)
        assert m["mse"] == 0 and m["rmse"] == 0 and m["mae"] == 0
        assert m["r2"] == 1.0

    def test_known_values(self):
        actual = np.array([[2.0], [4.0]])
        predicted = np.array([[3.0], [3.0]])
        m = pred.forecast_metrics(predicted, actual)
        assert m["mse"] == pytest.approx(1.0)
        assert m["mae"] == pytest.approx(1.0)
        assert m["mape"] == pytest.approx(0.5 * (1 / 2 + 1 / 4))
        assert m["r2"] == pytest.approx(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pred.forecast_metrics(np.zeros((2, 1)), np.zeros((3, 1)))
