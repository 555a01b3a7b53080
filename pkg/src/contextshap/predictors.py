"""Forecasting models behind one black-box contract.

Explainers and detectors treat a model purely as a value function over
windows, so anything with ``fit(train)`` / ``predict(inputs)`` plugs in.
Two lightweight built-ins live here: a closed-form ridge regressor and a
one-hidden-layer MLP. The random forest lives in ``forest.py``.

Prediction is computed in fixed-size row chunks so that a given input row
yields bit-identical output no matter the batch it arrives in; plain BLAS
calls switch kernels between batch shapes and break that guarantee.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import WindowedDataset
from .errors import (
    DivergenceError,
    ParameterError,
    ShapeError,
    SizingError,
    SolverError,
    StateError,
)

_CHUNK = 512

SAVE_FORMAT_VERSION = 1


def _fixed_chunk_matmul(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """a @ w computed in fixed 512-row blocks, zero-padded at the tail.

    Keeps per-row results independent of batch size and row position.
    """
    w = np.asarray(w, dtype=a.dtype)  # stay in the batch dtype: one GEMM, no upcast copy
    m = a.shape[0]
    if m == 0:
        return np.empty((0, w.shape[1]), dtype=a.dtype)
    pad = (-m) % _CHUNK
    if pad:
        a = np.concatenate([a, np.zeros((pad, a.shape[1]), dtype=a.dtype)])
    out = np.empty((a.shape[0], w.shape[1]), dtype=a.dtype)
    if w.shape[1] == 1:
        # single-column products go through the vector kernel; the packing a
        # full GEMM does per block swamps these thin calls
        w1 = w[:, 0]
        for i in range(0, a.shape[0], _CHUNK):
            out[i : i + _CHUNK, 0] = a[i : i + _CHUNK] @ w1
    else:
        for i in range(0, a.shape[0], _CHUNK):
            out[i : i + _CHUNK] = a[i : i + _CHUNK] @ w
    return out[:m]


class Forecaster:
    """Shared contract: fit on windows, predict h-step-ahead targets."""

    name = "forecaster"

    def __init__(self):
        self.input_shape_: tuple[int, int] | None = None
        self.horizon_: int | None = None

    @property
    def is_fitted(self) -> bool:
        return self.input_shape_ is not None

    def fit(self, train: WindowedDataset):
        raise NotImplementedError

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_horizon(self, inputs: np.ndarray, horizon_index: int = 0) -> np.ndarray:
        """One horizon column of ``predict``; models may override with a fast path."""
        return self.predict(inputs)[:, horizon_index]

    def metadata(self) -> dict:
        raise NotImplementedError

    def _check_fitted(self):
        if not self.is_fitted:
            raise StateError(f"{self.name} is not fitted")

    def _validate_inputs(self, inputs: np.ndarray) -> np.ndarray:
        self._check_fitted()
        inputs = np.asarray(inputs)
        if inputs.dtype != np.float32:  # float32 batches stay float32, the rest runs in float64
            inputs = inputs.astype(np.float64, copy=False)
        if inputs.ndim != 3 or inputs.shape[1:] != self.input_shape_:
            raise ShapeError(
                f"expected inputs shaped (M, {self.input_shape_[0]}, "
                f"{self.input_shape_[1]}), got {inputs.shape}"
            )
        return inputs

    def _record_shapes(self, train: WindowedDataset):
        self.input_shape_ = (train.window_length, train.inputs.shape[2])
        self.horizon_ = train.horizon

    def save(self, path) -> None:
        self._check_fitted()
        payload = {
            "format_version": SAVE_FORMAT_VERSION,
            "kind": self.name,
            "metadata": self.metadata(),
            "input_shape": list(self.input_shape_),
            "horizon": self.horizon_,
            "state": self._state_dict(),
        }
        Path(path).write_text(json.dumps(payload) + "\n")

    def _state_dict(self) -> dict:
        raise NotImplementedError

    def _load_state(self, state: dict):
        raise NotImplementedError


def load_model(path) -> Forecaster:
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != SAVE_FORMAT_VERSION:
        raise StateError(f"unsupported model format version {version!r}")
    kind = payload.get("kind")
    registry = {"ridge": RidgeForecaster, "mlp": MlpForecaster}
    if kind not in registry:
        raise StateError(f"unknown model kind {kind!r}")
    model = registry[kind](**payload["metadata"]["hyperparameters"])
    model.input_shape_ = tuple(payload["input_shape"])
    model.horizon_ = payload["horizon"]
    model._load_state(payload["state"])
    return model


class RidgeForecaster(Forecaster):
    """Linear map from flattened window to all horizons, L2-regularized.

    Solved in closed form from the normal equations; the intercept row is
    not penalized. The fit refuses to return a solution whose objective
    gradient is not numerically zero.
    """

    name = "ridge"

    def __init__(self, l2_lambda: float = 1e-4):
        super().__init__()
        if l2_lambda < 0:
            raise ParameterError(f"l2_lambda must be >= 0, got {l2_lambda}")
        self.l2_lambda = float(l2_lambda)
        self.weights_: np.ndarray | None = None  # (I*F + 1) x h, row 0 = intercept

    def fit(self, train: WindowedDataset):
        flat = train.flat_inputs()
        n, d = flat.shape
        a = np.concatenate([np.ones((n, 1)), flat], axis=1)
        y = train.targets
        # objective: (1/N)||AW - Y||^2 + lambda * ||W[1:]||^2
        gram = a.T @ a / n
        rhs = a.T @ y / n
        reg = np.eye(d + 1) * self.l2_lambda
        reg[0, 0] = 0.0
        try:
            weights = np.linalg.solve(gram + reg, rhs)
        except np.linalg.LinAlgError:
            raise SolverError(
                "normal equations are singular; increase l2_lambda to regularize"
            ) from None

        grad = 2.0 * ((gram + reg) @ weights - rhs)
        grad_norm = float(np.max(np.abs(grad)))
        if not np.isfinite(grad_norm) or grad_norm > 1e-6:
            raise SolverError(
                f"ridge solve left gradient norm {grad_norm:.3e} > 1e-6; "
                "system is ill-conditioned, increase l2_lambda"
            )
        self.weights_ = weights
        self._record_shapes(train)
        return self

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        inputs = self._validate_inputs(inputs)
        m = inputs.shape[0]
        flat = inputs.reshape(m, self.input_shape_[0] * self.input_shape_[1])
        out = _fixed_chunk_matmul(flat, self.weights_[1:])
        return out + self.weights_[0]

    def predict_horizon(self, inputs: np.ndarray, horizon_index: int = 0) -> np.ndarray:
        inputs = self._validate_inputs(inputs)
        m = inputs.shape[0]
        flat = inputs.reshape(m, self.input_shape_[0] * self.input_shape_[1])
        col = self.weights_[1:, horizon_index : horizon_index + 1]
        out = _fixed_chunk_matmul(flat, col)
        return out[:, 0] + self.weights_[0, horizon_index]

    def flat_coefficients(self, horizon_index: int = 0) -> tuple[np.ndarray, float]:
        """(weights, intercept) of the linear map for one horizon."""
        self._check_fitted()
        return self.weights_[1:, horizon_index].copy(), float(self.weights_[0, horizon_index])

    def metadata(self) -> dict:
        return {"name": self.name, "hyperparameters": {"l2_lambda": self.l2_lambda}}

    def _state_dict(self) -> dict:
        return {"weights": self.weights_.tolist()}

    def _load_state(self, state: dict):
        self.weights_ = np.array(state["weights"], dtype=np.float64)


class MlpForecaster(Forecaster):
    """One hidden tanh layer trained by full-batch gradient descent.

    Plain gradient descent keeps the loss trajectory monotone for a sane
    learning rate, which the tests rely on. ``loss_history_`` records the
    MSE at every epoch.
    """

    name = "mlp"

    def __init__(
        self,
        hidden_width: int = 32,
        learning_rate: float = 0.05,
        epochs: int = 500,
        seed: int = 0,
    ):
        super().__init__()
        if hidden_width < 1:
            raise ParameterError(f"hidden_width must be >= 1, got {hidden_width}")
        if epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {epochs}")
        if learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {learning_rate}")
        self.hidden_width = int(hidden_width)
        self.learning_rate = float(learning_rate)
        self.epochs = int(epochs)
        self.seed = int(seed)
        self.w1_ = self.b1_ = self.w2_ = self.b2_ = None
        self.loss_history_: list[float] = []

    @staticmethod
    def _forward(params, x):
        w1, b1, w2, b2 = params
        hidden = np.tanh(x @ w1 + b1)
        return hidden @ w2 + b2, hidden

    @staticmethod
    def loss_and_grad(params, x, y):
        """MSE over all outputs plus its analytic gradient (for fit and tests)."""
        w1, b1, w2, b2 = params
        n = x.shape[0]
        out, hidden = MlpForecaster._forward(params, x)
        diff = out - y
        loss = float(np.mean(diff**2))
        scale = 2.0 / diff.size
        d_out = scale * diff
        g_w2 = hidden.T @ d_out
        g_b2 = d_out.sum(axis=0)
        d_hidden = (d_out @ w2.T) * (1.0 - hidden**2)
        g_w1 = x.T @ d_hidden
        g_b1 = d_hidden.sum(axis=0)
        return loss, (g_w1, g_b1, g_w2, g_b2)

    def fit(self, train: WindowedDataset):
        x = train.flat_inputs()
        y = train.targets
        n, d = x.shape
        h = y.shape[1]
        rng = np.random.default_rng(self.seed)
        w1 = rng.normal(0.0, np.sqrt(1.0 / d), (d, self.hidden_width))
        b1 = np.zeros(self.hidden_width)
        w2 = rng.normal(0.0, np.sqrt(1.0 / self.hidden_width), (self.hidden_width, h))
        b2 = np.zeros(h)
        params = [w1, b1, w2, b2]

        self.loss_history_ = []
        lr = self.learning_rate
        for epoch in range(self.epochs):
            # overflow surfaces as a non-finite loss and is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = self.loss_and_grad(params, x, y)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"training loss became non-finite at epoch {epoch}; lower the learning rate",
                    epoch=epoch,
                )
            self.loss_history_.append(loss)
            for p, g in zip(params, grads):
                p -= lr * g

        self.w1_, self.b1_, self.w2_, self.b2_ = params
        self._record_shapes(train)
        return self

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        inputs = self._validate_inputs(inputs)
        m = inputs.shape[0]
        flat = inputs.reshape(m, self.input_shape_[0] * self.input_shape_[1])
        hidden = np.tanh(_fixed_chunk_matmul(flat, self.w1_) + self.b1_)
        return _fixed_chunk_matmul(hidden, self.w2_) + self.b2_

    def predict_horizon(self, inputs: np.ndarray, horizon_index: int = 0) -> np.ndarray:
        inputs = self._validate_inputs(inputs)
        m = inputs.shape[0]
        flat = inputs.reshape(m, self.input_shape_[0] * self.input_shape_[1])
        hidden = np.tanh(_fixed_chunk_matmul(flat, self.w1_) + self.b1_)
        col = self.w2_[:, horizon_index : horizon_index + 1]
        return _fixed_chunk_matmul(hidden, col)[:, 0] + self.b2_[horizon_index]

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "hyperparameters": {
                "hidden_width": self.hidden_width,
                "learning_rate": self.learning_rate,
                "epochs": self.epochs,
                "seed": self.seed,
            },
        }

    def _state_dict(self) -> dict:
        return {
            "w1": self.w1_.tolist(),
            "b1": self.b1_.tolist(),
            "w2": self.w2_.tolist(),
            "b2": self.b2_.tolist(),
        }

    def _load_state(self, state: dict):
        self.w1_ = np.array(state["w1"], dtype=np.float64)
        self.b1_ = np.array(state["b1"], dtype=np.float64)
        self.w2_ = np.array(state["w2"], dtype=np.float64)
        self.b2_ = np.array(state["b2"], dtype=np.float64)


def fit_ridge(train: WindowedDataset, l2_lambda: float = 1e-4) -> RidgeForecaster:
    return RidgeForecaster(l2_lambda=l2_lambda).fit(train)


def fit_mlp(train: WindowedDataset, **kwargs) -> MlpForecaster:
    return MlpForecaster(**kwargs).fit(train)


def forecast_metrics(predicted: np.ndarray, actual: np.ndarray) -> dict:
    """Standard regression metrics, averaged over all horizons present."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ShapeError(f"shape mismatch {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise SizingError("cannot score an empty prediction set")
    diff = predicted - actual
    mse = float(np.mean(diff**2))
    mae = float(np.mean(np.abs(diff)))
    denom_smape = np.abs(actual) + np.abs(predicted)
    smape = float(
        np.mean(np.where(denom_smape == 0, 0.0, 2.0 * np.abs(diff) / np.where(denom_smape == 0, 1.0, denom_smape)))
    )
    nonzero = actual != 0
    mape = float(np.mean(np.abs(diff[nonzero] / actual[nonzero]))) if nonzero.any() else float("nan")
    var = float(np.mean((actual - actual.mean()) ** 2))
    r2 = 1.0 - mse / var if var > 0 else float("nan")
    return {
        "mse": mse,
        "rmse": float(np.sqrt(mse)),
        "mae": mae,
        "smape": smape,
        "mape": mape,
        "r2": r2,
    }
