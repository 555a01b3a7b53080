"""Per-feature attributions for one sample against a background set.

Four estimators of the same quantity:

* kernel: weighted least squares over coalitions, exact enumeration for
  small feature counts and paired-complement sampling above that
* exact: brute-force Shapley sum over all coalitions (small F only)
* sampling: Monte-Carlo permutation walks
* permutation: antithetic variant, each permutation walked forward and
  reversed

All use interventional masking: a feature outside the coalition takes its
value from each background row in turn, and v(S) is the mean model output
over those composites. phi0 is always the mean prediction over the
background, and every estimator satisfies phi0 + sum(phi) = f(x) up to
its documented tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb, factorial
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError, SizingError, SolverError

EXACT_MAX_FEATURES = 20


@dataclass
class Attribution:
    phi: np.ndarray  # one value per flattened feature
    phi0: float  # base value: mean background prediction
    f_x: float  # model output at the explained sample
    method: str  # kernel | sampling | permutation | exact
    n_evals: int  # individual model evaluations consumed
    seed: int | None = None
    std_err: np.ndarray | None = None  # per-feature, samplers only
    selection: str | None = None  # background provenance, for grouping

    def efficiency_gap(self) -> float:
        return float(abs(self.phi0 + self.phi.sum() - self.f_x))

    def to_json(self, window_length: int | None = None, feature_names: list[str] | None = None) -> dict:
        payload = {
            "method": self.method,
            "seed": self.seed,
            "n_evals": self.n_evals,
            "phi0": self.phi0,
            "f_x": self.f_x,
            "phi": [float(p) for p in self.phi],
        }
        if self.std_err is not None:
            payload["std_err"] = [float(s) for s in self.std_err]
        if self.selection is not None:
            payload["selection"] = self.selection
        if window_length is not None and feature_names is not None:
            f = len(feature_names)
            payload["labels"] = [
                f"t-{window_length - 1 - (i // f)}:{feature_names[i % f]}"
                for i in range(len(self.phi))
            ]
        return payload


@dataclass(frozen=True)
class ExplainerConfig:
    n_samples: int = 2048  # coalitions (kernel) or permutations/pairs (samplers)
    seed: int = 0
    enumerate_threshold: int = 13  # max F for full coalition enumeration
    horizon_index: int = 0
    dtype: type = np.float64  # float32 halves composite memory traffic
    batch_rows: int = 32768  # max composite rows per model call

    def __post_init__(self):
        if self.n_samples < 1:
            raise ParameterError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.batch_rows < 1:
            raise ParameterError(f"batch_rows must be >= 1, got {self.batch_rows}")


def _flat_callable(model, horizon_index: int):
    """Adapt a fitted forecaster (or any callable on flat matrices) to f: (M,D)->(M,)."""
    if hasattr(model, "predict_horizon") and hasattr(model, "input_shape_"):
        i, f = model.input_shape_

        def fn(flat):
            # no dtype cast here: the model serves float32 batches natively
            windows = flat.reshape(flat.shape[0], i, f)
            return np.asarray(model.predict_horizon(windows, horizon_index=horizon_index))

        return fn
    if callable(model):
        return lambda flat: np.asarray(model(flat), dtype=np.float64)
    raise ParameterError(
        "model must be a fitted forecaster or a callable over flat samples"
    )


def _background_matrix(bg) -> np.ndarray:
    samples = getattr(bg, "samples", bg)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ParameterError(f"background must be a nonempty 2-D matrix, got shape {samples.shape}")
    return samples


class _Evaluator:
    """Masked-prediction engine with eval accounting and batching."""

    def __init__(self, model, x, bg, horizon_index=0, dtype=np.float64, batch_rows=32768):
        self._fn = _flat_callable(model, horizon_index)
        bg = _background_matrix(bg)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != bg.shape[1]:
            raise ShapeError(
                f"sample has {x.shape[0]} features, background rows have {bg.shape[1]}"
            )
        self.x = x.astype(dtype)
        self.bg = bg.astype(dtype)
        self.n_features = x.shape[0]
        self.n_background = bg.shape[0]
        self.batch_rows = int(batch_rows)
        self.n_evals = 0
        self._f_x: float | None = None
        self._base: float | None = None
        self._diff = self.x - self.bg
        self._buf: np.ndarray | None = None

    def _predict(self, flat):
        self.n_evals += flat.shape[0]
        return np.asarray(self._fn(flat), dtype=np.float64)

    @property
    def f_x(self) -> float:
        if self._f_x is None:
            self._f_x = float(self._predict(self.x[None, :])[0])
        return self._f_x

    @property
    def base(self) -> float:
        if self._base is None:
            self._base = float(self._predict(self.bg).mean())
        return self._base

    def values(self, masks: np.ndarray) -> np.ndarray:
        """v(S) for each boolean mask row; empty/full masks use the cached constants."""
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim != 2 or masks.shape[1] != self.n_features:
            raise ShapeError(f"masks must be (C, {self.n_features}), got {masks.shape}")
        c = masks.shape[0]
        out = np.empty(c, dtype=np.float64)
        sizes = masks.sum(axis=1)
        is_empty = sizes == 0
        is_full = sizes == self.n_features
        if is_empty.any():
            out[is_empty] = self.base
        if is_full.any():
            out[is_full] = self.f_x
        todo = np.flatnonzero(~is_empty & ~is_full)
        if todo.size == 0:
            return out

        k = self.n_background
        per_chunk = max(1, self.batch_rows // k)
        need = min(per_chunk, todo.size)
        if self._buf is None or self._buf.shape[0] < need:
            self._buf = np.empty((need, k, self.n_features), dtype=self.x.dtype)
        for lo in range(0, todo.size, per_chunk):
            idx = todo[lo : lo + per_chunk]
            # composite rows as bg + m*(x - bg); off features are exactly bg,
            # on features carry one extra rounding of the difference
            onoff = masks[idx].astype(self.x.dtype)
            buf = self._buf[: len(idx)]
            np.multiply(onoff[:, None, :], self._diff, out=buf)
            np.add(buf, self.bg, out=buf)
            preds = self._predict(buf.reshape(-1, self.n_features))
            out[idx] = preds.reshape(len(idx), k).mean(axis=1)
        return out


def base_value(model, bg, horizon_index: int = 0) -> float:
    """Mean model prediction over the background rows."""
    ev = _Evaluator(model, _background_matrix(bg)[0], bg, horizon_index=horizon_index)
    return ev.base


def masked_prediction(model, x, coalition, bg, horizon_index: int = 0) -> float:
    """v(S): masked prediction for one coalition of feature indices (or bool mask)."""
    ev = _Evaluator(model, x, bg, horizon_index=horizon_index)
    coalition = np.asarray(coalition)
    if coalition.dtype == bool:
        mask = coalition
        if mask.shape != (ev.n_features,):
            raise ShapeError(f"boolean mask must have length {ev.n_features}")
    else:
        mask = np.zeros(ev.n_features, dtype=bool)
        if coalition.size and (coalition.min() < 0 or coalition.max() >= ev.n_features):
            raise ParameterError("coalition indices out of range")
        mask[coalition.astype(int)] = True
    return float(ev.values(mask[None, :])[0])


def kernel_weight(n_features: int, coalition_size: int) -> float:
    """(F-1) / (C(F,s) * s * (F-s)); infinite at s=0 or s=F by design."""
    if coalition_size <= 0 or coalition_size >= n_features:
        raise ParameterError(
            f"kernel weight undefined for coalition size {coalition_size} of {n_features}; "
            "empty and full coalitions enter as constraints, not samples"
        )
    return (n_features - 1) / (
        comb(n_features, coalition_size) * coalition_size * (n_features - coalition_size)
    )


def _enumerate_masks(f: int) -> tuple[np.ndarray, np.ndarray]:
    """All 2^F - 2 proper coalitions and their kernel weights."""
    codes = np.arange(1, 2**f - 1, dtype=np.uint64)
    masks = (codes[:, None] >> np.arange(f, dtype=np.uint64)[None, :]) & 1
    masks = masks.astype(bool)
    sizes = masks.sum(axis=1)
    size_weights = np.array([kernel_weight(f, s) for s in range(1, f)])
    return masks, size_weights[sizes - 1]


def _sample_masks(f: int, n_samples: int, rng) -> np.ndarray:
    """Paired-complement coalition draws, sizes ~ kernel weight, uniform within size.

    Sampling sizes with probability proportional to (F-1)/(s(F-s)) and
    masks uniformly within each size makes P(S) proportional to k(F,|S|),
    so the downstream least squares uses unit weights.
    """
    sizes = np.arange(1, f)
    p = (f - 1) / (sizes * (f - sizes))
    p = p / p.sum()
    n_pairs = n_samples // 2
    masks = np.zeros((2 * n_pairs, f), dtype=bool)
    drawn_sizes = rng.choice(sizes, size=n_pairs, p=p)
    for j, s in enumerate(drawn_sizes):
        members = rng.choice(f, size=int(s), replace=False)
        masks[2 * j, members] = True
        masks[2 * j + 1] = ~masks[2 * j]  # complement shares the kernel weight
    return masks


def _solve_constrained_wls(masks, weights, v, base, f_x):
    """WLS for phi with phi0 pinned to base and sum(phi) = f_x - base exact.

    The last feature's phi is eliminated by substitution, so the
    efficiency constraint holds by construction.
    """
    z = masks.astype(np.float64)
    delta = f_x - base
    y = v - base - z[:, -1] * delta
    a = z[:, :-1] - z[:, -1:]
    aw = a * weights[:, None]
    gram = aw.T @ a
    rhs = aw.T @ y
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise SolverError(
            "kernel regression is rank-deficient; increase n_samples"
        ) from None
    phi = np.empty(masks.shape[1], dtype=np.float64)
    phi[:-1] = beta
    phi[-1] = delta - beta.sum()
    return phi


def kernel_shap(model, x, bg, cfg: ExplainerConfig = ExplainerConfig()) -> Attribution:
    """Kernel SHAP: enumerate coalitions when F is small, else sample them."""
    ev = _Evaluator(
        model, x, bg, horizon_index=cfg.horizon_index, dtype=cfg.dtype, batch_rows=cfg.batch_rows
    )
    f = ev.n_features
    if f < 2:
        raise SizingError("kernel explanation needs at least 2 features")
    if f <= cfg.enumerate_threshold:
        masks, weights = _enumerate_masks(f)
    else:
        if cfg.n_samples < 2 * f:
            raise ParameterError(
                f"n_samples={cfg.n_samples} too small for {f} features; need >= {2 * f}"
            )
        rng = np.random.default_rng(cfg.seed)
        masks = _sample_masks(f, cfg.n_samples, rng)
        weights = np.ones(masks.shape[0])
    base, f_x = ev.base, ev.f_x  # cache before the coalition pass
    v = ev.values(masks)
    phi = _solve_constrained_wls(masks, weights, v, base, f_x)
    return Attribution(
        phi=phi, phi0=base, f_x=f_x, method="kernel", n_evals=ev.n_evals, seed=cfg.seed
    )


def _popcounts(n_codes: int) -> np.ndarray:
    counts = np.zeros(n_codes, dtype=np.int64)
    codes = np.arange(n_codes, dtype=np.int64)
    for shift in range(max(1, n_codes - 1).bit_length()):
        counts += (codes >> shift) & 1
    return counts


def exact_shapley(model, x, bg, horizon_index: int = 0, batch_rows: int = 32768) -> Attribution:
    """Brute-force Shapley sum over every coalition; F <= 20 guard."""
    ev = _Evaluator(model, x, bg, horizon_index=horizon_index, batch_rows=batch_rows)
    f = ev.n_features
    if f > EXACT_MAX_FEATURES:
        raise SizingError(
            f"exact enumeration over {f} features needs 2^{f} coalition batches; "
            f"limit is {EXACT_MAX_FEATURES}"
        )
    n_codes = 2**f
    codes = np.arange(n_codes, dtype=np.uint64)
    masks = ((codes[:, None] >> np.arange(f, dtype=np.uint64)[None, :]) & 1).astype(bool)
    base, f_x = ev.base, ev.f_x
    v = ev.values(masks)
    sizes = _popcounts(n_codes)
    # weight of adding feature i to a coalition of size s
    add_weight = np.array(
        [factorial(s) * factorial(f - s - 1) / factorial(f) for s in range(f)]
    )
    phi = np.empty(f, dtype=np.float64)
    for i in range(f):
        bit = np.uint64(1 << i)
        without = codes[(codes & bit) == 0]
        with_i = (without | bit).astype(np.int64)
        without = without.astype(np.int64)
        phi[i] = float(np.dot(add_weight[sizes[without]], v[with_i] - v[without]))
    return Attribution(
        phi=phi, phi0=base, f_x=f_x, method="exact", n_evals=ev.n_evals, seed=None
    )


def _prefix_masks(order: np.ndarray) -> np.ndarray:
    """Boolean masks of the F-1 proper prefixes of a feature ordering."""
    f = order.shape[0]
    pos = np.empty(f, dtype=np.int64)
    pos[order] = np.arange(f)
    return pos[None, :] < np.arange(1, f)[:, None]


def _walk_marginals(ev: _Evaluator, order: np.ndarray) -> np.ndarray:
    """Marginal contribution of each feature along one ordering.

    Adjacent prefixes share their boundary value, so the per-walk sum
    telescopes to f_x - base exactly.
    """
    f = order.shape[0]
    prefix_v = ev.values(_prefix_masks(order))
    bounds = np.concatenate([[ev.base], prefix_v, [ev.f_x]])
    marginals = np.empty(f, dtype=np.float64)
    marginals[order] = np.diff(bounds)
    return marginals


def _draw_orders(f: int, n: int, rng) -> list[np.ndarray]:
    """n feature orderings; complete F! rounds are enumerated, the rest drawn."""
    orders: list[np.ndarray] = []
    n_full, rem = divmod(n, factorial(f))
    if n_full:
        from itertools import permutations

        all_orders = [np.array(p, dtype=np.int64) for p in permutations(range(f))]
        for _ in range(n_full):
            orders.extend(all_orders)
    orders.extend(rng.permutation(f) for _ in range(rem))
    return orders


def sampling_shap(model, x, bg, cfg: ExplainerConfig = ExplainerConfig(n_samples=64)) -> Attribution:
    """Monte-Carlo Shapley: average marginals over sampled permutations.

    When the budget covers every permutation (tiny F), the orderings are
    enumerated instead of drawn, making the estimate exact.
    """
    ev = _Evaluator(
        model, x, bg, horizon_index=cfg.horizon_index, dtype=cfg.dtype, batch_rows=cfg.batch_rows
    )
    f = ev.n_features
    rng = np.random.default_rng(cfg.seed)
    total = np.zeros(f)
    total_sq = np.zeros(f)
    n = cfg.n_samples
    for order in _draw_orders(f, n, rng):
        marginals = _walk_marginals(ev, order)
        total += marginals
        total_sq += marginals**2
    phi = total / n
    if n > 1:
        var = np.maximum(total_sq / n - phi**2, 0.0) * (n / (n - 1))
        std_err = np.sqrt(var / n)
    else:
        std_err = np.full(f, np.nan)
    return Attribution(
        phi=phi,
        phi0=ev.base,
        f_x=ev.f_x,
        method="sampling",
        n_evals=ev.n_evals,
        seed=cfg.seed,
        std_err=std_err,
    )


def permutation_shap(model, x, bg, cfg: ExplainerConfig = ExplainerConfig(n_samples=32)) -> Attribution:
    """Antithetic permutation estimator: each draw walks forward and reversed."""
    ev = _Evaluator(
        model, x, bg, horizon_index=cfg.horizon_index, dtype=cfg.dtype, batch_rows=cfg.batch_rows
    )
    f = ev.n_features
    rng = np.random.default_rng(cfg.seed)
    total = np.zeros(f)
    total_sq = np.zeros(f)
    n = cfg.n_samples
    for _ in range(n):
        order = rng.permutation(f)
        pair_mean = 0.5 * (_walk_marginals(ev, order) + _walk_marginals(ev, order[::-1]))
        total += pair_mean
        total_sq += pair_mean**2
    phi = total / n
    if n > 1:
        var = np.maximum(total_sq / n - phi**2, 0.0) * (n / (n - 1))
        std_err = np.sqrt(var / n)
    else:
        std_err = np.full(f, np.nan)
    return Attribution(
        phi=phi,
        phi0=ev.base,
        f_x=ev.f_x,
        method="permutation",
        n_evals=ev.n_evals,
        seed=cfg.seed,
        std_err=std_err,
    )


EXPLAINERS = {
    "kernel": kernel_shap,
    "sampling": sampling_shap,
    "permutation": permutation_shap,
    "exact": lambda model, x, bg, cfg: exact_shapley(
        model, x, bg, horizon_index=cfg.horizon_index, batch_rows=cfg.batch_rows
    ),
}


def explain(model, x, bg, method: str, cfg: ExplainerConfig = ExplainerConfig()) -> Attribution:
    if method not in EXPLAINERS:
        raise ParameterError(f"unknown method {method!r}; pick one of {sorted(EXPLAINERS)}")
    return EXPLAINERS[method](model, x, bg, cfg)


def write_attribution(att: Attribution, path, window_length=None, feature_names=None) -> None:
    payload = att.to_json(window_length=window_length, feature_names=feature_names)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
