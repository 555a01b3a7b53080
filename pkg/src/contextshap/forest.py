"""Random forest regression built on numpy, used two ways.

The forest serves as an optional forecaster over flattened windows and,
more importantly, as the surrogate whose impurity-decrease importances
drive similarity weighting. Regression trees use variance (SSE) as the
impurity; importance of a feature is its total SSE decrease over all
splits, averaged across trees and normalized to sum 1.

Split search is vectorized: per node, candidate feature columns are
argsorted together and prefix sums of y and y**2 locate the SSE-optimal
cut in one pass. Trees are stored as flat arrays for fast batched
prediction. Every tree draws its own RNG from a spawned SeedSequence, so
results are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import WindowedDataset
from .errors import ParameterError, ShapeError, SizingError, StateError
from .predictors import Forecaster

_LEAF = -1


@dataclass
class _Tree:
    feature: np.ndarray  # node split feature, _LEAF at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # n_nodes x q leaf means

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] != _LEAF
        while active.any():
            cur = node[active]
            go_left = x[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != _LEAF
        return self.value[node]


class RandomForestRegressor:
    """Bagged regression trees with per-split feature subsampling.

    Supports multi-output targets (SSE summed over outputs), so the same
    class forecasts all horizons or fits a single scalar target.
    ``max_samples`` caps the per-tree bootstrap size for speed.
    """

    def __init__(
        self,
        n_trees: int = 100,
        max_depth: int = 12,
        min_samples_leaf: int = 5,
        feature_subsample: float = 1 / 3,
        seed: int = 0,
        max_samples: int | None = None,
    ):
        if n_trees < 1:
            raise ParameterError(f"n_trees must be >= 1, got {n_trees}")
        if max_depth < 1:
            raise ParameterError(f"max_depth must be >= 1, got {max_depth}")
        if min_samples_leaf < 1:
            raise ParameterError(f"min_samples_leaf must be >= 1, got {min_samples_leaf}")
        if not 0 < feature_subsample <= 1:
            raise ParameterError(f"feature_subsample must be in (0, 1], got {feature_subsample}")
        self.n_trees = int(n_trees)
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.feature_subsample = float(feature_subsample)
        self.seed = int(seed)
        self.max_samples = max_samples
        self.trees_: list[_Tree] | None = None
        self.importance_totals_: np.ndarray | None = None  # n_trees x D raw SSE decreases
        self.oob_mse_: float | None = None
        self.n_features_: int | None = None
        self.n_outputs_: int | None = None

    @property
    def is_fitted(self) -> bool:
        return self.trees_ is not None

    def fit(self, x: np.ndarray, y: np.ndarray):
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"x must be 2-D, got shape {x.shape}")
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        if y.shape[0] != x.shape[0]:
            raise ShapeError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
        n, d = x.shape
        if n < 2 * self.min_samples_leaf:
            raise SizingError(
                f"need at least {2 * self.min_samples_leaf} rows to split, got {n}"
            )

        if np.ptp(y, axis=0).max() == 0.0:
            warnings.warn(
                "constant target: forest degenerates to single-leaf trees with zero importances",
                stacklevel=2,
            )

        self.n_features_ = d
        self.n_outputs_ = y.shape[1]
        self._squeeze_output = squeeze
        m_try = max(1, round(self.feature_subsample * d))
        sample_size = n if self.max_samples is None else min(self.max_samples, n)

        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees_ = []
        self.importance_totals_ = np.zeros((self.n_trees, d))
        oob_sum = np.zeros((n, y.shape[1]))
        oob_count = np.zeros(n)

        for t, seq in enumerate(seeds):
            rng = np.random.default_rng(seq)
            sample = rng.integers(0, n, sample_size)
            tree, importances = _grow_tree(
                x, y, sample, rng, m_try, self.max_depth, self.min_samples_leaf
            )
            self.trees_.append(tree)
            self.importance_totals_[t] = importances
            oob_mask = np.ones(n, dtype=bool)
            oob_mask[sample] = False
            if oob_mask.any():
                oob_sum[oob_mask] += tree.predict(x[oob_mask])
                oob_count[oob_mask] += 1

        covered = oob_count > 0
        if covered.any():
            resid = oob_sum[covered] / oob_count[covered, None] - y[covered]
            self.oob_mse_ = float(np.mean(resid**2))
        else:
            self.oob_mse_ = float("nan")
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if not self.is_fitted:
            raise StateError("forest is not fitted")
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features_:
            raise ShapeError(f"expected (M, {self.n_features_}) inputs, got {x.shape}")
        out = np.zeros((x.shape[0], self.n_outputs_))
        for tree in self.trees_:
            out += tree.predict(x)
        out /= self.n_trees
        return out[:, 0] if self._squeeze_output else out


def _grow_tree(x, y, sample, rng, m_try, max_depth, min_leaf):
    """Build one tree on a bootstrap sample; returns (tree, importance totals)."""
    n_total = sample.shape[0]
    d = x.shape[1]
    q = y.shape[1]
    feature, threshold, left, right, values = [], [], [], [], []
    importances = np.zeros(d)

    def new_node():
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        values.append(None)
        return len(feature) - 1

    root = new_node()
    stack = [(root, sample, 0)]
    while stack:
        node_id, rows, depth = stack.pop()
        y_node = y[rows]
        mean = y_node.mean(axis=0)
        values[node_id] = mean
        n = rows.shape[0]
        if depth >= max_depth or n < 2 * min_leaf:
            continue
        sse_parent = float(((y_node - mean) ** 2).sum())
        if sse_parent <= 0.0:
            continue
        cand = np.sort(rng.choice(d, size=m_try, replace=False))
        found = _best_split(x[rows][:, cand], y_node, min_leaf)
        if found is None:
            continue
        col, thr, sse_children = found
        gain = sse_parent - sse_children
        if gain <= 1e-12 * max(1.0, sse_parent):
            continue
        feat = int(cand[col])
        go_left = x[rows, feat] <= thr
        feature[node_id] = feat
        threshold[node_id] = thr
        importances[feat] += gain / n_total
        left_id, right_id = new_node(), new_node()
        left[node_id], right[node_id] = left_id, right_id
        stack.append((right_id, rows[~go_left], depth + 1))
        stack.append((left_id, rows[go_left], depth + 1))

    tree = _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.vstack([v[None, :] for v in values]) if values else np.zeros((0, q)),
    )
    return tree, importances


def _best_split(x_node, y_node, min_leaf):
    """SSE-optimal (feature column, threshold) over the candidate columns.

    Returns None when no cut separates distinct values with both sides
    holding at least min_leaf rows.
    """
    n, b = x_node.shape
    q = y_node.shape[1]
    cut = np.arange(min_leaf - 1, n - min_leaf)
    if cut.size == 0:
        return None

    best = (np.inf, None, None)
    # feature blocks keep the n x block x q prefix-sum tensors small
    block = max(1, int(4_000_000 / max(n * q, 1)))
    for lo in range(0, b, block):
        cols = slice(lo, min(lo + block, b))
        xb = x_node[:, cols]
        order = np.argsort(xb, axis=0, kind="stable")
        xs = np.take_along_axis(xb, order, axis=0)
        ys = y_node[order]  # n x nb x q
        c1 = np.cumsum(ys, axis=0)
        c2 = np.cumsum(ys * ys, axis=0)
        nl = (cut + 1).astype(np.float64)[:, None, None]
        nr = (n - cut - 1).astype(np.float64)[:, None, None]
        left_sum, left_sq = c1[cut], c2[cut]
        right_sum = c1[-1] - left_sum
        right_sq = c2[-1] - left_sq
        sse = (left_sq - left_sum**2 / nl).sum(axis=2) + (
            right_sq - right_sum**2 / nr
        ).sum(axis=2)
        sse = np.maximum(sse, 0.0)
        sse[xs[cut] >= xs[cut + 1]] = np.inf  # cannot cut between equal values
        flat = int(np.argmin(sse))
        value = float(sse.flat[flat])
        if value < best[0]:
            ci, bi = np.unravel_index(flat, sse.shape)
            pos = cut[ci]
            thr = float(0.5 * (xs[pos, bi] + xs[pos + 1, bi]))
            best = (value, lo + int(bi), thr)
    if best[1] is None or not np.isfinite(best[0]):
        return None
    return best[1], best[2], best[0]


def fit_forest(flat_train: np.ndarray, targets: np.ndarray, **kwargs) -> RandomForestRegressor:
    """Fit a forest on flattened windows; targets are typically the h=1 column."""
    return RandomForestRegressor(**kwargs).fit(flat_train, targets)


def forest_importance(forest: RandomForestRegressor) -> np.ndarray:
    """Per-feature mean SSE decrease across trees, normalized to sum 1.

    A feature never used in any split gets exactly 0. A degenerate forest
    (constant target) returns all zeros.
    """
    if not forest.is_fitted:
        raise StateError("forest is not fitted")
    mean_raw = forest.importance_totals_.mean(axis=0)
    total = mean_raw.sum()
    if total == 0.0:
        return np.zeros_like(mean_raw)
    return mean_raw / total


class ForestForecaster(Forecaster):
    """Forecaster adapter: the forest fitted on flattened windows."""

    name = "forest"

    def __init__(self, **forest_kwargs):
        super().__init__()
        self._kwargs = dict(forest_kwargs)
        self.forest_ = RandomForestRegressor(**forest_kwargs)

    def fit(self, train: WindowedDataset):
        self.forest_.fit(train.flat_inputs(), train.targets)
        self._record_shapes(train)
        return self

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        inputs = self._validate_inputs(inputs)
        m = inputs.shape[0]
        flat = inputs.reshape(m, self.input_shape_[0] * self.input_shape_[1])
        return self.forest_.predict(flat)

    def metadata(self) -> dict:
        hp = {
            "n_trees": self.forest_.n_trees,
            "max_depth": self.forest_.max_depth,
            "min_samples_leaf": self.forest_.min_samples_leaf,
            "feature_subsample": self.forest_.feature_subsample,
            "seed": self.forest_.seed,
            "max_samples": self.forest_.max_samples,
        }
        return {"name": self.name, "hyperparameters": hp}
