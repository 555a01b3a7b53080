"""Context-aware background selection for explanations.

For each anomalous window, the explainer's background is not a random
draw: training windows are ranked by weighted cosine similarity to the
anomaly, with per-feature weights exp(GFI) from a surrogate forest, and
the top K become the background. The random comparator lives here too so
stability experiments exercise both paths through one interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ParameterError,
    ShapeError,
    SizingError,
    UndefinedSimilarityError,
)

NORM_WEIGHTINGS = ("linear", "squared")


@dataclass(frozen=True)
class GlobalImportance:
    """Raw surrogate importances and their exp transform used as weights."""

    raw: np.ndarray
    transformed: np.ndarray


@dataclass
class BackgroundSet:
    samples: np.ndarray  # K x D rows of the training matrix, unmodified
    indices: np.ndarray  # K row indices into the training matrix
    selection: str  # "similar" | "random"
    anomaly_index: int | None = None
    scores: np.ndarray | None = None  # similar only, sorted non-increasing
    seed: int | None = None  # random only

    def to_json(self) -> dict:
        payload = {
            "selection": self.selection,
            "k": int(self.indices.shape[0]),
            "anomaly_index": self.anomaly_index,
            "indices": [int(i) for i in self.indices],
        }
        if self.scores is not None:
            payload["scores"] = [float(s) for s in self.scores]
        if self.seed is not None:
            payload["seed"] = int(self.seed)
        return payload


def transform_gfi(raw: np.ndarray) -> GlobalImportance:
    """Element-wise exp of the raw importances; sharpens contrasts.

    Raw importances are nonnegative and sum to 1, so every transformed
    weight is >= 1 and the ranking is preserved.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ShapeError(f"importances must be 1-D, got shape {raw.shape}")
    if (raw < 0).any():
        raise ParameterError("importances must be nonnegative")
    return GlobalImportance(raw=raw.copy(), transformed=np.exp(raw))


def _weighted_norms_sq(values: np.ndarray, w: np.ndarray, norm_weighting: str) -> np.ndarray:
    if norm_weighting == "linear":
        return (values**2) @ w
    return (values**2) @ (w**2)


def weighted_cosine(
    x_c: np.ndarray,
    x_a: np.ndarray,
    w: np.ndarray,
    norm_weighting: str = "linear",
) -> float:
    """Cosine similarity under per-feature weights.

    Default form: sum(w x_c x_a) / (sqrt(sum(w x_c^2)) sqrt(sum(w x_a^2))).
    norm_weighting="squared" squares the weight inside the norms instead,
    an alternative reading of the same measure kept for comparison.
    """
    x_c = np.asarray(x_c, dtype=np.float64)
    x_a = np.asarray(x_a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if not (x_c.shape == x_a.shape == w.shape) or x_c.ndim != 1:
        raise ShapeError(
            f"expected three equal-length vectors, got {x_c.shape}, {x_a.shape}, {w.shape}"
        )
    if (w <= 0).any():
        raise ParameterError("weights must be strictly positive")
    if norm_weighting not in NORM_WEIGHTINGS:
        raise ParameterError(f"norm_weighting must be one of {NORM_WEIGHTINGS}")

    norm_c = _weighted_norms_sq(x_c[None, :], w, norm_weighting)[0]
    norm_a = _weighted_norms_sq(x_a[None, :], w, norm_weighting)[0]
    if norm_c == 0.0 or norm_a == 0.0:
        raise UndefinedSimilarityError("zero-norm vector has no direction")
    # both forms share the numerator; only the norms change
    dot = float((w * x_c * x_a).sum())
    return dot / float(np.sqrt(norm_c) * np.sqrt(norm_a))


def similarity_scores(
    x_a: np.ndarray,
    train_flat: np.ndarray,
    w: np.ndarray,
    norm_weighting: str = "linear",
) -> np.ndarray:
    """Weighted cosine of the anomaly against every training row at once."""
    x_a = np.asarray(x_a, dtype=np.float64)
    train_flat = np.asarray(train_flat, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if train_flat.ndim != 2 or x_a.ndim != 1 or train_flat.shape[1] != x_a.shape[0]:
        raise ShapeError(
            f"train matrix {train_flat.shape} incompatible with sample {x_a.shape}"
        )
    if w.shape != x_a.shape:
        raise ShapeError(f"weights {w.shape} incompatible with sample {x_a.shape}")
    if (w <= 0).any():
        raise ParameterError("weights must be strictly positive")
    if norm_weighting not in NORM_WEIGHTINGS:
        raise ParameterError(f"norm_weighting must be one of {NORM_WEIGHTINGS}")

    norm_a = float(_weighted_norms_sq(x_a[None, :], w, norm_weighting)[0])
    norms = _weighted_norms_sq(train_flat, w, norm_weighting)
    if norm_a == 0.0 or (norms == 0.0).any():
        raise UndefinedSimilarityError("zero-norm vector has no direction")
    dots = train_flat @ (w * x_a)
    return dots / (np.sqrt(norms) * np.sqrt(norm_a))


def select_background(
    x_a: np.ndarray,
    train_flat: np.ndarray,
    w: np.ndarray,
    k: int = 100,
    anomaly_index: int | None = None,
    norm_weighting: str = "linear",
) -> BackgroundSet:
    """The K most similar training rows; ties at the cut go to lower index."""
    n = train_flat.shape[0]
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if n < k:
        raise SizingError(f"training set has {n} rows < K={k}; lower K")
    scores = similarity_scores(x_a, train_flat, w, norm_weighting)
    # stable sort on negated scores: equal scores keep ascending row index
    order = np.argsort(-scores, kind="stable")[:k]
    return BackgroundSet(
        samples=train_flat[order].copy(),
        indices=order.astype(np.int64),
        scores=scores[order].copy(),
        selection="similar",
        anomaly_index=anomaly_index,
    )


def random_background(
    train_flat: np.ndarray,
    k: int,
    seed: int,
    anomaly_index: int | None = None,
) -> BackgroundSet:
    """Uniform sample of K training rows without replacement."""
    n = train_flat.shape[0]
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if n < k:
        raise SizingError(f"training set has {n} rows < K={k}; lower K")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=k, replace=False))
    return BackgroundSet(
        samples=train_flat[indices].copy(),
        indices=indices.astype(np.int64),
        selection="random",
        seed=seed,
        anomaly_index=anomaly_index,
    )


def write_background(bg: BackgroundSet, path) -> None:
    Path(path).write_text(json.dumps(bg.to_json(), indent=2) + "\n")
