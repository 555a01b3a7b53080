"""Prediction errors, IQR thresholding, and anomaly classification.

The error convention is e = actual - predicted at the first horizon step.
The threshold is a pure function of training errors; classification flags
strict exceedance of the fences, so values exactly on a fence count as
normal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import WindowedDataset
from .errors import NumericalError, SizingError

VERDICT_ANOMALOUS = "Anomalous"
VERDICT_NORMAL = "ProbablyNormal"


@dataclass(frozen=True)
class PredictionError:
    window_index: int
    predicted: float
    actual: float
    e: float  # actual - predicted, horizon 1, scaled units


@dataclass(frozen=True)
class AnomalyThreshold:
    q1: float
    q3: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def lower(self) -> float:
        return self.q1 - 1.5 * self.iqr

    @property
    def upper(self) -> float:
        return self.q3 + 1.5 * self.iqr


@dataclass(frozen=True)
class AnomalyRecord:
    window_index: int
    predicted: float
    actual: float
    e: float
    verdict: str

    @property
    def is_anomalous(self) -> bool:
        return self.verdict == VERDICT_ANOMALOUS


def compute_errors(model, ds: WindowedDataset) -> list[PredictionError]:
    """One signed error per window, at the first horizon step only."""
    if ds.n_windows == 0:
        raise SizingError("no windows to score")
    predicted = np.asarray(model.predict_horizon(ds.inputs, horizon_index=0), dtype=np.float64)
    bad = ~np.isfinite(predicted)
    if bad.any():
        raise NumericalError(
            f"model produced a non-finite prediction at window {int(np.argmax(bad))}"
        )
    actual = ds.targets[:, 0]
    return [
        PredictionError(
            window_index=int(i),
            predicted=float(predicted[i]),
            actual=float(actual[i]),
            e=float(actual[i] - predicted[i]),
        )
        for i in range(ds.n_windows)
    ]


def fit_threshold(train_errors: list[PredictionError]) -> AnomalyThreshold:
    """Quartiles of training errors via linear interpolation, fenced at 1.5 IQR."""
    if len(train_errors) < 4:
        raise SizingError(f"need at least 4 training errors, got {len(train_errors)}")
    e = np.array([err.e for err in train_errors])
    q1, q3 = np.quantile(e, [0.25, 0.75])
    return AnomalyThreshold(q1=float(q1), q3=float(q3))


def classify(errors: list[PredictionError], th: AnomalyThreshold) -> list[AnomalyRecord]:
    """Flag errors strictly outside [lower, upper]; fence values are normal."""
    lower, upper = th.lower, th.upper
    return [
        AnomalyRecord(
            window_index=err.window_index,
            predicted=err.predicted,
            actual=err.actual,
            e=err.e,
            verdict=VERDICT_ANOMALOUS if (err.e < lower or err.e > upper) else VERDICT_NORMAL,
        )
        for err in errors
    ]


def write_report(records: list[AnomalyRecord], path, timestamps=None) -> None:
    """Emit one JSON object per line; timestamps map window_index -> isoformat."""
    with Path(path).open("w") as fh:
        for r in records:
            row = {
                "window_index": r.window_index,
                "predicted": r.predicted,
                "actual": r.actual,
                "e": r.e,
                "verdict": r.verdict,
            }
            if timestamps is not None:
                row["timestamp"] = timestamps[r.window_index]
            fh.write(json.dumps(row) + "\n")
