"""Ingestion, feature engineering, scaling, splitting, and windowing.

The canonical feature layout has F=10 columns, in this order:

    energy, hour, day_of_week, day_of_month, day_of_year, month,
    is_weekend, temperature, humidity, wind_speed

Windows are I consecutive rows of the scaled matrix; targets are the next
h values of the energy column. All transformations here are pure: they
never mutate their inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import RowError, SchemaError, ShapeError, SizingError, StateError

CANONICAL_FEATURES = (
    "energy",
    "hour",
    "day_of_week",
    "day_of_month",
    "day_of_year",
    "month",
    "is_weekend",
    "temperature",
    "humidity",
    "wind_speed",
)

WEATHER_FEATURES = ("temperature", "humidity", "wind_speed")

DEFAULT_CSV_SCHEMA = {
    "timestamp": "timestamp",
    "energy": "energy",
    "temperature": "temperature",
    "humidity": "humidity",
    "wind_speed": "wind_speed",
}

HOUR = timedelta(hours=1)


@dataclass(frozen=True)
class TimeSeriesRecord:
    """One hourly meter reading with optional weather channels."""

    timestamp: datetime
    energy: float
    temperature: float | None = None
    humidity: float | None = None
    wind_speed: float | None = None


@dataclass
class IngestResult:
    """Records plus the data-quality findings of one CSV ingest."""

    records: list[TimeSeriesRecord]
    gaps: list[datetime] = field(default_factory=list)


@dataclass
class FeatureMatrix:
    """T x F feature values with their column names."""

    columns: list[str]
    values: np.ndarray
    target_column: str = "energy"

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def target_index(self) -> int:
        return self.columns.index(self.target_column)


@dataclass
class ScalingParams:
    """Per-feature min/max fitted on the training split only."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise StateError("scaling params invalid: max < min for some feature")


@dataclass
class WindowedDataset:
    """Sliding windows (N x I x F) with aligned targets (N x h)."""

    inputs: np.ndarray
    targets: np.ndarray
    window_length: int
    horizon: int
    origin_indices: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    def flat_inputs(self) -> np.ndarray:
        """All windows flattened row-major to (N, I*F)."""
        n = self.inputs.shape[0]
        return self.inputs.reshape(n, -1)


def ingest_csv(path, schema: dict | None = None) -> IngestResult:
    """Read an hourly CSV into sorted records, reporting gaps.

    ``schema`` maps canonical field names (timestamp, energy, temperature,
    humidity, wind_speed) to the file's column headers; weather entries may
    be omitted or map to absent columns only if those fields are absent
    from the mapping entirely.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    schema = dict(DEFAULT_CSV_SCHEMA if schema is None else schema)
    if "timestamp" not in schema or "energy" not in schema:
        raise SchemaError("schema must map 'timestamp' and 'energy' columns")

    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"empty file: {path}")
        missing = [col for col in schema.values() if col not in reader.fieldnames]
        if missing:
            raise SchemaError(f"missing column(s) {missing} in {path}")

        records = []
        for row in reader:
            line = reader.line_num
            raw_ts = row[schema["timestamp"]]
            try:
                ts = datetime.fromisoformat(raw_ts.strip())
            except ValueError:
                raise RowError(f"unparseable timestamp {raw_ts!r}", line=line) from None
            try:
                energy = float(row[schema["energy"]])
            except ValueError:
                raise RowError(f"unparseable energy {row[schema['energy']]!r}", line=line) from None
            if energy < 0:
                raise RowError(f"negative energy {energy}", line=line)
            weather = {}
            for name in WEATHER_FEATURES:
                col = schema.get(name)
                if col is None:
                    weather[name] = None
                    continue
                raw = row[col]
                if raw is None or raw.strip() == "":
                    weather[name] = None
                else:
                    try:
                        weather[name] = float(raw)
                    except ValueError:
                        raise RowError(f"unparseable {name} {raw!r}", line=line) from None
            records.append(TimeSeriesRecord(timestamp=ts, energy=energy, **weather))

    if not records:
        raise SchemaError(f"no data rows in {path}")

    records.sort(key=lambda r: r.timestamp)
    gaps = []
    for prev, cur in zip(records, records[1:]):
        if cur.timestamp == prev.timestamp:
            raise RowError(f"duplicate timestamp {prev.timestamp.isoformat()}")
        step = prev.timestamp + HOUR
        while step < cur.timestamp:
            gaps.append(step)
            step += HOUR
    return IngestResult(records=records, gaps=gaps)


def engineer_features(records: list[TimeSeriesRecord]) -> FeatureMatrix:
    """Build the canonical 10-column matrix from sorted records.

    Missing weather values are forward-filled then back-filled; a weather
    channel with no observations at all is an error (provide the column or
    drop it from the ingest schema and impute upstream).
    """
    if not records:
        raise SizingError("no records to engineer features from")

    t = len(records)
    values = np.empty((t, len(CANONICAL_FEATURES)), dtype=np.float64)
    for i, rec in enumerate(records):
        ts = rec.timestamp
        values[i, 0] = rec.energy
        values[i, 1] = ts.hour
        values[i, 2] = ts.weekday()  # Monday=0 .. Sunday=6
        values[i, 3] = ts.day
        values[i, 4] = ts.timetuple().tm_yday
        values[i, 5] = ts.month
        values[i, 6] = 1.0 if ts.weekday() >= 5 else 0.0

    for j, name in enumerate(WEATHER_FEATURES):
        col = np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in records],
            dtype=np.float64,
        )
        if np.all(np.isnan(col)):
            raise SchemaError(
                f"weather column '{name}' has no observations; supply values or "
                "configure imputation before feature engineering"
            )
        col = _ffill_bfill(col)
        values[:, 7 + j] = col

    return FeatureMatrix(columns=list(CANONICAL_FEATURES), values=values)


def _ffill_bfill(col: np.ndarray) -> np.ndarray:
    isnan = np.isnan(col)
    if not isnan.any():
        return col
    idx = np.where(~isnan, np.arange(len(col)), 0)
    np.maximum.accumulate(idx, out=idx)
    out = col[idx]
    # leading NaNs survive the forward pass; back-fill them
    still = np.isnan(out)
    if still.any():
        first_valid = np.argmin(still)
        out[:first_valid] = out[first_valid]
    return out


def fit_scaler(train: FeatureMatrix) -> ScalingParams:
    """Fit per-feature min-max bounds on the training split."""
    if train.n_rows == 0:
        raise SizingError("cannot fit scaler on an empty matrix")
    return ScalingParams(
        mins=train.values.min(axis=0).copy(),
        maxs=train.values.max(axis=0).copy(),
    )


def apply_scaler(m: FeatureMatrix, params: ScalingParams) -> FeatureMatrix:
    """Map values through (x - min) / (max - min); constant features map to 0."""
    _check_params(m, params)
    span = params.maxs - params.mins
    safe = np.where(span == 0, 1.0, span)
    scaled = (m.values - params.mins) / safe
    scaled[:, span == 0] = 0.0
    return FeatureMatrix(columns=list(m.columns), values=scaled, target_column=m.target_column)


def invert_scaler(m: FeatureMatrix, params: ScalingParams) -> FeatureMatrix:
    """Undo ``apply_scaler``; constant features recover their fitted min."""
    _check_params(m, params)
    span = params.maxs - params.mins
    values = m.values * span + params.mins
    return FeatureMatrix(columns=list(m.columns), values=values, target_column=m.target_column)


def _check_params(m: FeatureMatrix, params: ScalingParams):
    if params is None:
        raise StateError("scaler params are unfitted")
    if params.mins.shape != (m.n_features,) or params.maxs.shape != (m.n_features,):
        raise StateError(
            f"scaler fitted for {params.mins.shape[0]} features, matrix has {m.n_features}"
        )


def chronological_split(
    m: FeatureMatrix,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    window_length: int = 48,
    horizon: int = 24,
) -> tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]:
    """Split rows into contiguous train/validation/test blocks, in order.

    Validation and test sizes are floored; remainder rows go to training.
    Each split must be able to hold at least one window of
    ``window_length + horizon`` rows.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SchemaError(f"split fractions must sum to 1, got {fractions}")
    t = m.n_rows
    n_val = int(t * fractions[1])
    n_test = int(t * fractions[2])
    n_train = t - n_val - n_test

    min_rows = window_length + horizon
    for name, size in (("train", n_train), ("validation", n_val), ("test", n_test)):
        if size < min_rows:
            raise SizingError(
                f"{name} split has {size} rows; need at least {min_rows} "
                f"(window_length={window_length} + horizon={horizon})"
            )

    def cut(lo, hi):
        return FeatureMatrix(
            columns=list(m.columns),
            values=m.values[lo:hi].copy(),
            target_column=m.target_column,
        )

    return (
        cut(0, n_train),
        cut(n_train, n_train + n_val),
        cut(n_train + n_val, t),
    )


def make_windows(m: FeatureMatrix, window_length: int, horizon: int) -> WindowedDataset:
    """Slide a stride-1 window over the matrix.

    Window n covers rows [n, n + I); its targets are the energy column at
    rows n + I .. n + I + h - 1.
    """
    if window_length <= 0 or horizon <= 0:
        raise ShapeError(f"window_length and horizon must be positive, got {window_length}, {horizon}")
    t = m.n_rows
    n = t - window_length - horizon + 1
    if n < 1:
        raise SizingError(
            f"matrix with {t} rows cannot hold a window of {window_length} plus horizon {horizon}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(m.values, window_length, axis=0)
    inputs = windows[:n].transpose(0, 2, 1).copy()
    energy = m.values[:, m.target_index()]
    target_view = np.lib.stride_tricks.sliding_window_view(energy, horizon)
    targets = target_view[window_length : window_length + n].copy()
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        window_length=window_length,
        horizon=horizon,
        origin_indices=np.arange(n),
    )


def flatten_window(window: np.ndarray) -> np.ndarray:
    """Serialize an I x F window row-major: element (t, f) lands at t*F + f."""
    if window.ndim != 2:
        raise ShapeError(f"expected a 2-D window, got shape {window.shape}")
    return window.reshape(-1).copy()


def unflatten(values: np.ndarray, window_length: int, n_features: int) -> np.ndarray:
    """Inverse of ``flatten_window``."""
    values = np.asarray(values)
    if values.ndim != 1 or values.size != window_length * n_features:
        raise ShapeError(
            f"flat sample of length {values.size} does not reshape to "
            f"{window_length} x {n_features}"
        )
    return values.reshape(window_length, n_features).copy()


@dataclass
class PreparedData:
    """A fully prepared dataset: scaled splits, windows, and provenance."""

    feature_columns: list[str]
    scaler: ScalingParams
    train: WindowedDataset
    validation: WindowedDataset
    test: WindowedDataset
    split_bounds: tuple[int, int, int]
    window_length: int
    horizon: int
    timestamps: list[datetime]

    def test_origin_row(self, window_index: int) -> int:
        """Absolute row index of a test window's first input row."""
        return self.split_bounds[0] + self.split_bounds[1] + int(window_index)

    def test_target_timestamp(self, window_index: int) -> datetime:
        """Timestamp of a test window's horizon-1 target."""
        return self.timestamps[self.test_origin_row(window_index) + self.window_length]

    def metadata(self) -> dict:
        return {
            "feature_order": self.feature_columns,
            "scaling": {
                "mins": self.scaler.mins.tolist(),
                "maxs": self.scaler.maxs.tolist(),
            },
            "split_rows": {
                "train": self.split_bounds[0],
                "validation": self.split_bounds[1],
                "test": self.split_bounds[2],
            },
            "window_length": self.window_length,
            "n_features": len(self.feature_columns),
            "horizon": self.horizon,
        }


def prepare(
    records: list[TimeSeriesRecord],
    window_length: int = 48,
    horizon: int = 24,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> PreparedData:
    """Records -> features -> chronological split -> scaling -> windows.

    The scaler is fitted on the training split only; windows are built
    within each split so no window straddles a split boundary.
    """
    matrix = engineer_features(records)
    train_m, val_m, test_m = chronological_split(
        matrix, fractions, window_length=window_length, horizon=horizon
    )
    scaler = fit_scaler(train_m)
    splits = [apply_scaler(s, scaler) for s in (train_m, val_m, test_m)]
    windows = [make_windows(s, window_length, horizon) for s in splits]
    return PreparedData(
        feature_columns=list(matrix.columns),
        scaler=scaler,
        train=windows[0],
        validation=windows[1],
        test=windows[2],
        split_bounds=(train_m.n_rows, val_m.n_rows, test_m.n_rows),
        window_length=window_length,
        horizon=horizon,
        timestamps=[r.timestamp for r in records],
    )


def write_metadata(prepared: PreparedData, path) -> None:
    Path(path).write_text(json.dumps(prepared.metadata(), indent=2) + "\n")
