"""Synthetic hourly energy series with seasonality and injected anomalies.

The generator produces the same record schema the ingest path consumes, so
synthetic and real data flow through one pipeline. Weather channels are
smoothed seasonal noise coupled into energy via a linear coefficient, which
gives weather features genuine predictive signal.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .dataset import TimeSeriesRecord
from .errors import ParameterError, PlacementError, SizingError

# shortest series that still yields two full windows of the default
# 48-hour-input / 24-hour-horizon layout
MIN_HOURS = 144

HOURS_PER_DAY = 24
HOURS_PER_WEEK = 168
HOURS_PER_YEAR = 8760

ANOMALY_KINDS = ("spike", "level_shift", "sustained")


@dataclass(frozen=True)
class SynthConfig:
    length: int = 8760
    base_load: float = 2.0
    daily_amplitude: float = 0.8
    weekly_amplitude: float = 0.3
    noise_sd: float = 0.15
    weather_coupling: float = 0.02
    seed: int = 0
    start: datetime = datetime(2018, 1, 1)

    def __post_init__(self):
        if self.base_load <= 0:
            raise ParameterError(f"base_load must be positive, got {self.base_load}")
        if self.noise_sd < 0:
            raise ParameterError(f"noise_sd must be nonnegative, got {self.noise_sd}")
        if self.length < MIN_HOURS:
            raise SizingError(f"series length {self.length} < minimum {MIN_HOURS} hours")


@dataclass(frozen=True)
class AnomalySpec:
    count: int = 30
    magnitude_sigmas: float = 8.0
    kind: str = "spike"
    min_separation: int = 48
    duration: int = 6  # hours, sustained kind only

    def __post_init__(self):
        if self.count < 0:
            raise ParameterError(f"count must be nonnegative, got {self.count}")
        if self.kind not in ANOMALY_KINDS:
            raise ParameterError(f"kind must be one of {ANOMALY_KINDS}, got {self.kind!r}")
        if self.min_separation < 1:
            raise ParameterError(f"min_separation must be >= 1, got {self.min_separation}")
        if self.duration < 1:
            raise ParameterError(f"duration must be >= 1, got {self.duration}")


@dataclass(frozen=True)
class GroundTruthAnomaly:
    index: int
    timestamp: datetime
    kind: str
    delta: float


def _smoothed_noise(rng, t, sd, alpha=0.95):
    """AR(1)-filtered Gaussian noise with stationary SD ``sd``."""
    shocks = rng.normal(0.0, sd * np.sqrt(1 - alpha**2), t)
    out = np.empty(t)
    acc = shocks[0] / np.sqrt(1 - alpha**2)
    for i in range(t):
        acc = alpha * acc + shocks[i]
        out[i] = acc
    return out


def generate_series(cfg: SynthConfig) -> list[TimeSeriesRecord]:
    """Deterministically generate an hourly series from the config.

    energy = base + daily sinusoid + weekly sinusoid
             + weather_coupling * centered temperature + Gaussian noise,
    clipped at zero.
    """
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(cfg.length, dtype=np.float64)
    start_hour = cfg.start.timetuple().tm_yday * HOURS_PER_DAY + cfg.start.hour

    annual = np.sin(2 * np.pi * (t + start_hour) / HOURS_PER_YEAR - np.pi / 2)
    temp_daily = 4.0 * np.sin(2 * np.pi * (t % HOURS_PER_DAY) / HOURS_PER_DAY - np.pi / 2)
    temperature = 12.0 + 9.0 * annual + temp_daily + _smoothed_noise(rng, cfg.length, 2.0)
    humidity = np.clip(
        65.0 - 0.9 * (temperature - 12.0) + _smoothed_noise(rng, cfg.length, 6.0), 5.0, 100.0
    )
    wind = np.clip(3.5 + _smoothed_noise(rng, cfg.length, 1.2), 0.0, None)

    daily = cfg.daily_amplitude * np.sin(2 * np.pi * (t % HOURS_PER_DAY) / HOURS_PER_DAY)
    weekly = cfg.weekly_amplitude * np.sin(2 * np.pi * (t % HOURS_PER_WEEK) / HOURS_PER_WEEK)
    noise = rng.normal(0.0, cfg.noise_sd, cfg.length) if cfg.noise_sd > 0 else np.zeros(cfg.length)
    energy = np.clip(
        cfg.base_load + daily + weekly + cfg.weather_coupling * (temperature - 12.0) + noise,
        0.0,
        None,
    )

    return [
        TimeSeriesRecord(
            timestamp=cfg.start + timedelta(hours=i),
            energy=float(energy[i]),
            temperature=float(temperature[i]),
            humidity=float(humidity[i]),
            wind_speed=float(wind[i]),
        )
        for i in range(cfg.length)
    ]


def _place_positions(rng, count, lo, hi, sep):
    """Uniformly place ``count`` positions in [lo, hi] with pairwise gaps >= sep.

    Bijection trick: subtracting (sep - 1) * rank from each sorted position
    turns the gap constraint into plain distinctness, so sampling without
    replacement from the shrunken range is uniform over valid placements.
    """
    span = hi - lo
    if span < (count - 1) * sep:
        raise PlacementError(
            f"cannot place {count} anomalies with separation {sep} in "
            f"{span + 1} eligible hours"
        )
    shrunk = span - (count - 1) * (sep - 1) + 1
    picks = np.sort(rng.choice(shrunk, size=count, replace=False))
    return (lo + picks + np.arange(count) * (sep - 1)).astype(int)


def inject_anomalies(
    records: list[TimeSeriesRecord],
    spec: AnomalySpec,
    seed: int,
    noise_sd: float,
    protected_fraction: float = 0.9,
    guard_hours: int = 72,
    horizon: int = 24,
) -> tuple[list[TimeSeriesRecord], list[GroundTruthAnomaly]]:
    """Copy the series with ``spec.count`` anomalies at known positions.

    Eligible positions start after the protected prefix plus a guard band
    (by default, past the first window-plus-horizon of the final tenth of
    the series) and end early enough that each anomaly is still a
    one-step-ahead target of some window. Positions keep pairwise gaps of
    at least ``spec.min_separation``.
    """
    t = len(records)
    if spec.count == 0:
        return list(records), []
    if not 0.0 <= protected_fraction < 1.0:
        raise ParameterError(f"protected_fraction must be in [0, 1), got {protected_fraction}")
    lo = int(protected_fraction * t) + guard_hours
    hi = t - horizon
    if spec.kind == "sustained":
        hi = min(hi, t - spec.duration)
    if lo > hi:
        raise PlacementError(f"no eligible hours: region [{lo}, {hi}] is empty for T={t}")

    rng = np.random.default_rng(seed)
    positions = _place_positions(rng, spec.count, lo, hi, spec.min_separation)
    delta = spec.magnitude_sigmas * noise_sd

    energy = np.array([r.energy for r in records])
    for p in positions:
        if spec.kind == "spike":
            energy[p] += delta
        elif spec.kind == "level_shift":
            energy[p:] += delta
        else:
            energy[p : p + spec.duration] += delta

    out = [
        TimeSeriesRecord(
            timestamp=r.timestamp,
            energy=float(energy[i]),
            temperature=r.temperature,
            humidity=r.humidity,
            wind_speed=r.wind_speed,
        )
        for i, r in enumerate(records)
    ]
    truth = [
        GroundTruthAnomaly(
            index=int(p), timestamp=records[p].timestamp, kind=spec.kind, delta=float(delta)
        )
        for p in positions
    ]
    return out, truth


def write_csv(records: list[TimeSeriesRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "energy", "temperature", "humidity", "wind_speed"])
        for r in records:
            w.writerow(
                [
                    r.timestamp.isoformat(),
                    f"{r.energy:.6f}",
                    f"{r.temperature:.6f}",
                    f"{r.humidity:.6f}",
                    f"{r.wind_speed:.6f}",
                ]
            )


def write_ground_truth(truth: list[GroundTruthAnomaly], path) -> None:
    payload = {
        "anomalies": [
            {
                "index": g.index,
                "timestamp": g.timestamp.isoformat(),
                "kind": g.kind,
                "delta": g.delta,
            }
            for g in truth
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_ground_truth(path) -> list[GroundTruthAnomaly]:
    payload = json.loads(Path(path).read_text())
    return [
        GroundTruthAnomaly(
            index=int(g["index"]),
            timestamp=datetime.fromisoformat(g["timestamp"]),
            kind=g["kind"],
            delta=float(g["delta"]),
        )
        for g in payload["anomalies"]
    ]
