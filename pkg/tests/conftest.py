"""Shared builders for the full-scale synthetic pipeline."""

import pytest

from contextshap import (
    AnomalySpec,
    SynthConfig,
    fit_ridge,
    generate_series,
    inject_anomalies,
    prepare,
)


@pytest.fixture(scope="session")
def standard_pipeline():
    """One year of hourly data with 8-sigma spikes and a fitted ridge model."""

    def build(seed, anomalies=30, min_separation=24):
        cfg = SynthConfig(length=8760, seed=seed)
        records = generate_series(cfg)
        spec = AnomalySpec(
            count=anomalies,
            magnitude_sigmas=8.0,
            kind="spike",
            min_separation=min_separation,
        )
        records, truths = inject_anomalies(
            records, spec, seed=seed, noise_sd=cfg.noise_sd
        )
        prepared = prepare(records, window_length=48, horizon=24)
        model = fit_ridge(prepared.train, l2_lambda=1e-4)
        return prepared, model, truths

    return build


def anomaly_window_indices(prepared, truths):
    """Test-window index whose one-step target is each injected row."""
    test_start = prepared.split_bounds[0] + prepared.split_bounds[1]
    window = prepared.window_length
    n_test = prepared.test.inputs.shape[0]
    out = []
    for truth in truths:
        w = truth.index - test_start - window
        assert 0 <= w < n_test, f"anomaly row {truth.index} outside test windows"
        out.append(w)
    return out
