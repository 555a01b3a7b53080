"""Command-line pipeline: synth, train, detect, explain, benchmark.

Every command writes its outputs plus a ``manifest.json`` echoing the
effective configuration (seeds included) under one run directory, so a rerun
with the same flags reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analyze import (
    DEFAULT_GFI_FOREST,
    StabilityConfig,
    categorize,
    heatmap_data,
    reconstruct_prediction,
    stability_benchmark,
    write_heatmap,
    write_stability_report,
)
from .anomaly import classify, compute_errors, fit_threshold, write_report
from .context import random_background, select_background, transform_gfi
from .dataset import ingest_csv, prepare
from .errors import DataError, NumericalError, ParameterError, SchemaError
from .explain import ExplainerConfig, explain, write_attribution
from .forest import fit_forest, forest_importance
from .predictors import fit_mlp, fit_ridge, forecast_metrics, load_model
from .synth import (
    AnomalySpec,
    SynthConfig,
    generate_series,
    inject_anomalies,
    load_ground_truth,
    write_csv,
    write_ground_truth,
)

DEFAULT_CLI_BUDGETS = {"kernel": 2048, "sampling": 16, "permutation": 8, "exact": 0}

DEFAULTS = {
    "synth": {
        "hours": 8760,
        "anomalies": 30,
        "seed": 0,
        "kind": "spike",
        "magnitude": 8.0,
        "min_separation": 48,
        "duration": 6,
        "noise_sd": 0.15,
        "protected_fraction": 0.9,
        "guard_hours": 72,
    },
    "train": {
        "model": "ridge",
        "window": 48,
        "horizon": 24,
        "l2_lambda": 1e-4,
        "hidden_width": 32,
        "learning_rate": 0.05,
        "epochs": 500,
        "model_seed": 0,
    },
    "detect": {},
    "explain": {
        "method": "kernel",
        "selection": "similar",
        "k": 100,
        "budget": None,
        "explainer_seed": 0,
        "background_seed": 0,
        "gfi_seed": 0,
        "norm_weighting": "linear",
        "gfi_trees": None,
        "gfi_depth": None,
        "gfi_max_samples": None,
    },
    "benchmark": {
        "hours": 8760,
        "anomalies": 30,
        "data_seed": 0,
        "kind": "spike",
        "magnitude": 8.0,
        "min_separation": 24,
        "noise_sd": 0.15,
        "model": "ridge",
        "l2_lambda": 1e-4,
        "window": 48,
        "horizon": 24,
        "k": 100,
        "kernel_budget": 4096,
        "sampling_budget": 2,
        "permutation_budget": 2,
        "bench_seed": 0,
        "methods": "kernel,sampling,permutation",
        "workers": 1,
        "rerun_rounds": 0,
        "rerun_limit": 5,
        "float64": False,
        "gfi_trees": None,
        "gfi_depth": None,
        "gfi_max_samples": None,
        "data": None,
        "ground_truth": None,
    },
}


def _add_common(sub):
    sub.add_argument("--out", required=True, help="run directory for all outputs")
    sub.add_argument("--config", default=None, help="JSON file with flag defaults")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contextshap",
        description="forecast-residual anomaly detection with stable attributions",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic series with anomalies")
    _add_common(p)
    p.add_argument("--hours", type=int)
    p.add_argument("--anomalies", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", choices=["spike", "level_shift", "sustained"])
    p.add_argument("--magnitude", type=float, help="anomaly size in noise sigmas")
    p.add_argument("--min-separation", type=int, dest="min_separation")
    p.add_argument("--duration", type=int, help="hours, sustained anomalies only")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--protected-fraction", type=float, dest="protected_fraction")
    p.add_argument("--guard-hours", type=int, dest="guard_hours")
    p.set_defaults(run=cmd_synth)

    p = subs.add_parser("train", help="fit a forecaster and score the test split")
    _add_common(p)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--model", choices=["ridge", "mlp"])
    p.add_argument("--window", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--l2-lambda", type=float, dest="l2_lambda")
    p.add_argument("--hidden-width", type=int, dest="hidden_width")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--model-seed", type=int, dest="model_seed")
    p.set_defaults(run=cmd_train)

    p = subs.add_parser("detect", help="flag anomalous test windows by IQR rule")
    _add_common(p)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--model-path", required=True, dest="model_path")
    p.set_defaults(run=cmd_detect)

    p = subs.add_parser("explain", help="attribute one detected anomaly")
    _add_common(p)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--model-path", required=True, dest="model_path")
    p.add_argument(
        "--anomaly-index", required=True, type=int, dest="anomaly_index",
        help="position in the detect output, 0-based",
    )
    p.add_argument("--method", choices=["kernel", "sampling", "permutation", "exact"])
    p.add_argument("--selection", choices=["similar", "random"])
    p.add_argument("--k", type=int)
    p.add_argument("--budget", type=int, help="coalitions or permutations")
    p.add_argument("--explainer-seed", type=int, dest="explainer_seed")
    p.add_argument("--background-seed", type=int, dest="background_seed")
    p.add_argument("--gfi-seed", type=int, dest="gfi_seed")
    p.add_argument("--norm-weighting", choices=["linear", "squared"], dest="norm_weighting")
    p.add_argument("--gfi-trees", type=int, dest="gfi_trees")
    p.add_argument("--gfi-depth", type=int, dest="gfi_depth")
    p.add_argument("--gfi-max-samples", type=int, dest="gfi_max_samples")
    p.set_defaults(run=cmd_explain)

    p = subs.add_parser("benchmark", help="random vs similar background stability")
    _add_common(p)
    p.add_argument("--data", help="existing CSV; omit to synthesize")
    p.add_argument("--ground-truth", dest="ground_truth", help="JSON from synth")
    p.add_argument("--hours", type=int)
    p.add_argument("--anomalies", type=int)
    p.add_argument("--data-seed", type=int, dest="data_seed")
    p.add_argument("--kind", choices=["spike", "level_shift", "sustained"])
    p.add_argument("--magnitude", type=float)
    p.add_argument("--min-separation", type=int, dest="min_separation")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--model", choices=["ridge", "mlp"])
    p.add_argument("--l2-lambda", type=float, dest="l2_lambda")
    p.add_argument("--window", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--kernel-budget", type=int, dest="kernel_budget")
    p.add_argument("--sampling-budget", type=int, dest="sampling_budget")
    p.add_argument("--permutation-budget", type=int, dest="permutation_budget")
    p.add_argument("--bench-seed", type=int, dest="bench_seed")
    p.add_argument("--methods", help="comma-separated subset of kernel,sampling,permutation")
    p.add_argument("--workers", type=int)
    p.add_argument("--rerun-rounds", type=int, dest="rerun_rounds")
    p.add_argument("--rerun-limit", type=int, dest="rerun_limit")
    p.add_argument("--float64", action="store_const", const=True)
    p.add_argument("--gfi-trees", type=int, dest="gfi_trees")
    p.add_argument("--gfi-depth", type=int, dest="gfi_depth")
    p.add_argument("--gfi-max-samples", type=int, dest="gfi_max_samples")
    p.set_defaults(run=cmd_benchmark)
    return parser


def _effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    merged = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise SchemaError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config file is not valid JSON: {exc}")
        unknown = set(file_cfg) - set(merged) - {"data", "model_path", "anomaly_index"}
        if unknown:
            raise SchemaError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        for key, value in file_cfg.items():
            base = merged.get(key)
            if base is None or value is None:
                continue
            ok = isinstance(value, bool) == isinstance(base, bool) and (
                isinstance(value, type(base))
                or (isinstance(base, float) and isinstance(value, int))
            )
            if not ok:
                raise SchemaError(
                    f"config key {key!r} expects {type(base).__name__}, "
                    f"got {type(value).__name__}"
                )
        merged.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "config", "run"):
            continue
        if value is not None:
            merged[key] = value
    merged["out"] = str(merged["out"])
    return merged


def _run_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, outputs: dict) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )


def cmd_synth(cfg: dict) -> int:
    out = _run_dir(cfg)
    series_cfg = SynthConfig(
        length=cfg["hours"], noise_sd=cfg["noise_sd"], seed=cfg["seed"]
    )
    records = generate_series(series_cfg)
    truths = []
    if cfg["anomalies"] > 0:
        spec = AnomalySpec(
            count=cfg["anomalies"],
            magnitude_sigmas=cfg["magnitude"],
            kind=cfg["kind"],
            min_separation=cfg["min_separation"],
            duration=cfg["duration"],
        )
        records, truths = inject_anomalies(
            records,
            spec,
            seed=cfg["seed"],
            noise_sd=cfg["noise_sd"],
            protected_fraction=cfg["protected_fraction"],
            guard_hours=cfg["guard_hours"],
        )
    write_csv(records, out / "series.csv")
    write_ground_truth(truths, out / "ground_truth.json")
    _write_manifest(out, "synth", cfg, {
        "series": "series.csv", "ground_truth": "ground_truth.json",
    })
    print(f"wrote {len(records)} hours with {len(truths)} anomalies to {out}")
    return 0


def _prepare_from_csv(path, window: int, horizon: int):
    records = ingest_csv(path)
    return prepare(records.records, window_length=window, horizon=horizon)


def _fit(cfg: dict, prepared):
    if cfg["model"] == "ridge":
        return fit_ridge(prepared.train, l2_lambda=cfg["l2_lambda"])
    return fit_mlp(
        prepared.train,
        hidden_width=cfg["hidden_width"],
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        seed=cfg["model_seed"],
    )


def cmd_train(cfg: dict) -> int:
    out = _run_dir(cfg)
    prepared = _prepare_from_csv(cfg["data"], cfg["window"], cfg["horizon"])
    model = _fit(cfg, prepared)
    model.save(out / "model.json")
    predicted = model.predict(prepared.test.inputs)
    metrics = {
        "all_horizons": forecast_metrics(predicted, prepared.test.targets),
        "h1": forecast_metrics(predicted[:, :1], prepared.test.targets[:, :1]),
    }
    (out / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n"
    )
    _write_manifest(out, "train", cfg, {
        "model": "model.json", "metrics": "metrics.json",
    })
    print(
        f"{cfg['model']} trained; test RMSE {metrics['all_horizons']['rmse']:.4f} "
        f"(h=1: {metrics['h1']['rmse']:.4f})"
    )
    return 0


def _detect(model, prepared):
    threshold = fit_threshold(compute_errors(model, prepared.train))
    results = classify(compute_errors(model, prepared.test), threshold)
    return threshold, results


def cmd_detect(cfg: dict) -> int:
    out = _run_dir(cfg)
    model = load_model(cfg["model_path"])
    prepared = _prepare_from_csv(cfg["data"], model.input_shape_[0], model.horizon_)
    threshold, results = _detect(model, prepared)
    stamps = {
        r.window_index: prepared.test_target_timestamp(r.window_index).isoformat()
        for r in results
    }
    write_report(results, out / "anomalies.jsonl", timestamps=stamps)
    (out / "threshold.json").write_text(
        json.dumps(
            {
                "q1": threshold.q1,
                "q3": threshold.q3,
                "iqr": threshold.iqr,
                "lower": threshold.lower,
                "upper": threshold.upper,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    _write_manifest(out, "detect", cfg, {
        "anomalies": "anomalies.jsonl", "threshold": "threshold.json",
    })
    flagged = sum(r.is_anomalous for r in results)
    print(f"{flagged} anomalies flagged across {len(results)} test windows")
    return 0


def cmd_explain(cfg: dict) -> int:
    out = _run_dir(cfg)
    model = load_model(cfg["model_path"])
    window, horizon = model.input_shape_[0], model.horizon_
    prepared = _prepare_from_csv(cfg["data"], window, horizon)
    _, results = _detect(model, prepared)
    anomalous = [r for r in results if r.is_anomalous]
    idx = cfg["anomaly_index"]
    if not 0 <= idx < len(anomalous):
        raise ParameterError(
            f"anomaly index {idx} not in detect output ({len(anomalous)} anomalies)"
        )
    record = anomalous[idx]
    train_flat = prepared.train.flat_inputs()
    x = prepared.test.flat_inputs()[record.window_index]

    if cfg["selection"] == "similar":
        forest_params = dict(DEFAULT_GFI_FOREST)
        for key, name in (("gfi_trees", "n_trees"), ("gfi_depth", "max_depth"),
                          ("gfi_max_samples", "max_samples")):
            if cfg[key] is not None:
                forest_params[name] = cfg[key]
        forest = fit_forest(
            train_flat,
            prepared.train.targets[:, 0],
            seed=cfg["gfi_seed"],
            **forest_params,
        )
        weights = transform_gfi(forest_importance(forest)).transformed
        bg = select_background(
            x, train_flat, weights, cfg["k"],
            anomaly_index=record.window_index,
            norm_weighting=cfg["norm_weighting"],
        )
    else:
        bg = random_background(
            train_flat, cfg["k"], seed=cfg["background_seed"],
            anomaly_index=record.window_index,
        )

    budget = cfg["budget"] if cfg["budget"] is not None else DEFAULT_CLI_BUDGETS[cfg["method"]]
    att = explain(
        model, x, bg, cfg["method"],
        ExplainerConfig(n_samples=max(budget, 1), seed=cfg["explainer_seed"]),
    )
    att = dataclasses.replace(att, selection=cfg["selection"])
    reconstruct_prediction(att)
    cat = categorize(att, actual=record.actual, predicted=record.predicted)
    heatmap = heatmap_data(cat, window, len(prepared.feature_columns),
                           feature_names=prepared.feature_columns)

    write_attribution(att, out / "attribution.json",
                      window_length=window, feature_names=prepared.feature_columns)
    (out / "categorized.json").write_text(
        json.dumps(
            {
                "anomaly_index": idx,
                "window_index": record.window_index,
                "actual": record.actual,
                "predicted": record.predicted,
                "epsilon": cat.epsilon,
                "roles": list(cat.roles),
                "role_counts": cat.role_counts(),
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    write_heatmap(heatmap, out / "heatmap.csv", out / "heatmap.json")
    (out / "background.json").write_text(json.dumps(bg.to_json(), indent=2) + "\n")
    _write_manifest(out, "explain", cfg, {
        "attribution": "attribution.json",
        "categorized": "categorized.json",
        "heatmap_csv": "heatmap.csv",
        "heatmap_json": "heatmap.json",
        "background": "background.json",
    })
    counts = cat.role_counts()
    print(
        f"{cfg['method']} attribution for anomaly {idx} (window {record.window_index}): "
        f"{counts['Contributor']} contributors, {counts['Offset']} offsets"
    )
    return 0


def _write_long_csv(report, path) -> None:
    """One row per method and selection, as a tidy companion table."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["dataset", "method", "selection", "variability_mean",
             "variability_sd", "bartlett_statistic", "p_value", "reduction_pct"]
        )
        for row in report.rows:
            bart = row["bartlett"]["sd_vectors"]
            for selection in ("random", "similar"):
                signed = row["signed"]
                writer.writerow(
                    [
                        report.dataset_label,
                        row["method"],
                        selection,
                        repr(signed[f"{selection}_mean"]),
                        repr(signed[f"{selection}_sd"]),
                        repr(bart["statistic"]),
                        repr(bart["p_value"]),
                        repr(signed["reduction_pct"]),
                    ]
                )


def cmd_benchmark(cfg: dict) -> int:
    out = _run_dir(cfg)
    started = time.time()
    if cfg["data"] is not None:
        if cfg["ground_truth"] is None:
            raise ParameterError("--data needs --ground-truth for anomaly positions")
        records = ingest_csv(cfg["data"]).records
        truths = load_ground_truth(cfg["ground_truth"])
    else:
        series_cfg = SynthConfig(
            length=cfg["hours"], noise_sd=cfg["noise_sd"], seed=cfg["data_seed"]
        )
        records = generate_series(series_cfg)
        spec = AnomalySpec(
            count=cfg["anomalies"],
            magnitude_sigmas=cfg["magnitude"],
            kind=cfg["kind"],
            min_separation=cfg["min_separation"],
        )
        records, truths = inject_anomalies(
            records, spec, seed=cfg["data_seed"], noise_sd=cfg["noise_sd"],
            horizon=cfg["horizon"],
        )
    prepared = prepare(records, window_length=cfg["window"], horizon=cfg["horizon"])
    model = _fit({**cfg, "model_seed": cfg["bench_seed"],
                  "hidden_width": 32, "learning_rate": 0.05, "epochs": 500}, prepared)

    test_start = prepared.split_bounds[0] + prepared.split_bounds[1]
    n_test = prepared.test.inputs.shape[0]
    window_indices = []
    for truth in truths:
        w = truth.index - test_start - cfg["window"]
        if not 0 <= w < n_test:
            raise ParameterError(
                f"anomaly at row {truth.index} has no test window with a "
                f"one-step-ahead target (valid rows "
                f"{test_start + cfg['window']}..{test_start + cfg['window'] + n_test - 1})"
            )
        window_indices.append(w)
    anomaly_windows = prepared.test.flat_inputs()[window_indices]

    gfi_forest = {}
    for key, name in (("gfi_trees", "n_trees"), ("gfi_depth", "max_depth"),
                      ("gfi_max_samples", "max_samples")):
        if cfg[key] is not None:
            gfi_forest[name] = cfg[key]
    stability_cfg = StabilityConfig(
        k=cfg["k"],
        kernel_samples=cfg["kernel_budget"],
        sampling_permutations=cfg["sampling_budget"],
        permutation_pairs=cfg["permutation_budget"],
        seed=cfg["bench_seed"],
        dtype=np.float64 if cfg["float64"] else np.float32,
        rerun_rounds=cfg["rerun_rounds"],
        rerun_anomaly_limit=cfg["rerun_limit"],
        workers=cfg["workers"],
        gfi_forest=gfi_forest or None,
    )
    methods = tuple(m.strip() for m in cfg["methods"].split(",") if m.strip())
    report = stability_benchmark(
        prepared.train.flat_inputs(),
        model,
        anomaly_windows,
        train_targets=prepared.train.targets[:, 0],
        methods=methods,
        cfg=stability_cfg,
    )
    write_stability_report(report, out / "report.json", out / "report.csv")
    _write_long_csv(report, out / "report_long.csv")
    _write_manifest(out, "benchmark", cfg, {
        "report": "report.json",
        "table": "report.csv",
        "table_long": "report_long.csv",
    })
    elapsed = time.time() - started
    print(
        f"benchmark over {report.anomaly_count} anomalies finished in {elapsed:.1f}s; "
        f"mean variability reduction {report.mean_reduction_pct:.1f}%"
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = _effective_config(args)
        return args.run(cfg)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
