"""Attribution post-processing: roles, integrity checks, heatmap data, stability stats."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .context import random_background, select_background, transform_gfi
from .errors import (
    DegenerateVarianceError,
    GroupingError,
    IntegrityError,
    ParameterError,
    ShapeError,
    SizingError,
)
from .explain import Attribution, ExplainerConfig, explain
from .forest import fit_forest, forest_importance

ROLE_CONTRIBUTOR = "Contributor"
ROLE_OFFSET = "Offset"
ROLE_NEGLIGIBLE = "Negligible"

# reconstruction must land on f_x this tightly, per estimator
METHOD_TOLERANCES = {
    "exact": 1e-9,
    "kernel": 1e-8,
    "sampling": 1e-9,
    "permutation": 1e-9,
}

DEFAULT_BUDGETS = {"kernel": 4096, "sampling": 2, "permutation": 2}

# enough capacity to rank ~500 flattened columns, small enough to fit a
# benchmark seed in a couple of seconds
DEFAULT_GFI_FOREST = {
    "n_trees": 15,
    "max_depth": 7,
    "min_samples_leaf": 5,
    "feature_subsample": 1 / 3,
    "max_samples": 1500,
}


@dataclass(frozen=True)
class CategorizedAttribution:
    attribution: Attribution
    actual: float
    predicted: float
    epsilon: float
    roles: tuple[str, ...]

    def role_counts(self) -> dict:
        counts = {ROLE_CONTRIBUTOR: 0, ROLE_OFFSET: 0, ROLE_NEGLIGIBLE: 0}
        for r in self.roles:
            counts[r] += 1
        return counts


def categorize(
    attribution: Attribution, actual: float, predicted: float, epsilon: float = 1e-6
) -> CategorizedAttribution:
    """Label each feature Contributor, Offset, or Negligible.

    A Contributor pushes the prediction away from the observed value, an
    Offset pulls it back toward it. Which sign does which depends on whether
    the model under- or over-predicted.
    """
    actual = float(actual)
    predicted = float(predicted)
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if actual == predicted:
        raise ParameterError(
            "actual equals predicted; contributor direction is undefined"
        )
    phi = attribution.phi
    roles = np.full(phi.shape, ROLE_NEGLIGIBLE, dtype=object)
    if actual > predicted:
        roles[phi < -epsilon] = ROLE_CONTRIBUTOR
        roles[phi > epsilon] = ROLE_OFFSET
    else:
        roles[phi > epsilon] = ROLE_CONTRIBUTOR
        roles[phi < -epsilon] = ROLE_OFFSET
    return CategorizedAttribution(
        attribution=attribution,
        actual=actual,
        predicted=predicted,
        epsilon=epsilon,
        roles=tuple(roles),
    )


def reconstruct_prediction(attribution: Attribution) -> float:
    """phi0 + sum(phi); raises if it drifts from f_x beyond the method tolerance."""
    total = float(attribution.phi0 + attribution.phi.sum())
    tol = METHOD_TOLERANCES.get(attribution.method, 1e-8)
    gap = abs(total - attribution.f_x)
    if gap > tol:
        raise IntegrityError(
            f"reconstructed prediction misses f_x by {gap:.3e} "
            f"(tolerance {tol:.0e} for method {attribution.method!r})"
        )
    return total


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray  # (F, I), grid[f, t] = phi[t*F + f]
    roles: tuple[tuple[str, ...], ...]  # same layout as grid
    row_order: np.ndarray  # feature indices, descending max |phi|
    cumulative: np.ndarray  # length I, running phi0 + prefix sums over time
    base_value: float
    f_x: float
    feature_names: tuple[str, ...]
    column_labels: tuple[str, ...]  # lag labels, oldest step first


def heatmap_data(
    categorized: CategorizedAttribution,
    window_length: int,
    n_features: int,
    feature_names: list[str] | None = None,
) -> Heatmap:
    """Reshape a flattened attribution into plot-ready per-feature rows."""
    att = categorized.attribution
    phi = att.phi
    if phi.size != window_length * n_features:
        raise ShapeError(
            f"attribution has {phi.size} values, expected "
            f"{window_length} x {n_features}"
        )
    reconstruct_prediction(att)
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(n_features)]
    if len(feature_names) != n_features:
        raise ShapeError(
            f"{len(feature_names)} feature names for {n_features} features"
        )
    grid = phi.reshape(window_length, n_features).T
    roles_grid = np.array(categorized.roles, dtype=object).reshape(
        window_length, n_features
    ).T
    row_order = np.argsort(-np.abs(grid).max(axis=1), kind="stable")
    cumulative = att.phi0 + np.cumsum(grid.sum(axis=0))
    columns = tuple(f"t-{window_length - 1 - t}" for t in range(window_length))
    return Heatmap(
        grid=grid,
        roles=tuple(tuple(row) for row in roles_grid),
        row_order=row_order,
        cumulative=cumulative,
        base_value=att.phi0,
        f_x=att.f_x,
        feature_names=tuple(feature_names),
        column_labels=columns,
    )


def write_heatmap(heatmap: Heatmap, csv_path, json_path=None) -> None:
    """Grid CSV (rows sorted by impact) plus an optional JSON sidecar."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", *heatmap.column_labels])
        for f_idx in heatmap.row_order:
            writer.writerow(
                [heatmap.feature_names[f_idx]]
                + [repr(float(v)) for v in heatmap.grid[f_idx]]
            )
    if json_path is not None:
        payload = {
            "base_value": heatmap.base_value,
            "f_x": heatmap.f_x,
            "cumulative": [float(v) for v in heatmap.cumulative],
            "row_order": [int(i) for i in heatmap.row_order],
            "feature_names": list(heatmap.feature_names),
            "column_labels": list(heatmap.column_labels),
            "roles": [list(row) for row in heatmap.roles],
        }
        Path(json_path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def variability(
    attributions: list[Attribution], absolute: bool = False
) -> tuple[np.ndarray, float, float]:
    """Per-feature sample SD of phi across attributions, plus mean and SD over features.

    All attributions must come from one method and one background selection;
    anything else would average incomparable estimators.
    """
    if len(attributions) < 2:
        raise SizingError(f"variability needs >= 2 attributions, got {len(attributions)}")
    methods = {a.method for a in attributions}
    if len(methods) > 1:
        raise GroupingError(f"mixed methods in one group: {sorted(methods)}")
    selections = {a.selection for a in attributions}
    if len(selections) > 1:
        raise GroupingError(f"mixed selections in one group: {sorted(map(str, selections))}")
    sizes = {a.phi.size for a in attributions}
    if len(sizes) > 1:
        raise ShapeError(f"attributions disagree on feature count: {sorted(sizes)}")
    mat = np.stack([a.phi for a in attributions])
    if absolute:
        mat = np.abs(mat)
    per_feature = mat.std(axis=0, ddof=1)
    return per_feature, float(per_feature.mean()), float(per_feature.std(ddof=1))


def reduction_pct(random_mean: float, similar_mean: float) -> float:
    """Relative drop in variability, in percent of the random-background level."""
    if random_mean <= 0:
        raise ParameterError(
            f"random-background variability must be positive, got {random_mean}"
        )
    return (random_mean - similar_mean) / random_mean * 100.0


def bartlett_test(group_a, group_b) -> tuple[float, float]:
    """Bartlett's equal-variance statistic for two groups and its chi^2 p-value."""
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise SizingError("each group needs at least 2 values")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    if var_a <= 0 or var_b <= 0:
        raise DegenerateVarianceError(
            f"zero sample variance (a: {var_a}, b: {var_b}); test undefined"
        )
    n_a, n_b = a.size, b.size
    dof = n_a + n_b - 2
    pooled = ((n_a - 1) * var_a + (n_b - 1) * var_b) / dof
    numerator = (
        dof * math.log(pooled)
        - (n_a - 1) * math.log(var_a)
        - (n_b - 1) * math.log(var_b)
    )
    correction = 1.0 + (1.0 / (n_a - 1) + 1.0 / (n_b - 1) - 1.0 / dof) / 3.0
    # the statistic is nonnegative by the log-sum inequality; clamp the
    # rounding dust so equal variances report exactly zero
    statistic = max(numerator / correction, 0.0)
    return statistic, float(chi2.sf(statistic, 1))


@dataclass(frozen=True)
class StabilityConfig:
    """Knobs for the random-vs-similar background comparison."""

    k: int = 100
    kernel_samples: int = 4096
    sampling_permutations: int = 2
    permutation_pairs: int = 2
    seed: int = 0
    # variance statistics do not need f64 estimates; float32 halves the
    # composite memory traffic that dominates the run
    dtype: type = np.float32
    batch_rows: int = 32768
    norm_weighting: str = "linear"
    rerun_rounds: int = 0  # >= 2 turns on the across-rerun mode
    rerun_anomaly_limit: int = 5
    workers: int = 1
    dataset_label: str = "synthetic"
    gfi_forest: dict | None = None

    def budgets(self) -> dict:
        return {
            "kernel": self.kernel_samples,
            "sampling": self.sampling_permutations,
            "permutation": self.permutation_pairs,
        }


@dataclass(frozen=True)
class StabilityReport:
    dataset_label: str
    methods: tuple[str, ...]
    rows: tuple[dict, ...]  # one fully populated dict per method
    mean_reduction_pct: float  # signed across-anomaly mode, averaged over methods
    anomaly_count: int
    metadata: dict

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset_label,
            "methods": list(self.methods),
            "rows": list(self.rows),
            "mean_reduction_pct": self.mean_reduction_pct,
            "anomaly_count": self.anomaly_count,
            "metadata": self.metadata,
        }


def write_stability_report(report: StabilityReport, json_path, csv_path=None) -> None:
    Path(json_path).write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n"
    )
    if csv_path is None:
        return
    with Path(csv_path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "dataset",
                "method",
                "random_mean",
                "random_sd",
                "similar_mean",
                "similar_sd",
                "bartlett_statistic",
                "p_value",
                "reduction_pct",
            ]
        )
        for row in report.rows:
            signed = row["signed"]
            bart = row["bartlett"]["sd_vectors"]
            writer.writerow(
                [
                    report.dataset_label,
                    row["method"],
                    repr(signed["random_mean"]),
                    repr(signed["random_sd"]),
                    repr(signed["similar_mean"]),
                    repr(signed["similar_sd"]),
                    repr(bart["statistic"]),
                    repr(bart["p_value"]),
                    repr(signed["reduction_pct"]),
                ]
            )


def _explain_one(model, x, bg, method, n_samples, seed, cfg: StabilityConfig, selection):
    att = explain(
        model,
        x,
        bg,
        method,
        ExplainerConfig(
            n_samples=n_samples,
            seed=seed,
            dtype=cfg.dtype,
            batch_rows=cfg.batch_rows,
        ),
    )
    return dataclasses.replace(att, selection=selection)


def _group_stats(random_atts, similar_atts) -> dict:
    out = {}
    for label, absolute in (("signed", False), ("absolute", True)):
        _, r_mean, r_sd = variability(random_atts, absolute=absolute)
        _, s_mean, s_sd = variability(similar_atts, absolute=absolute)
        out[label] = {
            "random_mean": r_mean,
            "random_sd": r_sd,
            "similar_mean": s_mean,
            "similar_sd": s_sd,
            "reduction_pct": reduction_pct(r_mean, s_mean),
        }
    return out


def stability_benchmark(
    train_inputs: np.ndarray,
    model,
    anomaly_windows: np.ndarray,
    *,
    train_targets: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    methods: tuple[str, ...] = ("kernel", "sampling", "permutation"),
    selections: tuple[str, ...] = ("random", "similar"),
    cfg: StabilityConfig = StabilityConfig(),
) -> StabilityReport:
    """Explain every anomaly under both background selections and compare spread.

    ``train_inputs`` is the flattened training pool the backgrounds are drawn
    from. Similarity weights come from ``weights`` when given, otherwise from
    a forest fitted on ``train_targets``.
    """
    train_inputs = np.asarray(train_inputs, dtype=np.float64)
    anomaly_windows = np.asarray(anomaly_windows, dtype=np.float64)
    if anomaly_windows.ndim != 2 or train_inputs.ndim != 2:
        raise ShapeError("train_inputs and anomaly_windows must be 2-D")
    n_anomalies = anomaly_windows.shape[0]
    if n_anomalies < 10:
        raise SizingError(f"benchmark needs >= 10 anomalies, got {n_anomalies}")
    if set(selections) != {"random", "similar"}:
        raise ParameterError(
            f"benchmark compares 'random' against 'similar', got {selections}"
        )
    budgets = cfg.budgets()
    unknown = [m for m in methods if m not in budgets]
    if unknown:
        raise ParameterError(f"no budget for methods {unknown}")

    gfi_meta: dict = {}
    if weights is None:
        if train_targets is None:
            raise ParameterError("need train_targets to fit the importance forest")
        params = dict(DEFAULT_GFI_FOREST)
        if cfg.gfi_forest:
            params.update(cfg.gfi_forest)
        forest = fit_forest(
            train_inputs, np.asarray(train_targets, dtype=np.float64),
            seed=cfg.seed, **params,
        )
        weights = transform_gfi(forest_importance(forest)).transformed
        gfi_meta = {"source": "fitted forest", **params}
    else:
        weights = np.asarray(weights, dtype=np.float64)
        gfi_meta = {"source": "provided"}

    rounds = max(1, cfg.rerun_rounds)
    root = np.random.SeedSequence(cfg.seed)
    ss_bg, ss_explain = root.spawn(2)
    bg_seeds = ss_bg.generate_state(n_anomalies * rounds).reshape(n_anomalies, rounds)
    explain_seeds = ss_explain.generate_state(
        len(methods) * 2 * n_anomalies * rounds
    ).reshape(len(methods), 2, n_anomalies, rounds)

    similar_bgs = [
        select_background(
            anomaly_windows[j], train_inputs, weights, cfg.k,
            anomaly_index=j, norm_weighting=cfg.norm_weighting,
        )
        for j in range(n_anomalies)
    ]
    random_bgs = [
        [
            random_background(
                train_inputs, cfg.k, seed=int(bg_seeds[j, r]), anomaly_index=j
            )
            for r in range(rounds)
        ]
        for j in range(n_anomalies)
    ]

    tasks = []
    for m_idx, method in enumerate(methods):
        for s_idx, selection in enumerate(("random", "similar")):
            for j in range(n_anomalies):
                for r in range(rounds):
                    if r > 0 and (
                        cfg.rerun_rounds < 2 or j >= cfg.rerun_anomaly_limit
                    ):
                        continue
                    bg = (
                        random_bgs[j][r]
                        if selection == "random"
                        else similar_bgs[j]
                    )
                    tasks.append(
                        (
                            (method, selection, j, r),
                            (
                                model,
                                anomaly_windows[j],
                                bg,
                                method,
                                budgets[method],
                                int(explain_seeds[m_idx, s_idx, j, r]),
                                cfg,
                                selection,
                            ),
                        )
                    )

    if cfg.workers > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=cfg.workers)(
            delayed(_explain_one)(*args) for _, args in tasks
        )
    else:
        results = [_explain_one(*args) for _, args in tasks]
    by_key = {key: att for (key, _), att in zip(tasks, results)}

    rows = []
    reductions = []
    for method in methods:
        random_atts = [by_key[(method, "random", j, 0)] for j in range(n_anomalies)]
        similar_atts = [by_key[(method, "similar", j, 0)] for j in range(n_anomalies)]
        row = {"method": method, **_group_stats(random_atts, similar_atts)}

        sd_random, _, _ = variability(random_atts)
        sd_similar, _, _ = variability(similar_atts)
        stat_sd, p_sd = bartlett_test(sd_random, sd_similar)
        pooled_random = np.concatenate([a.phi for a in random_atts])
        pooled_similar = np.concatenate([a.phi for a in similar_atts])
        stat_raw, p_raw = bartlett_test(pooled_random, pooled_similar)
        row["bartlett"] = {
            "sd_vectors": {"statistic": stat_sd, "p_value": p_sd},
            "pooled_raw": {"statistic": stat_raw, "p_value": p_raw},
        }

        if cfg.rerun_rounds >= 2:
            row["rerun"] = _rerun_stats(by_key, method, cfg, n_anomalies, rounds)
        else:
            row["rerun"] = {"status": "not computed (rerun_rounds < 2)"}
        rows.append(row)
        reductions.append(row["signed"]["reduction_pct"])

    metadata = {
        "k": cfg.k,
        "budgets": budgets,
        "seed": cfg.seed,
        "selections": sorted(selections),
        "dtype": np.dtype(cfg.dtype).name,
        "batch_rows": cfg.batch_rows,
        "norm_weighting": cfg.norm_weighting,
        "rerun_rounds": cfg.rerun_rounds,
        "rerun_anomaly_limit": cfg.rerun_anomaly_limit,
        "workers": cfg.workers,
        "gfi": gfi_meta,
        "variability_modes": ["signed (default)", "absolute"],
        "bartlett_groupings": ["sd_vectors (per-feature SDs)", "pooled_raw (all phi)"],
    }
    return StabilityReport(
        dataset_label=cfg.dataset_label,
        methods=tuple(methods),
        rows=tuple(rows),
        mean_reduction_pct=float(np.mean(reductions)),
        anomaly_count=n_anomalies,
        metadata=metadata,
    )


def _rerun_stats(by_key, method, cfg: StabilityConfig, n_anomalies, rounds) -> dict:
    """Across-rerun spread: same anomaly, fresh backgrounds/coalitions each round."""
    covered = min(cfg.rerun_anomaly_limit, n_anomalies)
    out = {"rounds": rounds, "anomalies_covered": covered}
    means = {}
    for selection in ("random", "similar"):
        sd_vectors = []
        for j in range(covered):
            atts = [by_key[(method, selection, j, r)] for r in range(rounds)]
            per_feature, _, _ = variability(atts)
            sd_vectors.append(per_feature)
        averaged = np.mean(sd_vectors, axis=0)
        means[selection] = float(averaged.mean())
        out[selection] = {
            "mean": float(averaged.mean()),
            "sd": float(averaged.std(ddof=1)),
        }
    if means["random"] > 0:
        out["reduction_pct"] = reduction_pct(means["random"], means["similar"])
    else:
        # both selections are deterministic at this budget; no spread to reduce
        out["reduction_pct"] = None
    return out
