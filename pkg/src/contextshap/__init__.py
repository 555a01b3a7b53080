"""Residual-based anomaly detection with context-aware Shapley explanations."""

__version__ = "0.1.0"

from .analyze import (
    CategorizedAttribution,
    Heatmap,
    StabilityConfig,
    StabilityReport,
    bartlett_test,
    categorize,
    heatmap_data,
    reconstruct_prediction,
    reduction_pct,
    stability_benchmark,
    variability,
    write_heatmap,
    write_stability_report,
)
from .anomaly import (
    AnomalyRecord,
    AnomalyThreshold,
    PredictionError,
    classify,
    compute_errors,
    fit_threshold,
    write_report,
)
from .context import (
    BackgroundSet,
    GlobalImportance,
    random_background,
    select_background,
    similarity_scores,
    transform_gfi,
    weighted_cosine,
    write_background,
)
from .dataset import (
    FeatureMatrix,
    IngestResult,
    PreparedData,
    ScalingParams,
    TimeSeriesRecord,
    WindowedDataset,
    engineer_features,
    ingest_csv,
    prepare,
    write_metadata,
)
from .errors import ContextShapError, DataError, NumericalError
# the explain() dispatcher stays in its submodule: re-exporting it here would
# shadow contextshap.explain, the module, with a function of the same name
from .explain import (
    Attribution,
    ExplainerConfig,
    base_value,
    exact_shapley,
    kernel_shap,
    kernel_weight,
    masked_prediction,
    permutation_shap,
    sampling_shap,
    write_attribution,
)
from .forest import RandomForestRegressor, fit_forest, forest_importance
from .predictors import (
    Forecaster,
    MlpForecaster,
    RidgeForecaster,
    fit_mlp,
    fit_ridge,
    forecast_metrics,
    load_model,
)
from .synth import (
    AnomalySpec,
    GroundTruthAnomaly,
    SynthConfig,
    generate_series,
    inject_anomalies,
    load_ground_truth,
    write_csv,
    write_ground_truth,
)

__all__ = [
    "__version__",
    "ContextShapError",
    "DataError",
    "NumericalError",
    "TimeSeriesRecord",
    "IngestResult",
    "FeatureMatrix",
    "ScalingParams",
    "WindowedDataset",
    "PreparedData",
    "ingest_csv",
    "engineer_features",
    "prepare",
    "write_metadata",
    "SynthConfig",
    "AnomalySpec",
    "GroundTruthAnomaly",
    "generate_series",
    "inject_anomalies",
    "write_csv",
    "write_ground_truth",
    "load_ground_truth",
    "Forecaster",
    "RidgeForecaster",
    "MlpForecaster",
    "fit_ridge",
    "fit_mlp",
    "forecast_metrics",
    "load_model",
    "RandomForestRegressor",
    "fit_forest",
    "forest_importance",
    "PredictionError",
    "AnomalyThreshold",
    "AnomalyRecord",
    "compute_errors",
    "fit_threshold",
    "classify",
    "write_report",
    "GlobalImportance",
    "BackgroundSet",
    "transform_gfi",
    "weighted_cosine",
    "similarity_scores",
    "select_background",
    "random_background",
    "write_background",
    "Attribution",
    "ExplainerConfig",
    "base_value",
    "masked_prediction",
    "kernel_weight",
    "exact_shapley",
    "kernel_shap",
    "sampling_shap",
    "permutation_shap",
    "write_attribution",
    "CategorizedAttribution",
    "Heatmap",
    "StabilityConfig",
    "StabilityReport",
    "categorize",
    "reconstruct_prediction",
    "heatmap_data",
    "write_heatmap",
    "variability",
    "reduction_pct",
    "bartlett_test",
    "stability_benchmark",
    "write_stability_report",
]
