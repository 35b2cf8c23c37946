"""Numerical toolkit for measuring how fast a classifier learns a backdoor.

The workflow: poison a training set with a trigger, trace how the triggered
test loss falls as the poison term's weight beta rises from 0 to 1, and
condense the danger into a single bounded slope score theta computed
analytically at beta = 0. Influence functions decompose that slope into
per-sample contributions, and hyperparameter sweeps map out where accuracy
and backdoor resistance trade off.
"""

__version__ = "0.1.0"

from .curves import (
    CurvePoint,
    LearningCurve,
    default_beta_grid,
    param_deviation,
    read_curve_csv,
    trace_curve,
    write_curve_csv,
)
from .datasets import (
    DatasetSplit,
    LabeledDataset,
    load_feature_csv,
    load_idx,
    make_blobs,
    save_feature_csv,
    subset_binary,
)
from .errors import (
    BackdoorLensError,
    CapacityError,
    ConditioningError,
    ConfigError,
    ConsistencyError,
    ConvergenceError,
    DegenerateGeometryError,
    FormatError,
    GeometryError,
    ParameterError,
    ParseError,
    SchemaError,
    ShapeError,
    ValidationError,
)
from .experiments import SweepGrid, SweepRecord, log_grid, run_sweep
from .influence import (
    HessianFactor,
    InfluenceRecord,
    SlopeResult,
    channel_max,
    hessian_factor,
    influence_values,
    input_gradient,
    pairwise_influence,
    slope_analytic,
    slope_finite_difference,
    slope_theta,
    top_influential,
)
from .learners import (
    FAMILIES,
    LearnerConfig,
    ModelState,
    ObjectiveEval,
    accuracy,
    dataset_loss,
    dataset_loss_grad,
    decision_scores,
    fit,
    objective,
    per_sample_loss_grads,
    predict,
    rbf_kernel,
)
from .rendering import render_curve_svg, render_heatmap_svg, render_saliency_svg
from .triggers import (
    PoisonedDataset,
    PoisonPlan,
    TriggerSpec,
    apply_trigger,
    default_label_map,
    make_backdoored_test,
    poison_dataset,
    register_pattern_generator,
    trigger_mask,
)

__all__ = [
    "__version__",
    "BackdoorLensError",
    "CapacityError",
    "ConditioningError",
    "ConfigError",
    "ConsistencyError",
    "ConvergenceError",
    "CurvePoint",
    "DatasetSplit",
    "DegenerateGeometryError",
    "FAMILIES",
    "FormatError",
    "GeometryError",
    "HessianFactor",
    "InfluenceRecord",
    "LabeledDataset",
    "LearnerConfig",
    "LearningCurve",
    "ModelState",
    "ObjectiveEval",
    "ParameterError",
    "ParseError",
    "PoisonPlan",
    "PoisonedDataset",
    "SchemaError",
    "ShapeError",
    "SlopeResult",
    "SweepGrid",
    "SweepRecord",
    "TriggerSpec",
    "ValidationError",
    "accuracy",
    "apply_trigger",
    "channel_max",
    "dataset_loss",
    "dataset_loss_grad",
    "decision_scores",
    "default_beta_grid",
    "default_label_map",
    "fit",
    "hessian_factor",
    "influence_values",
    "input_gradient",
    "load_feature_csv",
    "load_idx",
    "log_grid",
    "make_backdoored_test",
    "make_blobs",
    "objective",
    "pairwise_influence",
    "param_deviation",
    "per_sample_loss_grads",
    "poison_dataset",
    "predict",
    "rbf_kernel",
    "read_curve_csv",
    "register_pattern_generator",
    "render_curve_svg",
    "render_heatmap_svg",
    "render_saliency_svg",
    "run_sweep",
    "save_feature_csv",
    "slope_analytic",
    "slope_finite_difference",
    "slope_theta",
    "subset_binary",
    "top_influential",
    "trace_curve",
    "trigger_mask",
    "write_curve_csv",
]
