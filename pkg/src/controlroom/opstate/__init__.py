"""Operator/plant joint state estimation from process and HMI logs."""

from .failure import (
    FailureAlert,
    episode_feature_matrix,
    eval_accuracy,
    first_alert_time,
    fit_failure_model,
    identify_failure_state,
    late_occupancy_separation,
    predict_failure,
    realtime_feature_columns,
)
from .hmm import (
    HmmModel,
    OnlineFilter,
    fit_hmm,
    forward_filter,
    sequence_loglik,
    state_posterior,
)
from .model_io import load_model, save_model, write_training_report
from .preprocess import (
    HmmHyperparams,
    PreprocessModel,
    fit_preprocess,
    inverse_transform,
    pca_factor_loadings,
    transform,
)

__all__ = [
    "FailureAlert",
    "HmmHyperparams",
    "HmmModel",
    "OnlineFilter",
    "PreprocessModel",
    "episode_feature_matrix",
    "eval_accuracy",
    "first_alert_time",
    "fit_failure_model",
    "fit_hmm",
    "fit_preprocess",
    "late_occupancy_separation",
    "forward_filter",
    "identify_failure_state",
    "inverse_transform",
    "load_model",
    "pca_factor_loadings",
    "predict_failure",
    "realtime_feature_columns",
    "save_model",
    "sequence_loglik",
    "state_posterior",
    "transform",
    "write_training_report",
]
