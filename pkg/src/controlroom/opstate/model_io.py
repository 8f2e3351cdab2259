"""Versioned on-disk container for the operator-state model."""

from __future__ import annotations

import json

import numpy as np

from .hmm import HmmModel
from .preprocess import HmmHyperparams, PreprocessModel

FORMAT_VERSION = 1


def save_model(model: HmmModel, path):
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "hyperparams_json": np.array(json.dumps(vars(model.hp))),
        "initial": model.initial,
        "transition": model.transition,
        "weights": model.weights,
        "means": model.means,
        "covariance": model.covariance,
        "feature_names": np.array(list(model.feature_names)),
        "converged": np.array(model.converged),
        "loglik_trace": np.array(model.loglik_trace, dtype=float),
        "failure_state": np.array(-1 if model.failure_state is None
                                  else model.failure_state),
        "feature_stride": np.array(model.feature_stride),
    }
    pm = model.preprocess
    arrays["has_preprocess"] = np.array(pm is not None)
    if pm is not None:
        arrays.update({
            "pm_feature_names": np.array(list(pm.feature_names)),
            "pm_kept": np.array(list(pm.kept), dtype=int),
            "pm_mean": pm.mean,
            "pm_std": pm.std,
            "pm_pca_mean": pm.pca_mean,
            "pm_components": pm.components,
            "pm_explained_variance": pm.explained_variance,
            "pm_n_decomp": np.array(pm.n_decomp),
            "pm_use_scaler": np.array(pm.use_scaler),
            "pm_use_pca": np.array(pm.use_pca),
        })
    np.savez(path, **arrays)


def load_model(path) -> HmmModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {version}")
        hp = HmmHyperparams(**json.loads(str(data["hyperparams_json"])))
        pm = None
        if bool(data["has_preprocess"]):
            pm = PreprocessModel(
                feature_names=tuple(str(s) for s in data["pm_feature_names"]),
                kept=tuple(int(i) for i in data["pm_kept"]),
                mean=data["pm_mean"],
                std=data["pm_std"],
                pca_mean=data["pm_pca_mean"],
                components=data["pm_components"],
                explained_variance=data["pm_explained_variance"],
                n_decomp=int(data["pm_n_decomp"]),
                use_scaler=bool(data["pm_use_scaler"]),
                use_pca=bool(data["pm_use_pca"]),
            )
        failure_state = int(data["failure_state"])
        model = HmmModel(
            hp=hp,
            initial=data["initial"],
            transition=data["transition"],
            weights=data["weights"],
            means=data["means"],
            covariance=data["covariance"],
            feature_names=tuple(str(s) for s in data["feature_names"]),
            preprocess=pm,
            converged=bool(data["converged"]),
            loglik_trace=[float(x) for x in data["loglik_trace"]],
            failure_state=None if failure_state < 0 else failure_state,
            feature_stride=int(data["feature_stride"])
            if "feature_stride" in data else 1,
        )
    return model


def write_training_report(path, model: HmmModel, extra=None):
    """JSON report: likelihood trace, occupancy summary, chosen state."""
    report = {
        "converged": model.converged,
        "n_iterations": len(model.loglik_trace),
        "final_loglik": model.loglik_trace[-1] if model.loglik_trace else None,
        "loglik_trace": model.loglik_trace,
        "initial": model.initial.tolist(),
        "transition": model.transition.tolist(),
        "failure_state": model.failure_state,
        "hyperparams": vars(model.hp),
    }
    if extra:
        report.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report
