"""Standardization and principal-component reduction of log features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateData, SchemaMismatch


@dataclass
class HmmHyperparams:
    """Model-selection knobs; defaults follow the tuned configuration."""

    n_states: int = 3
    model_type: str = "gmmhmm"
    n_mix: int = 3
    covariance_type: str = "tied"
    is_lr: bool = True
    is_scalar: bool = True
    is_pca: bool = True
    n_decomp: int = 4

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.n_mix < 1:
            raise ValueError("n_mix must be >= 1")
        if self.model_type not in ("gmmhmm", "gaussian"):
            raise ValueError(f"unknown model_type {self.model_type!r}")
        if self.covariance_type != "tied":
            raise ValueError("only tied covariance is implemented")


@dataclass
class PreprocessModel:
    """Per-feature scaler plus PCA basis fitted on the training matrix."""

    feature_names: tuple
    kept: tuple                  # indices of non-constant features
    mean: np.ndarray             # over kept features
    std: np.ndarray
    pca_mean: np.ndarray
    components: np.ndarray       # (n_components, n_kept), orthonormal rows
    explained_variance: np.ndarray  # full eigenvalue spectrum, descending
    n_decomp: int
    use_scaler: bool = True
    use_pca: bool = True

    @property
    def kept_names(self):
        return tuple(self.feature_names[i] for i in self.kept)


_STD_FLOOR = 1e-12


def fit_preprocess(X, hp: HmmHyperparams, feature_names=None) -> PreprocessModel:
    """Fit scaler and PCA; constant columns are dropped, not an error."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DegenerateData("empty observation matrix")
    if np.isnan(X).any():
        raise ValueError("observation matrix contains NaN; impute first")
    n, p = X.shape
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(p))
    feature_names = tuple(feature_names)

    std_all = X.std(axis=0)
    kept = tuple(int(i) for i in np.nonzero(std_all > _STD_FLOOR)[0])
    if not kept:
        raise DegenerateData("all feature columns are constant")
    if hp.is_pca and len(kept) < hp.n_decomp:
        raise DegenerateData(
            f"{len(kept)} usable features < n_decomp={hp.n_decomp}"
        )
    Xk = X[:, kept]
    mean = Xk.mean(axis=0)
    std = Xk.std(axis=0)
    scaled = (Xk - mean) / std if hp.is_scalar else Xk.copy()

    pca_mean = scaled.mean(axis=0)
    centered = scaled - pca_mean
    cov = centered.T @ centered / max(1, n - 1)
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval = np.maximum(eigval[order], 0.0)
    components = eigvec[:, order].T
    # Deterministic sign: largest-magnitude loading of each component positive.
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    n_decomp = hp.n_decomp if hp.is_pca else len(kept)
    return PreprocessModel(
        feature_names=feature_names,
        kept=kept,
        mean=mean,
        std=std,
        pca_mean=pca_mean,
        components=components,
        explained_variance=eigval,
        n_decomp=n_decomp,
        use_scaler=hp.is_scalar,
        use_pca=hp.is_pca,
    )


def transform(pm: PreprocessModel, X, feature_names=None) -> np.ndarray:
    """Scale and project onto the retained components.

    When ``feature_names`` is given, columns are bound by name, so a
    permuted input matrix transforms identically.
    """
    X = np.asarray(X, dtype=float)
    if feature_names is not None:
        feature_names = tuple(feature_names)
        missing = [c for c in pm.feature_names if c not in feature_names]
        if missing:
            raise SchemaMismatch(f"missing feature columns {missing}",
                                 missing=missing)
        idx = [feature_names.index(c) for c in pm.feature_names]
        X = X[:, idx]
    elif X.shape[1] != len(pm.feature_names):
        raise SchemaMismatch(
            f"expected {len(pm.feature_names)} features, got {X.shape[1]}"
        )
    Xk = X[:, list(pm.kept)]
    scaled = (Xk - pm.mean) / pm.std if pm.use_scaler else Xk
    centered = scaled - pm.pca_mean
    if not pm.use_pca:
        return centered
    return centered @ pm.components[: pm.n_decomp].T


def inverse_transform(pm: PreprocessModel, Z) -> np.ndarray:
    """Back-project reduced rows into the scaled feature space."""
    Z = np.asarray(Z, dtype=float)
    return Z @ pm.components[: Z.shape[1]] + pm.pca_mean


def pca_factor_loadings(pm: PreprocessModel, top_k: int = 10):
    """Per-component strongest signed loadings.

    Returns one entry per retained component with the top_k most positive
    and top_k most negative feature loadings (name, value).
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    names = pm.kept_names
    out = []
    for comp_idx in range(pm.n_decomp):
        row = pm.components[comp_idx]
        order = np.argsort(row)
        negative = [
            (names[i], float(row[i]))
            for i in order[:top_k] if row[i] < 0
        ]
        positive = [
            (names[i], float(row[i]))
            for i in order[::-1][:top_k] if row[i] > 0
        ]
        out.append({
            "component": comp_idx,
            "explained_variance": float(pm.explained_variance[comp_idx]),
            "positive": positive,
            "negative": negative,
        })
    return out
