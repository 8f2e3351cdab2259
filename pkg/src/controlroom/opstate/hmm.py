"""Left-right GMM-HMM trained by expectation-maximization.

Emissions are Gaussian mixtures sharing one tied covariance across all
states and mixtures.  The left-right constraint zeroes every backward
transition at initialization and re-zeroes it after each M-step, so no
backward mass is ever reintroduced.  Forward filtering uses per-step
scaling; log-likelihoods come from the accumulated scale factors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmNonConvergence, NumericalUnderflow, SingularCovariance
from .preprocess import HmmHyperparams, PreprocessModel

_EM_TOL = 1e-4
_EM_MAX_ITER = 200
_COV_REG = 1e-6


@dataclass
class HmmModel:
    hp: HmmHyperparams
    initial: np.ndarray          # (n,)
    transition: np.ndarray       # (n, n)
    weights: np.ndarray          # (n, m) mixture weights
    means: np.ndarray            # (n, m, d)
    covariance: np.ndarray       # (d, d), tied
    feature_names: tuple = ()
    preprocess: PreprocessModel = None
    converged: bool = True
    loglik_trace: list = field(default_factory=list)
    failure_state: int = None
    feature_stride: int = 1      # log ticks per observation row

    @property
    def n_states(self):
        return self.initial.shape[0]


def _chol_logdet(cov, d):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None, None
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return chol, logdet


def _log_gaussians(X, means_flat, chol, logdet):
    """Log N(x; mu_k, Sigma) for every row x and flattened component k.

    With the Cholesky factor L, the Mahalanobis term is ||L^-1 diff||^2,
    computed by forward substitution.
    """
    d = X.shape[1]
    diff = X[:, None, :] - means_flat[None, :, :]      # (T, K, d)
    T, K, _ = diff.shape
    flat = diff.reshape(T * K, d).T                     # (d, T*K)
    z = np.zeros_like(flat)
    for i in range(d):
        z[i] = (flat[i] - chol[i, :i] @ z[:i]) / chol[i, i]
    maha = (z ** 2).sum(axis=0).reshape(T, K)
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def log_emissions(model: HmmModel, X):
    """Per-state log emission and per-component log joint.

    Returns (logb (T, n), logcomp (T, n, m)) with
    logcomp[t, i, m] = log w_im + log N(x_t; mu_im, Sigma).
    """
    n, m, d = model.means.shape
    chol, logdet = _chol_logdet(model.covariance, d)
    if chol is None:
        raise SingularCovariance("tied covariance is not positive-definite")
    log_n = _log_gaussians(np.asarray(X, dtype=float),
                           model.means.reshape(n * m, d), chol, logdet)
    log_n = log_n.reshape(-1, n, m)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    logcomp = logw[None, :, :] + log_n
    logb = _logsumexp(logcomp, axis=2)
    return logb, logcomp


def _logsumexp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def forward_filter(model: HmmModel, X):
    """Scaled forward pass.

    Returns (filtered (T, n), loglik, prediction (n,)): filtered rows are
    P(q_t | x_1..t), prediction is the one-step distribution
    P(q_{T+1} | x_1..T) = filtered[-1] @ A.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    logb, _ = log_emissions(model, X)
    T, n = logb.shape
    # Per-row max subtraction keeps at least one emission weight at 1.
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    alpha = np.zeros((T, n))
    scales = np.zeros(T)
    a = model.initial * b[0]
    s = a.sum()
    if s <= 0.0 or not np.isfinite(s):
        raise NumericalUnderflow("forward scaling failed at t=0")
    alpha[0] = a / s
    scales[0] = s
    for t in range(1, T):
        a = (alpha[t - 1] @ model.transition) * b[t]
        s = a.sum()
        if s <= 0.0 or not np.isfinite(s):
            raise NumericalUnderflow(f"forward scaling failed at t={t}")
        alpha[t] = a / s
        scales[t] = s
    loglik = float(np.log(scales).sum() + shift.sum())
    prediction = alpha[-1] @ model.transition
    return alpha, loglik, prediction


def state_posterior(model: HmmModel, prefix):
    """Filtered posterior over hidden states plus the one-step prediction."""
    filtered, _loglik, prediction = forward_filter(model, prefix)
    return filtered, prediction


def sequence_loglik(model: HmmModel, X):
    _, loglik, _ = forward_filter(model, X)
    return loglik


class OnlineFilter:
    """Incremental forward filter; one instance per live episode."""

    def __init__(self, model: HmmModel):
        self.model = model
        self.filtered = None

    def update(self, x_row):
        """Absorb one observation row; returns P(q_t | x_1..t)."""
        x = np.atleast_2d(np.asarray(x_row, dtype=float))
        logb, _ = log_emissions(self.model, x)
        b = np.exp(logb[0] - logb[0].max())
        if self.filtered is None:
            a = self.model.initial * b
        else:
            a = (self.filtered @ self.model.transition) * b
        s = a.sum()
        if s <= 0.0 or not np.isfinite(s):
            raise NumericalUnderflow("online forward scaling failed")
        self.filtered = a / s
        return self.filtered

    def predict_next(self):
        if self.filtered is None:
            return self.model.initial.copy()
        return self.filtered @ self.model.transition

    def reset(self):
        self.filtered = None


def _forward_backward(model, X):
    """Scaled forward-backward; returns gamma, xi_sum, mix_post, loglik."""
    X = np.asarray(X, dtype=float)
    logb, logcomp = log_emissions(model, X)
    T, n = logb.shape
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])

    alpha = np.zeros((T, n))
    c = np.zeros(T)
    a = model.initial * b[0]
    c[0] = a.sum()
    if c[0] <= 0:
        raise NumericalUnderflow("forward scaling failed at t=0")
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ model.transition) * b[t]
        c[t] = a.sum()
        if c[t] <= 0:
            raise NumericalUnderflow(f"forward scaling failed at t={t}")
        alpha[t] = a / c[t]

    beta = np.zeros((T, n))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (model.transition @ (b[t + 1] * beta[t + 1])) / c[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    # xi_sum = sum_t alpha_t (x) (b_{t+1} beta_{t+1} / c_{t+1}), masked by A.
    weighted = b[1:] * beta[1:] / c[1:, None]
    xi_sum = model.transition * (alpha[:-1].T @ weighted)

    # Mixture responsibilities within each state.
    logb_safe = logb[:, :, None]
    with np.errstate(invalid="ignore"):
        mix_post = np.exp(logcomp - logb_safe) * gamma[:, :, None]
    mix_post = np.nan_to_num(mix_post)

    loglik = float(np.log(c).sum() + shift.sum())
    return gamma, xi_sum, mix_post, loglik


def _e_step_batched(model, X, lengths):
    """E-step over all sequences, batching equal-length sequences.

    Returns (gamma rows aligned with X, first-row gammas per sequence,
    total xi sum, mixture responsibilities aligned with X, log-likelihood).
    """
    n = model.initial.shape[0]
    logb_all, logcomp_all = log_emissions(model, X)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    gamma_cat = np.zeros((X.shape[0], n))
    mix_cat = np.zeros_like(logcomp_all)
    first_gammas = np.zeros((len(lengths), n))
    xi_total = np.zeros((n, n))
    total_ll = 0.0

    by_length = {}
    for si, T in enumerate(lengths):
        by_length.setdefault(T, []).append(si)

    A = model.transition
    for T, seq_ids in by_length.items():
        B = len(seq_ids)
        logb = np.stack([logb_all[offsets[s]:offsets[s] + T] for s in seq_ids])
        shift = logb.max(axis=2)                      # (B, T)
        b = np.exp(logb - shift[:, :, None])          # (B, T, n)

        alpha = np.zeros((B, T, n))
        c = np.zeros((B, T))
        a = model.initial[None, :] * b[:, 0]
        c[:, 0] = a.sum(axis=1)
        if np.any(c[:, 0] <= 0):
            raise NumericalUnderflow("forward scaling failed at t=0")
        alpha[:, 0] = a / c[:, 0, None]
        for t in range(1, T):
            a = (alpha[:, t - 1] @ A) * b[:, t]
            c[:, t] = a.sum(axis=1)
            if np.any(c[:, t] <= 0):
                raise NumericalUnderflow(f"forward scaling failed at t={t}")
            alpha[:, t] = a / c[:, t, None]

        beta = np.zeros((B, T, n))
        beta[:, -1] = 1.0
        for t in range(T - 2, -1, -1):
            beta[:, t] = ((b[:, t + 1] * beta[:, t + 1]) @ A.T) / c[:, t + 1, None]

        gamma = alpha * beta
        gamma /= gamma.sum(axis=2, keepdims=True)

        weighted = b[:, 1:] * beta[:, 1:] / c[:, 1:, None]
        xi_total += A * np.einsum("bti,btj->ij", alpha[:, :-1], weighted)
        total_ll += float(np.log(c).sum() + shift.sum())

        for bi, s in enumerate(seq_ids):
            sl = slice(offsets[s], offsets[s] + T)
            gamma_cat[sl] = gamma[bi]
            first_gammas[s] = gamma[bi, 0]
            logb_seq = logb[bi][:, :, None]
            with np.errstate(invalid="ignore"):
                mix = np.exp(logcomp_all[sl] - logb_seq) * gamma[bi][:, :, None]
            mix_cat[sl] = np.nan_to_num(mix)

    return gamma_cat, first_gammas, xi_total, mix_cat, total_ll


def _lr_mask(n):
    return np.triu(np.ones((n, n)))


def _kmeans(X, k, rng, iters=10):
    """Tiny Lloyd's k-means for mixture-mean initialization."""
    n = X.shape[0]
    centers = X[rng.choice(n, size=min(k, n), replace=False)].copy()
    if centers.shape[0] < k:
        centers = np.vstack([centers] * (k // centers.shape[0] + 1))[:k]
    for _ in range(iters):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for j in range(k):
            pts = X[assign == j]
            if len(pts):
                centers[j] = pts.mean(axis=0)
    return centers


def _init_model(X, lengths, hp, rng, init="chunks") -> HmmModel:
    n, m = hp.n_states, (hp.n_mix if hp.model_type == "gmmhmm" else 1)
    d = X.shape[1]
    if hp.is_lr:
        initial = np.zeros(n)
        initial[0] = 1.0
        transition = _lr_mask(n)
    else:
        initial = np.full(n, 1.0 / n)
        transition = np.ones((n, n))
    transition = transition / transition.sum(axis=1, keepdims=True)

    means = np.zeros((n, m, d))
    if init == "random":
        # Random observed rows; restarts explore different basins.
        idx = rng.choice(X.shape[0], size=min(n * m, X.shape[0]),
                         replace=False)
        rows = X[idx]
        rows = np.vstack([rows] * (n * m // len(rows) + 1))[: n * m]
        means = rows.reshape(n, m, d).copy()
    else:
        # Contiguous-chunk assignment respects the left-right topology:
        # each sequence contributes its k-th segment to state k.
        chunks = [[] for _ in range(n)]
        offset = 0
        for T in lengths:
            seq = X[offset:offset + T]
            edges = np.linspace(0, T, n + 1).astype(int)
            for i in range(n):
                part = seq[edges[i]:edges[i + 1]]
                if len(part):
                    chunks[i].append(part)
            offset += T
        for i in range(n):
            data = np.vstack(chunks[i]) if chunks[i] else X
            means[i] = _kmeans(data, m, rng)
    weights = np.full((n, m), 1.0 / m)
    cov = np.cov(X, rowvar=False)
    cov = np.atleast_2d(cov) + _COV_REG * np.eye(d)
    return HmmModel(hp=hp, initial=initial, transition=transition,
                    weights=weights, means=means, covariance=cov)


def fit_hmm(X, lengths, hp: HmmHyperparams, seed: int = 0,
            tol: float = _EM_TOL, max_iter: int = _EM_MAX_ITER,
            strict: bool = False, init: str = "chunks",
            init_model: HmmModel = None) -> HmmModel:
    """Baum-Welch until the log-likelihood gain drops below ``tol``.

    Non-convergence within ``max_iter`` returns the best model with
    ``converged=False`` (and a warning) unless ``strict`` is set.
    ``init_model`` resumes EM from an existing model (its likelihood
    trace is carried over).
    """
    X = np.asarray(X, dtype=float)
    lengths = list(lengths)
    if sum(lengths) != X.shape[0]:
        raise ValueError("lengths do not sum to the number of rows")
    n, m = hp.n_states, (hp.n_mix if hp.model_type == "gmmhmm" else 1)
    if X.shape[0] < n * m:
        raise ValueError("need at least n_states * n_mix observations")
    rng = np.random.default_rng(seed)
    if init_model is not None:
        model = HmmModel(hp=hp, initial=init_model.initial.copy(),
                         transition=init_model.transition.copy(),
                         weights=init_model.weights.copy(),
                         means=init_model.means.copy(),
                         covariance=init_model.covariance.copy(),
                         loglik_trace=list(init_model.loglik_trace))
    else:
        model = _init_model(X, lengths, hp, rng, init=init)
    d = X.shape[1]
    lr_mask = _lr_mask(n) if hp.is_lr else np.ones((n, n))

    prev_ll = -np.inf
    for _ in range(max_iter):
        gamma_cat, first_gammas, xi_total, mix_cat, ll = _e_step_batched(
            model, X, lengths)
        model.loglik_trace.append(ll)

        # With a left-right start (pi = e0) the zero entries stay zero:
        # gamma[0] inherits alpha[0]'s zeros, so no renormalization trick
        # is needed to preserve the constraint.
        initial = first_gammas.mean(axis=0)
        initial = np.maximum(initial, 0.0)
        initial /= initial.sum()

        transition = xi_total * lr_mask  # re-zero forbidden entries
        row_sums = transition.sum(axis=1, keepdims=True)
        stay = np.eye(n)
        transition = np.where(row_sums > 0, transition / np.where(row_sums > 0, row_sums, 1.0), stay)

        occ = mix_cat.sum(axis=0)                     # (n, m)
        state_occ = occ.sum(axis=1, keepdims=True)    # (n, 1)
        weights = np.where(state_occ > 0, occ / np.where(state_occ > 0, state_occ, 1.0),
                           model.weights)
        means = model.means.copy()
        num = np.einsum("tim,td->imd", mix_cat, X)
        for i in range(n):
            for j in range(m):
                if occ[i, j] > 1e-10:
                    means[i, j] = num[i, j] / occ[i, j]
        diff = X[:, None, None, :] - means[None, :, :, :]
        cov = np.einsum("tim,timd,time->de", mix_cat, diff, diff) / max(occ.sum(), 1e-12)
        cov = 0.5 * (cov + cov.T)
        chol, _ = _chol_logdet(cov, d)
        reg = _COV_REG
        while chol is None and reg <= 1e-2:
            cov = cov + reg * np.eye(d)
            chol, _ = _chol_logdet(cov, d)
            reg *= 100.0
        if chol is None:
            raise SingularCovariance("covariance update not repairable")

        model = HmmModel(hp=hp, initial=initial, transition=transition,
                         weights=weights, means=means, covariance=cov,
                         loglik_trace=model.loglik_trace)

        if np.isfinite(prev_ll) and ll - prev_ll < tol:
            model.converged = True
            return model
        prev_ll = ll

    model.converged = False
    if strict:
        raise EmNonConvergence(f"no convergence in {max_iter} iterations")
    warnings.warn("EM did not converge; returning best-so-far model",
                  RuntimeWarning, stacklevel=2)
    return model
