"""Failure-state identification and real-time alerting on log streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientLabels, LabelMismatch
from .hmm import HmmModel, state_posterior

DEFAULT_TAU = 0.7
DEFAULT_K = 5

# Columns the live monitor may consume: everything in the episode log
# except the support system's own outputs.
_EXCLUDED_REALTIME = ("SRLA", "SRLA_vs_Human")


def realtime_feature_columns(columns):
    """Process variables, alarm indicators, and HMI counters from a log."""
    return [c for c in columns if c not in _EXCLUDED_REALTIME]


def episode_feature_matrix(log, feature_columns):
    """Feature rows for one episode; not-yet-set values count as zero."""
    from ..telemetry import concat_episodes

    matrix, _ = concat_episodes([log], feature_columns)
    return np.nan_to_num(matrix, nan=0.0)


@dataclass(frozen=True)
class FailureAlert:
    t: float
    failure_state_posterior: float
    fired: bool


def identify_failure_state(model: HmmModel, episodes, labels,
                           late_fraction: float = 0.25) -> int:
    """The hidden state whose late-episode occupancy separates failures.

    ``episodes`` are preprocessed observation matrices aligned with
    ``labels``.  Occupancy is the mean filtered posterior over the last
    ``late_fraction`` of ticks; the state maximizing (mean over failed -
    mean over non-failed) wins, ties to the lowest index.
    """
    failed_occ, ok_occ = [], []
    for X, label in zip(episodes, labels):
        filtered, _ = state_posterior(model, X)
        tail = max(1, int(np.ceil(late_fraction * filtered.shape[0])))
        occupancy = filtered[-tail:].mean(axis=0)
        (failed_occ if label.failed else ok_occ).append(occupancy)
    if not failed_occ or not ok_occ:
        raise InsufficientLabels(
            "need at least one failed and one non-failed episode"
        )
    separation = np.mean(failed_occ, axis=0) - np.mean(ok_occ, axis=0)
    return int(np.argmax(separation))


def predict_failure(model: HmmModel, failure_state: int, stream,
                    tau: float = DEFAULT_TAU, k: int = DEFAULT_K,
                    times=None):
    """Debounced posterior-threshold alert over one episode's stream.

    The alert fires at the first tick where P(q_t = failure_state) has
    been >= tau for k consecutive ticks; at most one fired alert per
    episode.  ``times`` maps stream rows to episode clock values (row
    index otherwise).  Returns the full per-tick FailureAlert series.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must be in [0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    stream = np.asarray(stream, dtype=float)
    if times is None:
        times = np.arange(stream.shape[0], dtype=float)
    filtered, _ = state_posterior(model, stream)
    series = filtered[:, failure_state]
    alerts = []
    run = 0
    fired = False
    for t, p in zip(times, series):
        if p >= tau:
            run += 1
        else:
            run = 0
        fire_now = not fired and run >= k
        if fire_now:
            fired = True
        alerts.append(FailureAlert(float(t), float(p), fire_now))
    return alerts


def first_alert_time(alerts):
    for a in alerts:
        if a.fired:
            return a.t
    return None


def late_occupancy_separation(model: HmmModel, episodes, labels,
                              late_fraction: float = 0.25):
    """Per-state (failed - non-failed) late-occupancy gap."""
    failed_occ, ok_occ = [], []
    for X, label in zip(episodes, labels):
        filtered, _ = state_posterior(model, X)
        tail = max(1, int(np.ceil(late_fraction * filtered.shape[0])))
        occupancy = filtered[-tail:].mean(axis=0)
        (failed_occ if label.failed else ok_occ).append(occupancy)
    if not failed_occ or not ok_occ:
        raise InsufficientLabels(
            "need at least one failed and one non-failed episode"
        )
    return np.mean(failed_occ, axis=0) - np.mean(ok_occ, axis=0)


def _alert_accuracy_on(model, failure_state, episodes, labels, tau, k):
    correct = 0
    for X, label in zip(episodes, labels):
        alerts = predict_failure(model, failure_state, X, tau=tau, k=k)
        fired = first_alert_time(alerts) is not None
        correct += (fired == label.failed)
    return correct / len(episodes)


def fit_failure_model(Z, lengths, labels, hp, seed=0, restarts=4,
                      probe_iters=20, max_iter=80, tol=1e-3,
                      tau=DEFAULT_TAU, k=DEFAULT_K):
    """EM with class-aware restart selection.

    EM is unsupervised and multimodal: with mixture emissions, phase-only
    basins absorb the class differences (everyone traverses the same
    chain, classes differing only in dwell time), which a threshold alert
    cannot separate.  Each restart runs a short probe from random-row
    means and is scored by the deployed criterion - alert accuracy on the
    training episodes - with late-occupancy separation and log-likelihood
    as tie-breakers.  The winner continues to convergence and is kept
    only if continuation did not erode its alert accuracy.  Labels steer
    model selection, never the EM updates themselves.

    Returns (model, separation vector); model.failure_state is set.
    """
    import warnings as _warnings

    from .hmm import fit_hmm

    episodes = []
    offset = 0
    for n in lengths:
        episodes.append(Z[offset:offset + n])
        offset += n

    def scored(model):
        # One forward pass per episode feeds the state choice, the
        # separation diagnostic, and the alert-accuracy score.
        filtered = [state_posterior(model, X)[0] for X in episodes]
        failed_occ, ok_occ = [], []
        for f, label in zip(filtered, labels):
            tail = max(1, int(np.ceil(0.25 * f.shape[0])))
            occ = f[-tail:].mean(axis=0)
            (failed_occ if label.failed else ok_occ).append(occ)
        if not failed_occ or not ok_occ:
            raise InsufficientLabels(
                "need at least one failed and one non-failed episode"
            )
        sep = np.mean(failed_occ, axis=0) - np.mean(ok_occ, axis=0)
        fs = int(np.argmax(sep))
        correct = 0
        for f, label in zip(filtered, labels):
            series = f[:, fs]
            run = best = 0
            for p in series:
                run = run + 1 if p >= tau else 0
                best = max(best, run)
            correct += ((best >= k) == label.failed)
        acc = correct / len(episodes)
        return (acc, float(sep.max()), model.loglik_trace[-1]), fs, sep

    best = None
    for r in range(restarts):
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", RuntimeWarning)  # probe cutoffs
            probe = fit_hmm(Z, lengths, hp, seed=seed + 17 * r, tol=tol,
                            max_iter=probe_iters, init="random")
        score, fs, sep = scored(probe)
        if best is None or score > best[0]:
            best = (score, probe, fs, sep)

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", RuntimeWarning)
        final = fit_hmm(Z, lengths, hp, seed=seed, tol=tol,
                        max_iter=max_iter, init_model=best[1])
    final_score, final_fs, final_sep = scored(final)
    if final_score[0] >= best[0][0]:
        final.failure_state = final_fs
        return final, final_sep
    model = best[1]
    model.failure_state = best[2]
    return model, best[3]


def eval_accuracy(alert_times: dict, labels: dict, consequence_times: dict = None):
    """Episode-level confusion statistics for fired-vs-failed.

    ``alert_times`` maps participant id to the fired-alert time (None if
    no alert); ``labels`` maps id to FailureLabel.  Lead time uses
    ``consequence_times`` (consequence minus alert) over true positives.
    """
    if set(alert_times) != set(labels):
        raise LabelMismatch(
            f"alerts cover {sorted(alert_times)} but labels cover {sorted(labels)}"
        )
    tp = fp = tn = fn = 0
    leads = []
    for pid, label in labels.items():
        fired = alert_times[pid] is not None
        if label.failed and fired:
            tp += 1
            if consequence_times and consequence_times.get(pid) is not None:
                leads.append(consequence_times[pid] - alert_times[pid])
        elif label.failed and not fired:
            fn += 1
        elif not label.failed and fired:
            fp += 1
        else:
            tn += 1
    n = tp + fp + tn + fn
    return {
        "n": n,
        "accuracy": (tp + tn) / n if n else float("nan"),
        "precision": tp / (tp + fp) if (tp + fp) else float("nan"),
        "recall": tp / (tp + fn) if (tp + fn) else float("nan"),
        "median_lead_time": float(np.median(leads)) if leads else None,
        "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    }
