"""Matplotlib renders for the CLI report paths.

Every reporting subcommand drops PNG figures next to its delimited
output.  The analytics module itself stays numeric; only this module
touches matplotlib.
"""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def episode_timeline(log, out_dir, name="episode_timeline.png"):
    """Pressure/temperature traces with alarm annunciations marked."""
    t = [r.t for r in log.records]
    pressure = [r.values.get("PSERB_1", math.nan) for r in log.records]
    temp_proxy = [r.values.get("MVAPrec3_1", math.nan) for r in log.records]
    human = [r.values.get("Human", math.nan) for r in log.records]
    srla = [r.values.get("SRLA", math.nan) for r in log.records]

    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    axes[0].plot(t, pressure, lw=1.0, color="tab:blue")
    axes[0].set_ylabel("tank pressure [bar]")
    axes[1].plot(t, temp_proxy, lw=1.0, color="tab:red")
    axes[1].set_ylabel("REC3 steam [kg/h]")
    axes[2].plot(t, srla, lw=1.0, color="tab:green", label="suggested")
    axes[2].plot(t, human, lw=1.0, color="tab:purple", label="human")
    axes[2].set_ylabel("control value")
    axes[2].set_xlabel("time [s]")
    axes[2].legend(loc="best", fontsize=8)
    for ev in log.alarm_events:
        if ev.kind == "annunciated":
            color = "crimson" if ev.severity == "critical" else "orange"
            for ax in axes:
                ax.axvline(ev.t, color=color, alpha=0.35, lw=0.8)
    axes[0].set_title(
        f"{log.participant_id} {log.scenario_id} ({log.group})"
    )
    return _save(fig, out_dir, name)


def learning_curve(curve, out_dir, name="learning_curve.png", label=""):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(len(curve)), curve, lw=1.0)
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    ax.set_title(f"training return {label}".strip())
    return _save(fig, out_dir, name)


def loglik_trace(trace, out_dir, name="em_loglik.png"):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(1, len(trace) + 1), trace, marker=".", lw=1.0)
    ax.set_xlabel("EM iteration")
    ax.set_ylabel("log-likelihood")
    ax.set_title("EM training trace")
    return _save(fig, out_dir, name)


def failure_posterior(alerts, out_dir, name, consequence_t=None):
    """Per-episode failure-state posterior with the fired alert marked."""
    t = [a.t for a in alerts]
    p = [a.failure_state_posterior for a in alerts]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(t, p, lw=1.0, color="tab:red")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("P(failure state)")
    fired = [a.t for a in alerts if a.fired]
    if fired:
        ax.axvline(fired[0], color="black", ls="--", lw=1.0, label="alert")
    if consequence_t is not None:
        ax.axvline(consequence_t, color="crimson", ls=":", lw=1.2,
                   label="consequence")
    if fired or consequence_t is not None:
        ax.legend(loc="best", fontsize=8)
    return _save(fig, out_dir, name)


def scree_plot(factor_model, out_dir, name="factor_scree.png"):
    ev = factor_model.eigenvalues
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(np.arange(1, len(ev) + 1), ev, marker="o", lw=1.0)
    axes[0].axvline(factor_model.elbow, color="crimson", ls="--",
                    label=f"elbow = {factor_model.elbow}")
    axes[0].set_xlabel("factor")
    axes[0].set_ylabel("eigenvalue")
    axes[0].set_title("scree")
    axes[0].legend(fontsize=8)
    cv = factor_model.cumulative_variance
    axes[1].plot(np.arange(1, len(cv) + 1), cv, marker="o", lw=1.0)
    axes[1].axhline(0.5, color="gray", ls=":", lw=0.8)
    axes[1].set_xlabel("factors retained")
    axes[1].set_ylabel("cumulative variance")
    axes[1].set_title("cumulative explained variance")
    return _save(fig, out_dir, name)


def correlation_heatmap(table, out_dir, name="correlation_heatmap.png",
                        skip=("participant_id", "group", "scenario_id")):
    import pandas as pd

    numeric = table[[c for c in table.columns
                     if c not in skip and pd.api.types.is_numeric_dtype(table[c])]]
    corr = numeric.corr()
    fig, ax = plt.subplots(figsize=(0.45 * len(corr) + 2, 0.45 * len(corr) + 1.5))
    im = ax.imshow(corr.to_numpy(), vmin=-1, vmax=1, cmap="coolwarm")
    ax.set_xticks(range(len(corr)), corr.columns, rotation=90, fontsize=7)
    ax.set_yticks(range(len(corr)), corr.columns, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title("metric correlations")
    return _save(fig, out_dir, name)


def group_radar(report_bundle, out_dir, name="group_radar.png", max_metrics=14):
    """Polar comparison of scaled group means."""
    radar = report_bundle["radar"]
    labels = report_bundle["labels"]
    metrics = [m for m, v in radar.items()
               if all(v[g] is not None for g in labels)][:max_metrics]
    if len(metrics) < 3:
        return None
    angles = np.linspace(0, 2 * np.pi, len(metrics), endpoint=False)
    fig, ax = plt.subplots(figsize=(7, 7), subplot_kw={"projection": "polar"})
    for group, color in zip(labels, ("tab:blue", "tab:red")):
        values = [radar[m][group] for m in metrics]
        ax.plot(np.append(angles, angles[0]), values + [values[0]],
                color=color, lw=1.2, label=group)
        ax.fill(np.append(angles, angles[0]), values + [values[0]],
                color=color, alpha=0.12)
    ax.set_xticks(angles)
    ax.set_xticklabels(metrics, fontsize=7)
    ax.set_title("group comparison (scaled means)")
    ax.legend(loc="upper right", bbox_to_anchor=(1.25, 1.05), fontsize=8)
    return _save(fig, out_dir, name)


def factor_loadings_bars(loadings_report, out_dir,
                         name_prefix="pca_loadings_pc"):
    """Top signed loadings per component, one figure each."""
    paths = []
    for entry in loadings_report:
        items = entry["negative"][::-1] + entry["positive"]
        if not items:
            continue
        names = [n for n, _v in items]
        values = [v for _n, v in items]
        fig, ax = plt.subplots(figsize=(7, 0.3 * len(items) + 1.5))
        colors = ["tab:red" if v < 0 else "tab:blue" for v in values]
        ax.barh(range(len(items)), values, color=colors)
        ax.set_yticks(range(len(items)), names, fontsize=7)
        ax.axvline(0, color="black", lw=0.8)
        ax.set_title(f"component {entry['component'] + 1} loadings")
        paths.append(_save(fig, out_dir,
                           f"{name_prefix}{entry['component'] + 1}.png"))
    return paths
