"""Offline statistics over participant episodes.

Reproduces the study pipeline: per-TOI normalization, MinMax scaling
within each scenario, per-participant aggregation, questionnaire indexes,
operational and behavioral measures, the suggestion-vs-human error, a
thresholded correlation graph, and factor analysis with elbow selection.
Everything here emits numeric tables; rendering lives elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    CohortTooSmall,
    EmptyGroup,
    MissingDimension,
    NoControlEvents,
    NoCriticalAlarm,
    NoSuggestionTicks,
    SingularCorrelation,
    ZeroBaseline,
)
from .plantsim import EXPERT_VALUES

SCENARIO_PRIMARY_ACTUATOR = {
    "s1": "MmanNit_1",
    "s2": "MWpopOld_1",
    "s3": "MCReatTempOld_1",
}

CONSEQUENCE_ORDER = {
    "safe_state": 0,
    "air_impurity": 1,
    "plant_shutdown": 2,
    "reactor_overheating": 3,
}

STATUS_ORDER = {"optimal": 0, "good": 1, "poor": 2}


# ---------------------------------------------------------------------------
# Normalization and aggregation
# ---------------------------------------------------------------------------

def normalize_toi(metric_in_toi: float, metric_in_baseline: float) -> float:
    """Ratio of a metric inside a window to its baseline-window value."""
    if metric_in_baseline == 0:
        raise ZeroBaseline("baseline metric is zero")
    return metric_in_toi / metric_in_baseline


def minmax_by_scenario(table: pd.DataFrame, group_col: str = "scenario_id",
                       skip=("participant_id", "group")) -> pd.DataFrame:
    """Scale each numeric column to [0, 1] within each scenario group.

    Constant columns map to 0 within their group.
    """
    out = table.copy()
    numeric = [
        c for c in table.columns
        if c != group_col and c not in skip
        and pd.api.types.is_numeric_dtype(table[c])
    ]
    out[numeric] = out[numeric].astype(float)
    for _, idx in table.groupby(group_col).groups.items():
        for c in numeric:
            col = out.loc[idx, c].astype(float)
            lo, hi = col.min(), col.max()
            if pd.isna(lo) or hi == lo:
                out.loc[idx, c] = col * 0.0
            else:
                out.loc[idx, c] = (col - lo) / (hi - lo)
    return out


def aggregate_participant(table: pd.DataFrame,
                          id_col: str = "participant_id") -> pd.DataFrame:
    """One row per participant: the mean over scenarios, ignoring missing."""
    numeric = [c for c in table.columns
               if pd.api.types.is_numeric_dtype(table[c])]
    keep_first = [c for c in table.columns
                  if c not in numeric and c != id_col]
    grouped = table.groupby(id_col, sort=True)
    agg = grouped[numeric].mean()
    agg["missing_count"] = grouped[numeric].apply(
        lambda df: int(df.isna().sum().sum())
    )
    for c in keep_first:
        if c != "scenario_id":
            agg[c] = grouped[c].first()
    return agg.reset_index()


# ---------------------------------------------------------------------------
# Questionnaire indexes
# ---------------------------------------------------------------------------

TLX_DIMENSIONS = ("mental_demand", "physical_demand", "temporal_demand",
                  "performance", "effort", "frustration")
SART_DIMENSIONS = ("instability", "variability", "complexity",
                   "arousal", "spare_capacity", "concentration",
                   "attention_division", "quantity", "quality", "familiarity")
SPAM_DIMENSIONS = ("monitoring", "planning", "intervention")

_SART_DEMAND = SART_DIMENSIONS[0:3]
_SART_SUPPLY = SART_DIMENSIONS[3:7]
_SART_UNDERSTANDING = SART_DIMENSIONS[7:10]


def _require(responses, dims):
    missing = [d for d in dims if d not in responses or responses[d] is None]
    if missing:
        raise MissingDimension(f"missing dimensions {missing}")
    return [float(responses[d]) for d in dims]


def tlx_index(responses) -> float:
    """Arithmetic mean of the six task-load dimensions."""
    return float(np.mean(_require(responses, TLX_DIMENSIONS)))


def spam_index(responses) -> float:
    """Arithmetic mean of the three presence dimensions."""
    return float(np.mean(_require(responses, SPAM_DIMENSIONS)))


def sart_index(responses, mode: str = "literal") -> float:
    """Situational-awareness index.

    'literal' applies the published equation as written: demand (sum of
    the first three dimensions) minus supply (sum of dimensions 4-7).
    'standard' applies the conventional reading: understanding (sum of
    the last three) minus (demand - supply).  Neither is canonical; the
    choice is echoed by callers into output metadata.
    """
    demand = sum(_require(responses, _SART_DEMAND))
    supply = sum(_require(responses, _SART_SUPPLY))
    if mode == "literal":
        return float(demand - supply)
    if mode == "standard":
        understanding = sum(_require(responses, _SART_UNDERSTANDING))
        return float(understanding - (demand - supply))
    raise ValueError(f"unknown SART mode {mode!r}")


# ---------------------------------------------------------------------------
# Log-derived measures
# ---------------------------------------------------------------------------

def ai_vs_human_error(log, toi=None) -> float:
    """Mean |suggestion - chosen control| over suggestion-active ticks."""
    lo, hi = toi if toi else (0.0, float("inf"))
    errors = []
    for rec in log.records:
        if not lo <= rec.t <= hi:
            continue
        srla = rec.values.get("SRLA")
        err = rec.values.get("SRLA_vs_Human")
        if srla is None or err is None:
            continue
        if not math.isnan(srla) and not math.isnan(err):
            errors.append(err)
    if not errors:
        raise NoSuggestionTicks("no ticks with an active suggestion and a "
                                "human control value")
    return float(np.mean(errors))


def accuracy_mse(log, expert_values=None) -> float:
    """Mean squared error of executed manual controls vs the prescribed
    (constant) expert values."""
    expert_values = expert_values or EXPERT_VALUES
    sq = []
    for ev in log.hmi_events:
        if ev.kind != "manual_control":
            continue
        actuator = ev.detail.get("actuator")
        if actuator not in expert_values:
            continue
        sq.append((float(ev.detail["value"]) - float(expert_values[actuator])) ** 2)
    if not sq:
        raise NoControlEvents("no manual-control events to score")
    return float(np.mean(sq))


def _critical_annunciation(log, critical_alarm_id=None):
    for ev in log.alarm_events:
        if ev.kind != "annunciated" or ev.severity != "critical":
            continue
        if critical_alarm_id is None or ev.alarm_id == critical_alarm_id:
            return ev
    return None


def behavioral_measures(log, critical_alarm_id=None, expected_actuator=None):
    """Recovery, reaction, and response times against the critical alarm.

    Never-observed endpoints censor at the episode end and are flagged;
    actions before the annunciation do not count as reactions.
    """
    ann = _critical_annunciation(log, critical_alarm_id)
    if ann is None:
        raise NoCriticalAlarm("episode has no critical alarm annunciation")
    end = log.duration
    if expected_actuator is None:
        expected_actuator = SCENARIO_PRIMARY_ACTUATOR.get(log.scenario_id)

    cleared = next(
        (ev.t for ev in log.alarm_events
         if ev.kind == "cleared" and ev.alarm_id == ann.alarm_id
         and ev.t > ann.t),
        None,
    )
    manual = [ev for ev in log.hmi_events
              if ev.kind == "manual_control" and ev.t >= ann.t]
    first_action = manual[0].t if manual else None
    on_target = [ev.t for ev in manual
                 if ev.detail.get("actuator") == expected_actuator]
    last_on_target = on_target[-1] if on_target else None

    return {
        "recovery_time": (cleared - ann.t) if cleared is not None else end - ann.t,
        "recovery_censored": cleared is None,
        "reaction_time": (first_action - ann.t) if first_action is not None
        else end - ann.t,
        "reaction_censored": first_action is None,
        "response_time": (last_on_target - ann.t) if last_on_target is not None
        else end - ann.t,
        "response_censored": last_on_target is None,
        "annunciation_t": ann.t,
    }


def performance_class(times: dict) -> dict:
    """Tertile split of recovery times across the cohort.

    ``times`` maps participant id to (recovery_time, censored).  At or
    below the 33rd percentile is optimal, at or below the 67th good,
    otherwise poor; censored episodes are poor outright.
    """
    if len(times) < 3:
        raise CohortTooSmall(f"need >= 3 participants, got {len(times)}")
    observed = [t for t, censored in times.values() if not censored]
    classes = {}
    p33 = np.percentile(observed, 100 / 3) if observed else 0.0
    p67 = np.percentile(observed, 200 / 3) if observed else 0.0
    for pid, (t, censored) in times.items():
        if censored:
            classes[pid] = "poor"
        elif t <= p33:
            classes[pid] = "optimal"
        elif t <= p67:
            classes[pid] = "good"
        else:
            classes[pid] = "poor"
    return classes


def recovery_status(log, critical_alarm_id=None) -> str:
    """optimal: never annunciated; good: annunciated and cleared; else poor."""
    ann = _critical_annunciation(log, critical_alarm_id)
    if ann is None:
        return "optimal"
    cleared = any(
        ev.kind == "cleared" and ev.alarm_id == ann.alarm_id and ev.t > ann.t
        for ev in log.alarm_events
    )
    return "good" if cleared else "poor"


# ---------------------------------------------------------------------------
# Correlation graph
# ---------------------------------------------------------------------------

@dataclass
class CorrelationGraph:
    nodes: list
    edges: list  # (metric_a, metric_b, signed weight)
    threshold: float


def correlation_graph(table: pd.DataFrame, threshold: float = 0.4,
                      skip=("participant_id", "group", "scenario_id")) -> CorrelationGraph:
    """Pearson correlations over pairwise-complete observations; keeps
    |r| >= threshold."""
    numeric = table[[c for c in table.columns
                     if c not in skip and pd.api.types.is_numeric_dtype(table[c])]]
    if len(numeric) < 3:
        raise CohortTooSmall("need >= 3 rows for correlations")
    corr = numeric.corr()  # pairwise complete
    nodes = list(corr.columns)
    edges = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            r = corr.loc[a, b]
            if pd.notna(r) and abs(r) >= threshold:
                edges.append((a, b, float(r)))
    return CorrelationGraph(nodes=nodes, edges=edges, threshold=threshold)


# ---------------------------------------------------------------------------
# Factor analysis
# ---------------------------------------------------------------------------

@dataclass
class FactorModel:
    columns: list
    eigenvalues: np.ndarray
    cumulative_variance: np.ndarray
    second_differences: np.ndarray
    argmax_index: int          # literal argmax of the second differences
    elbow: int                 # selected factor count (see elbow_rule)
    elbow_rule: str
    candidates: dict           # factor counts per rule
    low_confidence: bool
    loadings: np.ndarray       # (features, elbow)
    psi: np.ndarray            # unique variances (1 - communalities)
    factor_scores: np.ndarray  # (rows, elbow)
    strong_loadings: list      # per factor: [(column, loading)] with |l| >= cut
    dropped_columns: list = field(default_factory=list)

    def implied_covariance(self):
        return self.loadings @ self.loadings.T + np.diag(self.psi)


_LOW_CONFIDENCE_CURVATURE = 0.01


def _elbow_candidates(second_diff, cumvar, sd_threshold):
    """Factor counts under each selection rule.

    A second-difference entry at index i compares the variance shares of
    factors i+2 and i+3 (1-based), so a kink at entry i points at i+2
    retained factors.
    """
    p = len(cumvar)
    cands = {}
    if len(second_diff):
        cands["argmax_rule"] = int(np.argmax(second_diff)) + 2
        cands["curvature_rule"] = int(np.argmin(second_diff)) + 2
        over = np.nonzero(np.abs(second_diff) >= sd_threshold)[0]
        cands["threshold_rule"] = int(over[-1]) + 2 if len(over) else 1
    else:
        cands["argmax_rule"] = cands["curvature_rule"] = cands["threshold_rule"] = 1
    reach = np.nonzero(cumvar >= 0.5)[0]
    cands["variance_50_rule"] = int(reach[0]) + 1 if len(reach) else p
    return {k: int(np.clip(v, 1, p)) for k, v in cands.items()}


def factor_analysis(table: pd.DataFrame, *, loading_threshold: float = 0.4,
                    sd_threshold: float = 0.05, elbow_rule: str = "curvature",
                    skip=("participant_id", "group", "scenario_id")) -> FactorModel:
    """Principal-component factor extraction on the correlation matrix.

    The headline factor count follows ``elbow_rule``: 'curvature' (the
    largest-magnitude second difference of the cumulative variance,
    default), 'argmax' (the formula applied verbatim), 'threshold' (last
    second difference above sd_threshold), or 'variance50'.  All
    candidates are reported side by side; an essentially flat curve is
    flagged low-confidence rather than reconciled.
    """
    numeric = table[[c for c in table.columns
                     if c not in skip and pd.api.types.is_numeric_dtype(table[c])]]
    stds = numeric.std(ddof=0)
    dropped = [c for c in numeric.columns
               if not np.isfinite(stds[c]) or stds[c] == 0]
    numeric = numeric.drop(columns=dropped)
    if numeric.shape[1] < 2:
        raise SingularCorrelation(
            f"fewer than 2 usable columns after dropping {dropped}"
        )
    z = (numeric - numeric.mean()) / numeric.std(ddof=0)
    corr_df = z.corr()  # pairwise complete
    # Pairs with degenerate overlap (too few or constant shared rows)
    # leave NaN entries; shed the worst offenders with notice.
    while corr_df.isna().to_numpy().any():
        nan_counts = corr_df.isna().sum()
        worst = nan_counts.idxmax()
        dropped.append(worst)
        z = z.drop(columns=[worst])
        corr_df = corr_df.drop(index=worst, columns=worst)
        if z.shape[1] < 2:
            raise SingularCorrelation(
                f"fewer than 2 usable columns after dropping {dropped}"
            )
    numeric = numeric[z.columns]
    corr = corr_df.to_numpy()

    eigval, eigvec = np.linalg.eigh(corr)
    order = np.argsort(eigval)[::-1]
    eigval = np.maximum(eigval[order], 0.0)
    eigvec = eigvec[:, order]
    cumvar = np.cumsum(eigval) / eigval.sum()
    second_diff = np.diff(np.diff(cumvar))

    cands = _elbow_candidates(second_diff, cumvar, sd_threshold)
    rule_key = {"curvature": "curvature_rule", "argmax": "argmax_rule",
                "threshold": "threshold_rule", "variance50": "variance_50_rule"}
    if elbow_rule not in rule_key:
        raise ValueError(f"unknown elbow_rule {elbow_rule!r}")
    elbow = cands[rule_key[elbow_rule]]
    low_confidence = (len(second_diff) == 0
                      or float(np.max(np.abs(second_diff))) < _LOW_CONFIDENCE_CURVATURE)

    loadings = eigvec[:, :elbow] * np.sqrt(eigval[:elbow])
    communalities = (loadings ** 2).sum(axis=1)
    psi = np.clip(1.0 - communalities, 0.0, None)
    z_filled = z.fillna(0.0).to_numpy()
    scores = z_filled @ eigvec[:, :elbow]

    strong = []
    cols = list(numeric.columns)
    for j in range(elbow):
        col = loadings[:, j]
        entries = [(cols[i], float(col[i]))
                   for i in np.argsort(-np.abs(col))
                   if abs(col[i]) >= loading_threshold]
        strong.append(entries)

    return FactorModel(
        columns=cols,
        eigenvalues=eigval,
        cumulative_variance=cumvar,
        second_differences=second_diff,
        argmax_index=int(np.argmax(second_diff)) if len(second_diff) else 0,
        elbow=elbow,
        elbow_rule=elbow_rule,
        candidates=cands,
        low_confidence=low_confidence,
        loadings=loadings,
        psi=psi,
        factor_scores=scores,
        strong_loadings=strong,
        dropped_columns=dropped,
    )


# ---------------------------------------------------------------------------
# Group comparison bundle
# ---------------------------------------------------------------------------

def report(group_a: pd.DataFrame, group_b: pd.DataFrame,
           labels=("GroupN", "GroupAI"), skip=("participant_id", "group")) -> dict:
    """Numeric comparison tables: per-metric means/stds, differences, and
    consequence frequencies (the data a radar plot would render)."""
    for name, df in zip(labels, (group_a, group_b)):
        if df is None or len(df) == 0:
            raise EmptyGroup(f"{name} has no rows")
    metrics = [c for c in group_a.columns
               if c in group_b.columns and c not in skip
               and pd.api.types.is_numeric_dtype(group_a[c])]
    table = {}
    for m in metrics:
        a = group_a[m].dropna()
        b = group_b[m].dropna()
        table[m] = {
            labels[0]: {"mean": _f(a.mean()), "std": _f(a.std(ddof=0)), "n": int(len(a))},
            labels[1]: {"mean": _f(b.mean()), "std": _f(b.std(ddof=0)), "n": int(len(b))},
            "difference": _f(b.mean() - a.mean()),
        }
    freq = {}
    if "consequence" in group_a.columns and "consequence" in group_b.columns:
        freq = {
            labels[0]: group_a["consequence"].value_counts().to_dict(),
            labels[1]: group_b["consequence"].value_counts().to_dict(),
        }
    radar = {
        m: {labels[0]: table[m][labels[0]]["mean"],
            labels[1]: table[m][labels[1]]["mean"]}
        for m in metrics
    }
    return {"metrics": table, "consequence_frequency": freq, "radar": radar,
            "labels": list(labels)}


def _f(x):
    return None if pd.isna(x) else float(x)


# ---------------------------------------------------------------------------
# Episode -> participant-table row
# ---------------------------------------------------------------------------

def episode_metrics(log, critical_alarm_id=None, expert_values=None) -> dict:
    """One participant-scenario row of log-derived metrics."""
    row = {
        "participant_id": log.participant_id,
        "group": log.group,
        "scenario_id": log.scenario_id,
    }
    counts = {"annunciated": 0, "silenced": 0, "acknowledged": 0}
    for ev in log.alarm_events:
        if ev.kind in counts:
            counts[ev.kind] += 1
    row["n_alarms"] = counts["annunciated"]
    row["n_alarms_silenced"] = counts["silenced"]
    row["n_alarms_acknowledged"] = counts["acknowledged"]
    row["n_procedures_opened"] = sum(
        1 for ev in log.hmi_events if ev.kind == "procedure_opened")
    row["n_mimics_opened"] = sum(
        1 for ev in log.hmi_events if ev.kind == "mimic_opened")
    row["n_ai_ack"] = sum(
        1 for ev in log.hmi_events if ev.kind == "ai_acknowledged")

    worst = max((c["kind"] for c in log.consequences),
                key=lambda k: CONSEQUENCE_ORDER.get(k, 0), default="safe_state")
    row["consequence"] = worst
    row["consequence_level"] = CONSEQUENCE_ORDER.get(worst, 0)

    status = recovery_status(log, critical_alarm_id)
    row["recovery_status"] = status
    row["recovery_status_level"] = STATUS_ORDER[status]

    try:
        bm = behavioral_measures(log, critical_alarm_id)
        row.update({
            "recovery_time": bm["recovery_time"],
            "reaction_time": bm["reaction_time"],
            "response_time": bm["response_time"],
            "recovery_censored": int(bm["recovery_censored"]),
        })
    except NoCriticalAlarm:
        row.update({"recovery_time": np.nan, "reaction_time": np.nan,
                    "response_time": np.nan, "recovery_censored": np.nan})

    try:
        row["accuracy_mse"] = accuracy_mse(log, expert_values)
    except NoControlEvents:
        row["accuracy_mse"] = np.nan
    try:
        row["ai_vs_human_error"] = ai_vs_human_error(log)
    except NoSuggestionTicks:
        row["ai_vs_human_error"] = np.nan
    return row


def build_participant_table(logs, questionnaires=None, sart_mode="literal",
                            critical_alarms=None) -> pd.DataFrame:
    """Rows of episode metrics joined with questionnaire indexes.

    ``questionnaires`` maps (participant_id, scenario_id) to a response
    dict carrying the index dimensions and any extra numeric ratings.
    """
    rows = []
    for log in logs:
        alarm_id = (critical_alarms or {}).get(log.scenario_id)
        row = episode_metrics(log, critical_alarm_id=alarm_id)
        if questionnaires:
            q = questionnaires.get((log.participant_id, log.scenario_id), {})
            if q:
                try:
                    row["tlx_index"] = tlx_index(q)
                    row["spam_index"] = spam_index(q)
                    row["sart_index"] = sart_index(q, mode=sart_mode)
                except MissingDimension:
                    pass
                for key, value in q.items():
                    if key.startswith("ai_") or key == "task_load":
                        row[key] = float(value)
        rows.append(row)
    return pd.DataFrame(rows)
