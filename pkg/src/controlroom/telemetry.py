"""Data plane: episode logs, CSV persistence, synthetic operators, labels.

The log vocabulary follows the control-room simulator's variable names
(LSERB_1, PSERB_1, All2_XX, ...).  Alarm columns All2_XX / sAll_XX are 0/1
indicator series sampled at tick rate: All2_XX is 1 from annunciation until
clear, sAll_XX is 1 from silencing until clear.  AckAll is a cumulative
count of alarm acknowledgements, intop_1/intop_2/intop_5 are per-tick
indicators for mimic, procedure, and support-panel interactions.

CSV files are RFC-4180 style, UTF-8, one header row, numbers encoded with
9 significant digits.  Missing values are empty cells.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NonMonotonicTime, ParseError, SchemaMismatch

# Canonical non-alarm column order.  Per-alarm indicator columns
# (All2_XX, sAll_XX) are appended per episode configuration.
BASE_COLUMNS = (
    "LSERB_1",       # tank level
    "PSERB_1",       # tank pressure
    "FN2serb1O_1",   # primary nitrogen flow
    "MWpopOld_1",    # pump power
    "MliqbolO_1",    # methanol mass in the boiler
    "MVAPrec3_1",    # REC3 steam flow
    "LinasO_1",      # water in flow
    "MAssWatFlowO_1",  # absorber water value
    "Nitsel_1",      # nitrogen system selector state
    "MNitsel_1",     # manual primary nitrogen selector command
    "MmanNit_1",     # manual primary flow value
    "MCoolreatOld_1",  # manual reactor cooling selector
    "MCReatTempOld_1",  # manual reactor cooling value
    "MAssWatO_1",    # manual absorber water selector
    "MpumpOld_1",    # manual pump selector
    "REC3WMO_1",     # manual REC3 selector
    "Human",         # control adjusted by human
    "SRLA",          # control suggested by the support system
    "SRLA_vs_Human",  # error between suggestion and chosen control
    "AckAll",        # alarm acknowledgements (cumulative)
    "intop_1",       # open interface: mimic
    "intop_2",       # open interface: procedure
    "intop_5",       # open interface: support panel
)

HMI_EVENT_KINDS = (
    "procedure_opened",
    "mimic_opened",
    "ai_acknowledged",
    "alarm_silenced",
    "alarm_acknowledged",
    "manual_control",
    # Automation consent must be auditable from the HMI log alone.
    "automation_approved",
    "automation_revoked",
)


def encode_number(x: float) -> str:
    """Decimal encoding with 9 significant digits (empty for missing)."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".9g")


def quantize(x: float) -> float:
    """Round-trip a value through the 9-significant-digit encoding."""
    s = encode_number(x)
    return math.nan if s == "" else float(s)


@dataclass(frozen=True)
class LogRecord:
    """One tick of the process/alarm/HMI log."""

    t: float
    values: dict

    def get(self, column, default=math.nan):
        return self.values.get(column, default)


@dataclass
class HmiEvent:
    t: float
    kind: str
    detail: dict = field(default_factory=dict)


@dataclass
class AlarmEvent:
    """Lifecycle event of a single alarm tag."""

    alarm_id: str
    kind: str  # annunciated | silenced | acknowledged | cleared
    t: float
    severity: str  # critical | warning


@dataclass
class EpisodeLog:
    participant_id: str
    group: str                      # GroupN | GroupAI
    scenario_id: str
    columns: tuple = BASE_COLUMNS   # fixed per episode
    records: list = field(default_factory=list)
    alarm_events: list = field(default_factory=list)
    hmi_events: list = field(default_factory=list)
    toi_markers: dict = field(default_factory=dict)
    consequences: list = field(default_factory=list)  # [{kind, t}]

    @property
    def duration(self) -> float:
        return self.records[-1].t if self.records else 0.0


def append_record(log: EpisodeLog, record: LogRecord) -> EpisodeLog:
    """Append one record, enforcing a strictly increasing clock.

    SRLA_vs_Human is recomputed as |SRLA - Human| when both are present
    and the column was not already filled.
    """
    if log.records and record.t <= log.records[-1].t:
        raise NonMonotonicTime(
            f"record at t={record.t} does not advance past t={log.records[-1].t}"
        )
    values = dict(record.values)
    srla = values.get("SRLA")
    human = values.get("Human")
    if (
        srla is not None and human is not None
        and not math.isnan(srla) and not math.isnan(human)
        and _is_missing(values.get("SRLA_vs_Human"))
    ):
        values["SRLA_vs_Human"] = abs(srla - human)
    log.records.append(LogRecord(t=record.t, values=values))
    return log


def _is_missing(x) -> bool:
    return x is None or (isinstance(x, float) and math.isnan(x))


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

_META_PREFIX = "#meta "


def export_csv(log: EpisodeLog, destination) -> int:
    """Write the episode to ``destination`` (path or binary file object).

    Returns the number of bytes written.  Episode metadata, alarm events,
    HMI events, TOI markers, and consequences travel in '#meta' comment
    lines ahead of the header so a single file round-trips the episode.
    """
    buf = io.StringIO()
    _write_meta(buf, log)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *log.columns])
    for rec in log.records:
        row = [encode_number(rec.t)]
        row.extend(encode_number(rec.values.get(c, math.nan)) for c in log.columns)
        writer.writerow(row)
    data = buf.getvalue().encode("utf-8")
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        with open(destination, "wb") as fh:
            fh.write(data)
    return len(data)


def _write_meta(buf, log: EpisodeLog):
    def line(*parts):
        buf.write(_META_PREFIX + ",".join(str(p) for p in parts) + "\n")

    line("episode", log.participant_id, log.group, log.scenario_id)
    for ev in log.alarm_events:
        line("alarm", ev.alarm_id, ev.kind, encode_number(ev.t), ev.severity)
    for ev in log.hmi_events:
        detail = ";".join(f"{k}={v}" for k, v in sorted(ev.detail.items()))
        line("hmi", encode_number(ev.t), ev.kind, detail)
    for name, t in sorted(log.toi_markers.items()):
        line("toi", name, encode_number(t))
    for c in log.consequences:
        line("consequence", c["kind"], encode_number(c["t"]))


def import_csv(source) -> EpisodeLog:
    """Read an episode written by :func:`export_csv`.

    Header binding is order-insensitive; every Appendix column named in the
    header is accepted, unknown or missing columns raise SchemaMismatch.
    """
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8")

    log = EpisodeLog(participant_id="", group="", scenario_id="", columns=())
    lines = text.splitlines()
    body_start = 0
    for i, raw in enumerate(lines):
        if raw.startswith(_META_PREFIX):
            _read_meta(log, raw[len(_META_PREFIX):], i + 1)
            body_start = i + 1
        else:
            break

    reader = csv.reader(lines[body_start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header row", body_start + 1) from None
    if not header or header[0] != "t":
        raise ParseError("first column must be 't'", body_start + 1)
    columns = tuple(header[1:])
    known = set(BASE_COLUMNS)
    unknown = [c for c in columns if c not in known and not _is_alarm_column(c)]
    missing = [c for c in BASE_COLUMNS if c not in columns]
    if unknown or missing:
        raise SchemaMismatch(
            f"unknown columns {unknown}, missing columns {missing}",
            missing=missing,
            unknown=unknown,
        )
    log.columns = columns

    for off, row in enumerate(reader):
        line_no = body_start + 2 + off
        if not row:
            continue
        if len(row) != len(columns) + 1:
            raise ParseError(
                f"expected {len(columns) + 1} cells, got {len(row)}", line_no
            )
        try:
            t = float(row[0])
            values = {
                c: (math.nan if cell == "" else float(cell))
                for c, cell in zip(columns, row[1:])
            }
        except ValueError as exc:
            raise ParseError(str(exc), line_no) from None
        if log.records and t <= log.records[-1].t:
            raise ParseError(f"non-monotonic t={t}", line_no)
        log.records.append(LogRecord(t=t, values=values))
    return log


def _is_alarm_column(name: str) -> bool:
    return name.startswith("All2_") or name.startswith("sAll_")


def _read_meta(log: EpisodeLog, payload: str, line_no: int):
    parts = payload.split(",")
    kind = parts[0]
    try:
        if kind == "episode":
            log.participant_id, log.group, log.scenario_id = parts[1:4]
        elif kind == "alarm":
            log.alarm_events.append(
                AlarmEvent(parts[1], parts[2], float(parts[3]), parts[4])
            )
        elif kind == "hmi":
            detail = {}
            if len(parts) > 3 and parts[3]:
                for item in parts[3].split(";"):
                    k, v = item.split("=", 1)
                    try:
                        detail[k] = float(v)
                    except ValueError:
                        detail[k] = v
            log.hmi_events.append(HmiEvent(float(parts[1]), parts[2], detail))
        elif kind == "toi":
            log.toi_markers[parts[1]] = float(parts[2])
        elif kind == "consequence":
            log.consequences.append({"kind": parts[1], "t": float(parts[2])})
        else:
            raise ValueError(f"unknown meta kind {kind!r}")
    except (IndexError, ValueError) as exc:
        raise ParseError(f"bad meta line: {exc}", line_no) from None


def logs_equal(a: EpisodeLog, b: EpisodeLog) -> bool:
    """Equality at the 9-significant-digit encoding used on disk."""
    if (a.participant_id, a.group, a.scenario_id) != (
        b.participant_id, b.group, b.scenario_id
    ):
        return False
    if tuple(a.columns) != tuple(b.columns) or len(a.records) != len(b.records):
        return False
    for ra, rb in zip(a.records, b.records):
        if encode_number(ra.t) != encode_number(rb.t):
            return False
        for c in a.columns:
            if encode_number(ra.get(c)) != encode_number(rb.get(c)):
                return False
    return True


# ---------------------------------------------------------------------------
# Synthetic operators
# ---------------------------------------------------------------------------

FOLLOW_MODES = ("ai", "ai_plus_drl", "procedure", "ai_plus_procedure", "none")


@dataclass
class OperatorProfile:
    """Behavior model standing in for a human participant.

    reaction_latency is the delay from suggestion/alarm to the first
    action; compliance_sigma the Gaussian error around a followed value;
    attention_drop_prob a per-tick chance of skipping a required action.
    """

    name: str = "operator"
    follow_mode: str = "ai_plus_drl"
    reaction_latency: float = 8.0
    compliance_sigma: float = 0.0
    attention_drop_prob: float = 0.0
    ack_alarms: bool = True
    ack_latency: float = 5.0

    def __post_init__(self):
        if self.follow_mode not in FOLLOW_MODES:
            raise ValueError(f"unknown follow_mode {self.follow_mode!r}")
        if self.reaction_latency < 0 or self.compliance_sigma < 0:
            raise ValueError("latency and sigma must be nonnegative")
        if not 0.0 <= self.attention_drop_prob <= 1.0:
            raise ValueError("attention_drop_prob must be a probability")


@dataclass(frozen=True)
class ControlAction:
    actuator: str
    value: float
    kind: str = "manual_control"  # or silence_alarm / ack_alarm / ack_ai


def synth_operator_act(profile, observation, presented, rng, *,
                       actuator_ranges=None, procedure_values=None,
                       pending_since=None, now=None):
    """One tick of the synthetic operator: returns a ControlAction or None.

    ``presented`` is the live support-panel suggestion (or None);
    ``pending_since`` the time the current task appeared (suggestion
    revision or critical alarm); ``now`` the episode clock.  Follow modes
    targeting the suggestion act once latency has elapsed, with value =
    suggested value + Gaussian(0, sigma) clamped to the actuator range.
    Procedure mode uses the static expert value from ``procedure_values``.
    """
    if profile.follow_mode == "none" or presented is None:
        return None
    if pending_since is None or now is None or now - pending_since < profile.reaction_latency:
        return None
    if profile.attention_drop_prob > 0 and rng.random() < profile.attention_drop_prob:
        return None

    actuator = presented.get("actuator")
    if actuator is None:
        return None
    if profile.follow_mode == "procedure":
        if not procedure_values or actuator not in procedure_values:
            return None
        value = procedure_values[actuator]
    elif profile.follow_mode == "ai":
        # Follows the procedure text of the suggestion: interval midpoint.
        lo, hi = presented["interval"]
        value = 0.5 * (lo + hi)
    else:  # ai_plus_drl / ai_plus_procedure: use the analog value if shown
        value = presented.get("value")
        if value is None:
            lo, hi = presented["interval"]
            value = 0.5 * (lo + hi)
    if profile.compliance_sigma > 0:
        value = value + rng.normal(0.0, profile.compliance_sigma)
    if actuator_ranges and actuator in actuator_ranges:
        lo, hi = actuator_ranges[actuator]
        value = min(max(value, lo), hi)
    return ControlAction(actuator=actuator, value=float(value))


class SyntheticOperator:
    """Profile-driven stand-in for a participant.

    Walks the presented suggestion's procedure steps (or, without a
    support panel, the static per-alarm procedure plan) one action per
    tick after the profile's reaction latency, re-issuing a tracked value
    when the live suggestion drifts beyond a deadband.  Acknowledges
    critical alarms and new suggestion revisions per profile.

    For ack/silence actions the ControlAction.actuator field carries the
    alarm id.
    """

    # Minimum spacing between manual actions; mimics human pacing.
    ACTION_SPACING_S = 5.0
    VALUE_DEADBAND_FRAC = 0.02

    def __init__(self, profile: OperatorProfile, *,
                 procedure_plan=None, actuator_ranges=None):
        self.profile = profile
        self.procedure_plan = procedure_plan or {}
        self.actuator_ranges = actuator_ranges or {}
        self.rng = np.random.default_rng(0)
        self._reset_state()

    def _reset_state(self):
        self._task_anchor = {}       # task key -> first-seen time
        self._executed = {}          # actuator -> last executed value
        self._last_action_t = -math.inf
        self._acked_alarms = set()
        self._acked_revisions = set()
        self._opened_procedures = set()

    def reset(self, rng):
        self.rng = rng
        self._reset_state()

    def act(self, view, suggestion):
        if self.profile.follow_mode == "none":
            return []
        now = view.t
        actions = []

        # Alarm acknowledgement (one per alarm, after ack latency).
        if self.profile.ack_alarms:
            for alarm_id, info in view.active_alarms.items():
                if (not info["acked"] and alarm_id not in self._acked_alarms
                        and now - info["t"] >= self.profile.ack_latency):
                    self._acked_alarms.add(alarm_id)
                    actions.append(ControlAction(alarm_id, 1.0, kind="ack_alarm"))
                    break

        # Suggestion acknowledgement: once per revision, AI-following modes.
        if (suggestion is not None
                and self.profile.follow_mode in ("ai", "ai_plus_drl", "ai_plus_procedure")
                and suggestion.revision not in self._acked_revisions
                and now - self._suggestion_anchor(suggestion, now)
                >= min(2.0, self.profile.reaction_latency)):
            self._acked_revisions.add(suggestion.revision)
            actions.append(ControlAction("", 1.0, kind="ack_ai"))

        # Screen-procedure readers open the alarm's procedure page first.
        if self.profile.follow_mode in ("procedure", "ai_plus_procedure"):
            for alarm_id in view.active_alarms:
                if (alarm_id in self.procedure_plan
                        and alarm_id not in self._opened_procedures):
                    self._opened_procedures.add(alarm_id)
                    actions.append(
                        ControlAction(alarm_id, 1.0, kind="open_procedure"))
                    break

        manual = self._manual_action(view, suggestion, now)
        if manual is not None:
            actions.append(manual)
        return actions

    def _suggestion_anchor(self, suggestion, now):
        key = ("suggestion", suggestion.abnormality_id)
        return self._task_anchor.setdefault(key, now)

    def _manual_action(self, view, suggestion, now):
        if now - self._last_action_t < self.ACTION_SPACING_S:
            return None
        if (self.profile.attention_drop_prob > 0
                and self.rng.random() < self.profile.attention_drop_prob):
            return None

        target = None
        if suggestion is not None and self.profile.follow_mode in (
            "ai", "ai_plus_drl", "ai_plus_procedure",
        ):
            target = self._target_from_suggestion(suggestion, now)
        elif self.profile.follow_mode == "procedure":
            target = self._target_from_procedure(view, now)
        if target is None:
            return None
        actuator, value, anchor = target
        if now - anchor < self.profile.reaction_latency:
            return None
        if self.profile.compliance_sigma > 0:
            value = value + self.rng.normal(0.0, self.profile.compliance_sigma)
        if actuator in self.actuator_ranges:
            lo, hi = self.actuator_ranges[actuator]
            value = min(max(value, lo), hi)
        self._executed[actuator] = value
        self._last_action_t = now
        return ControlAction(actuator, float(value))

    def _target_from_suggestion(self, suggestion, now):
        self._suggestion_anchor(suggestion, now)
        for idx, step in enumerate(suggestion.procedure):
            actuator = step.get("target_actuator")
            if actuator is None:
                continue
            interval = step.get("expected_interval")
            if (actuator == suggestion.target_actuator
                    and suggestion.value is not None
                    and self.profile.follow_mode != "ai"):
                value = suggestion.value
            elif interval is not None:
                value = 0.5 * (interval[0] + interval[1])
            else:
                continue
            key = ("step", suggestion.abnormality_id, idx, actuator)
            anchor = self._task_anchor.setdefault(key, now)
            if self._needs_update(actuator, value):
                return actuator, value, anchor
        return None

    def _target_from_procedure(self, view, now):
        for alarm_id, info in view.active_alarms.items():
            steps = self.procedure_plan.get(alarm_id)
            if not steps:
                continue
            for idx, (actuator, value) in enumerate(steps):
                key = ("plan", alarm_id, idx)
                anchor = self._task_anchor.setdefault(key, info["t"])
                if self._needs_update(actuator, value):
                    return actuator, value, anchor
        return None

    def _needs_update(self, actuator, value):
        if actuator not in self._executed:
            return True
        lo, hi = self.actuator_ranges.get(actuator, (0.0, 1.0))
        deadband = self.VALUE_DEADBAND_FRAC * (hi - lo)
        return abs(self._executed[actuator] - value) > deadband


class NullOperator:
    """Operator that never acts (the 'none' behavior class)."""

    def reset(self, rng):
        pass

    def act(self, view, suggestion):
        return []


# ---------------------------------------------------------------------------
# Failure labeling
# ---------------------------------------------------------------------------

# Most severe first; "air_impurity" is a consequence but not a failure basis.
_FAILURE_SEVERITY = ("reactor_overheating", "plant_shutdown", "poor_overall_performance")


@dataclass(frozen=True)
class FailureLabel:
    participant_id: str
    failed: bool
    basis: str  # plant_shutdown | reactor_overheating | poor_overall_performance | none


def label_episode(log: EpisodeLog, consequences) -> FailureLabel:
    """Label an episode from its consequence list (most severe basis wins)."""
    kinds = {c["kind"] if isinstance(c, dict) else c for c in consequences}
    for basis in _FAILURE_SEVERITY:
        if basis in kinds:
            return FailureLabel(log.participant_id, True, basis)
    return FailureLabel(log.participant_id, False, "none")


# ---------------------------------------------------------------------------
# Cohort concatenation for sequence models
# ---------------------------------------------------------------------------

def concat_episodes(logs, feature_columns):
    """Stack per-episode feature matrices row-wise.

    Returns (matrix, lengths): matrix has one row per record across all
    logs in input order, columns ordered as ``feature_columns``; lengths
    holds per-episode record counts.  Missing values become NaN.
    """
    feature_columns = list(feature_columns)
    if not logs:
        return np.empty((0, len(feature_columns))), []
    for log in logs:
        have = set(log.columns)
        missing = [c for c in feature_columns if c not in have]
        if missing:
            raise SchemaMismatch(
                f"episode {log.participant_id!r} lacks columns {missing}",
                missing=missing,
            )
    lengths = [len(log.records) for log in logs]
    matrix = np.full((sum(lengths), len(feature_columns)), np.nan)
    row = 0
    for log in logs:
        for rec in log.records:
            for j, c in enumerate(feature_columns):
                matrix[row, j] = rec.values.get(c, math.nan)
            row += 1
    return matrix, lengths


def write_dataset_manifest(path, entries):
    """Write the dataset-layout manifest mapping folder roles to paths."""
    import json

    payload = {"layout": {k: os.fspath(v) for k, v in entries.items()}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
