"""Coupling loop: diagram monitoring, gated RL inference, operator-state
monitoring, and intervention selection.

Each tick runs four steps in order.  Step I queries the influence
diagram with evidence extracted from the plant snapshot and, on a
debounced detection, prunes the failure's procedure.  Step II asks the
abnormality's specialized agent for a control value and passes it
through the safety gate: the exact value is presented only when it lies
inside the diagram's discretization interval, otherwise the procedure
and the interval alone are shown.  Step III filters the live log through
the operator-state model.  Step IV maps (system state, predicted human
failure, task load) to an intervention strategy.  GroupN sessions
short-circuit Steps II-IV to monitoring with manual procedures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import did
from .errors import (
    ApprovalMissing,
    ModelMissing,
    NoActiveAbnormality,
    UnknownActuator,
)
from .opstate import OnlineFilter, transform
from .srla import HistoryBuffer, select_agent
from .telemetry import ControlAction

STRATEGIES = ("monitor", "decision_support", "supervisor_notice",
              "validate_action", "request_automation")


@dataclass(frozen=True)
class SessionMode:
    mode: str = "operations"      # operations | training
    group: str = "GroupAI"        # GroupN | GroupAI


@dataclass
class OrchestratorThresholds:
    automation_failure_prob: float = 0.8
    automation_task_load: int = 10      # annunciated unacknowledged alarms
    validate_tolerance_frac: float = 0.10  # of the actuator range
    strategy_hysteresis_ticks: int = 3
    value_revision_decimals: int = 3


@dataclass(frozen=True)
class PresentedSuggestion:
    abnormality_id: str
    procedure: tuple                 # step dicts: text/target_actuator/expected_interval
    value_mode: str                  # exact_value | interval_only
    value: float | None
    interval: did.ValueInterval
    target_actuator: str
    revision: int


@dataclass(frozen=True)
class InterventionDecision:
    strategy: str
    rationale: dict


@dataclass
class TickResult:
    alarms: list
    suggestion: PresentedSuggestion | None
    intervention: InterventionDecision
    failure_prob: float = 0.0
    evidence: dict = field(default_factory=dict)
    finding: object = None
    auto_action: ControlAction | None = None


# Evidence symptom thresholds on the plant snapshot; the temperature
# symptom sits just below the alarm limit so the root-cause suggestion
# can precede the alarm.
EVIDENCE_THRESHOLDS = {
    "pressure_low": 1.90,      # bar
    "flow_zero": 0.05,         # kg/h on both nitrogen lines
    "temp_high": 608.0,        # K (alarm at 612)
    "temp_very_high": 655.0,   # K (alarm at 660)
}


def default_evidence_extractor(view) -> dict:
    """Map the snapshot to diagram evidence states (yes/no symptoms)."""
    s = view.state
    th = EVIDENCE_THRESHOLDS
    return {
        "pressure_low": "yes" if s.tank_pressure < th["pressure_low"] else "no",
        "n2_flow_zero": "yes" if (s.n2_primary_flow < th["flow_zero"]
                                  and s.n2_backup_flow < th["flow_zero"]) else "no",
        "valve_fault_alarm": "yes" if s.n2_valve_fault else "no",
        "temp_high": "yes" if s.reactor_temp > th["temp_high"] else "no",
        "temp_very_high": "yes" if s.reactor_temp > th["temp_very_high"] else "no",
        "backup_selected": "yes" if view.controls.n2_selector == 1 else "no",
    }


def safety_gate(value: float, interval: did.ValueInterval):
    """Exact value passes only inside the interval (inclusive bounds)."""
    if interval.contains(value):
        return "exact_value", value
    return "interval_only", interval


def validate_action(action_value: float, suggestion_value: float,
                    tolerance: float) -> dict:
    """Deviation check of an executed action against the suggestion."""
    deviation = action_value - suggestion_value
    if abs(deviation) <= tolerance:
        return {"ok": True, "deviation": deviation}
    return {"ok": False, "deviation": deviation}


def select_intervention(system_abnormal: bool, failure_prob: float,
                        task_load_proxy: int, session: SessionMode,
                        thresholds: OrchestratorThresholds | None = None,
                        action_deviates: bool = False) -> InterventionDecision:
    """Deterministic strategy map; training swaps automation for a
    supervisor notice."""
    th = thresholds or OrchestratorThresholds()
    rationale = {
        "system_abnormal": system_abnormal,
        "human_failure_prob": failure_prob,
        "task_load_proxy": task_load_proxy,
    }
    if not system_abnormal:
        return InterventionDecision("monitor", rationale)
    if (failure_prob >= th.automation_failure_prob
            or task_load_proxy >= th.automation_task_load):
        strategy = ("supervisor_notice" if session.mode == "training"
                    else "request_automation")
        return InterventionDecision(strategy, rationale)
    if action_deviates:
        return InterventionDecision("validate_action", rationale)
    return InterventionDecision("decision_support", rationale)


class Orchestrator:
    """Holds the loaded models and the per-episode monitoring state."""

    def __init__(self, diagram, diagram_meta, procedures, registry,
                 hmm_model=None, session: SessionMode | None = None,
                 thresholds: OrchestratorThresholds | None = None,
                 evidence_extractor=None, require_hmm: bool = False):
        if diagram is None:
            raise ModelMissing("influence diagram")
        if procedures is None:
            raise ModelMissing("procedure library")
        if registry is None or len(registry) == 0:
            raise ModelMissing("agent registry")
        if require_hmm and hmm_model is None:
            raise ModelMissing("operator-state model")
        self.diagram = diagram
        self.hypothesis_node = diagram_meta.get("hypothesis_node")
        self.normal_state = diagram_meta.get("normal_state", "none")
        if not self.hypothesis_node:
            raise ModelMissing("hypothesis-node designation")
        self.procedures = procedures
        self.registry = registry
        self.hmm_model = hmm_model
        self.session = session or SessionMode()
        self.thresholds = thresholds or OrchestratorThresholds()
        self.extract_evidence = evidence_extractor or default_evidence_extractor
        # Evidence patterns repeat for long stretches of an episode;
        # the diagram is immutable, so per-evidence caching is sound.
        self._interval_cache = {}
        self._posterior_cache = {}
        self.monitor = did.AbnormalityMonitor(
            diagram, self.hypothesis_node, self.normal_state,
            posterior_fn=self._cached_posterior,
        )
        self.reset_episode()

    def _evidence_key(self, evidence):
        return tuple(sorted(evidence.items()))

    def _cached_posterior(self, evidence):
        key = self._evidence_key(evidence)
        if key not in self._posterior_cache:
            self._posterior_cache[key] = did.posterior(
                self.diagram, evidence, self.hypothesis_node)
        return self._posterior_cache[key]

    def _cached_interval(self, s_star, evidence, actuator):
        key = (s_star, self._evidence_key(evidence), actuator)
        if key not in self._interval_cache:
            self._interval_cache[key] = did.recommend_interval(
                self.diagram, s_star, evidence, actuator)
        return self._interval_cache[key]

    def reset_episode(self):
        self.monitor.reset()
        self.filter = OnlineFilter(self.hmm_model) if self.hmm_model else None
        self._tick_index = 0
        self._failure_prob = 0.0
        self.hist = HistoryBuffer(1)
        self._hist_abnormality = None
        self._revision = 0
        self._last_content = None
        self._last_suggestion = None
        self._strategy = "monitor"
        self._pending_strategy = None
        self._pending_count = 0
        self._automation_approved = False
        self._last_seen_human = math.nan

    # -- operator consent ----------------------------------------------------

    def approve_automation(self):
        self._automation_approved = True

    def revoke_automation(self):
        self._automation_approved = False

    @property
    def automation_approved(self):
        return self._automation_approved

    # -- the four-step tick ---------------------------------------------------

    def tick(self, view) -> TickResult:
        if self.session.group == "GroupN":
            return TickResult(
                alarms=list(view.new_alarm_events),
                suggestion=None,
                intervention=InterventionDecision("monitor", {
                    "system_abnormal": False,
                    "human_failure_prob": 0.0,
                    "task_load_proxy": self._task_load(view),
                }),
            )

        # Step I: diagram monitoring.
        evidence = self.extract_evidence(view)
        finding = self.monitor.update(evidence, view.t)

        suggestion = None
        auto_action = None
        deviates = False
        if finding is not None:
            suggestion = self._step_ii(finding, evidence, view)
            deviates = self._operator_deviates(view, suggestion)
        else:
            self._last_suggestion = None
            self._hist_abnormality = None

        # Step III: operator-state monitoring on the latest log row.
        failure_prob = self._step_iii(view)

        # Step IV: intervention strategy with change hysteresis.
        proposal = select_intervention(
            finding is not None, failure_prob, self._task_load(view),
            self.session, self.thresholds, action_deviates=deviates,
        )
        strategy = self._smooth_strategy(proposal.strategy)
        intervention = InterventionDecision(strategy, proposal.rationale)

        if self._automation_approved and finding is not None:
            auto_value = self._auto_value(suggestion)
            if auto_value is not None:
                auto_action = ControlAction(
                    suggestion.target_actuator, auto_value,
                    kind="auto_control",
                )
        return TickResult(
            alarms=list(view.new_alarm_events),
            suggestion=suggestion,
            intervention=intervention,
            failure_prob=failure_prob,
            evidence=evidence,
            finding=finding,
            auto_action=auto_action,
        )

    def _step_ii(self, finding, evidence, view):
        s_star = finding.hypothesis
        steps = did.prune_procedure(self.procedures, s_star, evidence)
        entry = self.registry.entry(s_star)
        agent = select_agent(self.registry, s_star)
        spec = entry["spec"]
        actuator, step_interval = self._target_actuator(steps, entry)
        try:
            interval = self._cached_interval(s_star, evidence, actuator)
        except UnknownActuator:
            # Discrete steps (selector switches) have no decision bins;
            # their expected interval from the procedure stands in.
            if step_interval is None:
                raise
            interval = did.ValueInterval(*step_interval)
        value = None
        mode = "interval_only"
        if actuator == entry["actuator"]:
            raw = self._agent_value(agent, spec, entry, view)
            mode, payload = safety_gate(raw, interval)
            value = payload if mode == "exact_value" else None

        step_dicts = tuple(
            {
                "text": st.text,
                "target_actuator": st.target_actuator,
                "expected_interval": list(st.expected_interval)
                if st.expected_interval else None,
            }
            for st in steps
        )
        content = (
            s_star, actuator, mode,
            None if value is None
            else round(value, self.thresholds.value_revision_decimals),
            (interval.low, interval.high),
            tuple(st["text"] for st in step_dicts),
        )
        if content != self._last_content:
            self._revision += 1
            self._last_content = content
        suggestion = PresentedSuggestion(
            abnormality_id=s_star,
            procedure=step_dicts,
            value_mode=mode,
            value=value,
            interval=interval,
            target_actuator=actuator,
            revision=self._revision,
        )
        self._last_suggestion = suggestion
        return suggestion

    def _target_actuator(self, steps, entry):
        for st in steps:
            if st.target_actuator is not None:
                return st.target_actuator, st.expected_interval
        return entry["actuator"], None

    @staticmethod
    def _auto_value(suggestion):
        """Value automation may apply: the gated exact value, else the
        procedure step's own interval midpoint (never an ungated agent
        value)."""
        if suggestion is None:
            return None
        if suggestion.value is not None:
            return suggestion.value
        for st in suggestion.procedure:
            if (st.get("target_actuator") == suggestion.target_actuator
                    and st.get("expected_interval")):
                lo, hi = st["expected_interval"]
                return 0.5 * (lo + hi)
        return None

    def _agent_value(self, agent, spec, entry, view):
        """Live composite action from the abnormality's agent."""
        y_source = entry["y_source"]
        var, _sp, scale = y_source
        y = np.array([getattr(view.state, var) / scale])
        a_exec = np.array([_actuator_value(view.controls, entry["actuator"])])
        if self._hist_abnormality != entry["actuator"]:
            self.hist = HistoryBuffer(agent.cfg.history_len)
            self._hist_abnormality = entry["actuator"]
        self.hist.push(y, a_exec)
        s = self.hist.state()
        action = agent.act(s, explore=False)
        if spec is not None:
            lo, hi = _actuator_range(entry["actuator"])
            action = np.clip(spec.expert_policy(s) + action, lo, hi)
        return float(np.atleast_1d(action)[0])

    def _operator_deviates(self, view, suggestion):
        if suggestion is None or suggestion.value is None:
            return False
        human = _last_human(view)
        if human is None or math.isnan(human):
            return False
        lo, hi = _actuator_range(suggestion.target_actuator)
        tol = self.thresholds.validate_tolerance_frac * (hi - lo)
        return not validate_action(human, suggestion.value, tol)["ok"]

    def _step_iii(self, view):
        if self.filter is None:
            return 0.0
        model = self.hmm_model
        if model.failure_state is None:
            return 0.0
        log = view.log
        if log is None or not log.records:
            return 0.0
        # Sample at the model's training stride; hold the estimate between.
        self._tick_index += 1
        if (self._tick_index - 1) % model.feature_stride != 0:
            return self._failure_prob
        record = log.records[-1]
        raw = np.array([
            [_record_value(record, c) for c in model.feature_names]
        ])
        if model.preprocess is not None:
            raw = transform(model.preprocess, raw,
                            feature_names=model.feature_names)
        posterior = self.filter.update(raw[0])
        self._failure_prob = float(posterior[model.failure_state])
        return self._failure_prob

    def _task_load(self, view) -> int:
        return sum(1 for info in view.active_alarms.values()
                   if not info["acked"])

    def _smooth_strategy(self, proposal: str) -> str:
        if proposal == self._strategy:
            self._pending_strategy = None
            self._pending_count = 0
            return self._strategy
        if proposal == self._pending_strategy:
            self._pending_count += 1
        else:
            self._pending_strategy = proposal
            self._pending_count = 1
        if self._pending_count >= self.thresholds.strategy_hysteresis_ticks:
            self._strategy = proposal
            self._pending_strategy = None
            self._pending_count = 0
        return self._strategy

    # -- automation -----------------------------------------------------------

    def automate(self, view) -> ControlAction:
        """One automated control step; requires consent and an active
        abnormality."""
        if self.monitor.active is None:
            raise NoActiveAbnormality("no abnormality to automate against")
        if not self._automation_approved:
            raise ApprovalMissing("operator approval not received")
        suggestion = self._last_suggestion
        if suggestion is None or suggestion.value is None:
            raise NoActiveAbnormality("no gated value available to apply")
        return ControlAction(suggestion.target_actuator, suggestion.value,
                             kind="auto_control")


def _actuator_value(controls, actuator: str) -> float:
    mapping = {
        "MmanNit_1": controls.n2_setpoint,
        "MNitsel_1": float(controls.n2_selector),
        "MWpopOld_1": controls.pump_power_cmd,
        "MCReatTempOld_1": controls.reactor_cooling_cmd,
        "MAssWatFlowO_1": controls.absorber_water_cmd,
        "MpumpOld_1": float(controls.pump_selector),
        "REC3WMO_1": float(controls.rec3_selector),
    }
    return mapping[actuator]


def _actuator_range(actuator: str):
    from .plantsim import ACTUATOR_RANGES

    return ACTUATOR_RANGES[actuator]


def _last_human(view):
    log = view.log
    if log is None or not log.records:
        return None
    return log.records[-1].values.get("Human")


def _record_value(record, column) -> float:
    v = record.values.get(column, math.nan)
    return 0.0 if (v is None or (isinstance(v, float) and math.isnan(v))) else float(v)
