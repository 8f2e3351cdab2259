"""Shared configuration: file parsing, defaults, and model assembly."""

from __future__ import annotations

import json
from importlib import resources

from . import did, plantsim
from .errors import ConfigError
from .opstate import HmmHyperparams
from .orchestrator import OrchestratorThresholds
from .telemetry import OperatorProfile

PROFILE_PRESETS = {
    "compliant": dict(follow_mode="ai_plus_drl", reaction_latency=8.0,
                      compliance_sigma=0.01, attention_drop_prob=0.0),
    "sloppy": dict(follow_mode="ai", reaction_latency=20.0,
                   compliance_sigma=0.05, attention_drop_prob=0.05),
    "procedure": dict(follow_mode="procedure", reaction_latency=15.0,
                      compliance_sigma=0.02, attention_drop_prob=0.0),
    "validator": dict(follow_mode="ai_plus_procedure", reaction_latency=14.0,
                      compliance_sigma=0.02, attention_drop_prob=0.0),
    "none": dict(follow_mode="none", reaction_latency=0.0,
                 compliance_sigma=0.0, attention_drop_prob=0.0,
                 ack_alarms=False),
}

# Per-alarm procedure plan for screen-procedure operators (no AI panel).
PROCEDURE_PLAN = {
    "All2_01": [("MNitsel_1", 1.0), ("MmanNit_1", 6.5), ("MWpopOld_1", 0.25)],
    "All2_03": [("MAssWatFlowO_1", 2000.0)],
    "All2_04": [("MCReatTempOld_1", 0.8)],
}

# Observation source per abnormality: (state field, setpoint, scale).
AGENT_Y_SOURCES = {
    "pic_failure": ("tank_pressure", 2.0, 1.0),
    "n2_primary_failure": ("tank_pressure", 2.0, 1.0),
    "tic_heat_recovery_failure": ("reactor_temp", 600.0, 100.0),
}

AGENT_ACTUATORS = {
    "pic_failure": "MmanNit_1",
    "n2_primary_failure": "MWpopOld_1",
    "tic_heat_recovery_failure": "MCReatTempOld_1",
}


def _data_path(name: str):
    return resources.files("controlroom.data").joinpath(name)


def load_default_diagram():
    with _data_path("diagram_plant.json").open("r", encoding="utf-8") as fh:
        return did.diagram_from_dict(json.load(fh))


def load_default_procedures() -> did.ProcedureLibrary:
    with _data_path("procedures_plant.json").open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    entries = {}
    for hypothesis, steps in payload.items():
        entries[hypothesis] = [
            did.ProcedureStep(
                text=s["text"],
                target_actuator=s.get("target_actuator"),
                expected_interval=tuple(s["expected_interval"])
                if s.get("expected_interval") else None,
                require={k: tuple(v) for k, v in s.get("require", {}).items()},
                exclude={k: tuple(v) for k, v in s.get("exclude", {}).items()},
            )
            for s in steps
        ]
    return did.ProcedureLibrary(entries)


# ---------------------------------------------------------------------------
# Scenario (de)serialization -- the documented config file surface
# ---------------------------------------------------------------------------

def scenario_to_dict(cfg: plantsim.ScenarioConfig) -> dict:
    return {
        "scenario_id": cfg.scenario_id,
        "duration_s": cfg.duration_s,
        "dt_s": cfg.dt_s,
        "fault_schedule": dict(cfg.fault_schedule.onset_times),
        "alarm_thresholds": {
            alarm_id: {
                "variable": th.variable, "low": th.low, "high": th.high,
                "severity": th.severity, "hysteresis": th.hysteresis,
            }
            for alarm_id, th in cfg.alarm_thresholds.items()
        },
        "consequence_limits": {
            "overheat_temp": cfg.consequence_limits.overheat_temp,
            "overheat_hold_s": cfg.consequence_limits.overheat_hold_s,
            "shutdown_pressure": list(cfg.consequence_limits.shutdown_pressure),
            "shutdown_level": list(cfg.consequence_limits.shutdown_level),
            "impurity_pressure": cfg.consequence_limits.impurity_pressure,
            "impurity_hold_s": cfg.consequence_limits.impurity_hold_s,
        },
        "primary_actuator": cfg.primary_actuator,
        "critical_alarm_id": cfg.critical_alarm_id,
        "has_overflow": cfg.has_overflow,
    }


def scenario_from_dict(payload: dict) -> plantsim.ScenarioConfig:
    """Parse a scenario section; unknown keys are rejected."""
    known = {"scenario_id", "duration_s", "dt_s", "fault_schedule",
             "alarm_thresholds", "consequence_limits", "primary_actuator",
             "critical_alarm_id", "has_overflow", "plant"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
    if "scenario_id" not in payload:
        raise ConfigError("scenario section needs scenario_id")
    base = plantsim.default_scenario(payload["scenario_id"])
    if "duration_s" in payload:
        base.duration_s = float(payload["duration_s"])
    if "dt_s" in payload:
        base.dt_s = float(payload["dt_s"])
    if "fault_schedule" in payload:
        schedule = {k: float(v) for k, v in payload["fault_schedule"].items()}
        base.fault_schedule = plantsim.FaultSet(set(schedule), schedule)
    if "alarm_thresholds" in payload:
        table = {}
        for alarm_id, spec in payload["alarm_thresholds"].items():
            if isinstance(spec, dict):
                table[alarm_id] = plantsim.AlarmThreshold(
                    alarm_id=alarm_id,
                    variable=spec["variable"],
                    low=float(spec["low"]),
                    high=float(spec["high"]),
                    severity=spec.get("severity", "critical"),
                    hysteresis=float(spec.get("hysteresis", 0.02)),
                )
            else:  # shorthand: variable name keyed to [low, high]
                low, high = spec
                table[f"All2_{alarm_id}"] = plantsim.AlarmThreshold(
                    alarm_id=f"All2_{alarm_id}", variable=alarm_id,
                    low=float(low), high=float(high),
                )
        base.alarm_thresholds = table
    if "consequence_limits" in payload:
        lim = payload["consequence_limits"]
        base.consequence_limits = plantsim.ConsequenceLimits(
            overheat_temp=float(lim.get("overheat_temp", 700.0)),
            overheat_hold_s=float(lim.get("overheat_hold_s", 60.0)),
            shutdown_pressure=tuple(lim.get("shutdown_pressure", (0.8, 3.2))),
            shutdown_level=tuple(lim.get("shutdown_level", (0.05, 0.95))),
            impurity_pressure=float(lim.get("impurity_pressure", 1.0)),
            impurity_hold_s=float(lim.get("impurity_hold_s", 30.0)),
        )
    if "primary_actuator" in payload:
        base.primary_actuator = payload["primary_actuator"]
    if "critical_alarm_id" in payload:
        base.critical_alarm_id = payload["critical_alarm_id"]
    if "has_overflow" in payload:
        base.has_overflow = bool(payload["has_overflow"])
    base.validate()
    return base


def default_config() -> dict:
    return {
        "scenarios": {
            sid: scenario_to_dict(plantsim.default_scenario(sid))
            for sid in plantsim.SCENARIO_IDS
        },
        "operator_profiles": {k: dict(v) for k, v in PROFILE_PRESETS.items()},
        "profile_mix": {"compliant": 0.5, "none": 0.5},
        "orchestrator": {
            "automation_failure_prob": 0.8,
            "automation_task_load": 10,
            "validate_tolerance_frac": 0.10,
            "strategy_hysteresis_ticks": 3,
        },
        "hmm": {
            "n_states": 3, "model_type": "gmmhmm", "n_mix": 3,
            "covariance_type": "tied", "is_lr": True, "is_scalar": True,
            "is_pca": True, "n_decomp": 4,
        },
        "hmm_fit": {
            "stride": 3, "restarts": 4, "probe_iters": 12,
            "max_iter": 40, "tol": 1e-3,
        },
        "predict": {"tau": 0.7, "k": 5},
        "analytics": {
            "corr_threshold": 0.4, "loading_threshold": 0.4,
            "elbow_rule": "curvature", "sart_mode": "literal",
        },
        "training": {
            "budget": 6000, "history_len": 1, "hidden_sizes": [64, 64],
            "gamma": 0.99, "actor_lr": 0.001, "critic_lr": 0.001,
            "tau": 0.005, "policy_delay": 2, "batch_size": 64,
        },
    }


def load_config(path=None) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        cfg = _deep_merge(cfg, user)
    return cfg


def _deep_merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for k, v in override.items():
            out[k] = _deep_merge(base[k], v) if k in base else v
        return out
    return override


def validate_config(cfg: dict) -> list:
    """Returns a list of problems; empty means valid."""
    issues = []
    for sid, payload in cfg.get("scenarios", {}).items():
        try:
            scenario_from_dict(payload)
        except (ConfigError, KeyError, TypeError, ValueError) as exc:
            issues.append(f"scenario {sid}: {exc}")
    for name, spec in cfg.get("operator_profiles", {}).items():
        try:
            OperatorProfile(name=name, **spec)
        except (TypeError, ValueError) as exc:
            issues.append(f"profile {name}: {exc}")
    mix = cfg.get("profile_mix", {})
    if mix:
        total = sum(mix.values())
        if abs(total - 1.0) > 1e-9:
            issues.append(f"profile_mix weights sum to {total}, expected 1")
        unknown = set(mix) - set(cfg.get("operator_profiles", {}))
        if unknown:
            issues.append(f"profile_mix names unknown profiles {sorted(unknown)}")
    try:
        HmmHyperparams(**cfg.get("hmm", {}))
    except (TypeError, ValueError) as exc:
        issues.append(f"hmm: {exc}")
    return issues


def thresholds_from_config(cfg: dict) -> OrchestratorThresholds:
    o = cfg.get("orchestrator", {})
    return OrchestratorThresholds(
        automation_failure_prob=o.get("automation_failure_prob", 0.8),
        automation_task_load=o.get("automation_task_load", 10),
        validate_tolerance_frac=o.get("validate_tolerance_frac", 0.10),
        strategy_hysteresis_ticks=o.get("strategy_hysteresis_ticks", 3),
    )


def profile_from_config(cfg: dict, name: str) -> OperatorProfile:
    profiles = cfg.get("operator_profiles", {})
    if name not in profiles:
        raise ConfigError(f"unknown operator profile {name!r}")
    return OperatorProfile(name=name, **profiles[name])
