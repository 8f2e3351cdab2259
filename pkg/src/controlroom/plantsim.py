"""Reduced-order surrogate of a three-section formaldehyde plant.

The real unit produces formalin by partial oxidation of methanol; this
desk-scale stand-in keeps only the loops the fault scenarios exercise:

* feed section -- nitrogen blanketing of the methanol tank (pressure),
  pump power (nitrogen consumption), boiler methanol inventory;
* heat and recovery section -- heat-recovery duty, REC3 steam flow;
* reaction and separation section -- reactor temperature, absorber
  water flow.

Each loop is a first-order linear ODE integrated with explicit Euler at
the 1 Hz log cadence.  Fault flags disable the corresponding automatic
controller, so the scripted scenarios reproduce the intended symptoms:
pressure decay when automatic nitrogen regulation freezes, a slow backup
ramp after a primary-valve failure, and reactor heat-up when the
heat-recovery temperature control drops out.

States clamp to physical ranges instead of erroring so that training
episodes stay alive; consequences (air impurity, plant shutdown, reactor
overheating) are tracked from sustained limit violations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DtTooLarge,
    NonFiniteState,
    OperatorTimeout,
    UnknownVariable,
)
from .telemetry import (
    AlarmEvent,
    ControlAction,
    EpisodeLog,
    HmiEvent,
    LogRecord,
    append_record,
)

SCENARIO_IDS = ("s1", "s2", "s3")
FAULT_KINDS = ("pic_failure", "n2_primary_failure", "tic_heat_recovery_failure")

SELECTOR_PRIMARY = 0
SELECTOR_BACKUP = 1

# Actuator ids are the HMI/manual log variable names.
ACTUATOR_RANGES = {
    "MmanNit_1": (0.0, 10.0),        # manual nitrogen feed, kg/h
    "MNitsel_1": (0.0, 1.0),         # nitrogen selector (0 primary, 1 backup)
    "MWpopOld_1": (0.0, 1.0),        # pump power fraction
    "MCReatTempOld_1": (0.0, 1.0),   # reactor cooling fraction
    "MAssWatFlowO_1": (0.0, 2500.0),  # absorber water, kg/h
    "MpumpOld_1": (0.0, 1.0),        # pump selector
    "REC3WMO_1": (0.0, 1.0),         # REC3 selector
}


@dataclass
class PlantState:
    """Continuous process variables plus the active-fault set."""

    t: float = 0.0
    tank_pressure: float = 2.0        # bar (PSERB_1)
    tank_level: float = 0.5           # fraction (LSERB_1)
    n2_primary_flow: float = 5.0      # kg/h (FN2serb1O_1)
    n2_backup_flow: float = 0.0       # kg/h
    pump_power: float = 0.5           # fraction (MWpopOld_1)
    reactor_temp: float = 600.0       # K
    absorber_water_flow: float = 1000.0  # kg/h (MAssWatFlowO_1)
    boiler_methanol_mass: float = 5000.0  # kg (MliqbolO_1)
    rec3_steam_flow: float = 800.0    # kg/h (MVAPrec3_1)
    water_in_flow: float = 1000.0     # kg/h (LinasO_1)
    n2_valve_fault: bool = False      # valve feedback diagnostic
    active_faults: frozenset = frozenset()

    def copy(self) -> "PlantState":
        return replace(self)


@dataclass
class ControlVector:
    """Actuator commands; clamped to ACTUATOR_RANGES on application."""

    n2_setpoint: float = 0.0          # MmanNit_1, used when regulation is manual
    n2_selector: int = SELECTOR_PRIMARY  # Nitsel_1 / MNitsel_1
    pump_power_cmd: float = 0.5       # MWpopOld_1
    reactor_cooling_cmd: float = 0.0  # MCReatTempOld_1 / MCoolreatOld_1
    absorber_water_cmd: float = 1000.0  # MAssWatFlowO_1
    pump_selector: int = 0            # MpumpOld_1
    rec3_selector: int = 0            # REC3WMO_1

    def apply(self, action: ControlAction) -> None:
        lo, hi = ACTUATOR_RANGES[action.actuator]
        value = min(max(action.value, lo), hi)
        if action.actuator == "MmanNit_1":
            self.n2_setpoint = value
        elif action.actuator == "MNitsel_1":
            self.n2_selector = int(round(value))
        elif action.actuator == "MWpopOld_1":
            self.pump_power_cmd = value
        elif action.actuator == "MCReatTempOld_1":
            self.reactor_cooling_cmd = value
        elif action.actuator == "MAssWatFlowO_1":
            self.absorber_water_cmd = value
        elif action.actuator == "MpumpOld_1":
            self.pump_selector = int(round(value))
        elif action.actuator == "REC3WMO_1":
            self.rec3_selector = int(round(value))


@dataclass
class FaultSet:
    """Scripted faults with their onset times (seconds)."""

    active: frozenset = frozenset()
    onset_times: dict = field(default_factory=dict)

    def __post_init__(self):
        self.active = frozenset(self.active)
        for f in self.active:
            if f not in FAULT_KINDS:
                raise ConfigError(f"unknown fault kind {f!r}")
            if f not in self.onset_times:
                raise ConfigError(f"fault {f!r} has no onset time")
            if self.onset_times[f] < 0:
                raise ConfigError(f"fault {f!r} onset must be >= 0")

    def active_at(self, t: float) -> frozenset:
        return frozenset(f for f in self.active if self.onset_times[f] <= t)


@dataclass
class PlantParams:
    """Gains and nominal operating point of the surrogate loops."""

    # Nitrogen / pressure loop
    pressure_gain: float = 0.001      # bar per (kg/h) per s
    pump_consumption: float = 10.0    # kg/h at full pump power
    pressure_setpoint: float = 2.0    # bar, automatic regulation target
    auto_feed_kp: float = 20.0        # kg/h per bar of pressure error
    feed_max: float = 10.0            # kg/h actuator limit
    backup_tau: float = 120.0         # s, backup-line first-order lag
    pump_tau: float = 10.0            # s, pump-power actuator lag
    # Reactor loop (heat units are arbitrary; gains set the K/s scale)
    reaction_heat: float = 4.25
    heat_recovery_duty: float = 3.5
    heat_recovery_duty_faulted: float = 0.5
    absorber_duty_max: float = 1.5    # at absorber_ref water flow
    absorber_ref: float = 2000.0      # kg/h
    reactor_cooling_max: float = 5.0  # direct cooling duty at full command
    temp_gain: float = 0.08           # K/s per heat unit
    temp_nominal: float = 600.0       # K
    absorber_tau: float = 20.0        # s, absorber valve lag
    # Auxiliary balances
    steam_base: float = 800.0         # kg/h REC3 steam at nominal temperature
    steam_span: float = 100.0         # K per 100% steam increase
    methanol_in: float = 200.0        # kg/h boiler feed
    methanol_out_full: float = 400.0  # kg/h boiler draw at full pump power
    water_in_nominal: float = 1000.0  # kg/h
    # Integration / clamps
    dt_max: float = 5.0               # s, declared Euler stability bound
    clamp_pressure: tuple = (0.2, 3.5)
    clamp_level: tuple = (0.0, 1.0)
    clamp_temp: tuple = (550.0, 750.0)
    sensor_noise: float = 0.0015      # relative, applied to logged values only


@dataclass
class AlarmThreshold:
    alarm_id: str
    variable: str                     # PlantState field name
    low: float
    high: float
    severity: str = "critical"        # critical | warning
    hysteresis: float = 0.02          # fraction of (high - low)


def default_alarm_table() -> dict:
    """One global alarm table so the log column set is scenario-invariant."""
    rows = [
        AlarmThreshold("All2_01", "tank_pressure", 1.85, 3.0, "critical"),
        AlarmThreshold("All2_02", "n2_primary_flow", 0.5, 20.0, "warning"),
        AlarmThreshold("All2_03", "reactor_temp", 560.0, 612.0, "critical"),
        AlarmThreshold("All2_04", "reactor_temp", 500.0, 660.0, "critical"),
        AlarmThreshold("All2_05", "n2_valve_fault", -0.5, 0.5, "warning"),
        AlarmThreshold("All2_06", "rec3_steam_flow", 400.0, 1200.0, "warning"),
    ]
    return {row.alarm_id: row for row in rows}


@dataclass
class ConsequenceLimits:
    overheat_temp: float = 700.0      # K
    overheat_hold_s: float = 60.0
    shutdown_pressure: tuple = (0.8, 3.2)  # bar hard limits
    shutdown_level: tuple = (0.05, 0.95)
    impurity_pressure: float = 1.0    # bar, atmospheric ingress threshold
    impurity_hold_s: float = 30.0


@dataclass
class ScenarioConfig:
    """Everything a scenario run needs; see default_scenario() for presets."""

    scenario_id: str
    duration_s: float = 900.0
    dt_s: float = 1.0
    fault_schedule: FaultSet = field(default_factory=FaultSet)
    alarm_thresholds: dict = field(default_factory=default_alarm_table)
    consequence_limits: ConsequenceLimits = field(default_factory=ConsequenceLimits)
    plant: PlantParams = field(default_factory=PlantParams)
    primary_actuator: str = "MmanNit_1"   # the scenario's continuous control task
    critical_alarm_id: str = "All2_01"    # defines recovery bookkeeping
    has_overflow: bool = False            # scenario 3 only

    def validate(self) -> None:
        if self.scenario_id not in SCENARIO_IDS:
            raise ConfigError(f"unknown scenario_id {self.scenario_id!r}")
        if self.dt_s <= 0:
            raise ConfigError("dt_s must be positive")
        if self.duration_s < 0:
            raise ConfigError("duration_s must be nonnegative")
        for alarm_id, th in self.alarm_thresholds.items():
            if th.low > th.high:
                raise ConfigError(f"alarm {alarm_id}: low > high")
        for f, onset in self.fault_schedule.onset_times.items():
            if self.duration_s and onset >= self.duration_s:
                raise ConfigError(f"fault {f} onset {onset} beyond duration")
        if self.primary_actuator not in ACTUATOR_RANGES:
            raise ConfigError(f"unknown primary actuator {self.primary_actuator!r}")


# Static expert values from the operating-procedure manual; these are also
# the "prescribed control action" baseline the accuracy metric scores
# against and the expert policy the specialized agents start from.
EXPERT_VALUES = {
    "MmanNit_1": 6.5,
    "MNitsel_1": 1.0,
    "MWpopOld_1": 0.25,
    "MCReatTempOld_1": 0.8,
    "MAssWatFlowO_1": 2000.0,
}


def default_scenario(scenario_id: str) -> ScenarioConfig:
    """Preset scenario configurations matching the three fault scripts."""
    if scenario_id == "s1":
        return ScenarioConfig(
            scenario_id="s1",
            duration_s=900.0,
            fault_schedule=FaultSet({"pic_failure"}, {"pic_failure": 120.0}),
            primary_actuator="MmanNit_1",
            critical_alarm_id="All2_01",
        )
    if scenario_id == "s2":
        return ScenarioConfig(
            scenario_id="s2",
            duration_s=900.0,
            fault_schedule=FaultSet(
                {"n2_primary_failure"}, {"n2_primary_failure": 120.0}
            ),
            primary_actuator="MWpopOld_1",
            critical_alarm_id="All2_01",
        )
    if scenario_id == "s3":
        return ScenarioConfig(
            scenario_id="s3",
            duration_s=1080.0,
            fault_schedule=FaultSet(
                {"tic_heat_recovery_failure"},
                {"tic_heat_recovery_failure": 120.0},
            ),
            primary_actuator="MCReatTempOld_1",
            critical_alarm_id="All2_03",
            has_overflow=True,
        )
    raise ConfigError(f"unknown scenario_id {scenario_id!r}")


def initial_state(cfg: ScenarioConfig) -> PlantState:
    p = cfg.plant
    return PlantState(
        t=0.0,
        tank_pressure=p.pressure_setpoint,
        n2_primary_flow=p.pump_consumption * 0.5,
        pump_power=0.5,
        reactor_temp=p.temp_nominal,
        absorber_water_flow=1000.0,
        rec3_steam_flow=p.steam_base,
        water_in_flow=p.water_in_nominal,
    )


def _lag(current: float, target: float, tau: float, dt: float) -> float:
    # Euler step of dx/dt = (target - x) / tau, stable for dt << tau.
    return current + (target - current) * dt / tau


def step(state: PlantState, controls: ControlVector, faults: FaultSet,
         dt: float, params: PlantParams | None = None) -> PlantState:
    """Advance the plant one explicit-Euler step.

    Faults disable the matching automatic controller: pic_failure freezes
    automatic nitrogen regulation (feed follows the manual setpoint),
    n2_primary_failure zeroes the primary line regardless of commands,
    tic_heat_recovery_failure drops the heat-recovery duty to its faulted
    residual.
    """
    p = params or PlantParams()
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if dt > p.dt_max:
        raise DtTooLarge(f"dt={dt} exceeds stability bound {p.dt_max}")
    active = faults.active if isinstance(faults, FaultSet) else frozenset(faults)

    pump_power = _lag(state.pump_power, controls.pump_power_cmd, p.pump_tau, dt)
    consumption = p.pump_consumption * pump_power

    # Nitrogen feed target: automatic pressure regulation unless the PIC
    # is down, in which case only the manual setpoint feeds the tank.
    if "pic_failure" in active:
        feed_target = controls.n2_setpoint
    else:
        error = p.pressure_setpoint - state.tank_pressure
        feed_target = consumption + p.auto_feed_kp * error
    feed_target = min(max(feed_target, 0.0), p.feed_max)

    primary_ok = "n2_primary_failure" not in active
    if controls.n2_selector == SELECTOR_PRIMARY:
        primary = feed_target if primary_ok else 0.0
        backup = _lag(state.n2_backup_flow, 0.0, p.backup_tau, dt)
    else:
        primary = 0.0
        backup = _lag(state.n2_backup_flow, feed_target, p.backup_tau, dt)

    pressure = state.tank_pressure + p.pressure_gain * (primary + backup - consumption) * dt

    absorber = _lag(state.absorber_water_flow, controls.absorber_water_cmd,
                    p.absorber_tau, dt)
    heat_recovery = (
        p.heat_recovery_duty_faulted
        if "tic_heat_recovery_failure" in active
        else p.heat_recovery_duty
    )
    cooling = (
        heat_recovery
        + p.absorber_duty_max * (absorber / p.absorber_ref)
        + p.reactor_cooling_max * controls.reactor_cooling_cmd
    )
    temp = state.reactor_temp + p.temp_gain * (p.reaction_heat - cooling) * dt

    # Boiler methanol balance; level stays regulated (water out tracks in).
    methanol = state.boiler_methanol_mass + (
        p.methanol_in - p.methanol_out_full * pump_power
    ) * dt / 3600.0
    level = state.tank_level
    steam = p.steam_base * (1.0 + (temp - p.temp_nominal) / p.steam_span)

    nxt = PlantState(
        t=state.t + dt,
        tank_pressure=_clamp(pressure, p.clamp_pressure),
        tank_level=_clamp(level, p.clamp_level),
        n2_primary_flow=max(primary, 0.0),
        n2_backup_flow=max(backup, 0.0),
        pump_power=_clamp(pump_power, (0.0, 1.0)),
        reactor_temp=_clamp(temp, p.clamp_temp),
        absorber_water_flow=max(absorber, 0.0),
        boiler_methanol_mass=max(methanol, 0.0),
        rec3_steam_flow=max(steam, 0.0),
        water_in_flow=max(state.water_in_flow, 0.0),
        n2_valve_fault="n2_primary_failure" in active,
        active_faults=active,
    )
    for name in ("tank_pressure", "tank_level", "reactor_temp",
                 "n2_primary_flow", "n2_backup_flow", "boiler_methanol_mass"):
        if not math.isfinite(getattr(nxt, name)):
            raise NonFiniteState(f"{name} became non-finite at t={nxt.t}")
    return nxt


def _clamp(x: float, bounds: tuple) -> float:
    return min(max(x, bounds[0]), bounds[1])


def evaluate_alarms(state: PlantState, cfg: ScenarioConfig,
                    previously_active: set) -> list:
    """Threshold alarms with hysteresis.

    Annunciates when a variable leaves its (low, high) band and the alarm
    is not already active; clears when it re-enters the band by the
    hysteresis margin.  The caller owns ``previously_active`` and updates
    it from the returned events.
    """
    events = []
    for alarm_id, th in cfg.alarm_thresholds.items():
        if not hasattr(state, th.variable):
            raise UnknownVariable(
                f"alarm {alarm_id} references unknown variable {th.variable!r}"
            )
        value = float(getattr(state, th.variable))
        band = th.high - th.low
        margin = th.hysteresis * band
        out_of_band = value < th.low or value > th.high
        back_in_band = (th.low + margin) <= value <= (th.high - margin)
        if out_of_band and alarm_id not in previously_active:
            events.append(AlarmEvent(alarm_id, "annunciated", state.t, th.severity))
        elif back_in_band and alarm_id in previously_active:
            events.append(AlarmEvent(alarm_id, "cleared", state.t, th.severity))
    return events


class ConsequenceTracker:
    """Sustained-violation rules for the terminal outcome taxonomy."""

    def __init__(self, limits: ConsequenceLimits):
        self.limits = limits
        self._overheat_since = None
        self._impurity_since = None
        self.events = []  # [{kind, t}], each kind recorded once
        self._seen = set()

    def update(self, state: PlantState) -> None:
        lim = self.limits
        t = state.t
        if state.reactor_temp > lim.overheat_temp:
            self._overheat_since = self._overheat_since if self._overheat_since is not None else t
            if t - self._overheat_since >= lim.overheat_hold_s:
                self._record("reactor_overheating", t)
        else:
            self._overheat_since = None
        if state.tank_pressure < lim.impurity_pressure:
            self._impurity_since = self._impurity_since if self._impurity_since is not None else t
            if t - self._impurity_since >= lim.impurity_hold_s:
                self._record("air_impurity", t)
        else:
            self._impurity_since = None
        lo_p, hi_p = lim.shutdown_pressure
        lo_l, hi_l = lim.shutdown_level
        if not (lo_p <= state.tank_pressure <= hi_p) or not (lo_l <= state.tank_level <= hi_l):
            self._record("plant_shutdown", t)

    def _record(self, kind: str, t: float) -> None:
        if kind not in self._seen:
            self._seen.add(kind)
            self.events.append({"kind": kind, "t": t})


@dataclass
class SupportMode:
    """Session switch mirroring the two experiment groups."""

    group: str = "GroupN"             # GroupN | GroupAI
    mode: str = "operations"          # operations | training
    system: object = None             # orchestrator instance for GroupAI


@dataclass
class TickView:
    """Read-only snapshot handed to the support system and the operator."""

    t: float
    state: PlantState
    controls: ControlVector
    active_alarms: dict               # alarm_id -> {"t", "severity", "acked", "silenced"}
    new_alarm_events: list
    group: str
    log: EpisodeLog = None            # tail for real-time monitors


def run_scenario(cfg: ScenarioConfig, operator, support: SupportMode | None = None,
                 *, participant_id: str = "P00", seed: int = 0,
                 operator_tick_budget_s: float | None = None,
                 on_tick=None) -> EpisodeLog:
    """Run the full tick loop and return a complete episode log.

    Per tick: plant step -> alarm evaluation -> support-system tick ->
    operator action -> log append.  Operator actions are applied at the
    next tick boundary.  Identical (cfg, operator seed, engine seed)
    inputs produce a bit-identical log.  ``on_tick(view, support_out,
    log)`` runs after each append (the protocol pump hangs off it).
    """
    cfg.validate()
    support = support or SupportMode()
    rng = np.random.default_rng(seed)
    state = initial_state(cfg)
    controls = ControlVector(
        pump_power_cmd=state.pump_power,
        absorber_water_cmd=state.absorber_water_flow,
    )
    tracker = ConsequenceTracker(cfg.consequence_limits)
    alarm_ids = list(cfg.alarm_thresholds.keys())
    columns = _episode_columns(alarm_ids)
    log = EpisodeLog(
        participant_id=participant_id,
        group=support.group,
        scenario_id=cfg.scenario_id,
        columns=columns,
    )

    active_alarms: dict = {}
    ack_count = 0
    human_value = math.nan
    pending_actions: list = []
    hmi_flags = {"intop_1": 0.0, "intop_2": 0.0, "intop_5": 0.0}
    if hasattr(operator, "reset"):
        operator.reset(rng)

    append_record(log, _make_record(
        0.0, state, controls, active_alarms, alarm_ids, ack_count,
        human_value, math.nan, hmi_flags, rng, cfg.plant.sensor_noise,
    ))

    n_ticks = int(round(cfg.duration_s / cfg.dt_s))
    for _ in range(n_ticks):
        # Inbound actions from the previous tick take effect now.
        for action in pending_actions:
            if action.kind == "approve_automation":
                log.hmi_events.append(HmiEvent(state.t, "automation_approved", {}))
                if support.system is not None:
                    support.system.approve_automation()
                continue
            if action.kind == "revoke_automation":
                log.hmi_events.append(HmiEvent(state.t, "automation_revoked", {}))
                if support.system is not None:
                    support.system.revoke_automation()
                continue
            _apply_action(action, controls, active_alarms, log, state.t,
                          hmi_flags)
            if action.kind == "ack_alarm":
                ack_count += 1
            if action.kind in ("manual_control", "auto_control"):
                if action.actuator == cfg.primary_actuator:
                    lo, hi = ACTUATOR_RANGES[action.actuator]
                    human_value = min(max(action.value, lo), hi)
        pending_actions = []

        active_now = cfg.fault_schedule.active_at(state.t)
        state = step(state, controls,
                     FaultSet(active_now, dict(cfg.fault_schedule.onset_times)),
                     cfg.dt_s, cfg.plant)
        tracker.update(state)

        events = evaluate_alarms(state, cfg, set(active_alarms))
        for ev in events:
            log.alarm_events.append(ev)
            if ev.kind == "annunciated":
                active_alarms[ev.alarm_id] = {
                    "t": ev.t, "severity": ev.severity,
                    "acked": False, "silenced": False,
                }
            elif ev.kind == "cleared":
                active_alarms.pop(ev.alarm_id, None)

        view = TickView(
            t=state.t, state=state, controls=controls,
            active_alarms=active_alarms, new_alarm_events=events,
            group=support.group, log=log,
        )
        suggestion = None
        out = None
        suggestion_value = math.nan
        if support.system is not None:
            out = support.system.tick(view)
            suggestion = getattr(out, "suggestion", None)
            if suggestion is not None and getattr(
                suggestion, "target_actuator", None
            ) == cfg.primary_actuator and suggestion.value is not None:
                suggestion_value = suggestion.value
            auto = getattr(out, "auto_action", None)
            if auto is not None:
                pending_actions.append(auto)

        started = time.perf_counter()
        actions = operator.act(view, suggestion) if operator is not None else []
        if operator_tick_budget_s is not None:
            elapsed = time.perf_counter() - started
            if elapsed > operator_tick_budget_s:
                raise OperatorTimeout(
                    f"operator used {elapsed:.3f}s of {operator_tick_budget_s}s budget"
                )
        if actions:
            pending_actions.extend(actions)

        append_record(log, _make_record(
            state.t, state, controls, active_alarms, alarm_ids, ack_count,
            human_value, suggestion_value, hmi_flags, rng,
            cfg.plant.sensor_noise,
        ))
        for key in hmi_flags:
            hmi_flags[key] = 0.0
        if on_tick is not None:
            on_tick(view, out, log)

    log.consequences = list(tracker.events)
    log.toi_markers = derive_toi_markers(cfg, log)
    return log


def _apply_action(action: ControlAction, controls: ControlVector,
                  active_alarms: dict, log: EpisodeLog, t: float,
                  hmi_flags: dict) -> None:
    if action.kind == "manual_control":
        controls.apply(action)
        log.hmi_events.append(HmiEvent(t, "manual_control", {
            "actuator": action.actuator, "value": action.value,
        }))
        hmi_flags["intop_1"] = 1.0  # mimic interaction
    elif action.kind == "auto_control":
        controls.apply(action)
        log.hmi_events.append(HmiEvent(t, "manual_control", {
            "actuator": action.actuator, "value": action.value,
            "source": "auto",
        }))
    elif action.kind == "ack_alarm":
        info = active_alarms.get(action.actuator)
        if info is not None and not info["acked"]:
            info["acked"] = True
            log.alarm_events.append(
                AlarmEvent(action.actuator, "acknowledged", t, info["severity"])
            )
            log.hmi_events.append(
                HmiEvent(t, "alarm_acknowledged", {"alarm_id": action.actuator})
            )
    elif action.kind == "silence_alarm":
        info = active_alarms.get(action.actuator)
        if info is not None and not info["silenced"]:
            info["silenced"] = True
            log.alarm_events.append(
                AlarmEvent(action.actuator, "silenced", t, info["severity"])
            )
            log.hmi_events.append(
                HmiEvent(t, "alarm_silenced", {"alarm_id": action.actuator})
            )
    elif action.kind == "ack_ai":
        log.hmi_events.append(HmiEvent(t, "ai_acknowledged", {}))
        hmi_flags["intop_5"] = 1.0
    elif action.kind == "open_procedure":
        log.hmi_events.append(
            HmiEvent(t, "procedure_opened", {"procedure": action.actuator})
        )
        hmi_flags["intop_2"] = 1.0
    elif action.kind == "open_mimic":
        log.hmi_events.append(
            HmiEvent(t, "mimic_opened", {"mimic": action.actuator})
        )
        hmi_flags["intop_1"] = 1.0


def _episode_columns(alarm_ids) -> tuple:
    from .telemetry import BASE_COLUMNS

    alarm_cols = tuple(f"All2_{a.split('_')[1]}" for a in alarm_ids)
    silence_cols = tuple(f"sAll_{a.split('_')[1]}" for a in alarm_ids)
    base = tuple(c for c in BASE_COLUMNS)
    return base + tuple(c for c in alarm_cols if c not in base) + silence_cols


def _make_record(t, state, controls, active_alarms, alarm_ids, ack_count,
                 human_value, suggestion_value, hmi_flags, rng, noise) -> LogRecord:
    def meas(x, scale):
        if noise <= 0:
            return x
        return x + rng.normal(0.0, noise * scale)

    values = {
        "LSERB_1": meas(state.tank_level, 1.0),
        "PSERB_1": meas(state.tank_pressure, 2.0),
        "FN2serb1O_1": meas(state.n2_primary_flow, 5.0),
        "MWpopOld_1": state.pump_power,
        "MliqbolO_1": meas(state.boiler_methanol_mass, 5000.0),
        "MVAPrec3_1": meas(state.rec3_steam_flow, 800.0),
        "LinasO_1": meas(state.water_in_flow, 1000.0),
        "MAssWatFlowO_1": state.absorber_water_flow,
        "Nitsel_1": float(controls.n2_selector),
        "MNitsel_1": float(controls.n2_selector),
        "MmanNit_1": controls.n2_setpoint,
        "MCoolreatOld_1": 1.0 if controls.reactor_cooling_cmd > 0 else 0.0,
        "MCReatTempOld_1": controls.reactor_cooling_cmd,
        "MAssWatO_1": 1.0 if abs(controls.absorber_water_cmd - 1000.0) > 1e-9 else 0.0,
        "MpumpOld_1": float(controls.pump_selector),
        "REC3WMO_1": float(controls.rec3_selector),
        "Human": human_value,
        "SRLA": suggestion_value,
        "SRLA_vs_Human": math.nan,
        "AckAll": float(ack_count),
        "intop_1": hmi_flags["intop_1"],
        "intop_2": hmi_flags["intop_2"],
        "intop_5": hmi_flags["intop_5"],
    }
    for alarm_id in alarm_ids:
        suffix = alarm_id.split("_")[1]
        info = active_alarms.get(alarm_id)
        values[f"All2_{suffix}"] = 1.0 if info is not None else 0.0
        values[f"sAll_{suffix}"] = 1.0 if info is not None and info["silenced"] else 0.0
    return LogRecord(t=t, values=values)


def derive_toi_markers(cfg: ScenarioConfig, log: EpisodeLog) -> dict:
    """Baseline / critical-alarm / alarm-overflow window boundaries."""
    criticals = [
        ev for ev in log.alarm_events
        if ev.kind == "annunciated" and ev.severity == "critical"
    ]
    markers = {}
    if criticals:
        markers["baseline_end"] = criticals[0].t
        markers["critical_start"] = criticals[0].t
    if cfg.has_overflow and len(criticals) >= 2:
        markers["overflow_start"] = criticals[1].t
    return markers
