"""Training environments for the specialized recommender agents.

Environments expose reset(rng) -> y, step(action) -> (y, reward, done),
and the metadata the training loop needs (action bounds, setpoint).
Rewards are the negative l1 set-point error in scaled units.
"""

from __future__ import annotations

import numpy as np

from .. import plantsim
from .agent import reward


class TankPressureEnv:
    """Pressure disturbance-rejection toy.

    The automatic regulation is out from the start (a frozen pressure
    controller), a fixed consumer drains the tank, and the agent sets the
    manual nitrogen feed.  The range midpoint (5.0) underfeeds, so a
    fresh untrained policy visibly fails while the expert manual value
    (6.5) merely underperforms; the optimum tops up toward the consumer
    rate plus a state-dependent correction.
    """

    action_low = np.array([0.0])
    action_high = np.array([10.0])
    expert_value = np.array([6.5])
    y_setpoint = np.array([2.0])
    y_dim = 1
    action_dim = 1

    def __init__(self, gain=0.01, outflow=7.5, episode_len=60,
                 clamp=(0.1, 4.0), p0_range=(1.5, 2.5)):
        self.gain = gain
        self.outflow = outflow
        self.episode_len = episode_len
        self.clamp = clamp
        self.p0_range = p0_range
        self.pressure = self.y_setpoint[0]
        self._step = 0

    def reset(self, rng=None, p0=None):
        if p0 is not None:
            self.pressure = float(p0)
        elif rng is not None:
            self.pressure = float(rng.uniform(*self.p0_range))
        else:
            self.pressure = self.y_setpoint[0]
        self._step = 0
        return np.array([self.pressure])

    def step(self, action):
        feed = float(np.clip(np.atleast_1d(action)[0],
                             self.action_low[0], self.action_high[0]))
        self.pressure += self.gain * (feed - self.outflow)
        self.pressure = float(np.clip(self.pressure, *self.clamp))
        self._step += 1
        y = np.array([self.pressure])
        r = reward(y, self.y_setpoint)
        return y, r, self._step >= self.episode_len


# Observation scaling per abnormality: (state field, setpoint, scale).
_SCENARIO_TASKS = {
    "pic_failure": ("s1", "tank_pressure", 2.0, 1.0, "MmanNit_1"),
    "n2_primary_failure": ("s2", "tank_pressure", 2.0, 1.0, "MWpopOld_1"),
    "tic_heat_recovery_failure": ("s3", "reactor_temp", 600.0, 100.0, "MCReatTempOld_1"),
}


class PlantScenarioEnv:
    """One fault scenario of the plant surrogate as a control task.

    reset() fast-forwards to the fault onset under nominal automatic
    operation (normal operation needs no agent), after which every tick
    is a specialized state.  The agent drives the abnormality's manual
    actuator; remaining controls follow the static expert procedure.
    """

    def __init__(self, abnormality_id, horizon=240):
        if abnormality_id not in _SCENARIO_TASKS:
            raise ValueError(f"no scenario task for {abnormality_id!r}")
        scenario_id, var, sp, scale, actuator = _SCENARIO_TASKS[abnormality_id]
        self.abnormality_id = abnormality_id
        self.cfg = plantsim.default_scenario(scenario_id)
        self.variable = var
        self.scale = scale
        self.actuator = actuator
        lo, hi = plantsim.ACTUATOR_RANGES[actuator]
        self.action_low = np.array([lo])
        self.action_high = np.array([hi])
        self.expert_value = np.array([plantsim.EXPERT_VALUES[actuator]])
        self.y_setpoint = np.array([sp / scale])
        self.horizon = horizon
        self.y_dim = 1
        self.action_dim = 1
        self._state = None
        self._controls = None
        self._step_count = 0

    def _observe(self):
        return np.array([getattr(self._state, self.variable) / self.scale])

    def reset(self, rng=None):
        self._state = plantsim.initial_state(self.cfg)
        self._controls = plantsim.ControlVector(
            pump_power_cmd=self._state.pump_power,
            absorber_water_cmd=self._state.absorber_water_flow,
        )
        # Pre-position the procedure's discrete steps (selector switches)
        # so the continuous task is the agent's alone.
        if self.abnormality_id == "n2_primary_failure":
            self._controls.n2_selector = plantsim.SELECTOR_BACKUP
        if self.abnormality_id == "tic_heat_recovery_failure":
            self._controls.absorber_water_cmd = plantsim.EXPERT_VALUES["MAssWatFlowO_1"]
        onset = min(self.cfg.fault_schedule.onset_times.values())
        while self._state.t < onset:
            self._state = plantsim.step(
                self._state, self._controls,
                plantsim.FaultSet(), self.cfg.dt_s, self.cfg.plant,
            )
        self._step_count = 0
        return self._observe()

    def step(self, action):
        from ..telemetry import ControlAction

        value = float(np.clip(np.atleast_1d(action)[0],
                              self.action_low[0], self.action_high[0]))
        self._controls.apply(ControlAction(self.actuator, value))
        active = self.cfg.fault_schedule.active_at(self._state.t)
        self._state = plantsim.step(
            self._state, self._controls,
            plantsim.FaultSet(active, dict(self.cfg.fault_schedule.onset_times)),
            self.cfg.dt_s, self.cfg.plant,
        )
        self._step_count += 1
        y = self._observe()
        r = reward(y, self.y_setpoint)
        return y, r, self._step_count >= self.horizon
