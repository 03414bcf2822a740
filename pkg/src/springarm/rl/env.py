"""Sensor-space environment: one quasi-static MDP step per setpoint.

A step hands the policy's sensor-space action to the PID inner loop, waits
for settling (or the budget), then rebuilds the state from the sensor-side
pose estimate, optionally corrected by a sim-to-real net.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..arm import Pose6D
from ..control import PIDConfig, PIDTracker, pid_track
from ..errors import DomainError
from ..sensor import f_map
from ..sim import ArmSim
from .core import BandMap, RLConfig, RLState, build_state


@dataclass
class StepResult:
    state: RLState
    saturated: bool
    settled: bool
    done: bool
    reason: str          # "", "reached", "saturation", "horizon"
    step_index: int      # 0-based index of this transition in the episode


class SensorSpaceEnv:
    """Goal-conditioned wrapper around one simulator instance."""

    def __init__(self, sim: ArmSim, rl_cfg: RLConfig, band: BandMap,
                 pid_cfg: PIDConfig = None, s2r_apply=None):
        self.sim = sim
        self.rl_cfg = rl_cfg
        self.band = band
        self.pid_cfg = pid_cfg or PIDConfig(settle_budget=120)
        self.s2r_apply = s2r_apply
        self.goal = None
        self.state = None
        self.ep_steps = 0
        self.sat_streak = 0

    def observe_pose(self) -> Pose6D:
        est = self.sim.estimated_pose_from_sensors()
        if self.s2r_apply is None:
            return est
        corrected = self.s2r_apply(est.as_array(), self.sim.read_springs())
        return Pose6D.from_array(corrected)

    def reset(self, goal: Pose6D) -> RLState:
        self.sim.reset(load_wrench=self.sim.state.load_wrench)
        self.goal = goal
        self.ep_steps = 0
        self.sat_streak = 0
        self.state = build_state(self.observe_pose(), goal, self.rl_cfg)
        return self.state

    def step(self, action_hz) -> StepResult:
        if self.goal is None:
            raise DomainError("reset() must be called before step()")
        action_hz = np.asarray(action_hz, dtype=float)
        if not self.band.contains(action_hz):
            raise DomainError("action outside the valid sensor band")
        l_ref = f_map(action_hz, self.sim.sensor)
        lo, hi = self.sim.spring_bounds()
        l_ref = np.clip(l_ref, lo, hi)
        settled, _ = pid_track(self.sim, l_ref, self.pid_cfg,
                               tracker=PIDTracker(self.pid_cfg,
                                                  self.sim.params.n_chambers))
        saturated = self.sim.saturated()
        step_index = self.ep_steps
        self.ep_steps += 1
        self.sat_streak = self.sat_streak + 1 if saturated else 0
        s_next = build_state(self.observe_pose(), self.goal, self.rl_cfg)
        self.state = s_next

        cfg = self.rl_cfg
        if s_next.error_norm < cfg.theta:
            done, reason = True, "reached"
        elif self.sat_streak > cfg.saturation_streak_limit:
            done, reason = True, "saturation"
        elif self.ep_steps >= cfg.horizon:
            done, reason = True, "horizon"
        else:
            done, reason = False, ""
        return StepResult(s_next, saturated, settled, done, reason, step_index)
