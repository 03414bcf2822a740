"""Sensor-space PID tracking and the closed policy-deployment loop.

The inner loop runs one PID update per simulator step on the spring-length
error and clamps pressure commands to the pump range with anti-windup. The
outer loop turns a policy's sensor-space setpoints into tracked motion until
the goal is reached or budgets run out.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .arm import wrap_angles_deg
from .errors import DomainError
from .sensor import f_map
from .sim import ArmSim


@dataclass(frozen=True)
class PIDConfig:
    # the differential spring mode sees loop gain scaled by r_anchor/d
    # (~0.26), so the integral gain carries most of the settling work
    kp: float = 2.0        # kPa/mm
    ki: float = 3.0
    kd: float = 0.05
    integral_clamp: float = 100.0   # mm*s
    settle_tol: float = 0.5         # mm
    settle_budget: int = 200        # simulator steps

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise DomainError("PID gains must be nonnegative")
        if self.settle_tol <= 0:
            raise DomainError("settle tolerance must be positive")


_LOG_COLUMNS = (
    ["t_s"]
    + [f"{c}_mm" for c in ("x", "y", "z")]
    + [f"{c}_deg" for c in ("yaw", "pitch", "roll")]
    + [f"spring{i}_mm" for i in range(1, 10)]
    + [f"f{i}_hz" for i in range(1, 10)]
    + [f"q{i}_kpa" for i in range(1, 10)]
    + [f"sat{i}" for i in range(1, 10)]
    + [f"goal_{c}_mm" for c in ("x", "y", "z")]
    + [f"goal_{c}_deg" for c in ("yaw", "pitch", "roll")]
    + ["err_scaled"]
)


@dataclass
class TrajectoryLog:
    """Append-only per-step record of a deployment run."""

    rows: list = field(default_factory=list)
    success: bool = False
    policy_steps: int = 0

    def append(self, t: float, pose, springs, f_sensor, pressures, sat,
               goal, err_scaled: float) -> None:
        if self.rows and t <= self.rows[-1][0]:
            raise DomainError("log time must be strictly increasing")
        row = ([t] + list(pose) + list(springs) + list(f_sensor)
               + list(pressures) + [int(s) for s in sat] + list(goal)
               + [err_scaled])
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        idx = _LOG_COLUMNS.index(name)
        return np.array([r[idx] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_LOG_COLUMNS)
            writer.writerows(self.rows)


class PIDTracker:
    """Per-chamber PID state over the 9 spring-length errors."""

    def __init__(self, cfg: PIDConfig, n: int = 9):
        self.cfg = cfg
        self.integral = np.zeros(n)
        self.prev_error = None

    def reset(self) -> None:
        self.integral.fill(0.0)
        self.prev_error = None

    def command(self, error: np.ndarray, dt: float, p_min: float,
                p_max: float) -> np.ndarray:
        cfg = self.cfg
        deriv = np.zeros_like(error) if self.prev_error is None \
            else (error - self.prev_error) / dt
        raw = cfg.kp * error + cfg.ki * self.integral + cfg.kd * deriv
        clamped = np.clip(raw, p_min, p_max)
        # anti-windup: only integrate where the command is unsaturated or the
        # error pulls the command back toward the admissible range
        free = (clamped == raw) | (np.sign(error) != np.sign(raw - clamped))
        self.integral = np.where(free, self.integral + error * dt, self.integral)
        self.integral = np.clip(self.integral, -cfg.integral_clamp,
                                cfg.integral_clamp)
        self.prev_error = error.copy()
        return clamped


def pid_track(sim: ArmSim, l_ref, cfg: PIDConfig, log: TrajectoryLog = None,
              goal=None, err_fn=None, tracker: PIDTracker = None):
    """Drive the simulator until the measured springs reach ``l_ref``.

    Returns (settled, info) where info carries the final error vector and
    the number of steps consumed. Pressure commands never leave the pump
    range. Pass ``log`` (plus goal/err_fn context) to record every step.
    """
    l_ref = np.asarray(l_ref, dtype=float)
    lo, hi = sim.spring_bounds()
    if np.any(l_ref < lo - 1e-9) or np.any(l_ref > hi + 1e-9):
        raise DomainError(f"spring reference outside [{lo}, {hi}]")
    tracker = tracker or PIDTracker(cfg, sim.params.n_chambers)
    steps = 0
    error = l_ref - sim.read_springs()
    while np.abs(error).max() >= cfg.settle_tol and steps < cfg.settle_budget:
        pressures = tracker.command(error, sim.params.sim_dt,
                                    sim.params.pressure_min,
                                    sim.params.pressure_max)
        sim.step(pressures)
        steps += 1
        error = l_ref - sim.read_springs()
        if log is not None:
            pose = sim.true_pose().as_array()
            g = np.zeros(6) if goal is None else np.asarray(goal, dtype=float)
            err_scaled = float("nan") if err_fn is None else err_fn(pose, g)
            log.append(sim.time, pose, sim.read_springs(), sim.read_f_sensor(),
                       pressures, sim.state.saturation_flags, g, err_scaled)
    settled = bool(np.abs(error).max() < cfg.settle_tol)
    info = {"steps": steps, "final_error": error,
            "max_abs_error": float(np.abs(error).max()),
            "saturated": sim.saturated()}
    return settled, info


@dataclass(frozen=True)
class DeployConfig:
    """Outer-loop parameters for policy deployment."""

    error_weights: np.ndarray          # 6-vector, translations then rotations
    goal_threshold: float = 0.03       # on the scaled error norm
    max_policy_steps: int = 20
    pid: PIDConfig = PIDConfig()


def scaled_error_norm(pose_vec, goal_vec, weights) -> float:
    diff = np.asarray(pose_vec, dtype=float) - np.asarray(goal_vec, dtype=float)
    diff[3:] = wrap_angles_deg(diff[3:])
    return float(np.linalg.norm(np.asarray(weights) * diff))


def deploy_policy(sim: ArmSim, policy, s2r_apply, goal, cfg: DeployConfig,
                  log: TrajectoryLog = None) -> TrajectoryLog:
    """Closed loop: sensors -> pose estimate -> policy -> setpoint -> PID.

    ``policy(pose6, goal6) -> f_sensor[9]`` must be deterministic.
    ``s2r_apply(pose6, springs9) -> pose6`` corrects the model-side pose
    estimate; pass None to use the raw estimate. The loop stops on goal
    reach (scaled error below threshold) or the policy-step budget; the
    returned log carries the success flag either way.
    """
    log = log if log is not None else TrajectoryLog()
    goal_vec = np.asarray(goal, dtype=float)
    w = np.asarray(cfg.error_weights, dtype=float)

    def observe() -> np.ndarray:
        est = sim.estimated_pose_from_sensors().as_array()
        if s2r_apply is not None:
            est = s2r_apply(est, sim.read_springs())
        return est

    def err_fn(_pose, _goal) -> float:
        return scaled_error_norm(observe(), goal_vec, w)

    if scaled_error_norm(observe(), goal_vec, w) < cfg.goal_threshold:
        log.success = True
        return log
    for k in range(cfg.max_policy_steps):
        pose_est = observe()
        action_hz = policy(pose_est, goal_vec)
        l_ref = f_map(action_hz, sim.sensor)
        lo, hi = sim.spring_bounds()
        l_ref = np.clip(l_ref, lo, hi)
        pid_track(sim, l_ref, cfg.pid, log=log, goal=goal_vec, err_fn=err_fn)
        log.policy_steps = k + 1
        if scaled_error_norm(observe(), goal_vec, w) < cfg.goal_threshold:
            log.success = True
            return log
    log.success = False
    return log


def path_follow(sim: ArmSim, policy, s2r_apply, waypoints, cfg: DeployConfig):
    """Deploy the policy waypoint by waypoint without resetting the arm.

    Reports per-waypoint success flags and translation/rotation errors of
    the true pose against each waypoint at hand-off.
    """
    waypoints = [np.asarray(wp, dtype=float) for wp in waypoints]
    if len(waypoints) < 2:
        raise DomainError("need at least two waypoints")
    successes = []
    trans_errors = []
    rot_abs_errors = []
    logs = []
    for wp in waypoints:
        log = deploy_policy(sim, policy, s2r_apply, wp, cfg)
        logs.append(log)
        successes.append(log.success)
        true = sim.true_pose().as_array()
        trans_errors.append(float(np.linalg.norm(true[:3] - wp[:3])))
        rot_abs_errors.append(np.abs(wrap_angles_deg(true[3:] - wp[3:])))
    rot = np.array(rot_abs_errors)
    return {
        "rmse_translation_mm": float(np.sqrt(np.mean(np.square(trans_errors)))),
        "mean_abs_yaw_deg": float(rot[:, 0].mean()),
        "mean_abs_pitch_deg": float(rot[:, 1].mean()),
        "mean_abs_roll_deg": float(rot[:, 2].mean()),
        "per_waypoint_success": successes,
        "per_waypoint_translation_mm": trans_errors,
        "success_rate": float(np.mean(successes)),
        "logs": logs,
    }
