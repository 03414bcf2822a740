"""Multi-goal sensor-space MDP: state construction, reward, relabeling.

States concatenate the (possibly sim-to-real corrected) pose, the goal and
the scaled pose error into an 18-vector. Angle differences are always taken
on the wrapped interval. The scaled error is recomputed wherever needed,
never stored stale.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..arm import ArmParams, Pose6D, forward_kinematics, wrap_angles_deg
from ..errors import DomainError

DEFAULT_WEIGHTS = (0.0056, 0.0056, 0.0056, 0.001, 0.001, 0.001)


@dataclass(frozen=True)
class RLConfig:
    """Reward and episode parameters of the multi-goal task."""

    weights: tuple = DEFAULT_WEIGHTS
    r_goal: float = 100.0
    epsilon: float = 10.0
    zeta: float = 0.1
    r_saturation: float = 100.0
    theta: float = 0.03
    gamma: float = 0.98
    horizon: int = 50
    workers: int = 4
    saturation_streak_limit: int = 5

    def __post_init__(self):
        if self.theta <= 0:
            raise DomainError("theta must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def scaled_error(pose_vec, goal_vec, cfg: RLConfig) -> np.ndarray:
    diff = np.asarray(pose_vec, dtype=float) - np.asarray(goal_vec, dtype=float)
    diff[3:] = wrap_angles_deg(diff[3:])
    return cfg.w * diff


@dataclass(frozen=True)
class RLState:
    """(pose after S2R, goal, scaled error); 18 numbers total."""

    p_s2r: Pose6D
    g: Pose6D
    e_scaled: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p_s2r.as_array(), self.g.as_array(),
                               self.e_scaled])

    @property
    def error_norm(self) -> float:
        return float(np.linalg.norm(self.e_scaled))


def build_state(p_s2r: Pose6D, g: Pose6D, cfg: RLConfig) -> RLState:
    e = scaled_error(p_s2r.as_array(), g.as_array(), cfg)
    return RLState(p_s2r=p_s2r, g=g, e_scaled=e)


def state_features(pose_vec, goal_vec, cfg: RLConfig) -> np.ndarray:
    """Network-input encoding of a state: w-scaled pose, goal and error."""
    pose_vec = np.asarray(pose_vec, dtype=float)
    goal_vec = np.asarray(goal_vec, dtype=float)
    return np.concatenate([cfg.w * pose_vec, cfg.w * goal_vec,
                           scaled_error(pose_vec, goal_vec, cfg)])


def state_features_batch(poses, goals, cfg: RLConfig) -> np.ndarray:
    """Vectorized :func:`state_features` over (B, 6) pose/goal arrays."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    diff = poses - goals
    diff[:, 3:] = wrap_angles_deg(diff[:, 3:])
    w = cfg.w[None, :]
    return np.concatenate([w * poses, w * goals, w * diff], axis=1)


@dataclass(frozen=True)
class Transition:
    """One stored step of the MDP; action is the sensor-space setpoint."""

    s: RLState
    a: np.ndarray            # f_sensor, Hz, shape (9,)
    s_next: RLState
    g: Pose6D
    r: float
    step_count: int

    def __post_init__(self):
        if self.step_count < 0:
            raise DomainError("step_count must be nonnegative")


def compute_reward(t: Transition, saturated: bool, cfg: RLConfig) -> float:
    """Goal / saturation / distance-and-time reward.

    Goal-reached is checked first: a reaching success is not penalized for
    transient clamping along the way.
    """
    if t.s_next.error_norm < cfg.theta:
        return cfg.r_goal
    if saturated:
        return -cfg.r_saturation
    return -cfg.epsilon * t.s_next.error_norm - cfg.zeta * t.step_count


def relabel_goal(t: Transition, cfg: RLConfig) -> Transition:
    """Hindsight copy: the achieved next pose becomes the goal, r = R_g."""
    g_new = t.s_next.p_s2r
    return Transition(
        s=build_state(t.s.p_s2r, g_new, cfg),
        a=t.a,
        s_next=build_state(t.s_next.p_s2r, g_new, cfg),
        g=g_new,
        r=cfg.r_goal,
        step_count=t.step_count,
    )


def sample_goal(workspace_bounds, params: ArmParams,
                rng: np.random.Generator) -> Pose6D:
    """Feasible goal via forward-kinematics rejection-free sampling.

    ``workspace_bounds`` is (lo, hi) over the 9 chamber lengths; sampling a
    configuration and taking its pose guarantees reachability.
    """
    lo, hi = workspace_bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (params.n_chambers,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (params.n_chambers,))
    if np.any(hi < lo):
        raise DomainError("empty workspace bounds")
    lengths = lo + (hi - lo) * rng.uniform(0.0, 1.0, size=params.n_chambers)
    return forward_kinematics(lengths, params)


@dataclass(frozen=True)
class BandMap:
    """Affine map between sensor frequencies and normalized actions."""

    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if self.hi_hz <= self.lo_hz:
            raise DomainError("empty frequency band")

    def to_normalized(self, hz) -> np.ndarray:
        hz = np.asarray(hz, dtype=float)
        return 2.0 * (hz - self.lo_hz) / (self.hi_hz - self.lo_hz) - 1.0

    def to_hz(self, normalized) -> np.ndarray:
        n = np.clip(np.asarray(normalized, dtype=float), -1.0, 1.0)
        return self.lo_hz + (n + 1.0) * 0.5 * (self.hi_hz - self.lo_hz)

    def contains(self, hz) -> bool:
        hz = np.asarray(hz, dtype=float)
        return bool(np.all(hz >= self.lo_hz - 1e-6) and np.all(hz <= self.hi_hz + 1e-6))
