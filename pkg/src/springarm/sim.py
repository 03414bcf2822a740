"""Stateful simulator instance: arm dynamics plus sensor readout.

An ``ArmSim`` owns one :class:`~springarm.arm.ArmState` and exposes the
sensor-space view of it (spring lengths, resonant frequencies) and the pose.
A "synthetic reality" instance carries a spring-reading offset, a stiffness
scale and measurement noise on the reported pose; these stand in for the
real-world discrepancies a sim-to-real stage must absorb.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import arm as arm_mod
from .arm import ArmParams, ArmState, Pose6D, rest_state
from .sensor import SensorParams, f_map_inverse


@dataclass(frozen=True)
class RealityPerturbation:
    """Systematic gap between the nominal simulator and 'reality'."""

    stiffness_scale: float = 1.1
    spring_bias_mm: float = 2.0      # alternating sign across the 9 channels
    pose_noise_sigma_mm: float = 1.0

    def bias_vector(self, n: int = 9) -> np.ndarray:
        signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])
        return self.spring_bias_mm * signs


class ArmSim:
    """One simulator instance; single-threaded, independent of any other."""

    def __init__(self, params: ArmParams, sensor: SensorParams = None,
                 spring_bias=None, pose_noise_sigma: float = 0.0,
                 rng: np.random.Generator = None, scene=None):
        self.params = params
        self.sensor = sensor or SensorParams()
        self.spring_bias = (np.zeros(params.n_chambers) if spring_bias is None
                            else np.asarray(spring_bias, dtype=float))
        self.pose_noise_sigma = pose_noise_sigma
        self.rng = rng or np.random.default_rng(0)
        self.scene = scene
        self.state = rest_state(params)
        self.time = 0.0

    def reset(self, load_wrench=None) -> None:
        self.state = rest_state(self.params, load_wrench)
        self.time = 0.0

    def set_load(self, wrench) -> None:
        self.state.load_wrench = np.asarray(wrench, dtype=float)

    def step(self, pressures) -> None:
        self.state = arm_mod.step(self.state, pressures, self.params.sim_dt,
                                  self.params)
        self.time += self.params.sim_dt

    # -- sensing -----------------------------------------------------------
    def geometric_springs(self) -> np.ndarray:
        return arm_mod.spring_lengths(self.state.chamber_lengths, self.params)

    def read_springs(self) -> np.ndarray:
        """Spring lengths as the sensors report them (bias included)."""
        return self.geometric_springs() + self.spring_bias

    def read_f_sensor(self) -> np.ndarray:
        return f_map_inverse(self.read_springs(), self.sensor)

    def true_pose(self) -> Pose6D:
        return arm_mod.forward_kinematics(self.state.chamber_lengths, self.params)

    def measured_pose(self) -> Pose6D:
        """Externally measured pose (adds measurement noise if configured)."""
        pose = self.true_pose().as_array()
        if self.pose_noise_sigma > 0:
            pose = pose.copy()
            pose[:3] += self.rng.normal(0.0, self.pose_noise_sigma, size=3)
        return Pose6D.from_array(pose)

    def estimated_pose_from_sensors(self) -> Pose6D:
        """Pose the nominal model infers from the reported spring lengths.

        This is the deployment-time pose source: no external tracking, just
        sensors pushed through the nominal kinematics.
        """
        chambers = arm_mod.chamber_lengths_from_springs(self.read_springs(),
                                                        self.params)
        chambers = np.clip(chambers, self.params.chamber_min, self.params.chamber_max)
        return arm_mod.forward_kinematics(chambers, self.params)

    def spring_bounds(self) -> tuple:
        return (self.params.chamber_min, self.params.chamber_max)

    def clearance(self, n_samples: int = 48) -> float:
        if self.scene is None:
            return float("inf")
        _, worst = arm_mod.collision_check(self.state.chamber_lengths,
                                           self.scene, n_samples, self.params)
        return worst

    def saturated(self) -> bool:
        return bool(self.state.saturation_flags.any())

    def fork(self) -> "ArmSim":
        """Independent copy with its own RNG stream (for rollout workers)."""
        child = ArmSim(self.params, self.sensor, self.spring_bias.copy(),
                       self.pose_noise_sigma,
                       np.random.default_rng(self.rng.integers(2 ** 63)),
                       self.scene)
        child.state = self.state.copy()
        child.time = self.time
        return child


def make_reality(params: ArmParams, sensor: SensorParams,
                 perturbation: RealityPerturbation,
                 rng: np.random.Generator, scene=None) -> ArmSim:
    """Perturbed simulator standing in for the physical system."""
    perturbed = replace(params, chamber_stiffness=params.chamber_stiffness
                        * perturbation.stiffness_scale)
    return ArmSim(perturbed, sensor,
                  spring_bias=perturbation.bias_vector(params.n_chambers),
                  pose_noise_sigma=perturbation.pose_noise_sigma_mm,
                  rng=rng, scene=scene)
