"""Adversarial reward learning from demonstrations.

A sigmoid discriminator over (state, action, goal) separates demonstration
pairs from policy-generated ones; the policy's reward is log(1 - D), so
expert-like behavior is rewarded. Training regularizes the discriminator
with a gradient-norm penalty on interpolated state-action pairs. The update
procedure follows the faithful buffer-reset protocol by default, with a
recompute-on-sample variant behind a flag.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .arm import Pose6D
from .errors import ConfigError, DomainError
from .nets import AdamState, MLPNet, adam_step, grad_norm_penalty
from .rl.buffer import ReplayBuffer, TransitionBatch
from .rl.core import (
    BandMap,
    RLConfig,
    Transition,
    build_state,
    state_features_batch,
)

logger = logging.getLogger(__name__)

REWARD_CLAMP = math.log(1e-6)
DEMO_FORMAT = "springarm-demo"
DEMO_VERSION = 1


# -- demonstration records ---------------------------------------------------
@dataclass(frozen=True)
class DemoRecord:
    """One timestamped demonstration step (sim time, not wall clock)."""

    t: float
    chamber_lengths: np.ndarray
    spring_lengths: np.ndarray
    f_sensor: np.ndarray
    pose: np.ndarray
    goal: np.ndarray
    scene_id: str
    source: str

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "chamber_lengths": list(map(float, self.chamber_lengths)),
            "spring_lengths": list(map(float, self.spring_lengths)),
            "f_sensor": list(map(float, self.f_sensor)),
            "pose": list(map(float, self.pose)),
            "goal": list(map(float, self.goal)),
            "scene_id": self.scene_id,
            "source": self.source,
        }, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "DemoRecord":
        d = json.loads(line)
        return DemoRecord(
            t=float(d["t"]),
            chamber_lengths=np.array(d["chamber_lengths"], dtype=float),
            spring_lengths=np.array(d["spring_lengths"], dtype=float),
            f_sensor=np.array(d["f_sensor"], dtype=float),
            pose=np.array(d["pose"], dtype=float),
            goal=np.array(d["goal"], dtype=float),
            scene_id=str(d["scene_id"]),
            source=str(d["source"]),
        )


def write_demo_file(path, records, scene_id: str, source: str) -> None:
    header = json.dumps({"format": DEMO_FORMAT, "version": DEMO_VERSION,
                         "scene_id": scene_id, "source": source},
                        sort_keys=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_demo_file(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DomainError(f"{path}: empty demo file")
    header = json.loads(lines[0])
    if header.get("format") != DEMO_FORMAT:
        raise DomainError(f"{path}: not a demo file")
    if header.get("version") != DEMO_VERSION:
        raise DomainError(f"{path}: unsupported demo version")
    return [DemoRecord.from_json(ln) for ln in lines[1:]]


@dataclass
class DemoDataset:
    """Relabeled (s, a, g) demonstration records, columnar."""

    pose: np.ndarray        # (N, 6) pose of s_t
    action_hz: np.ndarray   # (N, 9)
    goal: np.ndarray        # (N, 6) achieved pose of s_{t+1}
    source: str = "oracle"
    sequence_meta: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.pose.shape[0]

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch)
        return self.pose[idx], self.action_hz[idx], self.goal[idx]


def relabel_demos(sequences, rl_cfg: RLConfig = None) -> DemoDataset:
    """Turn raw record sequences into goal-relabeled (s, a, g') records.

    Every consecutive pair contributes one record whose goal is the
    successor's achieved pose and whose action is the successor's sensor
    state (quasi-static: the setpoint that realizes it). Sequences shorter
    than two steps are skipped with a warning.
    """
    poses, actions, goals, meta = [], [], [], []
    source = "oracle"
    for seq_idx, seq in enumerate(sequences):
        if len(seq) < 2:
            logger.warning("demo sequence %d has %d step(s); skipped",
                           seq_idx, len(seq))
            continue
        source = seq[0].source
        meta.append({"scene_id": seq[0].scene_id, "t0": seq[0].t,
                     "t1": seq[-1].t, "records": len(seq) - 1})
        for rec, rec_next in zip(seq, seq[1:]):
            poses.append(rec.pose)
            actions.append(rec_next.f_sensor)
            goals.append(rec_next.pose)
    if not poses:
        raise DomainError("no usable demonstration sequences")
    return DemoDataset(pose=np.asarray(poses), action_hz=np.asarray(actions),
                       goal=np.asarray(goals), source=source,
                       sequence_meta=meta)


# -- discriminator -----------------------------------------------------------
@dataclass(frozen=True)
class GailConfig:
    gp_weight: float = 20.0
    disc_lr: float = 3e-4
    batch: int = 128
    update_every: int = 256      # env steps between discriminator updates
    reward_mode: str = "faithful"  # or "recompute"
    hidden: tuple = (128, 128)
    dtype: str = "float64"

    def __post_init__(self):
        if self.reward_mode not in ("faithful", "recompute"):
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")


class Discriminator:
    """Sigmoid classifier over (state 18, action 9, goal 6) features."""

    INPUT_DIM = 33

    def __init__(self, cfg: GailConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.net = MLPNet([self.INPUT_DIM] + list(cfg.hidden) + [1],
                          hidden_activation="tanh",
                          output_activation="sigmoid", rng=rng,
                          dtype=np.dtype(cfg.dtype))
        self.opt = AdamState.for_params(self.net.parameters(), cfg.disc_lr)
        # penalty differentiates w.r.t. state and action, not the goal
        self.gp_mask = np.concatenate([np.ones(27), np.zeros(6)])

    def features(self, pose, action_hz, goal, rl_cfg: RLConfig,
                 band: BandMap) -> np.ndarray:
        pose = np.atleast_2d(np.asarray(pose, dtype=float))
        goal = np.atleast_2d(np.asarray(goal, dtype=float))
        a = band.to_normalized(np.atleast_2d(np.asarray(action_hz, dtype=float)))
        state = state_features_batch(pose, goal, rl_cfg)
        return np.concatenate([state, a, rl_cfg.w * goal], axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = self.net.forward(np.atleast_2d(x))[:, 0]
        return np.clip(out, 1e-6, 1.0 - 1e-6)


def disc_reward(disc: Discriminator, pose, action_hz, goal,
                rl_cfg: RLConfig, band: BandMap) -> float:
    """log(1 - D) for a single (s, a, g), clamped below for safety."""
    x = disc.features(pose, action_hz, goal, rl_cfg, band)
    d = disc.predict(x)[0]
    return max(float(np.log(1.0 - d)), REWARD_CLAMP)


def disc_reward_batch(disc: Discriminator, transitions, rl_cfg: RLConfig,
                      band: BandMap) -> np.ndarray:
    pose = np.stack([t.s.p_s2r.as_array() for t in transitions])
    action = np.stack([np.asarray(t.a, dtype=float) for t in transitions])
    goal = np.stack([t.g.as_array() for t in transitions])
    x = disc.features(pose, action, goal, rl_cfg, band)
    d = disc.predict(x)
    return np.maximum(np.log(1.0 - d), REWARD_CLAMP)


def recompute_batch_rewards(disc: Discriminator, batch: TransitionBatch,
                            rl_cfg: RLConfig, band: BandMap) -> None:
    """Refresh a sampled batch's rewards from the current discriminator.

    Relabeled hindsight copies get discriminator rewards like everything
    else; they resemble relabeled demonstrations structurally, so the
    discriminator scores them on expert-likeness rather than a fixed bonus.
    """
    x = disc.features(batch.pose, batch.action_hz, batch.goal, rl_cfg, band)
    d = disc.predict(x)
    batch.reward = np.maximum(np.log(1.0 - d), REWARD_CLAMP)


def interpolate_pairs(expert_sa: tuple, policy_sa: tuple,
                      rng: np.random.Generator) -> tuple:
    """Per-pair convex mixes of expert and policy (state, action) features.

    A fresh mixing coefficient is drawn per pair; goals are taken from the
    policy samples by the caller.
    """
    s_e, a_e = (np.asarray(v, dtype=float) for v in expert_sa)
    s_p, a_p = (np.asarray(v, dtype=float) for v in policy_sa)
    if s_e.shape != s_p.shape or a_e.shape != a_p.shape:
        raise DomainError("expert/policy batch shapes differ")
    mu = rng.uniform(0.0, 1.0, size=(s_e.shape[0], 1))
    return mu * s_e + (1.0 - mu) * s_p, mu * a_e + (1.0 - mu) * a_p


def gradient_penalty(disc: Discriminator, s_tilde, a_tilde, goal_feat,
                     accumulate: bool = False) -> float:
    """Mean (||grad_{s,a} D|| - 1)^2 on the interpolated batch."""
    x = np.concatenate([np.asarray(s_tilde, dtype=float),
                        np.asarray(a_tilde, dtype=float),
                        np.asarray(goal_feat, dtype=float)], axis=1)
    return grad_norm_penalty(disc.net, x, disc.gp_mask, accumulate=accumulate)


def disc_update(disc: Discriminator, demos: DemoDataset, replay: ReplayBuffer,
                policy, cfg: GailConfig, rl_cfg: RLConfig, band: BandMap,
                rng: np.random.Generator, collect_fn=None) -> dict:
    """One adversarial update of the discriminator.

    Samples |B| transitions from the replay buffer and the demo set, pushes
    D toward 1 on policy samples and 0 on expert samples, adds the weighted
    gradient penalty on interpolated pairs, then refreshes rewards. In
    faithful mode the replay buffer is reset and refilled with exactly the
    re-rewarded batch. ``collect_fn(policy, goal)``, when given, gathers
    fresh policy transitions into the buffer first.
    """
    if demos is None or demos.size == 0:
        raise ConfigError("discriminator update requires demonstrations")
    goal = demos.goal[rng.integers(0, demos.size)]
    if collect_fn is not None:
        collect_fn(policy, goal)
    if len(replay) == 0:
        raise ConfigError("replay buffer is empty")

    batch = replay.sample(cfg.batch, rng)
    pose_d, act_d, goal_d = demos.sample(cfg.batch, rng)

    x_pi = disc.features(batch.pose, batch.action_hz, batch.goal, rl_cfg, band)
    x_ex = disc.features(pose_d, act_d, goal_d, rl_cfg, band)

    d_pi = disc.predict(x_pi)
    d_ex = disc.predict(x_ex)
    # objective per the reward convention: D -> 1 on policy, D -> 0 on expert
    loss_disc = float(np.mean(np.log(d_pi)) + np.mean(np.log(1.0 - d_ex)))

    s_tilde, a_tilde = interpolate_pairs(
        (x_ex[:, :18], x_ex[:, 18:27]), (x_pi[:, :18], x_pi[:, 18:27]), rng)
    goal_feat = x_pi[:, 27:]

    disc.net.zero_grad()
    gp = gradient_penalty(disc, s_tilde, a_tilde, goal_feat,
                          accumulate=cfg.gp_weight != 0.0)
    if cfg.gp_weight != 0.0:
        for g in disc.net.gradients():
            g *= cfg.gp_weight
    n = cfg.batch
    disc.net.forward(x_pi)
    disc.net.backward(-(1.0 / (d_pi * n))[:, None])
    disc.net.forward(x_ex)
    disc.net.backward((1.0 / ((1.0 - d_ex) * n))[:, None])
    adam_step(disc.net.parameters(), disc.net.gradients(), disc.opt)

    # refresh rewards from the updated discriminator
    x_pi = disc.features(batch.pose, batch.action_hz, batch.goal, rl_cfg, band)
    d_new = disc.predict(x_pi)
    new_rewards = np.maximum(np.log(1.0 - d_new), REWARD_CLAMP)

    if cfg.reward_mode == "faithful":
        replay.clear()
        for i in range(batch.size):
            s = build_state(Pose6D.from_array(batch.pose[i]),
                            Pose6D.from_array(batch.goal[i]), rl_cfg)
            s_next = build_state(Pose6D.from_array(batch.next_pose[i]),
                                 Pose6D.from_array(batch.goal[i]), rl_cfg)
            t = Transition(s=s, a=batch.action_hz[i], s_next=s_next,
                           g=Pose6D.from_array(batch.goal[i]),
                           r=float(new_rewards[i]),
                           step_count=int(batch.step_idx[i]))
            replay.add(t, done=bool(batch.done[i]),
                       goal_id=int(batch.goal_id[i]))

    acc_pi = float(np.mean(d_pi > 0.5))
    acc_ex = float(np.mean(d_ex < 0.5))
    return {"disc_loss": loss_disc, "gradient_penalty": gp,
            "policy_accuracy": acc_pi, "expert_accuracy": acc_ex,
            "mean_d_policy": float(d_pi.mean()),
            "mean_d_expert": float(d_ex.mean())}
