"""Multi-goal off-policy training loop with hindsight relabeling.

Rollout workers are independent env instances stepped round-robin by the
single learner; every stored transition also yields one relabeled copy.
Rewards come from the analytic reward function or from a GAIL
discriminator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .buffer import ReplayBuffer
from .core import BandMap, RLConfig, Transition, compute_reward, relabel_goal
from .env import SensorSpaceEnv
from .tqc import TQCAgent, act


@dataclass
class TrainResult:
    episodes: int
    successes: int
    per_goal_success: dict
    last_losses: dict
    recent_success_rate: float
    log_records: list


class ActorPolicy:
    """Deterministic deployment-time policy closure for the control runtime."""

    def __init__(self, agent: TQCAgent, rl_cfg: RLConfig, band: BandMap):
        self.agent = agent
        self.rl_cfg = rl_cfg
        self.band = band

    def __call__(self, pose_vec, goal_vec) -> np.ndarray:
        from ..arm import Pose6D
        from .core import build_state
        s = build_state(Pose6D.from_array(pose_vec),
                        Pose6D.from_array(goal_vec), self.rl_cfg)
        return act(self.agent, s, True, self.rl_cfg, self.band)


def train_multigoal(envs, goals, agent: TQCAgent, buffer: ReplayBuffer,
                    rl_cfg: RLConfig, band: BandMap, total_steps: int,
                    rng: np.random.Generator, *, reward_source: str = "analytic",
                    discriminator=None, demos=None, gail_cfg=None,
                    learning_starts: int = 500, updates_per_step: float = 1.0,
                    relabel: bool = True, log_file=None,
                    recent_window: int = 100) -> TrainResult:
    """Run episodes across the worker envs until ``total_steps`` transitions.

    ``reward_source`` selects the analytic reward or the discriminator's;
    GAIL mode requires ``discriminator``, ``demos`` and ``gail_cfg`` and runs
    the discriminator update on its own cadence.
    """
    if not goals:
        raise ConfigError("goal set must not be empty")
    if reward_source not in ("analytic", "gail"):
        raise ConfigError(f"unknown reward source {reward_source!r}")
    if reward_source == "gail":
        from ..gail import disc_reward_batch, disc_update
        if discriminator is None or demos is None or gail_cfg is None:
            raise ConfigError("gail mode needs discriminator, demos and config")

    goal_ids = list(range(len(goals)))
    ctx = []
    for env in envs:
        gid = int(rng.integers(len(goals)))
        env.reset(goals[gid])
        ctx.append({"gid": gid})

    episodes = 0
    successes = 0
    per_goal = {gid: [0, 0] for gid in goal_ids}
    recent = []
    last_losses = {"critic_loss": float("nan"), "actor_loss": float("nan"),
                   "entropy_coef": agent.alpha}
    log_records = []
    update_debt = 0.0
    collected = 0
    since_disc = 0

    def emit(record):
        log_records.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")

    while collected < total_steps:
        for env, c in zip(envs, ctx):
            if collected >= total_steps:
                break
            s = env.state
            if collected < learning_starts:
                a_hz = band.to_hz(rng.uniform(-1.0, 1.0, size=agent.action_dim))
            else:
                a_hz = act(agent, s, False, rl_cfg, band, rng=rng)
            res = env.step(a_hz)
            t = Transition(s=s, a=a_hz, s_next=res.state, g=env.goal, r=0.0,
                           step_count=res.step_index)
            if reward_source == "analytic":
                r = compute_reward(t, res.saturated, rl_cfg)
            else:
                r = float(disc_reward_batch(
                    discriminator, [t], rl_cfg, band)[0])
            t = Transition(t.s, t.a, t.s_next, t.g, r, t.step_count)
            terminal = res.done and res.reason in ("reached", "saturation")
            buffer.add(t, done=terminal, goal_id=c["gid"])
            if relabel:
                buffer.add(relabel_goal(t, rl_cfg), done=True, goal_id=c["gid"])
            collected += 1
            since_disc += 1

            if res.done:
                episodes += 1
                success = res.reason == "reached"
                successes += int(success)
                per_goal[c["gid"]][0] += int(success)
                per_goal[c["gid"]][1] += 1
                recent.append(int(success))
                if len(recent) > recent_window:
                    recent.pop(0)
                emit({"step": collected, "goal_id": c["gid"],
                      "success": bool(success),
                      "critic_loss": last_losses["critic_loss"],
                      "actor_loss": last_losses["actor_loss"],
                      "entropy_coef": last_losses["entropy_coef"]})
                c["gid"] = int(rng.integers(len(goals)))
                env.reset(goals[c["gid"]])

            if reward_source == "gail" and since_disc >= gail_cfg.update_every \
                    and len(buffer) >= gail_cfg.batch:
                disc_update(discriminator, demos, buffer, None, gail_cfg,
                            rl_cfg, band, rng)
                since_disc = 0

            if collected >= learning_starts and len(buffer) >= agent.cfg.batch:
                update_debt += updates_per_step
                while update_debt >= 1.0:
                    batch = buffer.sample(agent.cfg.batch, rng)
                    if reward_source == "gail" \
                            and gail_cfg.reward_mode == "recompute":
                        from ..gail import recompute_batch_rewards
                        recompute_batch_rewards(discriminator, batch, rl_cfg,
                                                band)
                    last_losses = agent.update(batch, rl_cfg, band)
                    update_debt -= 1.0

    rate = float(np.mean(recent)) if recent else 0.0
    return TrainResult(
        episodes=episodes,
        successes=successes,
        per_goal_success={g: (v[0] / v[1] if v[1] else 0.0)
                          for g, v in per_goal.items()},
        last_losses=last_losses,
        recent_success_rate=rate,
        log_records=log_records,
    )
