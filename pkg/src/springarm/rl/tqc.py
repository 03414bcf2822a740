"""Truncated-quantile-critic policy optimization (SAC-style, hand-rolled).

Critics regress quantile atoms of the return by quantile-Huber loss against
a target built from the pooled next-state atoms with the largest ones
dropped; the actor maximizes the mean of the truncated pooled atoms plus an
entropy bonus with an auto-tuned temperature. All gradients run through the
dense-network machinery in :mod:`springarm.nets`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..nets import (
    AdamState,
    MLPNet,
    adam_step,
    net_from_arrays,
    net_meta,
    net_to_arrays,
    polyak_update,
)
from .buffer import TransitionBatch
from .core import BandMap, RLConfig, RLState, state_features

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


@dataclass(frozen=True)
class TQCConfig:
    n_critics: int = 2
    quantiles_per_critic: int = 25
    dropped_top_quantiles: int = 4
    entropy_target: float = -9.0
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    batch: int = 256
    tau_polyak: float = 0.005
    hidden: tuple = (128, 128)
    # start the temperature low: the squashed-Gaussian entropy starts above
    # any reachable target, so alpha only anneals downward at learning-rate
    # speed and a large start poisons the critic with entropy value
    initial_log_alpha: float = -4.6
    dtype: str = "float64"   # training configs use float32 for speed
    # critic-side reward scaling: the task rewards are O(100) and the
    # kappa=1 quantile-Huber gradient is bounded, so unscaled returns take
    # forever to regress; positive scaling leaves the optimal policy intact
    reward_scale: float = 0.1

    def __post_init__(self):
        if self.dropped_top_quantiles >= self.n_critics * self.quantiles_per_critic:
            raise DomainError("cannot drop every quantile atom")


class TQCAgent:
    """Actor, quantile critics, targets and their optimizers."""

    def __init__(self, state_dim: int, action_dim: int, cfg: TQCConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.rng = rng
        hid = list(cfg.hidden)
        dt = np.dtype(cfg.dtype)
        self.actor = MLPNet([state_dim] + hid + [2 * action_dim], rng=rng,
                            dtype=dt)
        self.critics = [MLPNet([state_dim + action_dim] + hid
                               + [cfg.quantiles_per_critic], rng=rng, dtype=dt)
                        for _ in range(cfg.n_critics)]
        self.targets = [c.copy() for c in self.critics]
        self.log_alpha = np.array([cfg.initial_log_alpha])
        self.actor_opt = AdamState.for_params(self.actor.parameters(), cfg.actor_lr)
        self.critic_opts = [AdamState.for_params(c.parameters(), cfg.critic_lr)
                            for c in self.critics]
        self.alpha_opt = AdamState.for_params([self.log_alpha], cfg.alpha_lr)
        m = cfg.quantiles_per_critic
        self.tau_levels = (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # -- policy ------------------------------------------------------------
    def _actor_heads(self, s_feat: np.ndarray):
        out = self.actor.forward(s_feat)
        mu = out[..., :self.action_dim]
        log_std = np.clip(out[..., self.action_dim:], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std, out

    def sample_action(self, s_feat: np.ndarray, rng: np.random.Generator = None):
        """Squashed-Gaussian sample; returns (a in [-1,1], log_prob, cache)."""
        rng = rng or self.rng
        s_feat = np.atleast_2d(np.asarray(s_feat, dtype=float))
        mu, log_std, raw = self._actor_heads(s_feat)
        std = np.exp(log_std)
        xi = rng.standard_normal(mu.shape)
        u = mu + std * xi
        a = np.tanh(u)
        log_prob = (-0.5 * xi * xi - log_std - 0.5 * math.log(2 * math.pi)
                    - np.log(1.0 - a * a + SQUASH_EPS)).sum(axis=1)
        cache = {"mu": mu, "log_std": log_std, "std": std, "xi": xi, "u": u,
                 "a": a, "raw": raw}
        return a, log_prob, cache

    def deterministic_action(self, s_feat: np.ndarray) -> np.ndarray:
        s_feat = np.atleast_2d(np.asarray(s_feat, dtype=float))
        mu, _, _ = self._actor_heads(s_feat)
        return np.tanh(mu)

    # -- critics -----------------------------------------------------------
    def _critic_input(self, s_feat: np.ndarray, a_norm: np.ndarray) -> np.ndarray:
        return np.concatenate([s_feat, a_norm], axis=1)

    def pooled_atoms(self, nets, s_feat: np.ndarray, a_norm: np.ndarray) -> np.ndarray:
        x = self._critic_input(s_feat, a_norm)
        return np.concatenate([net.forward(x) for net in nets], axis=1)

    def truncated_target_atoms(self, s_next_feat: np.ndarray, a_next: np.ndarray,
                               dropped: int = None) -> np.ndarray:
        """Sorted pooled target-critic atoms with the top ones removed."""
        pooled = self.pooled_atoms(self.targets, s_next_feat, a_next)
        pooled.sort(axis=1)
        drop = self.cfg.dropped_top_quantiles if dropped is None else dropped
        keep = pooled.shape[1] - drop
        return pooled[:, :keep]

    # -- update ------------------------------------------------------------
    def update(self, batch: TransitionBatch, rl_cfg: RLConfig,
               band: BandMap) -> dict:
        """One gradient step on critics, actor and temperature."""
        if batch.size < 2:
            raise DomainError("batch must contain at least two transitions")
        cfg = self.cfg
        s_feat, s_next_feat = batch.features(rl_cfg)
        a_norm = band.to_normalized(batch.action_hz)
        gamma = rl_cfg.gamma
        not_done = 1.0 - batch.done

        # distributional target from the frozen critics
        a_next, logp_next, _ = self.sample_action(s_next_feat)
        z_target = self.truncated_target_atoms(s_next_feat, a_next)
        y = cfg.reward_scale * batch.reward[:, None] + gamma * not_done[:, None] * (
            z_target - self.alpha * logp_next[:, None])

        critic_loss = 0.0
        x = self._critic_input(s_feat, a_norm)
        y32 = y.astype(np.float32)
        tau32 = self.tau_levels.astype(np.float32)[None, :, None]
        for net, opt in zip(self.critics, self.critic_opts):
            z = net.forward(x)                                 # (B, M)
            # quantile-Huber in float32 with few temporaries: the (B, M, K)
            # tensors dominate the update cost
            u = y32[:, None, :] - z.astype(np.float32)[:, :, None]
            w = np.where(u < 0.0, 1.0 - tau32, tau32)
            au = np.abs(u)
            hub = np.minimum(au, 1.0)   # huber' ; huber = hub*(au - hub/2)
            denom = u.shape[0] * u.shape[1] * u.shape[2]
            au *= hub
            hub *= hub
            au -= 0.5 * hub
            au *= w
            critic_loss += float(au.sum(dtype=np.float64) / denom)
            np.clip(u, -1.0, 1.0, out=u)
            u *= w
            dz = -u.sum(axis=2, dtype=np.float64) / denom
            net.zero_grad()
            net.backward(dz)
            adam_step(net.parameters(), net.gradients(), opt)

        # actor: ascend mean truncated pooled atoms, entropy-regularized
        a_pi, logp_pi, cache = self.sample_action(s_feat)
        pooled = self.pooled_atoms(self.critics, s_feat, a_pi)
        order = np.argsort(pooled, axis=1)
        keep = pooled.shape[1] - cfg.dropped_top_quantiles
        kept = order[:, :keep]
        batch_n = pooled.shape[0]
        q_val = np.take_along_axis(pooled, kept, axis=1).mean(axis=1)
        actor_loss = float(np.mean(self.alpha * logp_pi - q_val))

        # dQ/da through the frozen critics (selected atoms only); the
        # pooled_atoms call above left each critic's forward cache on
        # exactly this input
        datoms = np.zeros_like(pooled)
        np.put_along_axis(datoms, kept, 1.0 / keep, axis=1)
        dq_da = np.zeros_like(a_pi)
        m = cfg.quantiles_per_critic
        for ci, net in enumerate(self.critics):
            up = datoms[:, ci * m:(ci + 1) * m]
            din = net.backward(up, accumulate=False)
            dq_da += din[:, self.state_dim:]

        a = cache["a"]
        dlogp_du = 2.0 * a * (1.0 - a * a) / (1.0 - a * a + SQUASH_EPS)
        dloss_du = (-dq_da * (1.0 - a * a) + self.alpha * dlogp_du) / batch_n
        dloss_dmu = dloss_du
        dloss_dlogstd = dloss_du * cache["std"] * cache["xi"] \
            - (self.alpha / batch_n)
        # clip gradient through the log-std clamp
        raw_log_std = cache["raw"][:, self.action_dim:]
        in_range = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        dloss_dlogstd = np.where(in_range, dloss_dlogstd, 0.0)
        upstream = np.concatenate([dloss_dmu, dloss_dlogstd], axis=1)
        self.actor.forward(s_feat)
        self.actor.zero_grad()
        self.actor.backward(upstream)
        adam_step(self.actor.parameters(), self.actor.gradients(), self.actor_opt)

        # temperature toward the entropy target
        alpha_grad = np.array([-float(np.mean(logp_pi + cfg.entropy_target))
                               * self.alpha])
        adam_step([self.log_alpha], [alpha_grad], self.alpha_opt)

        for net, tgt in zip(self.critics, self.targets):
            polyak_update(tgt, net, cfg.tau_polyak)

        return {"critic_loss": critic_loss / cfg.n_critics,
                "actor_loss": actor_loss,
                "entropy_coef": self.alpha,
                "mean_q": float(q_val.mean())}

    # -- persistence -------------------------------------------------------
    def to_arrays(self) -> tuple:
        arrays = dict(net_to_arrays(self.actor, "actor_"))
        for i, c in enumerate(self.critics):
            arrays.update(net_to_arrays(c, f"critic{i}_"))
        for i, t in enumerate(self.targets):
            arrays.update(net_to_arrays(t, f"target{i}_"))
        arrays["log_alpha"] = self.log_alpha
        meta = {"actor": net_meta(self.actor),
                "critic": net_meta(self.critics[0]),
                "n_critics": self.cfg.n_critics,
                "state_dim": self.state_dim,
                "action_dim": self.action_dim}
        return arrays, meta

    @staticmethod
    def from_arrays(arrays: dict, meta: dict, cfg: TQCConfig,
                    rng: np.random.Generator) -> "TQCAgent":
        agent = TQCAgent(meta["state_dim"], meta["action_dim"], cfg, rng)
        agent.actor = net_from_arrays(arrays, meta["actor"], "actor_")
        agent.critics = [net_from_arrays(arrays, meta["critic"], f"critic{i}_")
                         for i in range(meta["n_critics"])]
        agent.targets = [net_from_arrays(arrays, meta["critic"], f"target{i}_")
                         for i in range(meta["n_critics"])]
        agent.log_alpha = np.array(arrays["log_alpha"], dtype=float).reshape(1)
        agent.actor_opt = AdamState.for_params(agent.actor.parameters(),
                                               cfg.actor_lr)
        agent.critic_opts = [AdamState.for_params(c.parameters(), cfg.critic_lr)
                             for c in agent.critics]
        agent.alpha_opt = AdamState.for_params([agent.log_alpha], cfg.alpha_lr)
        return agent


def tqc_update(batch: TransitionBatch, agent: TQCAgent, rl_cfg: RLConfig,
               band: BandMap) -> dict:
    """Module-level alias for one TQC optimization step."""
    return agent.update(batch, rl_cfg, band)


def act(agent: TQCAgent, s: RLState, deterministic: bool, rl_cfg: RLConfig,
        band: BandMap, rng: np.random.Generator = None) -> np.ndarray:
    """Policy action as sensor frequencies, always inside the valid band."""
    feat = state_features(s.p_s2r.as_array(), s.g.as_array(), rl_cfg)[None, :]
    if deterministic:
        a = agent.deterministic_action(feat)[0]
    else:
        a, _, _ = agent.sample_action(feat, rng=rng)
        a = a[0]
    return band.to_hz(a)
