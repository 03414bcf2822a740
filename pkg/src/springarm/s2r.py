"""Sim-to-real residual network: (simulated pose, spring lengths) -> real pose.

Trained before policy learning against a synthetic reality (a perturbed
simulator). Inputs and targets are standardized internally; the trained net
travels with its normalization constants.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .arm import Pose6D, spring_lengths, wrap_angles_deg
from .control import PIDConfig, pid_track
from .errors import DomainError
from .nets import AdamState, MLPNet, adam_step, load_checkpoint, save_checkpoint
from .sim import ArmSim, RealityPerturbation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class S2RConfig:
    learning_rate: float = 0.01
    batch: float = 128
    epochs: int = 200
    hidden: tuple = (64, 64)
    holdout_fraction: float = 0.2
    perturbation: RealityPerturbation = RealityPerturbation()

    def __post_init__(self):
        if self.batch < 1:
            raise DomainError("batch must be at least 1")


@dataclass(frozen=True)
class S2RSample:
    pose_sim: np.ndarray      # (6,) nominal-simulator pose
    springs: np.ndarray       # (9,) sensor-space reference
    pose_real: np.ndarray     # (6,) measured pose in the perturbed world


@dataclass
class S2RNet:
    """Residual net plus the normalization it was trained with.

    The net predicts the correction (real minus simulated pose); applying it
    adds the denormalized correction back onto the input pose.
    """

    net: MLPNet
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    epoch_losses: list = field(default_factory=list)

    def apply(self, pose, springs) -> np.ndarray:
        pose = np.asarray(pose, dtype=float)
        x = np.concatenate([pose, np.asarray(springs, dtype=float)])
        xn = (x - self.in_mean) / self.in_std
        yn = self.net.forward(xn[None, :])[0]
        out = pose + (yn * self.out_std + self.out_mean)
        out[3:] = wrap_angles_deg(out[3:])
        return out

    def save(self, path) -> None:
        save_checkpoint(path, {
            **{f"w{i}": w for i, w in enumerate(self.net.weights)},
            **{f"b{i}": b for i, b in enumerate(self.net.biases)},
            "in_mean": self.in_mean, "in_std": self.in_std,
            "out_mean": self.out_mean, "out_std": self.out_std,
        }, meta={"layer_sizes": self.net.layer_sizes,
                 "hidden_activation": self.net.hidden_activation,
                 "output_activation": self.net.output_activation})

    @staticmethod
    def load(path) -> "S2RNet":
        arrays, meta = load_checkpoint(path)
        net = MLPNet(meta["layer_sizes"], meta["hidden_activation"],
                     meta["output_activation"])
        for i in range(net.n_layers):
            net.weights[i] = arrays[f"w{i}"]
            net.biases[i] = arrays[f"b{i}"]
        return S2RNet(net, arrays["in_mean"], arrays["in_std"],
                      arrays["out_mean"], arrays["out_std"])


def apply_s2r(s2r: S2RNet, pose, springs) -> np.ndarray:
    return s2r.apply(pose, springs)


def collect_s2r_dataset(n: int, nominal: ArmSim, reality: ArmSim,
                        rng: np.random.Generator,
                        pid_cfg: PIDConfig = None) -> list:
    """Drive both simulators to n random sensor setpoints and pair the poses.

    Setpoints come from uniformly sampled feasible chamber configurations;
    samples whose tracking never settles in either world are dropped with a
    warning.
    """
    if n < 100:
        raise DomainError("need at least 100 samples")
    pid_cfg = pid_cfg or PIDConfig(settle_budget=300)
    params = nominal.params
    samples = []
    dropped = 0
    for _ in range(n):
        lengths = rng.uniform(params.chamber_min + 2.0,
                              params.chamber_max - 2.0, params.n_chambers)
        l_ref = spring_lengths(lengths, params)
        nominal.reset()
        ok_a, _ = pid_track(nominal, l_ref, pid_cfg)
        reality.reset()
        ok_b, _ = pid_track(reality, l_ref, pid_cfg)
        if not (ok_a and ok_b):
            dropped += 1
            logger.warning("s2r sample dropped: tracking did not settle")
            continue
        samples.append(S2RSample(
            pose_sim=nominal.true_pose().as_array(),
            springs=l_ref,
            pose_real=reality.measured_pose().as_array(),
        ))
    if dropped:
        logger.warning("s2r collection dropped %d/%d samples", dropped, n)
    return samples


def _stack(samples):
    x = np.stack([np.concatenate([s.pose_sim, s.springs]) for s in samples])
    y = np.stack([s.pose_real - s.pose_sim for s in samples])
    y[:, 3:] = wrap_angles_deg(y[:, 3:])
    return x, y


def train_s2r(samples, cfg: S2RConfig, rng: np.random.Generator) -> tuple:
    """Fit the residual net by MSE; returns (S2RNet, held-out error report)."""
    if len(samples) < 2 * cfg.batch:
        raise DomainError("need at least two batches of samples")
    x, y = _stack(samples)
    n = x.shape[0]
    order = rng.permutation(n)
    n_hold = max(1, int(round(n * cfg.holdout_fraction)))
    hold, train = order[:n_hold], order[n_hold:]

    in_mean, in_std = x[train].mean(axis=0), x[train].std(axis=0)
    out_mean, out_std = y[train].mean(axis=0), y[train].std(axis=0)
    in_std = np.where(in_std < 1e-9, 1.0, in_std)
    if np.any(y[train].std(axis=0) < 1e-9):
        logger.warning("s2r targets are (near-)constant; training anyway")
    out_std = np.where(out_std < 1e-9, 1.0, out_std)

    xn = (x - in_mean) / in_std
    yn = (y - out_mean) / out_std

    net = MLPNet([x.shape[1]] + list(cfg.hidden) + [y.shape[1]], rng=rng)
    opt = AdamState.for_params(net.parameters(), cfg.learning_rate)
    batch = int(cfg.batch)
    epoch_losses = []
    for _ in range(cfg.epochs):
        idx = rng.permutation(train)
        losses = []
        for start in range(0, idx.size, batch):
            sel = idx[start:start + batch]
            pred = net.forward(xn[sel])
            err = pred - yn[sel]
            losses.append(float(np.mean(err * err)))
            net.zero_grad()
            net.backward(2.0 * err / err.size)
            adam_step(net.parameters(), net.gradients(), opt)
        epoch_losses.append(float(np.mean(losses)))

    s2r = S2RNet(net, in_mean, in_std, out_mean, out_std,
                 epoch_losses=epoch_losses)

    real_hold = np.stack([samples[i].pose_real for i in hold])
    pred_hold = np.stack([s2r.apply(x[i, :6], x[i, 6:]) for i in hold])
    diff = pred_hold - real_hold
    diff[:, 3:] = wrap_angles_deg(diff[:, 3:])
    identity_diff = x[hold][:, :6] - real_hold
    identity_diff[:, 3:] = wrap_angles_deg(identity_diff[:, 3:])
    report = {
        "holdout_rmse_position_mm": float(
            np.sqrt(np.mean(np.sum(diff[:, :3] ** 2, axis=1)))),
        "identity_rmse_position_mm": float(
            np.sqrt(np.mean(np.sum(identity_diff[:, :3] ** 2, axis=1)))),
        "holdout_rmse_rotation_deg": float(
            np.sqrt(np.mean(np.sum(diff[:, 3:] ** 2, axis=1)))),
        "n_train": int(train.size),
        "n_holdout": int(hold.size),
        "first_epoch_loss": epoch_losses[0],
        "last_epoch_loss": epoch_losses[-1],
    }
    return s2r, report


def write_s2r_dataset(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "springarm-s2r", "version": 1}) + "\n")
        for s in samples:
            fh.write(json.dumps({
                "P": list(map(float, s.pose_sim)),
                "L_spring": list(map(float, s.springs)),
                "P_real": list(map(float, s.pose_real)),
            }, sort_keys=True) + "\n")


def load_s2r_dataset(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    header = json.loads(lines[0])
    if header.get("format") != "springarm-s2r":
        raise DomainError(f"{path}: not an s2r dataset")
    out = []
    for ln in lines[1:]:
        d = json.loads(ln)
        out.append(S2RSample(np.array(d["P"], dtype=float),
                             np.array(d["L_spring"], dtype=float),
                             np.array(d["P_real"], dtype=float)))
    return out
