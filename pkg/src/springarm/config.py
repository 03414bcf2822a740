"""Experiment configuration: defaults, YAML overlay, resolved snapshots.

Every experiment command resolves one nested dict from the built-in
defaults, an optional YAML file and CLI overrides, then writes the resolved
snapshot next to its outputs so runs are reproducible byte for byte.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .arm import ArmParams, calibrate_offset_radius
from .control import PIDConfig
from .errors import ConfigError
from .gail import GailConfig
from .rl.core import RLConfig
from .rl.tqc import TQCConfig
from .s2r import S2RConfig
from .sensor import SensorParams
from .sim import RealityPerturbation

DEFAULTS = {
    "seed": 0,
    "arm": {
        "chamber_free_length": 200.0,
        "chamber_min": 105.0,
        "chamber_max": 235.0,
        "chamber_offset_radius": 35.0,
        "calibrate_bend_deg": 95.0,   # null disables calibration
        "spring_anchor_radius": 40.0,
        "pressure_min": -40.0,
        "pressure_max": 20.0,
        "pressure_gain": 2.375,
        "chamber_stiffness": 0.5,
        "settle_time_constant": 0.3,
        "sim_dt": 0.03,
        "body_radius": 30.0,
    },
    "sensor": {
        "capacitance": 100e-12,
        "i_comp": 1000e-12,
        "mu_p": 1.0,
        "n_turns": 4,
        "spring_radius_mm": 2.0,
        "beta": 0.93,
        "delta": 2.45,
    },
    "pid": {
        "kp": 2.0,
        "ki": 3.0,
        "kd": 0.05,
        "integral_clamp": 100.0,
        "settle_tol": 0.5,
        "settle_budget": 200,
    },
    "rl": {
        "weights": [0.0056, 0.0056, 0.0056, 0.001, 0.001, 0.001],
        "r_goal": 100.0,
        "epsilon": 10.0,
        "zeta": 0.1,
        "r_saturation": 100.0,
        "theta": 0.03,
        "gamma": 0.98,
        "horizon": 50,
        "workers": 4,
        "saturation_streak_limit": 5,
        "train_settle_budget": 60,
        "train_horizon": 10,
        "learning_starts": 500,
        "updates_per_step": 1.0,
    },
    "tqc": {
        "n_critics": 2,
        "quantiles_per_critic": 25,
        "dropped_top_quantiles": 4,
        "entropy_target": -9.0,
        "actor_lr": 3e-4,
        "critic_lr": 3e-4,
        "alpha_lr": 3e-4,
        "batch": 256,
        "tau_polyak": 0.005,
        "hidden": [128, 128],
        "dtype": "float32",
        "reward_scale": 0.1,
        "initial_log_alpha": -4.6,
    },
    "gail": {
        "gp_weight": 20.0,
        "disc_lr": 3e-4,
        "batch": 128,
        "update_every": 256,
        "reward_mode": "faithful",
        "hidden": [128, 128],
        "dtype": "float32",
    },
    "s2r": {
        "learning_rate": 0.01,
        "batch": 128,
        "epochs": 200,
        "hidden": [64, 64],
        "holdout_fraction": 0.2,
        "dataset_size": 600,
        "stiffness_scale": 1.1,
        "spring_bias_mm": 2.0,
        "pose_noise_sigma_mm": 1.0,
    },
    "circle": {
        "radius_mm": 80.0,
        "center_z_mm": 560.0,
        "n_eval_points": 40,
        "n_train_points": 16,
        "n_phase1_points": 8,
        "phase1_steps": 10000,
        "phase2_steps": 20000,
        "retain_fraction": 0.2,
        "eval_policy_steps": 15,
    },
    "pickplace": {
        "pipe_radius_mm": 150.0,
        "pipe_center_z_mm": 450.0,
        "steps": 60000,
        "eval_policy_steps": 15,
        "collision_samples": 48,
        "transfer_pipe_radius_mm": 125.0,
    },
    "workspace": {
        "pressure_levels": [-40.0, 0.0, 20.0],
    },
    "serve": {
        "host": "127.0.0.1",
        "port": 8321,
        "publish_hz": 30.0,
        "jog_cap_mm": 5.0,
        "jog_cap_deg": 5.0,
    },
}


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in overlay.items():
        if key not in out:
            raise ConfigError(f"unknown config key: {key!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
        cfg = _deep_merge(cfg, data)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def write_snapshot(cfg: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_resolved.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")
    return path


# -- constructors ------------------------------------------------------------
def make_arm_params(cfg: dict) -> ArmParams:
    a = cfg["arm"]
    params = ArmParams(
        chamber_free_length=a["chamber_free_length"],
        chamber_min=a["chamber_min"],
        chamber_max=a["chamber_max"],
        chamber_offset_radius=a["chamber_offset_radius"],
        spring_anchor_radius=a["spring_anchor_radius"],
        pressure_min=a["pressure_min"],
        pressure_max=a["pressure_max"],
        pressure_gain=a["pressure_gain"],
        chamber_stiffness=a["chamber_stiffness"],
        settle_time_constant=a["settle_time_constant"],
        sim_dt=a["sim_dt"],
    )
    if a.get("calibrate_bend_deg"):
        params = calibrate_offset_radius(params, a["calibrate_bend_deg"])
    return params


def make_sensor_params(cfg: dict) -> SensorParams:
    s = cfg["sensor"]
    return SensorParams(
        capacitance=s["capacitance"], i_comp=s["i_comp"], mu_p=s["mu_p"],
        n_turns=s["n_turns"], spring_radius_mm=s["spring_radius_mm"],
        beta=s["beta"], delta=s["delta"],
    )


def make_pid_config(cfg: dict, settle_budget: int = None) -> PIDConfig:
    p = cfg["pid"]
    return PIDConfig(
        kp=p["kp"], ki=p["ki"], kd=p["kd"],
        integral_clamp=p["integral_clamp"], settle_tol=p["settle_tol"],
        settle_budget=settle_budget or p["settle_budget"],
    )


def make_rl_config(cfg: dict, horizon: int = None) -> RLConfig:
    r = cfg["rl"]
    return RLConfig(
        weights=tuple(r["weights"]), r_goal=r["r_goal"], epsilon=r["epsilon"],
        zeta=r["zeta"], r_saturation=r["r_saturation"], theta=r["theta"],
        gamma=r["gamma"], horizon=horizon or r["horizon"],
        workers=r["workers"],
        saturation_streak_limit=r["saturation_streak_limit"],
    )


def make_tqc_config(cfg: dict) -> TQCConfig:
    t = cfg["tqc"]
    return TQCConfig(
        n_critics=t["n_critics"],
        quantiles_per_critic=t["quantiles_per_critic"],
        dropped_top_quantiles=t["dropped_top_quantiles"],
        entropy_target=t["entropy_target"], actor_lr=t["actor_lr"],
        critic_lr=t["critic_lr"], alpha_lr=t["alpha_lr"], batch=t["batch"],
        tau_polyak=t["tau_polyak"], hidden=tuple(t["hidden"]),
        dtype=t["dtype"], reward_scale=t["reward_scale"],
        initial_log_alpha=t["initial_log_alpha"],
    )


def make_gail_config(cfg: dict, **overrides) -> GailConfig:
    g = dict(cfg["gail"])
    g.update(overrides)
    return GailConfig(
        gp_weight=g["gp_weight"], disc_lr=g["disc_lr"], batch=g["batch"],
        update_every=g["update_every"], reward_mode=g["reward_mode"],
        hidden=tuple(g["hidden"]), dtype=g["dtype"],
    )


def make_s2r_config(cfg: dict) -> S2RConfig:
    s = cfg["s2r"]
    return S2RConfig(
        learning_rate=s["learning_rate"], batch=s["batch"],
        epochs=s["epochs"], hidden=tuple(s["hidden"]),
        holdout_fraction=s["holdout_fraction"],
        perturbation=RealityPerturbation(
            stiffness_scale=s["stiffness_scale"],
            spring_bias_mm=s["spring_bias_mm"],
            pose_noise_sigma_mm=s["pose_noise_sigma_mm"],
        ),
    )
