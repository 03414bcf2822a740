"""Discriminator, demo relabeling and adversarial-update tests."""
import math

import numpy as np
import pytest

from springarm.errors import ConfigError, DomainError
from springarm.gail import (
    REWARD_CLAMP,
    DemoDataset,
    DemoRecord,
    Discriminator,
    GailConfig,
    disc_reward,
    disc_update,
    gradient_penalty,
    interpolate_pairs,
    load_demo_file,
    relabel_demos,
    write_demo_file,
)
from springarm.rl.buffer import ReplayBuffer
from springarm.rl.core import BandMap, RLConfig, Transition, build_state
from springarm.arm import Pose6D

CFG = RLConfig()
BAND = BandMap(lo_hz=2.7e8, hi_hz=3.6e8)


def mk_record(t, pose, f=None, goal=None):
    return DemoRecord(
        t=t,
        chamber_lengths=np.full(9, 200.0),
        spring_lengths=np.full(9, 200.0),
        f_sensor=np.full(9, 3.0e8) if f is None else np.asarray(f, float),
        pose=np.asarray(pose, dtype=float),
        goal=np.zeros(6) if goal is None else np.asarray(goal, float),
        scene_id="test-scene",
        source="oracle",
    )


def mk_sequence(n_records):
    return [mk_record(float(i), [10.0 * i, 0, 500, 0, 0, 0])
            for i in range(n_records)]


class TestRelabelDemos:
    def test_consecutive_pairs(self):
        ds = relabel_demos([mk_sequence(8)], CFG)
        assert ds.size == 7

    def test_twenty_eight_waypoints_give_27_records(self):
        ds = relabel_demos([mk_sequence(28)], CFG)
        assert ds.size == 27

    def test_goal_is_achieved_next_pose(self):
        ds = relabel_demos([mk_sequence(5)], CFG)
        for i in range(ds.size):
            s = build_state(Pose6D.from_array(ds.goal[i]),
                            Pose6D.from_array(ds.goal[i]), CFG)
            assert s.error_norm == 0.0
            assert ds.goal[i][0] == pytest.approx(10.0 * (i + 1))

    def test_single_step_sequence_skipped_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            ds = relabel_demos([mk_sequence(1), mk_sequence(4)], CFG)
        assert ds.size == 3
        assert "skipped" in caplog.text

    def test_all_short_sequences_rejected(self):
        with pytest.raises(DomainError):
            relabel_demos([mk_sequence(1)], CFG)


class TestDemoFile:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "demo.jsonl"
        records = mk_sequence(6)
        write_demo_file(path, records, "test-scene", "oracle")
        loaded = load_demo_file(path)
        assert len(loaded) == 6
        for a, b in zip(records, loaded):
            assert a.pose == pytest.approx(b.pose)
            assert a.f_sensor == pytest.approx(b.f_sensor)
        ds = relabel_demos([loaded], CFG)
        assert ds.size == 5

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format": "something-else", "version": 1}\n')
        with pytest.raises(DomainError):
            load_demo_file(path)


class TestDiscReward:
    def test_half_output(self):
        rng = np.random.default_rng(0)
        disc = Discriminator(GailConfig(hidden=(8,)), rng)
        for w in disc.net.weights:
            w.fill(0.0)
        for b in disc.net.biases:
            b.fill(0.0)  # sigmoid(0) = 0.5
        r = disc_reward(disc, np.zeros(6), np.full(9, 3.0e8), np.zeros(6),
                        CFG, BAND)
        assert r == pytest.approx(math.log(0.5))

    def test_expert_like_limit_and_clamp(self):
        rng = np.random.default_rng(1)
        disc = Discriminator(GailConfig(hidden=(8,)), rng)
        for w in disc.net.weights:
            w.fill(0.0)
        # huge negative output bias -> D ~ 0 -> reward ~ 0-
        disc.net.biases[-1][:] = -50.0
        r = disc_reward(disc, np.zeros(6), np.full(9, 3.0e8), np.zeros(6),
                        CFG, BAND)
        assert -1e-5 < r <= 0.0
        # huge positive bias -> D ~ 1 -> clamped
        disc.net.biases[-1][:] = 50.0
        r = disc_reward(disc, np.zeros(6), np.full(9, 3.0e8), np.zeros(6),
                        CFG, BAND)
        assert r == pytest.approx(REWARD_CLAMP)

    def test_monotone_decreasing_in_d(self):
        # sweep the output bias upward; D rises, reward must fall
        rng = np.random.default_rng(2)
        disc = Discriminator(GailConfig(hidden=(8,)), rng)
        rewards = []
        for bias in np.linspace(-3, 3, 13):
            disc.net.biases[-1][:] = bias
            rewards.append(disc_reward(disc, np.zeros(6), np.full(9, 3.0e8),
                                       np.zeros(6), CFG, BAND))
        assert all(b < a for a, b in zip(rewards, rewards[1:]))


class TestInterpolation:
    def test_endpoints(self):
        rng = np.random.default_rng(3)
        s_e = rng.normal(size=(4, 18))
        a_e = rng.normal(size=(4, 9))
        s_p = rng.normal(size=(4, 18))
        a_p = rng.normal(size=(4, 9))

        class Mu1:
            def uniform(self, lo, hi, size):
                return np.ones(size)

        class Mu0:
            def uniform(self, lo, hi, size):
                return np.zeros(size)

        s, a = interpolate_pairs((s_e, a_e), (s_p, a_p), Mu1())
        assert s == pytest.approx(s_e) and a == pytest.approx(a_e)
        s, a = interpolate_pairs((s_e, a_e), (s_p, a_p), Mu0())
        assert s == pytest.approx(s_p) and a == pytest.approx(a_p)

    def test_convexity_bounds(self):
        rng = np.random.default_rng(4)
        s_e = rng.normal(size=(64, 18))
        a_e = rng.normal(size=(64, 9))
        s_p = rng.normal(size=(64, 18))
        a_p = rng.normal(size=(64, 9))
        s, a = interpolate_pairs((s_e, a_e), (s_p, a_p), rng)
        assert np.all(s <= np.maximum(s_e, s_p) + 1e-12)
        assert np.all(s >= np.minimum(s_e, s_p) - 1e-12)
        assert np.all(a <= np.maximum(a_e, a_p) + 1e-12)
        assert np.all(a >= np.minimum(a_e, a_p) - 1e-12)

    def test_size_mismatch(self):
        with pytest.raises(DomainError):
            interpolate_pairs((np.zeros((3, 18)), np.zeros((3, 9))),
                              (np.zeros((4, 18)), np.zeros((4, 9))),
                              np.random.default_rng(0))

    def test_mu_swap_symmetry(self):
        # swapping batch roles with mu <-> 1-mu leaves the mix distribution
        # unchanged; check the means over many pairs agree within 2%
        rng = np.random.default_rng(5)
        s_e = rng.normal(loc=1.0, size=(10000, 18))
        a_e = rng.normal(loc=1.0, size=(10000, 9))
        s_p = rng.normal(loc=-1.0, size=(10000, 18))
        a_p = rng.normal(loc=-1.0, size=(10000, 9))
        s1, a1 = interpolate_pairs((s_e, a_e), (s_p, a_p),
                                   np.random.default_rng(6))
        s2, a2 = interpolate_pairs((s_p, a_p), (s_e, a_e),
                                   np.random.default_rng(7))
        scale = np.abs(s_e.mean()) + np.abs(s_p.mean())
        assert abs(s1.mean() - s2.mean()) < 0.02 * scale
        assert abs(a1.mean() - a2.mean()) < 0.02 * scale


class TestGradientPenalty:
    def test_constant_discriminator(self):
        disc = Discriminator(GailConfig(hidden=(8,)), np.random.default_rng(0))
        for w in disc.net.weights:
            w.fill(0.0)
        pen = gradient_penalty(disc, np.zeros((5, 18)), np.zeros((5, 9)),
                               np.zeros((5, 6)))
        assert pen == pytest.approx(1.0)

    def test_fd_agreement_through_disc_interface(self):
        rng = np.random.default_rng(8)
        disc = Discriminator(GailConfig(hidden=(12,)), rng)
        s = rng.normal(size=(4, 18))
        a = rng.normal(size=(4, 9))
        g = rng.normal(size=(4, 6))
        disc.net.zero_grad()
        gradient_penalty(disc, s, a, g, accumulate=True)
        h = 1e-5
        worst = 0.0
        for p, gbuf in zip(disc.net.parameters(), disc.net.gradients()):
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                hi = gradient_penalty(disc, s, a, g)
                p[idx] = orig - h
                lo = gradient_penalty(disc, s, a, g)
                p[idx] = orig
                num = (hi - lo) / (2 * h)
                denom = max(abs(num) + abs(gbuf[idx]), 1e-8)
                worst = max(worst, abs(num - gbuf[idx]) / denom)
                it.iternext()
        assert worst < 1e-4


def make_toy_world(rng, sep=6.0):
    """Linearly separable expert vs policy distributions in pose space."""
    def expert_batch(n):
        pose = rng.normal(size=(n, 6)) + np.array([sep, 0, 0, 0, 0, 0]) / CFG.w
        act = np.full((n, 9), 3.2e8) + rng.normal(scale=1e5, size=(n, 9))
        goal = pose + rng.normal(scale=0.1, size=(n, 6))
        return pose, act, goal
    return expert_batch


def fill_buffer_policy(buf, rng, n=512):
    for _ in range(n):
        pose = rng.normal(size=6)
        nxt = rng.normal(size=6)
        goal = rng.normal(size=6)
        t = Transition(
            s=build_state(Pose6D.from_array(pose), Pose6D.from_array(goal), CFG),
            a=np.full(9, 2.9e8) + rng.normal(scale=1e5, size=9),
            s_next=build_state(Pose6D.from_array(nxt), Pose6D.from_array(goal), CFG),
            g=Pose6D.from_array(goal),
            r=0.0, step_count=0)
        buf.add(t)


class TestDiscUpdate:
    def _demo_dataset(self, rng, n=512, sep=6.0):
        expert_batch = make_toy_world(rng, sep)
        pose, act, goal = expert_batch(n)
        return DemoDataset(pose=pose, action_hz=act, goal=goal)

    def test_identical_distributions_give_half(self):
        rng = np.random.default_rng(10)
        demos = self._demo_dataset(rng, sep=0.0)
        buf = ReplayBuffer(4096)
        # policy transitions drawn from the same distribution as the demos
        for i in range(512):
            pose = demos.pose[i]
            goal = demos.goal[i]
            t = Transition(
                s=build_state(Pose6D.from_array(pose),
                              Pose6D.from_array(goal), CFG),
                a=demos.action_hz[i],
                s_next=build_state(Pose6D.from_array(goal),
                                   Pose6D.from_array(goal), CFG),
                g=Pose6D.from_array(goal),
                r=0.0, step_count=0)
            buf.add(t)
        cfg = GailConfig(hidden=(16, 16), batch=128, reward_mode="recompute")
        disc = Discriminator(cfg, rng)
        outs = [disc_update(disc, demos, buf, None, cfg, CFG, BAND, rng)
                for _ in range(300)]
        tail = outs[-50:]
        mean_d_pi = np.mean([o["mean_d_policy"] for o in tail])
        mean_d_ex = np.mean([o["mean_d_expert"] for o in tail])
        assert abs(mean_d_pi - 0.5) < 0.1
        assert abs(mean_d_ex - 0.5) < 0.1
        # L_disc ~ 2 log 0.5 at the indistinguishable fixed point
        assert np.mean([o["disc_loss"] for o in tail]) == pytest.approx(
            2 * math.log(0.5), abs=0.25)

    def test_separable_toy_classification(self):
        rng = np.random.default_rng(11)
        demos = self._demo_dataset(rng, sep=6.0)
        buf = ReplayBuffer(4096)
        fill_buffer_policy(buf, rng)
        cfg = GailConfig(hidden=(32, 32), batch=128, reward_mode="recompute",
                         disc_lr=1e-3)
        disc = Discriminator(cfg, rng)
        out = None
        for _ in range(200):
            out = disc_update(disc, demos, buf, None, cfg, CFG, BAND, rng)
        accuracy = 0.5 * (out["policy_accuracy"] + out["expert_accuracy"])
        assert accuracy > 0.95

    def test_faithful_mode_resets_buffer_to_batch(self):
        rng = np.random.default_rng(12)
        demos = self._demo_dataset(rng)
        buf = ReplayBuffer(4096)
        fill_buffer_policy(buf, rng, n=700)
        cfg = GailConfig(hidden=(8,), batch=64, reward_mode="faithful")
        disc = Discriminator(cfg, rng)
        disc_update(disc, demos, buf, None, cfg, CFG, BAND, rng)
        assert len(buf) == 64
        # refilled rewards are current discriminator rewards (all <= 0)
        assert np.all(buf.all().reward <= 0.0)

    def test_empty_demos_rejected(self):
        rng = np.random.default_rng(13)
        buf = ReplayBuffer(128)
        fill_buffer_policy(buf, rng, n=16)
        cfg = GailConfig(hidden=(8,))
        disc = Discriminator(cfg, rng)
        with pytest.raises(ConfigError):
            disc_update(disc, None, buf, None, cfg, CFG, BAND, rng)

    def test_penalty_keeps_outputs_closer_to_half(self):
        rng_a = np.random.default_rng(14)
        rng_b = np.random.default_rng(14)
        demos_a = self._demo_dataset(rng_a)
        demos_b = self._demo_dataset(rng_b)
        buf_a = ReplayBuffer(4096)
        buf_b = ReplayBuffer(4096)
        fill_buffer_policy(buf_a, rng_a)
        fill_buffer_policy(buf_b, rng_b)

        def run(demos, buf, rng, gp_weight):
            cfg = GailConfig(hidden=(32, 32), batch=128, gp_weight=gp_weight,
                             reward_mode="recompute", disc_lr=1e-3)
            disc = Discriminator(cfg, np.random.default_rng(99))
            devs = []
            for i in range(500):
                out = disc_update(disc, demos, buf, None, cfg, CFG, BAND, rng)
                if i >= 100:
                    devs.append(abs(out["mean_d_policy"] - 0.5)
                                + abs(out["mean_d_expert"] - 0.5))
            return float(np.mean(devs))

        dev_penalized = run(demos_a, buf_a, rng_a, 20.0)
        dev_unpenalized = run(demos_b, buf_b, rng_b, 0.0)
        assert dev_penalized < dev_unpenalized
