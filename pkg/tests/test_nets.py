"""Network, gradient, Adam and checkpoint tests.

Analytic gradients are checked against central finite differences; the
gradient-norm penalty (double backprop) gets the same treatment.
"""
import numpy as np
import pytest

from springarm.errors import DomainError, StateError
from springarm.nets import (
    ACTIVATIONS,
    AdamState,
    MLPNet,
    adam_step,
    grad_norm_penalty,
    load_checkpoint,
    load_net,
    net_from_arrays,
    net_meta,
    net_to_arrays,
    polyak_update,
    save_checkpoint,
    save_net,
)


def fd_param_gradients(net, loss_fn, h=1e-5):
    """Central finite differences of loss_fn() w.r.t. every parameter."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            hi = loss_fn()
            p[idx] = orig - h
            lo = loss_fn()
            p[idx] = orig
            g[idx] = (hi - lo) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestForward:
    def test_zero_net_outputs_last_bias(self):
        net = MLPNet([3, 5, 2], rng=np.random.default_rng(0))
        for w in net.weights:
            w.fill(0.0)
        net.biases[-1][:] = [0.7, -0.3]
        out = net.forward(np.array([1.0, 2.0, 3.0]))
        assert out == pytest.approx([0.7, -0.3])

    def test_identity_linear_layer(self):
        net = MLPNet([4, 4], output_activation="identity")
        net.weights[0][:] = np.eye(4)
        net.biases[0].fill(0.0)
        x = np.array([0.5, -1.0, 2.0, 0.0])
        assert net.forward(x) == pytest.approx(x)

    def test_seeded_two_layer_matches_hand_computed(self):
        net = MLPNet([2, 3, 1], hidden_activation="tanh",
                     output_activation="identity",
                     rng=np.random.default_rng(42))
        x = [1.0, 0.0]
        # independent scalar-arithmetic evaluation of the same parameters
        hidden = []
        for j in range(3):
            z = net.biases[0][j]
            for i in range(2):
                z += x[i] * net.weights[0][i, j]
            hidden.append(np.tanh(z))
        expected = net.biases[1][0]
        for j in range(3):
            expected += hidden[j] * net.weights[1][j, 0]
        got = net.forward(np.array(x))[0]
        assert got == pytest.approx(expected, abs=1e-14)
        # frozen golden value for the seed-42 parameters
        assert got == pytest.approx(-0.11801276919302053, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        net = MLPNet([3, 2])
        with pytest.raises(DomainError):
            net.forward(np.zeros(4))

    def test_batch_and_single_row_agree(self):
        net = MLPNet([3, 6, 2], rng=np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(5, 3))
        batch = net.forward(x)
        rows = np.stack([net.forward(r) for r in x])
        assert batch == pytest.approx(rows)


class TestBackward:
    def test_requires_forward_first(self):
        net = MLPNet([2, 2])
        with pytest.raises(StateError):
            net.backward(np.zeros(2))

    def test_zero_gradient_at_squared_loss_optimum(self):
        net = MLPNet([3, 2], output_activation="identity",
                      rng=np.random.default_rng(3))
        x = np.array([0.2, -0.4, 1.0])
        target = net.forward(x)
        net.zero_grad()
        net.forward(x)
        net.backward(net.forward(x) - target)
        assert all(np.allclose(g, 0.0) for g in net.gradients())

    @pytest.mark.parametrize("hidden,out", [
        ("tanh", "identity"),
        ("tanh", "sigmoid"),
        ("tanh", "softplus"),
        ("tanh", "tanh"),
    ])
    def test_gradients_match_finite_differences(self, hidden, out):
        rng = np.random.default_rng(17)
        net = MLPNet([4, 8, 6, 2], hidden_activation=hidden,
                     output_activation=out, rng=rng)
        x = rng.normal(size=(3, 4))
        c = rng.normal(size=(3, 2))

        def loss():
            return float(np.sum(c * net.forward(x)))

        loss()
        net.zero_grad()
        net.backward(c)
        numeric = fd_param_gradients(net, loss)
        assert max_rel_error(net.gradients(), numeric) < 1e-4

    def test_relu_gradients_away_from_kinks(self):
        rng = np.random.default_rng(5)
        net = MLPNet([3, 6, 1], hidden_activation="relu", rng=rng)
        # push pre-activations away from zero so finite differences are clean
        net.biases[0][:] = 1.0
        x = np.array([[0.5, 0.5, 0.5]])
        c = np.array([[1.0]])

        def loss():
            return float(np.sum(c * net.forward(x)))

        loss()
        net.zero_grad()
        net.backward(c)
        numeric = fd_param_gradients(net, loss)
        assert max_rel_error(net.gradients(), numeric) < 1e-4

    def test_input_gradient_matches_fd(self):
        rng = np.random.default_rng(23)
        net = MLPNet([5, 7, 1], output_activation="sigmoid", rng=rng)
        x = rng.normal(size=(4, 5))
        g = net.input_gradient(x)
        h = 1e-6
        for r in range(4):
            for i in range(5):
                hi = x.copy()
                lo = x.copy()
                hi[r, i] += h
                lo[r, i] -= h
                num = (net.forward(hi)[r, 0] - net.forward(lo)[r, 0]) / (2 * h)
                assert g[r, i] == pytest.approx(num, rel=1e-5, abs=1e-9)

    def test_gradient_of_sum_is_sum_of_gradients(self):
        rng = np.random.default_rng(29)
        net = MLPNet([3, 4, 2], rng=rng)
        xa = rng.normal(size=(1, 3))
        xb = rng.normal(size=(1, 3))
        up = np.ones((1, 2))

        def grads_for(x):
            net.zero_grad()
            net.forward(x)
            net.backward(up)
            return [g.copy() for g in net.gradients()]

        ga = grads_for(xa)
        gb = grads_for(xb)
        net.zero_grad()
        net.forward(np.vstack([xa, xb]))
        net.backward(np.ones((2, 2)))
        for g_sum, g1, g2 in zip(net.gradients(), ga, gb):
            assert g_sum == pytest.approx(g1 + g2)


class TestGradNormPenalty:
    def test_constant_discriminator_penalty_is_one(self):
        net = MLPNet([4, 6, 1], output_activation="sigmoid")
        for w in net.weights:
            w.fill(0.0)
        x = np.random.default_rng(0).normal(size=(8, 4))
        assert grad_norm_penalty(net, x, accumulate=False) == pytest.approx(1.0)

    def test_unit_gradient_linear_discriminator(self):
        # single linear layer into sigmoid: grad = sigma'(z) * w; at z=0
        # sigma' = 1/4, so |w| = 4 gives unit input-gradient norm
        net = MLPNet([3, 1], output_activation="sigmoid")
        net.weights[0][:] = np.array([[4.0], [0.0], [0.0]])
        net.biases[0].fill(0.0)
        x = np.array([[0.0, 1.0, -2.0]])
        assert grad_norm_penalty(net, x, accumulate=False) == pytest.approx(0.0, abs=1e-12)

    def test_penalty_gradient_matches_fd(self):
        rng = np.random.default_rng(31)
        net = MLPNet([5, 8, 1], hidden_activation="tanh",
                     output_activation="sigmoid", rng=rng)
        x = rng.normal(size=(6, 5))
        mask = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
        net.zero_grad()
        grad_norm_penalty(net, x, mask)
        numeric = fd_param_gradients(
            net, lambda: grad_norm_penalty(net, x, mask, accumulate=False))
        assert max_rel_error(net.gradients(), numeric) < 1e-4

    def test_mask_limits_norm_to_selected_dims(self):
        rng = np.random.default_rng(37)
        net = MLPNet([4, 6, 1], output_activation="sigmoid", rng=rng)
        x = rng.normal(size=(5, 4))
        g = net.input_gradient(x)
        mask = np.array([1.0, 0.0, 1.0, 0.0])
        norms = np.linalg.norm(g * mask, axis=1)
        expected = float(np.mean((norms - 1.0) ** 2))
        assert grad_norm_penalty(net, x, mask, accumulate=False) == pytest.approx(expected)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        net = MLPNet([3, 2], rng=np.random.default_rng(0))
        opt = AdamState.for_params(net.parameters(), lr=0.01)
        before = [p.copy() for p in net.parameters()]
        adam_step(net.parameters(), [np.zeros_like(p) for p in net.parameters()], opt)
        for b, a in zip(before, net.parameters()):
            assert a == pytest.approx(b)

    def test_first_step_closed_form(self):
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -0.1, 2.0])
        opt = AdamState.for_params([p], lr=0.01)
        adam_step([p], [g], opt)
        expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
        assert p == pytest.approx(expected, rel=1e-9)

    def test_constant_gradient_step_magnitude_approaches_lr(self):
        p = np.array([0.0])
        g = np.array([0.7])
        opt = AdamState.for_params([p], lr=0.01)
        prev = p.copy()
        for _ in range(200):
            prev = p.copy()
            adam_step([p], [g], opt)
        assert abs(p[0] - prev[0]) == pytest.approx(0.01, rel=1e-3)

    def test_shape_mismatch(self):
        p = np.zeros(3)
        opt = AdamState.for_params([p], lr=0.01)
        with pytest.raises(DomainError):
            adam_step([p], [np.zeros(4)], opt)

    def test_determinism_100_updates(self):
        def run():
            rng = np.random.default_rng(99)
            net = MLPNet([4, 8, 2], rng=rng)
            opt = AdamState.for_params(net.parameters(), lr=1e-3)
            x = np.random.default_rng(7).normal(size=(16, 4))
            t = np.random.default_rng(8).normal(size=(16, 2))
            for _ in range(100):
                y = net.forward(x)
                net.zero_grad()
                net.backward(y - t)
                adam_step(net.parameters(), net.gradients(), opt)
            return [p.copy() for p in net.parameters()]

        a = run()
        b = run()
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        path = tmp_path / "net.ck"
        net = MLPNet([5, 8, 3], rng=np.random.default_rng(12))
        save_net(path, net)
        loaded = load_net(path)
        path2 = tmp_path / "net2.ck"
        save_net(path2, loaded)
        assert path.read_bytes() == path2.read_bytes()
        x = np.random.default_rng(1).normal(size=(2, 5))
        # loaded params are the f32-quantized originals
        assert loaded.forward(x) == pytest.approx(net.forward(x), abs=1e-5)

    def test_magic_and_version_checked(self, tmp_path):
        path = tmp_path / "bad.ck"
        path.write_bytes(b"NOTMAGIC" + b"\x01" + b"\x00" * 16)
        with pytest.raises(DomainError, match="magic"):
            load_checkpoint(path)

    def test_named_arrays_and_meta(self, tmp_path):
        path = tmp_path / "multi.ck"
        arrays = {"a": np.arange(6, dtype=float).reshape(2, 3),
                  "scale": np.array([2.5])}
        save_checkpoint(path, arrays, meta={"kind": "test"})
        loaded, meta = load_checkpoint(path)
        assert meta["kind"] == "test"
        assert loaded["a"] == pytest.approx(arrays["a"])
        assert loaded["scale"] == pytest.approx([2.5])

    def test_net_meta_reconstruction(self, tmp_path):
        net = MLPNet([3, 4, 1], hidden_activation="tanh",
                     output_activation="sigmoid", rng=np.random.default_rng(2))
        rebuilt = net_from_arrays(net_to_arrays(net), net_meta(net))
        x = np.zeros((1, 3))
        assert rebuilt.forward(x) == pytest.approx(net.forward(x))


class TestPolyak:
    def test_blend(self):
        a = MLPNet([2, 2], rng=np.random.default_rng(0))
        b = MLPNet([2, 2], rng=np.random.default_rng(1))
        w_a = a.weights[0].copy()
        w_b = b.weights[0].copy()
        polyak_update(a, b, tau=0.25)
        assert a.weights[0] == pytest.approx(0.75 * w_a + 0.25 * w_b)


def test_every_activation_has_consistent_derivatives():
    rng = np.random.default_rng(41)
    z = rng.normal(size=200) * 2
    h = 1e-6
    for name, act in ACTIVATIONS.items():
        a = act.fn(z)
        d1 = act.d1(z, a)
        num = (act.fn(z + h) - act.fn(z - h)) / (2 * h)
        if name == "relu":
            keep = np.abs(z) > 1e-3
            assert d1[keep] == pytest.approx(num[keep], abs=1e-6)
            continue
        assert d1 == pytest.approx(num, abs=1e-6)
        d2 = act.d2(z, a)
        num2 = (act.fn(z + h) - 2 * a + act.fn(z - h)) / (h * h)
        assert d2 == pytest.approx(num2, abs=2e-3)
