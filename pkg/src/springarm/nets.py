"""Minimal dense-network machinery shared by every learned component.

Three layer ingredients (affine, elementwise activation, scalar heads) are
enough for the actor, critics, discriminator and the sim-to-real net, so
gradients are hand-rolled per layer instead of pulling in an autodiff
framework. Second derivatives of the activations are carried so the
gradient-norm penalty can be differentiated w.r.t. parameters
(double backprop).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StateError


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class _Act:
    """Activation with value, first and second derivative."""

    def __init__(self, fn, d1, d2):
        self.fn = fn
        self.d1 = d1
        self.d2 = d2


ACTIVATIONS = {
    "identity": _Act(lambda z: z,
                     lambda z, a: np.ones_like(z),
                     lambda z, a: np.zeros_like(z)),
    "tanh": _Act(np.tanh,
                 lambda z, a: 1.0 - a * a,
                 lambda z, a: -2.0 * a * (1.0 - a * a)),
    "relu": _Act(lambda z: np.maximum(z, 0.0),
                 lambda z, a: (z > 0.0).astype(z.dtype),
                 lambda z, a: np.zeros_like(z)),
    "sigmoid": _Act(_sigmoid,
                    lambda z, a: a * (1.0 - a),
                    lambda z, a: a * (1.0 - a) * (1.0 - 2.0 * a)),
    "softplus": _Act(lambda z: np.logaddexp(0.0, z),
                     lambda z, a: _sigmoid(z),
                     lambda z, a: _sigmoid(z) * (1.0 - _sigmoid(z))),
}


class MLPNet:
    """Fully-connected network with cached forward pass and gradient buffers.

    ``layer_sizes`` includes input and output sizes. Hidden layers share one
    activation; the output head gets its own. Weights use uniform fan-in
    initialization from an explicit generator so runs are reproducible.
    """

    def __init__(self, layer_sizes, hidden_activation="tanh",
                 output_activation="identity", rng=None, dtype=np.float64):
        if len(layer_sizes) < 2:
            raise DomainError("need at least input and output sizes")
        if hidden_activation not in ACTIVATIONS or output_activation not in ACTIVATIONS:
            raise DomainError("unknown activation")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.weights.append(rng.uniform(-bound, bound, size=(n_in, n_out))
                                .astype(self.dtype))
            self.biases.append(np.zeros(n_out, dtype=self.dtype))
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]
        self._cache = None

    # -- structure ---------------------------------------------------------
    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def _activation(self, layer: int) -> _Act:
        name = self.output_activation if layer == self.n_layers - 1 \
            else self.hidden_activation
        return ACTIVATIONS[name]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def gradients(self):
        out = []
        for gw, gb in zip(self.grad_w, self.grad_b):
            out.extend((gw, gb))
        return out

    def zero_grad(self):
        for g in self.grad_w:
            g.fill(0.0)
        for g in self.grad_b:
            g.fill(0.0)

    def copy(self) -> "MLPNet":
        other = MLPNet(self.layer_sizes, self.hidden_activation,
                       self.output_activation, dtype=self.dtype)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            other.weights[i] = w.copy()
            other.biases[i] = b.copy()
        return other

    # -- forward / backward ------------------------------------------------
    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run the net; caches activations for a following backward pass."""
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.input_dim:
            raise DomainError(
                f"input dim {a.shape[1]} != expected {self.input_dim}")
        acts = [a]
        zs = []
        for k in range(self.n_layers):
            z = a @ self.weights[k] + self.biases[k]
            a = self._activation(k).fn(z)
            zs.append(z)
            acts.append(a)
        self._cache = (acts, zs)
        return a[0] if squeeze else a

    def backward(self, upstream: np.ndarray, accumulate: bool = True) -> np.ndarray:
        """Backpropagate ``upstream`` (dLoss/dOutput); returns the input gradient.

        Parameter gradients accumulate into the net's buffers unless
        ``accumulate`` is False (used when only the input gradient matters,
        e.g. differentiating a frozen critic w.r.t. the action).
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        acts, zs = self._cache
        delta = np.atleast_2d(np.asarray(upstream, dtype=self.dtype))
        if delta.shape != acts[-1].shape:
            raise DomainError("upstream gradient shape mismatch")
        for k in range(self.n_layers - 1, -1, -1):
            act = self._activation(k)
            delta = delta * act.d1(zs[k], acts[k + 1])
            if accumulate:
                self.grad_w[k] += acts[k].T @ delta
                self.grad_b[k] += delta.sum(axis=0)
            delta = delta @ self.weights[k].T
        return delta if np.asarray(upstream).ndim > 1 else delta[0]

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """d(scalar output)/d(input) per row, without touching grad buffers."""
        if self.output_dim != 1:
            raise DomainError("input_gradient requires a scalar output")
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        a = x
        acts = [a]
        zs = []
        for k in range(self.n_layers):
            z = a @ self.weights[k] + self.biases[k]
            a = self._activation(k).fn(z)
            zs.append(z)
            acts.append(a)
        gamma = self._activation(self.n_layers - 1).d1(zs[-1], acts[-1])
        for k in range(self.n_layers - 1, 0, -1):
            gamma = (gamma @ self.weights[k].T) \
                * self._activation(k - 1).d1(zs[k - 1], acts[k])
        return gamma @ self.weights[0].T


def grad_norm_penalty(net: MLPNet, x: np.ndarray, mask=None,
                      accumulate: bool = True) -> float:
    """Mean (||d net/d x||_2 - 1)^2 over the batch, with parameter gradients.

    ``mask`` selects which input dimensions enter the norm. Parameter
    gradients of the penalty are accumulated into the net's buffers via
    forward-over-reverse differentiation (requires C2 activations to be
    exact; relu contributes zero curvature terms).
    """
    if net.output_dim != 1:
        raise DomainError("penalty requires a scalar output")
    x = np.atleast_2d(np.asarray(x, dtype=net.dtype))
    batch = x.shape[0]
    if batch == 0:
        raise DomainError("empty batch")
    mask = np.ones(net.input_dim, dtype=net.dtype) if mask is None \
        else np.asarray(mask, dtype=net.dtype)

    acts = [x]
    zs = []
    a = x
    for k in range(net.n_layers):
        z = a @ net.weights[k] + net.biases[k]
        a = net._activation(k).fn(z)
        zs.append(z)
        acts.append(a)

    # reverse pass for the input gradient g
    gammas = [None] * net.n_layers
    gamma = net._activation(net.n_layers - 1).d1(zs[-1], acts[-1])
    gammas[net.n_layers - 1] = gamma
    for k in range(net.n_layers - 1, 0, -1):
        gamma = (gamma @ net.weights[k].T) \
            * net._activation(k - 1).d1(zs[k - 1], acts[k])
        gammas[k - 1] = gamma
    g = gammas[0] @ net.weights[0].T
    gm = g * mask

    norms = np.sqrt(np.maximum((gm * gm).sum(axis=1), 1e-24))
    penalty = float(np.mean((norms - 1.0) ** 2))
    if not accumulate:
        return penalty

    # u = dPenalty/dg; the parameter gradient of sum_b g_b . u_b equals the
    # u-directional input-tangent of the plain parameter gradient
    u = ((2.0 / batch) * (norms - 1.0) / norms)[:, None] * gm * mask

    a_dot = [u]
    z_dots = []
    ad = u
    for k in range(net.n_layers):
        zd = ad @ net.weights[k]
        act = net._activation(k)
        ad = act.d1(zs[k], acts[k + 1]) * zd
        z_dots.append(zd)
        a_dot.append(ad)

    gamma_dots = [None] * net.n_layers
    act_l = net._activation(net.n_layers - 1)
    gamma_dots[net.n_layers - 1] = act_l.d2(zs[-1], acts[-1]) * z_dots[-1]
    for k in range(net.n_layers - 1, 0, -1):
        act = net._activation(k - 1)
        d1 = act.d1(zs[k - 1], acts[k])
        d2 = act.d2(zs[k - 1], acts[k])
        gamma_dots[k - 1] = (gamma_dots[k] @ net.weights[k].T) * d1 \
            + (gammas[k] @ net.weights[k].T) * d2 * z_dots[k - 1]

    for k in range(net.n_layers):
        net.grad_w[k] += a_dot[k].T @ gammas[k] + acts[k].T @ gamma_dots[k]
        net.grad_b[k] += gamma_dots[k].sum(axis=0)
    return penalty


@dataclass
class AdamState:
    """Adam moment buffers and hyperparameters for one parameter list."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @staticmethod
    def for_params(params, lr: float) -> "AdamState":
        return AdamState(lr=lr,
                         m=[np.zeros_like(p) for p in params],
                         v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, opt: AdamState) -> None:
    """Standard bias-corrected Adam update, in place."""
    if len(params) != len(opt.m):
        raise DomainError("parameter/moment count mismatch")
    opt.step_count += 1
    b1c = 1.0 - opt.beta1 ** opt.step_count
    b2c = 1.0 - opt.beta2 ** opt.step_count
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if p.shape != g.shape:
            raise DomainError("gradient shape mismatch")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.lr * (m / b1c) / (np.sqrt(v / b2c) + opt.eps)


def polyak_update(target: MLPNet, online: MLPNet, tau: float) -> None:
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob


# -- checkpoint format -----------------------------------------------------
CHECKPOINT_MAGIC = b"SSILKC01"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict = None) -> None:
    """Write named float arrays: magic, version byte, shape manifest, f32 data."""
    manifest = {
        "arrays": [{"name": k, "shape": list(np.asarray(v).shape)}
                   for k, v in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in arrays:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays, meta). Values come back float64."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise DomainError(f"not a checkpoint file: bad magic {magic!r}")
        version = struct.unpack("<B", fh.read(1))[0]
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        blob_len = struct.unpack("<I", fh.read(4))[0]
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        arrays = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            arrays[entry["name"]] = data.reshape(shape).astype(float)
    return arrays, manifest.get("meta", {})


def net_to_arrays(net: MLPNet, prefix: str = "") -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}w{i}"] = w
        out[f"{prefix}b{i}"] = b
    return out


def net_meta(net: MLPNet) -> dict:
    return {
        "layer_sizes": net.layer_sizes,
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "dtype": net.dtype.name,
    }


def net_from_arrays(arrays: dict, meta: dict, prefix: str = "") -> MLPNet:
    net = MLPNet(meta["layer_sizes"], meta["hidden_activation"],
                 meta["output_activation"],
                 dtype=np.dtype(meta.get("dtype", "float64")))
    for i in range(net.n_layers):
        net.weights[i] = np.array(arrays[f"{prefix}w{i}"], dtype=net.dtype)
        net.biases[i] = np.array(arrays[f"{prefix}b{i}"], dtype=net.dtype)
        if net.weights[i].shape != (net.layer_sizes[i], net.layer_sizes[i + 1]):
            raise DomainError("checkpoint layer shape mismatch")
    net.grad_w = [np.zeros_like(w) for w in net.weights]
    net.grad_b = [np.zeros_like(b) for b in net.biases]
    return net


def save_net(path, net: MLPNet) -> None:
    save_checkpoint(path, net_to_arrays(net), net_meta(net))


def load_net(path) -> MLPNet:
    arrays, meta = load_checkpoint(path)
    return net_from_arrays(arrays, meta)
