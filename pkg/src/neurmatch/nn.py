"""Small dense networks in float64 numpy: forward, exact backprop, adam/sgd.

Everything here is deliberately tiny and deterministic: the two perceptrons
in this project (descriptor fusion and the subset-confidence classifier)
have a few thousand parameters, so reproducibility matters more than speed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "none")
LOSSES = ("mse", "bce")
MODEL_FORMAT_VERSION = 1

# sigmoid outputs are clipped away from {0, 1} so bce stays finite
_EPS = 1e-12


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError(f"weight {self.weight.shape} / bias {self.bias.shape} mismatch")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite parameters")


@dataclass
class DenseNet:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a net needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError(
                    f"layer dims do not chain: {prev.weight.shape} -> {cur.weight.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])


def init_net(dims, activations, seed: int) -> DenseNet:
    """Glorot-uniform init: a = sqrt(6 / (fan_in + fan_out)), biases zero."""
    dims = list(dims)
    activations = list(activations)
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_deriv(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    if kind == "sigmoid":
        ac = np.clip(a, _EPS, 1.0 - _EPS)
        return ac * (1.0 - ac)
    return np.ones_like(a)


def _as_batch(x: np.ndarray, dim: int, name: str):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise ValueError(f"{name} has shape {x.shape}, expected (..., {dim})")
    return xb, single


def forward(net: DenseNet, x) -> np.ndarray:
    """Forward pass; accepts a single (in,) vector or an (B, in) batch."""
    xb, single = _as_batch(x, net.input_dim, "input")
    a = xb
    for layer in net.layers:
        a = _activate(a @ layer.weight.T + layer.bias, layer.activation)
    return a[0] if single else a


def _forward_cached(net: DenseNet, xb: np.ndarray):
    acts = [xb]
    for layer in net.layers:
        acts.append(_activate(acts[-1] @ layer.weight.T + layer.bias, layer.activation))
    return acts


def backward(net: DenseNet, x, loss_grad) -> list:
    """Gradients [(dW, db), ...] of a scalar loss given dL/d(output).

    Batched inputs sum the per-sample contributions (pass an averaged
    loss_grad to get mean-loss gradients).
    """
    xb, _ = _as_batch(x, net.input_dim, "input")
    gb, _ = _as_batch(loss_grad, net.output_dim, "loss_grad")
    if xb.shape[0] != gb.shape[0]:
        raise ValueError("input and loss_grad batch sizes disagree")
    acts = _forward_cached(net, xb)
    grads = [None] * len(net.layers)
    delta = gb
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        delta = delta * _activation_deriv(acts[idx + 1], layer.activation)
        grads[idx] = (delta.T @ acts[idx], delta.sum(axis=0))
        if idx > 0:
            delta = delta @ layer.weight
    return grads


def loss_value_grad(loss: str, y: np.ndarray, target: np.ndarray):
    """Mean loss over the batch and its gradient w.r.t. y."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if y.shape != t.shape:
        raise ValueError(f"output {y.shape} / target {t.shape} mismatch")
    n = y.shape[0]
    if loss == "mse":
        diff = y - t
        return float(np.mean(np.sum(diff**2, axis=1))), 2.0 * diff / n
    if loss == "bce":
        yc = np.clip(y, _EPS, 1.0 - _EPS)
        val = -np.mean(np.sum(t * np.log(yc) + (1.0 - t) * np.log(1.0 - yc), axis=1))
        return float(val), (yc - t) / (yc * (1.0 - yc)) / n
    raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")


def gradcheck(net: DenseNet, x, target, loss: str = "mse", h: float = 1e-5, max_params: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    With max_params set, a seeded subset of parameters is checked (used for
    the wider nets where the full sweep is needlessly slow).
    """
    xb, _ = _as_batch(x, net.input_dim, "input")
    tb, _ = _as_batch(target, net.output_dim, "target")
    net = net.copy()

    def total_loss():
        val, _ = loss_value_grad(loss, forward(net, xb), tb)
        return val

    _, g = loss_value_grad(loss, forward(net, xb), tb)
    analytic = backward(net, xb, g)
    coords = []
    for li, layer in enumerate(net.layers):
        for flat in range(layer.weight.size):
            coords.append((li, "weight", flat))
        for flat in range(layer.bias.size):
            coords.append((li, "bias", flat))
    if max_params is not None and max_params < len(coords):
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(coords), size=max_params, replace=False)
        coords = [coords[i] for i in idx]
    worst = 0.0
    for li, kind, flat in coords:
        arr = getattr(net.layers[li], kind)
        orig = arr.flat[flat]
        arr.flat[flat] = orig + h
        up = total_loss()
        arr.flat[flat] = orig - h
        down = total_loss()
        arr.flat[flat] = orig
        fd = (up - down) / (2.0 * h)
        an = analytic[li][0].flat[flat] if kind == "weight" else analytic[li][1].flat[flat]
        err = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise ValueError("invalid adam hyperparameters")


class AdamState:
    """Bias-corrected adam over a list of (dW, db) gradient pairs."""

    def __init__(self, net: DenseNet, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]
        self.v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]

    def step(self, net: DenseNet, grads: list) -> None:
        cfg = self.cfg
        self.t += 1
        corr1 = 1.0 - cfg.beta1**self.t
        corr2 = 1.0 - cfg.beta2**self.t
        for layer, (gw, gb), m, v in zip(net.layers, grads, self.m, self.v):
            for arr, g, mm, vv in ((layer.weight, gw, m[0], v[0]), (layer.bias, gb, m[1], v[1])):
                mm *= cfg.beta1
                mm += (1.0 - cfg.beta1) * g
                vv *= cfg.beta2
                vv += (1.0 - cfg.beta2) * g * g
                arr -= cfg.learning_rate * (mm / corr1) / (np.sqrt(vv / corr2) + cfg.eps)


def sgd_step(net: DenseNet, grads: list, lr: float) -> None:
    for layer, (gw, gb) in zip(net.layers, grads):
        layer.weight -= lr * gw
        layer.bias -= lr * gb


def train(net: DenseNet, x, y, cfg: TrainConfig, loss: str = "bce"):
    """Minibatch training; returns (trained copy, per-epoch mean loss)."""
    xb = np.asarray(x, dtype=np.float64)
    yb = np.asarray(y, dtype=np.float64)
    if yb.ndim == 1:
        yb = yb[:, None]
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise ValueError(f"training inputs have shape {xb.shape}, expected (N, {net.input_dim})")
    if yb.shape != (xb.shape[0], net.output_dim):
        raise ValueError(f"labels have shape {yb.shape}, expected ({xb.shape[0]}, {net.output_dim})")
    if xb.shape[0] == 0:
        raise ValueError("empty training set")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(net, cfg) if cfg.optimizer == "adam" else None
    curve = []
    n = xb.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            out = forward(net, xb[sel])
            val, g = loss_value_grad(loss, out, yb[sel])
            if not np.isfinite(val):
                raise DivergenceError(f"non-finite loss {val} at epoch {epoch}", epoch=epoch)
            total += val * len(sel)
            grads = backward(net, xb[sel], g)
            if adam is not None:
                adam.step(net, grads)
            else:
                sgd_step(net, grads, cfg.learning_rate)
        curve.append(total / n)
    return net, curve


# ---------------------------------------------------------------------------
# model file format
# ---------------------------------------------------------------------------


def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "dims": [net.input_dim] + [l.weight.shape[0] for l in net.layers],
        "activations": [l.activation for l in net.layers],
        "weights": [l.weight.ravel().tolist() for l in net.layers],
        "biases": [l.bias.tolist() for l in net.layers],
    }


def net_from_dict(d: dict) -> DenseNet:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    dims = d["dims"]
    layers = []
    for i, act in enumerate(d["activations"]):
        w = np.asarray(d["weights"][i], dtype=np.float64).reshape(dims[i + 1], dims[i])
        b = np.asarray(d["biases"][i], dtype=np.float64)
        layers.append(Layer(w, b, act))
    return DenseNet(layers)


def save_net(net: DenseNet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(net_to_dict(net), f, sort_keys=True)
        f.write("\n")


def load_net(path) -> DenseNet:
    with open(path, "r", encoding="utf-8") as f:
        return net_from_dict(json.load(f))
