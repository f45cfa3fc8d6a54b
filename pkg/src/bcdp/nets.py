"""Minimal dense-network stack with hand-written exact gradients.

ReLU hidden layers; identity, scaled-tanh, or sigmoid output heads. Everything
is double precision so the finite-difference checker can be tight. Networks
back the actor, the twin critics, and the expert-vs-offline discriminator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")
LOSS_KINDS = ("mse", "bce", "gaussian_nll", "neg_mean")

# Sigmoid pre-activations are clipped here; keeps outputs strictly inside (0, 1)
# and BCE finite. The derivative is zero beyond the clip, matching the forward.
_SIGMOID_CLIP = 30.0


@dataclass
class DenseNet:
    layer_dims: tuple[int, ...]
    output_activation: str = "identity"
    output_scale: float = 1.0
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValidationError("need at least input and output dims")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValidationError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DenseNet":
        return DenseNet(
            layer_dims=self.layer_dims,
            output_activation=self.output_activation,
            output_scale=self.output_scale,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_net(layer_dims, rng: np.random.Generator, output_activation: str = "identity",
             output_scale: float = 1.0) -> DenseNet:
    """He-style uniform fan-in initialization; biases start at zero."""
    net = DenseNet(tuple(int(d) for d in layer_dims), output_activation, output_scale)
    for d_in, d_out in zip(net.layer_dims[:-1], net.layer_dims[1:]):
        limit = np.sqrt(6.0 / d_in)
        net.weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        net.biases.append(np.zeros(d_out))
    return net


def _check_inputs(net: DenseNet, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ValidationError(
            f"inputs must be (n, {net.layer_dims[0]}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite values in inputs")
    return x


def forward(net: DenseNet, inputs) -> np.ndarray:
    return forward_cached(net, inputs)[0]


def forward_cached(net: DenseNet, inputs):
    """Forward pass keeping per-layer activations for backprop."""
    x = _check_inputs(net, inputs)
    acts = [x]
    pre = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        pre.append(z)
        if i < len(net.weights) - 1:
            acts.append(np.maximum(z, 0.0))
    z_out = pre[-1]
    if net.output_activation == "identity":
        y = z_out
    elif net.output_activation == "tanh":
        y = net.output_scale * np.tanh(z_out)
    else:
        y = 1.0 / (1.0 + np.exp(-np.clip(z_out, -_SIGMOID_CLIP, _SIGMOID_CLIP)))
    return y, (acts, pre, y)


def backward(net: DenseNet, cache, d_out: np.ndarray):
    """Backprop a cotangent on the outputs; returns (grads, d_inputs).

    ``grads`` is a list of (dW, db) aligned with the layers.
    """
    acts, pre, y = cache
    z_out = pre[-1]
    if net.output_activation == "identity":
        dz = d_out
    elif net.output_activation == "tanh":
        t = y / net.output_scale
        dz = d_out * net.output_scale * (1.0 - t * t)
    else:
        mask = np.abs(z_out) < _SIGMOID_CLIP
        dz = d_out * y * (1.0 - y) * mask
    grads = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        dx = dz @ net.weights[i].T
        if i > 0:
            dz = dx * (pre[i - 1] > 0.0)
    return grads, dx


def _loss_cotangent(loss_kind: str, y: np.ndarray, pre_out: np.ndarray,
                    targets, sample_weight):
    n, d = y.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"sample_weight must be ({n},), got {w.shape}")
    if loss_kind == "neg_mean":
        loss = -float(np.mean(w * y.mean(axis=1)))
        d_out = np.tile(-w[:, None] / (n * d), (1, d))
        return loss, d_out
    t = np.asarray(targets, dtype=float)
    if t.shape != y.shape:
        raise ValidationError(f"targets must match outputs {y.shape}, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValidationError("non-finite values in targets")
    if loss_kind == "mse":
        per = np.mean((y - t) ** 2, axis=1)
        loss = float(np.mean(w * per))
        d_out = 2.0 * (y - t) * w[:, None] / (n * d)
    elif loss_kind == "gaussian_nll":
        per = 0.5 * np.sum((y - t) ** 2, axis=1) + 0.5 * d * np.log(2.0 * np.pi)
        loss = float(np.mean(w * per))
        d_out = (y - t) * w[:, None] / n
    elif loss_kind == "bce":
        # Stable form on the clipped pre-activations; requires a sigmoid head.
        z = np.clip(pre_out, -_SIGMOID_CLIP, _SIGMOID_CLIP)
        per = np.mean(np.logaddexp(0.0, z) - t * z, axis=1)
        loss = float(np.mean(w * per))
        d_out = (y - t) / (y * (1.0 - y)) * w[:, None] / (n * d)
    else:
        raise ValidationError(f"unknown loss kind {loss_kind!r}")
    return loss, d_out


def loss_and_grad(net: DenseNet, inputs, loss_kind: str, targets=None,
                  sample_weight=None):
    """Mean batch loss and its exact analytic parameter gradients."""
    if loss_kind == "bce" and net.output_activation != "sigmoid":
        raise ValidationError("bce loss requires a sigmoid output head")
    y, cache = forward_cached(net, inputs)
    loss, d_out = _loss_cotangent(loss_kind, y, cache[1][-1], targets, sample_weight)
    grads, _ = backward(net, cache, d_out)
    return loss, grads


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(net: DenseNet, lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for w, b in zip(net.weights, net.biases):
        state.m.append((np.zeros_like(w), np.zeros_like(b)))
        state.v.append((np.zeros_like(w), np.zeros_like(b)))
    return state


def adam_update(net: DenseNet, grads, adam: AdamState) -> None:
    """Standard bias-corrected Adam step, mutating ``net`` and ``adam``."""
    if len(grads) != len(net.weights):
        raise ValidationError("gradient list does not match network layers")
    adam.step += 1
    c1 = 1.0 - adam.beta1 ** adam.step
    c2 = 1.0 - adam.beta2 ** adam.step
    for i, (dw, db) in enumerate(grads):
        if dw.shape != net.weights[i].shape or db.shape != net.biases[i].shape:
            raise ValidationError(f"gradient shape mismatch at layer {i}")
        mw, mb = adam.m[i]
        vw, vb = adam.v[i]
        mw *= adam.beta1
        mw += (1 - adam.beta1) * dw
        mb *= adam.beta1
        mb += (1 - adam.beta1) * db
        vw *= adam.beta2
        vw += (1 - adam.beta2) * dw * dw
        vb *= adam.beta2
        vb += (1 - adam.beta2) * db * db
        net.weights[i] -= adam.lr * (mw / c1) / (np.sqrt(vw / c2) + adam.eps)
        net.biases[i] -= adam.lr * (mb / c1) / (np.sqrt(vb / c2) + adam.eps)
        if not (np.all(np.isfinite(net.weights[i])) and np.all(np.isfinite(net.biases[i]))):
            raise ValidationError(f"non-finite parameters after update at layer {i}")


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> None:
    """Polyak averaging: target <- tau * online + (1 - tau) * target."""
    if not (0.0 <= tau <= 1.0):
        raise ValidationError("tau must lie in [0, 1]")
    if target.layer_dims != online.layer_dims:
        raise ValidationError("target and online architectures differ")
    for wt, wo in zip(target.weights, online.weights):
        wt *= 1.0 - tau
        wt += tau * wo
    for bt, bo in zip(target.biases, online.biases):
        bt *= 1.0 - tau
        bt += tau * bo


def _flat_views(net: DenseNet):
    for i in range(len(net.weights)):
        yield net.weights[i]
        yield net.biases[i]


def grad_check(net: DenseNet, inputs, loss_kind: str, targets=None,
               sample_weight=None, h: float = 1e-5, max_params: int = 10_000,
               seed: int = 0, grads=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Above ``max_params`` parameters a seeded random subsample is checked.
    ``grads`` overrides the analytic gradient (fault-injection hook for tests).
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    if grads is None:
        _, grads = loss_and_grad(net, inputs, loss_kind, targets, sample_weight)
    analytic = np.concatenate([g.ravel() for pair in grads for g in pair])
    arrays = list(_flat_views(net))
    sizes = [a.size for a in arrays]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    idx = np.arange(total)
    if total > max_params:
        idx = np.random.default_rng(seed).choice(total, size=max_params, replace=False)

    def loss_at(flat_index: int, delta: float) -> float:
        k = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = flat_index - offsets[k]
        view = arrays[k].reshape(-1)
        old = view[local]
        view[local] = old + delta
        try:
            loss, _ = loss_and_grad(net, inputs, loss_kind, targets, sample_weight)
        finally:
            view[local] = old
        return loss

    fd = np.empty(idx.size)
    for j, i in enumerate(idx):
        fd[j] = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h)
    ana = analytic[idx]
    floor = 1e-6 * max(1.0, float(np.max(np.abs(fd)))) if fd.size else 1.0
    rel = np.abs(ana - fd) / np.maximum(np.abs(fd), floor)
    return float(rel.max())


def net_to_doc(net: DenseNet) -> dict:
    return {
        "layer_dims": list(net.layer_dims),
        "activations": {"hidden": "relu", "output": net.output_activation,
                        "output_scale": net.output_scale},
        "weights": [w.tolist() for w in net.weights],  # row-major nested lists
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_doc(doc: dict) -> DenseNet:
    net = DenseNet(
        layer_dims=tuple(doc["layer_dims"]),
        output_activation=doc["activations"]["output"],
        output_scale=float(doc["activations"]["output_scale"]),
        weights=[np.array(w, dtype=float) for w in doc["weights"]],
        biases=[np.array(b, dtype=float) for b in doc["biases"]],
    )
    for w, b, d_in, d_out in zip(net.weights, net.biases,
                                 net.layer_dims[:-1], net.layer_dims[1:]):
        if w.shape != (d_in, d_out) or b.shape != (d_out,):
            raise ValidationError("checkpoint arrays disagree with layer_dims")
    return net


def save_checkpoint(path, nets: dict[str, DenseNet], rng_state=None, extra=None) -> None:
    """JSON checkpoint: named nets in the doc format plus the trainer RNG state."""
    doc = {"nets": {name: net_to_doc(net) for name, net in nets.items()},
           "rng_state": rng_state, "extra": extra}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    nets = {name: net_from_doc(d) for name, d in doc["nets"].items()}
    return nets, doc.get("rng_state"), doc.get("extra")
