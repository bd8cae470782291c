"""Deterministic mini-batch Adam trainer for dense ReLU regression nets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .netmodel import DenseNN, Layer


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    widths: Sequence[int]  # full chain, inputs to outputs, e.g. (2, 4, 2)
    epochs: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def check(self, n_in: int, n_out: int) -> None:
        w = list(self.widths)
        if len(w) < 2:
            raise TrainError("widths must chain input to output")
        if w[0] != n_in or w[-1] != n_out:
            raise TrainError(f"widths {w} do not chain {n_in} -> {n_out}")
        if min(self.epochs, self.batch_size) <= 0 or self.lr <= 0 or min(w) <= 0:
            raise TrainError("hyperparameters must be positive")


def init_params(widths: Sequence[int], rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Seeded uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    params = []
    for fi, fo in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (fi + fo))
        params.append((rng.uniform(-a, a, (fo, fi)), np.zeros(fo)))
    return params


def _forward_cache(params, x):
    """Hidden layers are ReLU, the last layer is affine."""
    acts = [x]
    pres = []
    h = x
    for i, (w, b) in enumerate(params):
        pre = h @ w.T + b
        pres.append(pre)
        h = np.maximum(pre, 0.0) if i < len(params) - 1 else pre
        acts.append(h)
    return acts, pres


def loss_and_grad(params, x, y):
    """Mean-squared error and its gradient (backprop)."""
    n = x.shape[0]
    acts, pres = _forward_cache(params, x)
    diff = acts[-1] - y
    loss = float(np.mean(diff**2))
    grads = []
    g = (2.0 / diff.size) * diff
    for i in range(len(params) - 1, -1, -1):
        w, _b = params[i]
        gw = g.T @ acts[i]
        gb = g.sum(axis=0)
        grads.append((gw, gb))
        if i > 0:
            g = (g @ w) * (pres[i - 1] > 0)
    grads.reverse()
    return loss, grads


def to_network(params) -> DenseNN:
    layers = []
    for i, (w, b) in enumerate(params):
        mask = np.ones(w.shape[0], dtype=bool) if i < len(params) - 1 else np.zeros(w.shape[0], dtype=bool)
        layers.append(Layer(w.copy(), b.copy(), mask))
    return DenseNN.from_layers(layers)


def train_with_stats(dataset, config: TrainConfig):
    """(net, stats) with stats carrying the final training MSE."""
    if hasattr(dataset, "inputs"):
        x, y = dataset.inputs, dataset.targets
    else:
        x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise TrainError("dataset must be matching (n, d_in), (n, d_out) arrays")
    if x.shape[0] == 0:
        raise TrainError("empty dataset")
    config.check(x.shape[1], y.shape[1])

    rng = np.random.default_rng(config.seed)
    params = init_params(config.widths, rng)
    flat = [p for wb in params for p in wb]
    m = [np.zeros_like(p) for p in flat]
    v = [np.zeros_like(p) for p in flat]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = x.shape[0]
    loss = np.inf
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grads = loss_and_grad(params, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainError(f"loss became non-finite at epoch {epoch}, step {step}")
            step += 1
            gflat = [g for gw in grads for g in gw]
            for i, g in enumerate(gflat):
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                mh = m[i] / (1 - b1**step)
                vh = v[i] / (1 - b2**step)
                flat[i] -= config.lr * mh / (np.sqrt(vh) + eps)
        params = [(flat[2 * i], flat[2 * i + 1]) for i in range(len(params))]
    final_loss, _ = loss_and_grad(params, x, y)
    return to_network(params), {"final_mse": final_loss, "epochs": config.epochs, "steps": step}


def train(dataset, config: TrainConfig) -> DenseNN:
    net, _stats = train_with_stats(dataset, config)
    return net
