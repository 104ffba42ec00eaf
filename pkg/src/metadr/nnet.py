"""Dense feed-forward networks with backpropagation and Adam training.

Everything is float64 numpy. Networks are plain dataclasses; the functions
below never mutate a network in place, so a trained model can be shared by
concurrent readers.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

log = logging.getLogger(__name__)

Activation = Literal["identity", "tanh", "logistic"]
ACTIVATIONS: tuple[str, ...] = ("identity", "tanh", "logistic")
FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self) -> None:
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        n = len(self.layer_sizes) - 1
        if n < 1:
            raise ValueError("an Mlp needs at least two layer sizes")
        if len(self.weights) != n or len(self.biases) != n or len(self.activations) != n:
            raise ValueError(
                f"expected {n} weight/bias/activation entries, got "
                f"{len(self.weights)}/{len(self.biases)}/{len(self.activations)}"
            )
        for l, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != shape:
                raise ValueError(f"layer {l}: weight shape {w.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise ValueError(f"layer {l}: bias shape {b.shape}, expected {(shape[0],)}")
            if a not in ACTIVATIONS:
                raise ValueError(f"layer {l}: unknown activation {a!r}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def sub(self, start: int, stop: int) -> "Mlp":
        """Layers ``start:stop`` as a standalone network (parameters copied)."""
        if not 0 <= start < stop <= self.n_layers:
            raise ValueError(f"bad layer slice {start}:{stop} for {self.n_layers} layers")
        return Mlp(
            self.layer_sizes[start : stop + 1],
            [w.copy() for w in self.weights[start:stop]],
            [b.copy() for b in self.biases[start:stop]],
            list(self.activations[start:stop]),
        )

    def copy(self) -> "Mlp":
        return self.sub(0, self.n_layers)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


def stack(*nets: Mlp) -> Mlp:
    """Cascade networks end to end into one Mlp."""
    sizes = [nets[0].n_in]
    ws, bs, acts = [], [], []
    for net in nets:
        if net.n_in != sizes[-1]:
            raise ValueError(f"cannot cascade: {sizes[-1]} outputs into {net.n_in} inputs")
        sizes.extend(net.layer_sizes[1:])
        ws += [w.copy() for w in net.weights]
        bs += [b.copy() for b in net.biases]
        acts += list(net.activations)
    return Mlp(sizes, ws, bs, acts)


def init_mlp(layer_sizes: Sequence[int], activations: Sequence[str], seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output size")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, list(activations))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    # logistic, split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activation_grad(kind: str, a: np.ndarray) -> np.ndarray:
    # derivative expressed through the post-activation value
    if kind == "identity":
        return np.ones_like(a)
    if kind == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


@dataclass
class LayerCache:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    """Run ``x`` (one vector or a batch of row vectors) through the network."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != mlp.n_in:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {mlp.n_in}")
    cache = LayerCache(inputs=batch)
    a = batch
    for w, b, kind in zip(mlp.weights, mlp.biases, mlp.activations):
        z = a @ w.T + b
        a = _activate(kind, z)
        cache.pre.append(z)
        cache.post.append(a)
    return (a[0] if single else a), cache


def mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Squared Euclidean error per instance, averaged over instances.

    Note the sum runs over vector components; only the instance count
    divides.
    """
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if p.size == 0 or t.size == 0:
        raise ValueError("mse of an empty set")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    d = p - t
    return float(np.sum(d * d) / p.shape[0])


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for pair in zip(self.weights, self.biases) for g in pair])


def backprop_grad(mlp: Mlp, inputs: np.ndarray, targets: np.ndarray) -> Gradients:
    """Gradient of the batch mse with respect to every weight and bias."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    if targets.shape != (inputs.shape[0], mlp.n_out):
        raise ValueError(f"targets shape {targets.shape}, expected {(inputs.shape[0], mlp.n_out)}")
    out, cache = forward(mlp, inputs)
    if not np.all(np.isfinite(out)):
        raise TrainingDiverged("non-finite network output during backprop")
    n = inputs.shape[0]
    delta = (2.0 / n) * (out - targets) * _activation_grad(mlp.activations[-1], out)
    gw: list[np.ndarray] = [None] * mlp.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * mlp.n_layers  # type: ignore[list-item]
    for l in range(mlp.n_layers - 1, -1, -1):
        prev = cache.post[l - 1] if l > 0 else cache.inputs
        gw[l] = delta.T @ prev
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ mlp.weights[l]) * _activation_grad(mlp.activations[l - 1], prev)
    return Gradients(gw, gb)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 2000
    batch_size: int = 32
    seed: int = 0
    early_stop_patience: int = 200
    optimizer: Literal["adam", "sgd"] = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # when set, the step size decays geometrically to this value at max_epochs
    lr_final: float | None = None

    def validate(self, n_train: int) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if not 1 <= self.batch_size <= n_train:
            raise ValueError(f"batch_size {self.batch_size} not in [1, {n_train}]")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be non-negative")
        if self.lr_final is not None and not 0 < self.lr_final <= self.learning_rate:
            raise ValueError("lr_final must lie in (0, learning_rate]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam decay constants must lie in (0, 1)")


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    final_val_mse: float

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def train(
    mlp: Mlp,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
) -> tuple[Mlp, TrainReport]:
    """Minibatch training; returns the parameters with the lowest validation mse.

    ``best_epoch`` is 0 for the initial network and ``e`` after epoch ``e``.
    """
    x_tr, y_tr = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in train_set)
    x_va, y_va = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in val_set)
    n = x_tr.shape[0]
    if n == 0 or x_va.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    if y_tr.shape[0] != n or y_va.shape[0] != x_va.shape[0]:
        raise ValueError("input/target count mismatch")
    config.validate(n)

    net = mlp.copy()
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)

    best = net.copy()
    best_val = mse(net(x_va), y_va)
    best_epoch = 0
    train_curve: list[float] = []
    val_curve: list[float] = []
    step = 0
    b1, b2, eps = config.beta1, config.beta2, config.eps

    decay = 1.0
    if config.lr_final is not None and config.max_epochs > 1:
        decay = (config.lr_final / config.learning_rate) ** (1.0 / (config.max_epochs - 1))

    for epoch in range(1, config.max_epochs + 1):
        lr = config.learning_rate * decay ** (epoch - 1)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            g = backprop_grad(net, x_tr[idx], y_tr[idx])
            grads = [q for pair in zip(g.weights, g.biases) for q in pair]
            step += 1
            if config.optimizer == "sgd":
                for p, q in zip(params, grads):
                    p -= lr * q
                continue
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, q, a, v in zip(params, grads, m1, m2):
                a *= b1
                a += (1.0 - b1) * q
                v *= b2
                v += (1.0 - b2) * q * q
                p -= lr * (a / c1) / (np.sqrt(v / c2) + eps)

        tr_loss = mse(net(x_tr), y_tr)
        va_loss = mse(net(x_va), y_va)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch} (lr={lr}); try a smaller learning rate"
            )
        train_curve.append(tr_loss)
        val_curve.append(va_loss)
        if va_loss < best_val:
            best_val, best_epoch = va_loss, epoch
            best = net.copy()
        elif epoch - best_epoch > config.early_stop_patience:
            log.debug("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    return best, TrainReport(train_curve, val_curve, best_epoch, best_val)


def to_dict(mlp: Mlp) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "layer_sizes": list(mlp.layer_sizes),
        "activations": list(mlp.activations),
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def from_dict(doc: dict) -> Mlp:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    sizes = doc["layer_sizes"]
    weights = [np.array(w, dtype=np.float64).reshape(o, i) for w, i, o in zip(doc["weights"], sizes[:-1], sizes[1:])]
    biases = [np.array(b, dtype=np.float64).reshape(-1) for b in doc["biases"]]
    return Mlp(sizes, weights, biases, list(doc["activations"]))


def save_mlp(mlp: Mlp, path: str | Path) -> None:
    # json emits repr() of floats, which round-trips doubles exactly
    Path(path).write_text(json.dumps(to_dict(mlp)))


def load_mlp(path: str | Path) -> Mlp:
    return from_dict(json.loads(Path(path).read_text()))
