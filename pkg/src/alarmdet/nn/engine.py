"""Small feed-forward network engine: dense, max-pooling and partially connected layers.

Partially connected layers split their input into ``out_dim`` consecutive,
non-overlapping groups of ``filter_width`` values and give each group one
output unit (a weighted average plus bias). For time weighting the input is
a context matrix flattened feature-major (``x[f * W + t]``), so each group is
one feature's trajectory over the ``W`` frames of context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LAYER_KINDS = ("fully_connected", "max_pool_uniform", "max_pool_mel", "partial_freq_weight", "partial_time_weight")
ACTIVATIONS = ("sigmoid", "softmax", "linear")
CHECKPOINT_VERSION = 1
_PROB_EPS = 1e-12


class NetworkError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    pass


@dataclass
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    filter_width: int = 1
    activation: str = "linear"
    shared: bool = False
    # pooling layers: (out_dim, width) input indices; ragged supports are padded by repetition
    pool_index: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise NetworkError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise NetworkError(f"{self.kind}: dimensions must be positive")
        if self.kind.startswith("partial") and self.in_dim != self.out_dim * self.filter_width:
            raise NetworkError(f"{self.kind}: in_dim {self.in_dim} != out_dim {self.out_dim} "
                               f"x filter_width {self.filter_width}")
        if self.kind == "max_pool_uniform" and self.pool_index is None:
            if self.in_dim != self.out_dim * self.filter_width:
                raise NetworkError(f"max_pool_uniform: in_dim {self.in_dim} != out_dim x filter_width")
            self.pool_index = np.arange(self.in_dim).reshape(self.out_dim, self.filter_width)
        if self.kind.startswith("max_pool"):
            if self.pool_index is None:
                raise NetworkError(f"{self.kind}: pool_index required")
            self.pool_index = np.asarray(self.pool_index, dtype=np.intp)
            if self.pool_index.ndim != 2 or self.pool_index.shape[0] != self.out_dim:
                raise NetworkError(f"{self.kind}: pool_index must have shape (out_dim, width)")
            if self.pool_index.min() < 0 or self.pool_index.max() >= self.in_dim:
                raise NetworkError(f"{self.kind}: pool_index out of range")

    @property
    def trainable(self) -> bool:
        return not self.kind.startswith("max_pool")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim,
             "filter_width": self.filter_width, "activation": self.activation, "shared": self.shared}
        if self.kind == "max_pool_mel":
            d["pool_index"] = self.pool_index.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        return cls(**d)


def _init_params(spec: LayerSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    if spec.kind == "fully_connected":
        lim = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        return rng.uniform(-lim, lim, (spec.out_dim, spec.in_dim)), np.zeros(spec.out_dim)
    if spec.trainable:
        lim = np.sqrt(6.0 / (spec.filter_width + 1))
        rows = 1 if spec.shared else spec.out_dim
        return rng.uniform(-lim, lim, (rows, spec.filter_width)), np.zeros(rows)
    return np.zeros((0, 0)), np.zeros(0)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Network:
    def __init__(self, layers: list[LayerSpec], seed: int = 0):
        if not layers:
            raise NetworkError("network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise NetworkError(f"layer {i} out_dim {a.out_dim} != layer {i + 1} in_dim {b.in_dim}")
        for i, spec in enumerate(layers):
            if spec.activation == "softmax" and i != len(layers) - 1:
                raise NetworkError("softmax is only allowed on the output layer")
        if layers[-1].activation != "softmax" or layers[-1].out_dim != 2:
            raise NetworkError("output layer must be a 2-unit softmax")
        self.layers = layers
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for spec in layers:
            w, b = _init_params(spec, rng)
            self.weights.append(w)
            self.biases.append(b)
        self.mean = np.zeros(layers[0].in_dim)
        self.std = np.ones(layers[0].in_dim)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def param_count(self) -> int:
        """Trainable weights plus biases."""
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def weight_count(self) -> int:
        return sum(w.size for w in self.weights)

    def set_normalization(self, mean, std) -> None:
        std = np.asarray(std, dtype=np.float64)
        self.mean = np.asarray(mean, dtype=np.float64).copy()
        self.std = np.where(std > 1e-12, std, 1.0)

    def fit_normalization(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.set_normalization(x.mean(axis=0), x.std(axis=0))

    # forward / backward over batches of already-normalised inputs

    def _layer_forward(self, i: int, x: np.ndarray):
        spec, w, b = self.layers[i], self.weights[i], self.biases[i]
        cache = None
        if spec.kind == "fully_connected":
            z = x @ w.T + b
        elif spec.trainable:
            xg = x.reshape(x.shape[0], spec.out_dim, spec.filter_width)
            z = np.einsum("bgk,gk->bg", xg, np.broadcast_to(w, (spec.out_dim, spec.filter_width))) + b
        else:
            xg = x[:, spec.pool_index]
            arg = np.argmax(xg, axis=2)
            z = np.take_along_axis(xg, arg[..., None], axis=2)[..., 0]
            cache = spec.pool_index[np.arange(spec.out_dim), arg]
        if spec.activation == "sigmoid":
            a = _sigmoid(z)
        elif spec.activation == "softmax":
            a = _softmax(z)
        else:
            a = z
        return a, cache

    def _forward_all(self, x: np.ndarray):
        acts = [x]
        caches = []
        for i in range(len(self.layers)):
            a, c = self._layer_forward(i, acts[-1])
            acts.append(a)
            caches.append(c)
        return acts, caches

    def forward(self, x) -> np.ndarray:
        """Posteriors ``(n, 2)``, column 1 the alarm class, for raw (unnormalised) inputs."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise NetworkError(f"input has dimension {x.shape[-1]}, network expects {self.in_dim}")
        acts, _ = self._forward_all((x - self.mean) / self.std)
        return acts[-1][0] if single else acts[-1]

    def loss_and_grads(self, xn: np.ndarray, y: np.ndarray):
        """Mean cross-entropy and parameter gradients for normalised inputs and one-hot targets."""
        acts, caches = self._forward_all(xn)
        p = acts[-1]
        n = xn.shape[0]
        loss = float(-np.sum(y * np.log(np.maximum(p, _PROB_EPS))) / n)
        gw = [None] * len(self.layers)
        gb = [None] * len(self.layers)
        delta = (p - y) / n  # softmax + cross-entropy
        for i in range(len(self.layers) - 1, -1, -1):
            spec, w = self.layers[i], self.weights[i]
            x_in = acts[i]
            if i < len(self.layers) - 1:
                if spec.activation == "sigmoid":
                    a = acts[i + 1]
                    delta = delta * a * (1 - a)
                elif spec.activation == "softmax":
                    raise NetworkError("softmax is only supported on the output layer")
            if spec.kind == "fully_connected":
                gw[i] = delta.T @ x_in
                gb[i] = delta.sum(axis=0)
                delta = delta @ w
            elif spec.trainable:
                xg = x_in.reshape(n, spec.out_dim, spec.filter_width)
                g = np.einsum("bg,bgk->gk", delta, xg)
                gw[i] = g.sum(axis=0, keepdims=True) if spec.shared else g
                gb[i] = delta.sum(axis=0)
                if spec.shared:
                    gb[i] = gb[i].sum(keepdims=True)
                wf = np.broadcast_to(w, (spec.out_dim, spec.filter_width))
                delta = (delta[:, :, None] * wf[None]).reshape(n, spec.in_dim)
            else:
                gw[i] = np.zeros((0, 0))
                gb[i] = np.zeros(0)
                back = np.zeros((n, spec.in_dim))
                rows = np.repeat(np.arange(n), spec.out_dim)
                np.add.at(back, (rows, caches[i].ravel()), delta.ravel())
                delta = back
        return loss, gw, gb

    # serialisation

    def to_dict(self) -> dict:
        return {"format_version": CHECKPOINT_VERSION,
                "layers": [s.to_dict() for s in self.layers],
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Network:
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise NetworkError(f"unsupported checkpoint version {d.get('format_version')!r}")
        net = cls([LayerSpec.from_dict(s) for s in d["layers"]])
        for i, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            w = np.asarray(w, dtype=np.float64).reshape(net.weights[i].shape)
            net.weights[i] = w
            net.biases[i] = np.asarray(b, dtype=np.float64).reshape(net.biases[i].shape)
        net.set_normalization(d["mean"], d["std"])
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> Network:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    minibatch: int = 10
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch < 1:
            raise ValueError("epochs and minibatch must be positive")
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be >= 0 and momentum in [0, 1)")


@dataclass
class TrainState:
    vw: list = field(default_factory=list)
    vb: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels).astype(int)
    y = np.zeros((labels.size, 2))
    y[np.arange(labels.size), labels] = 1.0
    return y


def backward_update(net: Network, xn: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                    state: TrainState | None = None) -> float:
    """One momentum-SGD step on a normalised batch; returns the batch loss before the step."""
    if state is None:
        state = TrainState()
    if not state.vw:
        state.vw = [np.zeros_like(w) for w in net.weights]
        state.vb = [np.zeros_like(b) for b in net.biases]
    loss, gw, gb = net.loss_and_grads(xn, y)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss} (batch of {xn.shape[0]})")
    for i in range(len(net.layers)):
        if not net.layers[i].trainable:
            continue
        state.vw[i] = cfg.momentum * state.vw[i] - cfg.learning_rate * gw[i]
        state.vb[i] = cfg.momentum * state.vb[i] - cfg.learning_rate * gb[i]
        net.weights[i] = net.weights[i] + state.vw[i]
        net.biases[i] = net.biases[i] + state.vb[i]
    return loss


def train(net: Network, x, labels, cfg: TrainConfig = TrainConfig(), normalize: bool = True) -> list[float]:
    """Fit the network with minibatch momentum SGD; returns per-epoch mean losses."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if x.shape[0] != labels.shape[0]:
        raise NetworkError("inputs and labels differ in length")
    if normalize:
        net.fit_normalization(x)
    xn = (x - net.mean) / net.std
    y = one_hot(labels)
    rng = np.random.default_rng(cfg.seed)
    state = TrainState()
    for epoch in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for start in range(0, order.size, cfg.minibatch):
            idx = order[start: start + cfg.minibatch]
            try:
                total += backward_update(net, xn[idx], y[idx], cfg, state) * idx.size
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch starting at {start}: {exc}") from None
        state.losses.append(total / x.shape[0])
    return state.losses


def gradient_check(net: Network, xn: np.ndarray, y: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference gradients."""
    _, gw, gb = net.loss_and_grads(xn, y)
    worst = 0.0
    for params, grads in ((net.weights, gw), (net.biases, gb)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + step
                lp = net.loss_and_grads(xn, y)[0]
                flat[j] = old - step
                lm = net.loss_and_grads(xn, y)[0]
                flat[j] = old
                num = (lp - lm) / (2 * step)
                denom = max(abs(num) + abs(gflat[j]), 1e-7)
                worst = max(worst, abs(num - gflat[j]) / denom)
    return worst


def balance_training_set(x, labels, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Subsample the majority (non-alarm, label 0) class without replacement to the alarm count."""
    x = np.asarray(x)
    labels = np.asarray(labels).astype(int)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size == 0 or neg.size == 0:
        raise NetworkError("both alarm and non-alarm frames are needed for training")
    rng = np.random.default_rng(seed)
    if neg.size > pos.size:
        neg = np.sort(rng.choice(neg, size=pos.size, replace=False))
    keep = np.sort(np.concatenate([pos, neg]))
    return x[keep], labels[keep]


# standard topologies

def _partial(kind, n_groups, width, activation="sigmoid", shared=False):
    return LayerSpec(kind, n_groups * width, n_groups, width, activation, shared)


def build_network(arch: str, n_features: int, context: int = 5, hidden: int = 8, fw_width: int = 4,
                  seed: int = 0, shared: bool = False) -> Network:
    """Named topologies over an ``n_features``-per-frame input.

    ``fc``: one sigmoid FC layer of ``hidden`` units; ``fw``: frequency
    weighting over groups of ``fw_width`` bins; ``tw``: time weighting over a
    ``context``-frame stack; ``tw_fc``: time weighting then an FC layer.
    """
    out = lambda n: LayerSpec("fully_connected", n, 2, activation="softmax")
    if arch == "fc":
        layers = [LayerSpec("fully_connected", n_features, hidden, activation="sigmoid"), out(hidden)]
    elif arch == "fw":
        if n_features % fw_width:
            raise NetworkError(f"{n_features} features do not split into groups of {fw_width}")
        layers = [_partial("partial_freq_weight", n_features // fw_width, fw_width, shared=shared),
                  out(n_features // fw_width)]
    elif arch == "tw":
        layers = [_partial("partial_time_weight", n_features, context, shared=shared), out(n_features)]
    elif arch == "tw_fc":
        layers = [_partial("partial_time_weight", n_features, context, shared=shared),
                  LayerSpec("fully_connected", n_features, hidden, activation="sigmoid"), out(hidden)]
    else:
        raise NetworkError(f"unknown architecture {arch!r}")
    return Network(layers, seed)


ARCH_CONTEXT = {"fc": False, "fw": False, "tw": True, "tw_fc": True}
