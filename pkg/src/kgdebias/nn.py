"""Small dense networks with hand-written backprop.

Arrays are batched row-wise: inputs have shape (n, d_in). Weights are stored
as (d_in, d_out) so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

EPS_CLAMP = 1e-7

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu")
HEADS = ("linear", "sigmoid", "softmax")


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class _Cache:
    net: "Mlp"
    shapes: tuple
    inputs: list  # input to each layer (post-dropout)
    pre: list  # pre-activation of each layer
    masks: list  # dropout mask per hidden layer, or None
    out: np.ndarray
    squeeze: bool


class Mlp:
    """Feed-forward network with ReLU/Leaky-ReLU hidden layers and a configurable head.

    Dropout is inverted (kept units scaled by ``1/(1-rate)`` at train time) and is
    applied to hidden activations only, so eval mode is a plain forward pass.
    """

    def __init__(
        self,
        layer_dims,
        hidden_activation: str = "relu",
        head: str = "linear",
        dropout: float = 0.0,
        slope: float = 0.01,
        rng=None,
    ):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"bad layer dims {layer_dims}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown activation {hidden_activation!r}")
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.layer_dims = layer_dims
        self.hidden_activation = hidden_activation
        self.slope = float(slope) if hidden_activation == "leaky_relu" else 0.0
        self.head = head
        self.dropout = float(dropout)
        rng = np.random.default_rng(rng)
        self.weights, self.biases = [], []
        n_layers = len(layer_dims) - 1
        for i, (a, b) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            limit = np.sqrt(6.0 / a) if i < n_layers - 1 else np.sqrt(6.0 / (a + b))
            self.weights.append(rng.uniform(-limit, limit, size=(a, b)))
            self.biases.append(np.zeros(b))

    def __repr__(self):
        return (
            f"Mlp({self.layer_dims}, {self.hidden_activation}, head={self.head}, "
            f"dropout={self.dropout})"
        )

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _act(self, z):
        return np.where(z > 0, z, self.slope * z)

    def _dact(self, z):
        return np.where(z > 0, 1.0, self.slope)

    def _head(self, z):
        if self.head == "sigmoid":
            return sigmoid(z)
        if self.head == "softmax":
            return softmax(z)
        return z

    def forward(self, x, train: bool = False, rng=None):
        """Return ``(output, cache)``. ``rng`` is required when dropping out in train mode."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.n_in:
            raise ValueError(f"input dim {x.shape[1]} != {self.n_in}")
        drop = train and self.dropout > 0
        if drop and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        inputs, pre, masks = [], [], []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            pre.append(z)
            if i == last:
                break
            a = self._act(z)
            if drop:
                keep = 1.0 - self.dropout
                m = (rng.random(a.shape) < keep) / keep
                a = a * m
                masks.append(m)
            else:
                masks.append(None)
        out = self._head(pre[-1])
        cache = _Cache(self, tuple(w.shape for w in self.weights), inputs, pre, masks, out, squeeze)
        return (out[0] if squeeze else out), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: _Cache, grad, wrt: str = "output"):
        """Backprop ``grad`` (dL/d output, or dL/d logits with ``wrt='logits'``).

        Returns ``(param_grads, input_grad)`` with ``param_grads`` aligned to :attr:`params`.
        """
        if cache.net is not self or cache.shapes != tuple(w.shape for w in self.weights):
            raise ValueError("cache does not belong to this network")
        g = np.asarray(grad, dtype=float)
        if cache.squeeze:
            g = g[None, :]
        if wrt == "output":
            p = cache.out
            if self.head == "sigmoid":
                g = g * p * (1.0 - p)
            elif self.head == "softmax":
                g = p * (g - (g * p).sum(axis=1, keepdims=True))
        elif wrt != "logits":
            raise ValueError(wrt)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                if cache.masks[i - 1] is not None:
                    g = g * cache.masks[i - 1]
                g = g * self._dact(cache.pre[i - 1])
        return grads, (g[0] if cache.squeeze else g)


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def binary_cross_entropy(p, y):
    """Elementwise ``-[y log p + (1-y) log(1-p)]`` with p clamped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(p, dtype=float), EPS_CLAMP, 1.0 - EPS_CLAMP)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def binary_cross_entropy_grad(p, y):
    """d/dp of :func:`binary_cross_entropy`; zero where the clamp is active."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    pc = np.clip(p, EPS_CLAMP, 1.0 - EPS_CLAMP)
    g = -(y / pc) + (1.0 - y) / (1.0 - pc)
    return np.where((p < EPS_CLAMP) | (p > 1.0 - EPS_CLAMP), 0.0, g)


def softmax_cross_entropy(logits, y):
    """Return ``(loss, dloss/dlogits)``. Works on a single vector or a batch of rows."""
    z = np.asarray(logits, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ValueError("class id out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    loss = logsum - shifted[rows, y]
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, y] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


# --------------------------------------------------------------------------
# Optimizers
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0 or self.seed < 0:
            raise ValueError(f"invalid TrainConfig {self}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list | None = None
        self.v: list | None = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


def optimizer_step(params, grads, state, cfg: TrainConfig):
    """Functional wrapper: ``state`` is an optimizer from :func:`make_optimizer` or None."""
    if state is None:
        state = make_optimizer(cfg)
    state.step(params, grads)
    return params, state


# --------------------------------------------------------------------------
# Training and checking helpers
# --------------------------------------------------------------------------


def classifier_loss_and_grads(net: Mlp, x, y, train: bool = False, rng=None):
    """Mean BCE (sigmoid head) or softmax CE over the batch and its parameter gradients.

    The gradient enters at the logits, so BCE is differentiated without the
    probability clamp.
    """
    out, cache = net.forward(x, train=train, rng=rng)
    n = len(out)
    if net.head == "sigmoid":
        yb = np.asarray(y, dtype=float).reshape(-1, 1)
        total = float(binary_cross_entropy(out, yb).sum())
        dz = out - yb
    elif net.head == "softmax":
        loss, dz = softmax_cross_entropy(cache.pre[-1], np.asarray(y))
        total = float(np.sum(loss))
    else:
        raise ValueError("classifier loss needs a sigmoid or softmax head")
    grads, _ = net.backward(cache, dz / n, wrt="logits")
    return total / n, grads


def train_classifier(net: Mlp, x, y, cfg: TrainConfig) -> list[float]:
    """Minibatch training on BCE (sigmoid head) or softmax CE. Returns mean loss per epoch."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    n = len(x)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            loss, grads = classifier_loss_and_grads(net, x[idx], y[idx], True, rng)
            total += loss * len(idx)
            opt.step(net.params, grads)
        trace.append(total / max(n, 1))
    return trace


def predict_classes(net: Mlp, x) -> np.ndarray:
    out = net(np.asarray(x, dtype=float))
    if net.head == "sigmoid":
        return (out[:, 0] >= 0.5).astype(np.int64)
    return out.argmax(axis=1)


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a, dtype=float), np.asarray(n, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. every element of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def grad_check(net: Mlp, loss_fn, x, y, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences over all parameters.

    ``loss_fn(output, y)`` returns ``(loss, dloss/doutput)``. Dropout is not used.
    """
    out, cache = net.forward(x)
    _, dout = loss_fn(out, y)
    grads, _ = net.backward(cache, dout)

    def f():
        return float(loss_fn(net.forward(x)[0], y)[0])

    worst = 0.0
    for p, g in zip(net.params, grads):
        worst = max(worst, float(relative_error(g, numeric_grad(f, p, h)).max()))
    return worst


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

MLP_MAGIC = "kgdebias-mlp 1"


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def write_mlp(net: Mlp, fh: TextIO) -> None:
    fh.write(MLP_MAGIC + "\n")
    fh.write("layers " + " ".join(map(str, net.layer_dims)) + "\n")
    fh.write(f"activation {net.hidden_activation} {format(net.slope, '.17g')}\n")
    fh.write(f"head {net.head}\n")
    fh.write(f"dropout {format(net.dropout, '.17g')}\n")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        fh.write(f"W {i} {w.shape[0]} {w.shape[1]}\n")
        for row in w:
            fh.write(_fmt(row) + "\n")
        fh.write(f"b {i} {b.shape[0]}\n")
        fh.write(_fmt(b) + "\n")


def read_mlp(fh: TextIO) -> Mlp:
    def line():
        s = fh.readline()
        if not s:
            raise ValueError("truncated MLP checkpoint")
        return s.rstrip("\n")

    if line() != MLP_MAGIC:
        raise ValueError("not an MLP checkpoint")
    dims = [int(v) for v in line().split()[1:]]
    _, act, slope = line().split()
    head = line().split()[1]
    dropout = float(line().split()[1])
    net = Mlp(dims, act, head, dropout, slope=float(slope) or 0.01, rng=0)
    net.slope = float(slope)
    for i in range(len(dims) - 1):
        tag, _, r, c = line().split()
        w = np.array([[float(v) for v in line().split()] for _ in range(int(r))]).reshape(int(r), int(c))
        tag_b, _, n = line().split()
        b = np.array([float(v) for v in line().split()]).reshape(int(n))
        if tag != "W" or tag_b != "b" or w.shape != net.weights[i].shape:
            raise ValueError(f"layer {i} malformed")
        net.weights[i], net.biases[i] = w, b
    return net


def save_mlp(net: Mlp, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_mlp(net, fh)


def load_mlp(path) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        return read_mlp(fh)
