"""Filtering adversarial network: strip a binary attribute from embeddings.

A filter ``F: R^d -> R^d`` and a discriminator ``D: R^d -> (0, 1)`` play the
saddle game on

    L(F, D) = lam * E||F(h) - h||^2 + E[y log D(F(h)) + (1 - y) log(1 - D(F(h)))]

``F`` descends on ``L``; ``D`` ascends, which is ordinary cross-entropy
minimization. Traces report cross-entropy with the usual non-negative sign.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .nn import (
    Adam,
    Mlp,
    binary_cross_entropy,
    binary_cross_entropy_grad,
    read_mlp,
    write_mlp,
)

log = logging.getLogger(__name__)


class FanDivergenceError(RuntimeError):
    pass


@dataclass
class FanModel:
    filter: Mlp
    discriminator: Mlp
    lam: float

    def __post_init__(self):
        d = self.filter.n_in
        if self.filter.n_out != d or self.discriminator.n_in != d or self.discriminator.n_out != 1:
            raise ValueError("filter must map R^d -> R^d and discriminator R^d -> (0, 1)")
        if self.discriminator.head != "sigmoid":
            raise ValueError("discriminator needs a sigmoid head")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def dim(self) -> int:
        return self.filter.n_in

    @classmethod
    def create(
        cls,
        dim: int,
        lam: float,
        hidden: int | None = None,
        filter_dropout: float = 0.0,
        disc_dropout: float = 0.5,
        slope: float = 0.01,
        seed: int = 0,
    ):
        """One hidden layer for the filter, two for the discriminator, Leaky ReLU throughout.

        The filter defaults to no dropout: at rate 0.5 its eval-mode output
        cannot match the input closely enough for identity pretraining.
        """
        rng = np.random.default_rng(seed)
        h = hidden or dim
        filt = Mlp([dim, h, dim], "leaky_relu", "linear", filter_dropout, slope, rng)
        disc = Mlp([dim, h, h, 1], "leaky_relu", "sigmoid", disc_dropout, slope, rng)
        return cls(filt, disc, float(lam))

    def copy(self) -> "FanModel":
        return FanModel(self.filter.copy(), self.discriminator.copy(), self.lam)


@dataclass(frozen=True)
class FanTrainConfig:
    """Pretraining and adversarial schedule.

    ``learning_rate`` drives the discriminator (and the filter when
    ``filter_learning_rate`` is None). A filter slower than its adversary keeps
    the discriminator close to a best response. ``balance`` draws class-balanced
    minibatches.
    """

    pretrain_epochs: int = 10
    disc_steps_per_filter_step: int = 5
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    filter_learning_rate: float | None = 1e-4
    pretrain_learning_rate: float = 3e-3
    pretrain_batch_size: int = 16
    filter_objective: str = "confusion"
    balance: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if min(self.disc_steps_per_filter_step, self.batch_size, self.pretrain_batch_size) < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid FanTrainConfig {self}")
        if self.filter_learning_rate is not None and self.filter_learning_rate <= 0:
            raise ValueError("filter_learning_rate must be positive")
        if self.filter_objective not in ("minimax", "confusion"):
            raise ValueError(f"unknown filter objective {self.filter_objective!r}")


class FanLoss(NamedTuple):
    """``total = lam * recon + ce``; ``recon`` is the unweighted mean squared distortion,
    ``ce`` the mean log-likelihood term (<= 0)."""

    total: float
    recon: float
    ce: float
    lam: float

    @property
    def weighted_recon(self) -> float:
        return self.lam * self.recon


def _check(model: FanModel, h, y):
    h = np.atleast_2d(np.asarray(h, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if h.shape[1] != model.dim:
        raise ValueError(f"embedding dim {h.shape[1]} != {model.dim}")
    if len(y) != len(h):
        raise ValueError("labels and embeddings differ in length")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    return h, y


def fan_loss(model: FanModel, h, y, train: bool = False, rng=None) -> FanLoss:
    h, y = _check(model, h, y)
    fh = model.filter.forward(h, train, rng)[0]
    p = model.discriminator.forward(fh, train, rng)[0][:, 0]
    recon = float(np.mean(np.sum((fh - h) ** 2, axis=1)))
    ce = float(-np.mean(binary_cross_entropy(p, y)))
    return FanLoss(model.lam * recon + ce, recon, ce, model.lam)


def filter_gradients(
    model: FanModel, h, y, train: bool = False, rng=None, disc_train: bool = False, objective: str = "minimax"
):
    """Gradients w.r.t. filter parameters, flowing through ``D``. ``D`` is only read.

    ``objective='minimax'`` differentiates the saddle objective itself.
    ``'confusion'`` replaces the log-likelihood term by the cross-entropy of
    ``D(F(h))`` against the uninformative target 0.5, whose gradient does not
    vanish when ``D`` is confident. Returns ``(loss, filter_grads)`` where
    ``loss`` is always the saddle objective.
    """
    h, y = _check(model, h, y)
    n = len(h)
    fh, cf = model.filter.forward(h, train, rng)
    p, cd = model.discriminator.forward(fh, disc_train, rng)
    p = p[:, 0]
    recon = float(np.mean(np.sum((fh - h) ** 2, axis=1)))
    ce = float(-np.mean(binary_cross_entropy(p, y)))
    if objective == "minimax":
        dp = -binary_cross_entropy_grad(p, y) / n
    elif objective == "confusion":
        dp = binary_cross_entropy_grad(p, np.full_like(p, 0.5)) / n
    else:
        raise ValueError(f"unknown filter objective {objective!r}")
    _, dfh = model.discriminator.backward(cd, dp[:, None])
    dfh = dfh + model.lam * 2.0 * (fh - h) / n
    grads, _ = model.filter.backward(cf, dfh)
    return FanLoss(model.lam * recon + ce, recon, ce, model.lam), grads


def discriminator_gradients(model: FanModel, h, y, train: bool = False, rng=None, filtered: bool = True):
    """Mean BCE of ``D`` on ``F(h)`` (or on ``h`` if not ``filtered``) and its parameter gradients."""
    h, y = _check(model, h, y)
    x = model.filter.forward(h)[0] if filtered else h
    p, cd = model.discriminator.forward(x, train, rng)
    bce = float(np.mean(binary_cross_entropy(p[:, 0], y)))
    dz = (p[:, 0] - y)[:, None] / len(h)
    grads, _ = model.discriminator.backward(cd, dz, wrt="logits")
    acc = float(np.mean((p[:, 0] >= 0.5) == (y == 1)))
    return bce, acc, grads


def _batches(pool, y, cfg: FanTrainConfig, rng):
    """Endless stream of minibatches drawn from the index array ``pool``, class-balanced if requested."""
    if cfg.balance:
        groups = [pool[y[pool] == c] for c in (0, 1)]
        half = max(1, cfg.batch_size // 2)
        while True:
            yield np.concatenate([rng.choice(g, half) for g in groups if len(g)])
    while True:
        order = rng.permutation(pool)
        for s in range(0, len(pool), cfg.batch_size):
            yield order[s : s + cfg.batch_size]


def pretrain(model: FanModel, h, y, cfg: FanTrainConfig) -> FanModel:
    """Fit the filter to the identity and the discriminator to unfiltered embeddings, separately."""
    h, y = _check(model, h, y)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(h)
    opt_f = Adam(cfg.pretrain_learning_rate)
    opt_d = Adam(cfg.pretrain_learning_rate)
    for _ in range(cfg.pretrain_epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.pretrain_batch_size):
            idx = order[s : s + cfg.pretrain_batch_size]
            fh, cf = model.filter.forward(h[idx], True, rng)
            grads, _ = model.filter.backward(cf, 2.0 * (fh - h[idx]) / len(idx))
            opt_f.step(model.filter.params, grads)
    for _ in range(cfg.pretrain_epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.pretrain_batch_size):
            idx = order[s : s + cfg.pretrain_batch_size]
            _, _, grads = discriminator_gradients(model, h[idx], y[idx], True, rng, filtered=False)
            opt_d.step(model.discriminator.params, grads)
    return model


@dataclass
class FanTrace:
    recon: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    disc_accuracy: list = field(default_factory=list)

    def rows(self):
        return zip(range(len(self.recon)), self.recon, self.ce, self.disc_accuracy)


def adversarial_train(model: FanModel, h, y, cfg: FanTrainConfig) -> tuple[FanModel, FanTrace]:
    """Alternate ``disc_steps_per_filter_step`` discriminator steps with one filter step.

    During discriminator steps the filter is run in eval mode and left
    untouched; during filter steps the discriminator is run in eval mode and
    its parameters are not updated. ``epochs`` counts passes of filter steps
    over the data. Raises :class:`FanDivergenceError` when the reconstruction
    error exceeds ten times the mean squared norm of the inputs.
    """
    h, y = _check(model, h, y)
    rng = np.random.default_rng([cfg.seed, 2])
    n = len(h)
    steps = cfg.epochs * -(-n // cfg.batch_size)
    opt_f = Adam(cfg.filter_learning_rate or cfg.learning_rate)
    opt_d = Adam(cfg.learning_rate)
    ref = float(np.mean(np.sum(h**2, axis=1)))
    disc_stream = _batches(np.arange(n), y, cfg, rng)
    filt_stream = _batches(np.arange(n), y, cfg, rng)
    trace = FanTrace()
    for step in range(steps):
        for _ in range(cfg.disc_steps_per_filter_step):
            idx = next(disc_stream)
            _, _, grads = discriminator_gradients(model, h[idx], y[idx], True, rng)
            opt_d.step(model.discriminator.params, grads)
        idx = next(filt_stream)
        loss, grads = filter_gradients(model, h[idx], y[idx], True, rng, objective=cfg.filter_objective)
        opt_f.step(model.filter.params, grads)
        fh = model.filter(h[idx])
        p = model.discriminator(fh)[:, 0]
        recon = float(np.mean(np.sum((fh - h[idx]) ** 2, axis=1)))
        trace.recon.append(recon)
        trace.ce.append(-loss.ce)
        trace.disc_accuracy.append(float(np.mean((p >= 0.5) == (y[idx] == 1))))
        if not np.isfinite(recon) or recon > 10.0 * ref:
            raise FanDivergenceError(
                f"reconstruction error {recon:.4g} exceeds 10x mean squared norm {ref:.4g} at step {step}"
            )
    return model, trace


def apply_filter(model: FanModel, embeddings) -> np.ndarray:
    """Eval-mode filter pass over every row. Filtering twice is allowed but not idempotent."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=float))
    if x.shape[1] != model.dim:
        raise ValueError(f"embedding dim {x.shape[1]} != {model.dim}")
    return model.filter(x)


def train_fan(
    h, y, lam: float, cfg: FanTrainConfig, hidden: int | None = None, filter_dropout: float = 0.0, disc_dropout: float = 0.5
):
    """Create, pretrain and adversarially train a FAN. Returns ``(model, trace)``."""
    h = np.asarray(h, dtype=float)
    model = FanModel.create(h.shape[1], lam, hidden, filter_dropout, disc_dropout, seed=cfg.seed)
    pretrain(model, h, y, cfg)
    return adversarial_train(model, h, y, cfg)


FAN_MAGIC = "kgdebias-fan 1"


def save_fan(model: FanModel, path, cfg: FanTrainConfig | None = None) -> None:
    """Metadata header (lambda and schedule), then the filter and discriminator MLP checkpoints."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FAN_MAGIC + "\n")
        fh.write(f"lambda {format(model.lam, '.17g')}\n")
        for k, v in (asdict(cfg) if cfg else {}).items():
            fh.write(f"{k} {v}\n")
        fh.write("[filter]\n")
        write_mlp(model.filter, fh)
        fh.write("[discriminator]\n")
        write_mlp(model.discriminator, fh)


def load_fan(path):
    """Returns ``(model, metadata)``."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != FAN_MAGIC:
            raise ValueError(f"{path}: not a FAN checkpoint")
        line = fh.readline().rstrip("\n")
        while line != "[filter]":
            if not line:
                raise ValueError(f"{path}: truncated")
            k, v = line.split(" ", 1)
            meta[k] = v
            line = fh.readline().rstrip("\n")
        filt = read_mlp(fh)
        if fh.readline().rstrip("\n") != "[discriminator]":
            raise ValueError(f"{path}: missing discriminator")
        disc = read_mlp(fh)
    return FanModel(filt, disc, float(meta["lambda"])), meta
