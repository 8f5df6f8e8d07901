from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import Network, loss_and_grad

log = logging.getLogger(__name__)


class Divergence(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_accuracy: float | None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_accuracy(self) -> float | None:
        return self.epochs[-1].test_accuracy if self.epochs else None

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,test_accuracy"]
        for e in self.epochs:
            acc = "" if e.test_accuracy is None else repr(float(e.test_accuracy))
            lines.append(f"{e.epoch},{float(e.train_loss)!r},{acc}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs], "seconds": self.seconds}

    @classmethod
    def from_dict(cls, d) -> "TrainReport":
        return cls([EpochStats(**e) for e in d["epochs"]], d.get("seconds", 0.0))


class Adam:
    def __init__(self, net: Network, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {(i, n): np.zeros_like(p) for i, n, p in net.parameters()}
        self.v = {(i, n): np.zeros_like(p) for i, n, p in net.parameters()}

    def step(self, net: Network):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        # bias corrections folded into the step size
        lr_t = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for i, layer in enumerate(net.layers):
            for name, p in layer.params.items():
                g = layer.grads[name]
                m, v = self.m[i, name], self.v[i, name]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


class SGD:
    def __init__(self, net: Network, lr, momentum=0.0):
        self.lr, self.momentum = lr, momentum
        self.vel = {(i, n): np.zeros_like(p) for i, n, p in net.parameters()}

    def step(self, net: Network):
        for i, layer in enumerate(net.layers):
            for name, p in layer.params.items():
                v = self.vel[i, name]
                v *= self.momentum
                v -= self.lr * layer.grads[name]
                p += v


def make_optimizer(net: Network, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(net, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(net, cfg.learning_rate, cfg.momentum)


def evaluate(net: Network, dataset, batch_size: int = 256) -> float:
    """Fraction of argmax predictions equal to the labels (eval mode)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = net.predict(dataset.images, batch_size)
    return float(np.count_nonzero(pred == dataset.labels)) / len(dataset)


def train(net: Network, dataset, cfg: TrainConfig, test_dataset=None, progress=None) -> TrainReport:
    """Minibatch training; deterministic given ``cfg.rng_seed``."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    order_rng = np.random.default_rng([cfg.rng_seed, 2])
    net.reseed(cfg.rng_seed)
    opt = make_optimizer(net, cfg)
    report = TrainReport()
    t0 = time.perf_counter()
    images, labels = dataset.images, dataset.labels
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        total = 0.0
        net.train()
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss = loss_and_grad(net, images[idx], labels[idx])
            if not math.isfinite(loss):
                net.eval()
                raise Divergence(f"loss became {loss} at epoch {epoch}, batch {b}"
                                 f" (lr={cfg.learning_rate}, optimizer={cfg.optimizer})")
            opt.step(net)
            total += loss * len(idx)
            if progress is not None:
                progress(epoch, b, loss)
        net.eval()
        acc = evaluate(net, test_dataset) if test_dataset is not None else None
        report.epochs.append(EpochStats(epoch, total / n, acc))
        log.info("epoch %d: train loss %.4f, test accuracy %s", epoch, total / n, acc)
    report.seconds = time.perf_counter() - t0
    return report
