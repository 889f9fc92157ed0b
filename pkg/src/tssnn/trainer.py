"""Surrogate-gradient training through time: SGD with momentum, cosine schedule."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tt
from .analysis import accumulate_stats, summarize_stats
from .data import Dataset
from .errors import ConfigError, DimensionError, TrainingError
from .network import Network
from .tensor import GradTape, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr_initial: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    loss_decode: str = "mean_logits"
    schedule: str = "cosine"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.loss_decode != "mean_logits":
            raise ConfigError(f"unsupported loss_decode {self.loss_decode!r}")
        if self.schedule != "cosine":
            raise ConfigError(f"unsupported schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


def decode_logits(logits: Tensor) -> Tensor:
    """Rate decoding: mean of the per-timestep logits."""
    return tt.mean(logits, axis=0)


cross_entropy = tt.cross_entropy


def sgd_step(params, grads, velocity, lr: float, momentum: float) -> None:
    """In place: ``v <- momentum * v + g``; ``p <- p - lr * v``."""
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise DimensionError(f"sgd_step: shapes {p.shape}, {g.shape}, {v.shape} differ")
        dt = p.dtype.type
        v *= dt(momentum)
        v += g
        p -= dt(lr) * v


def cosine_lr(epoch: float, total_epochs: int, lr_initial: float) -> float:
    if total_epochs <= 0:
        return lr_initial
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_initial * (1 + math.cos(math.pi * epoch / total_epochs)) / 2


def _batch(X: np.ndarray, idx) -> np.ndarray:
    return np.ascontiguousarray(X[idx].transpose(1, 0, 2, 3, 4))


def evaluate(net: Network, dataset: Dataset, mode: str = "infer", seed: int = 0,
             batch_size: int = 50) -> dict:
    """Accuracy and spike statistics; pure (batchnorm uses running statistics)."""
    if len(dataset) == 0:
        return {"accuracy": float("nan"), "loss": float("nan"), "firing_rates": [], "layer_activity": [],
                "overall_rate": 0.0, "count": 0}
    X, y = dataset.arrays()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    correct = 0
    loss_sum = 0.0
    totals: dict = {}
    for start in range(0, len(y), batch_size):
        idx = np.arange(start, min(start + batch_size, len(y)))
        logits = net.forward(_batch(X, idx), mode=mode, rng=rng, bn_training=False)
        scores = decode_logits(logits)
        loss_sum += float(cross_entropy(scores, y[idx]).data) * len(idx)
        correct += int((scores.data.argmax(axis=1) == y[idx]).sum())
        accumulate_stats(totals, net.last_stats)
    rates, activity, overall = summarize_stats(totals)
    return {"accuracy": correct / len(y), "loss": loss_sum / len(y), "firing_rates": rates,
            "layer_activity": activity, "overall_rate": overall, "count": int(len(y)),
            "lif_layers": totals["lif_index"], "mac_layers": totals["mac_index"]}


def train(net: Network, dataset: Dataset, cfg: TrainConfig, test_set: Dataset | None = None,
          on_epoch=None) -> list[dict]:
    """Run the epoch loop; returns one metrics dict per epoch.

    Deterministic under ``cfg.seed``: data order and split-point draws come
    from generators derived from it. ``on_epoch(metrics)`` is called after
    each epoch.
    """
    if len(dataset) == 0:
        raise ConfigError("training set is empty")
    X, y = dataset.arrays()
    if X.shape[1:] != net.spec.input_shape:
        raise DimensionError(f"dataset samples {X.shape[1:]} do not match network input {net.spec.input_shape}")
    shuffle_ss, shift_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng = np.random.default_rng(shuffle_ss)
    shift_rng = np.random.default_rng(shift_ss)
    params = net.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_initial)
        order = order_rng.permutation(len(y))
        loss_sum = 0.0
        correct = 0
        totals: dict = {}
        for b, start in enumerate(range(0, len(y), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            with GradTape():
                logits = net.forward(_batch(X, idx), mode="train", rng=shift_rng)
                scores = decode_logits(logits)
                loss = cross_entropy(scores, y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            for p in params:
                p.grad = None
            tt.backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            sgd_step([p.data for p in params], grads, velocity, lr, cfg.momentum)
            loss_sum += value * len(idx)
            correct += int((scores.data.argmax(axis=1) == y[idx]).sum())
            accumulate_stats(totals, net.last_stats)
        rates, _, overall = summarize_stats(totals)
        metrics = {"epoch": epoch, "lr": lr, "loss": loss_sum / len(y), "train_acc": correct / len(y),
                   "test_acc": None, "firing_rates": rates, "overall_rate": overall, "seconds": None}
        if test_set is not None and len(test_set):
            metrics["test_acc"] = evaluate(net, test_set, mode="infer", seed=cfg.seed)["accuracy"]
        history.append(metrics)
        log.info("epoch %d lr %.4f loss %.4f train %.3f test %s (%.1fs)", epoch, lr, metrics["loss"],
                 metrics["train_acc"], metrics["test_acc"], time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(metrics, time.perf_counter() - t0)
    return history


def metrics_line(metrics: dict) -> str:
    return json.dumps(metrics, sort_keys=False, separators=(", ", ": "))
