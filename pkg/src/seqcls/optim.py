"""Optimizers and the supervised training loop.

Three first-order methods share one interface: AdamW (decoupled weight
decay), NAdam (Nesterov first moment), and RMSprop.  The training loop
runs seeded-shuffle mini-batches, accumulates per-sample gradients on
one tape per batch, scores the validation split each epoch, and keeps
the parameters from the best-validation-accuracy epoch (earliest wins
ties).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics as mt
from .errors import DataError, NumericError, ParameterError
from .heads import average_losses, predict
from .model import Example, ModelBundle, forward_example
from .rng import RandomSource
from .tensor import Tape, Tensor

OPTIMIZERS = ("adamw", "nadam", "rmsprop")


@dataclass
class OptimizerConfig:
    algorithm: str = "adamw"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float | None = None
    rho: float = 0.9

    def __post_init__(self):
        if self.algorithm not in OPTIMIZERS:
            raise ParameterError(f"unknown optimizer {self.algorithm!r}")
        if self.lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {self.lr}")
        if self.weight_decay is None:
            self.weight_decay = 0.01 if self.algorithm == "adamw" else 0.0


class Optimizer:
    """First-order update over named parameters with per-slot moments."""

    def __init__(self, config: OptimizerConfig, named_params):
        self.config = config
        self.params = list(named_params)
        self.step_count = 0
        self.first_moment = {
            name: np.zeros_like(p.data) for name, p in self.params
        }
        self.second_moment = {
            name: np.zeros_like(p.data) for name, p in self.params
        }

    def _gradient(self, name: str, tensor: Tensor) -> np.ndarray:
        g = tensor.grad
        if g is None:
            return np.zeros_like(tensor.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        return g

    def step(self) -> None:
        self.step_count += 1
        c = self.config
        for name, tensor in self.params:
            g = self._gradient(name, tensor)
            update = self._update(name, g)
            if c.weight_decay > 0.0:
                update = update + c.lr * c.weight_decay * tensor.data
            tensor.data = tensor.data - update

    def _update(self, name: str, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for _, tensor in self.params:
            tensor.zero_grad()


class AdamW(Optimizer):
    def _update(self, name, g):
        c = self.config
        t = self.step_count
        m = self.first_moment[name] = c.beta1 * self.first_moment[name] + (1 - c.beta1) * g
        v = self.second_moment[name] = c.beta2 * self.second_moment[name] + (1 - c.beta2) * g * g
        m_hat = m / (1.0 - c.beta1 ** t)
        v_hat = v / (1.0 - c.beta2 ** t)
        return c.lr * m_hat / (np.sqrt(v_hat) + c.eps)


class NAdam(Optimizer):
    def _update(self, name, g):
        c = self.config
        t = self.step_count
        m = self.first_moment[name] = c.beta1 * self.first_moment[name] + (1 - c.beta1) * g
        v = self.second_moment[name] = c.beta2 * self.second_moment[name] + (1 - c.beta2) * g * g
        m_hat = m / (1.0 - c.beta1 ** t)
        v_hat = v / (1.0 - c.beta2 ** t)
        nesterov = c.beta1 * m_hat + (1 - c.beta1) / (1.0 - c.beta1 ** t) * g
        return c.lr * nesterov / (np.sqrt(v_hat) + c.eps)


class RMSprop(Optimizer):
    def _update(self, name, g):
        c = self.config
        v = self.second_moment[name] = c.rho * self.second_moment[name] + (1 - c.rho) * g * g
        return c.lr * g / (np.sqrt(v) + c.eps)


_OPTIMIZER_CLASSES = {"adamw": AdamW, "nadam": NAdam, "rmsprop": RMSprop}


def make_optimizer(config: OptimizerConfig, named_params) -> Optimizer:
    return _OPTIMIZER_CLASSES[config.algorithm](config, named_params)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    optimizer: str = "adamw"
    seed: int = 0
    weight_decay: float | None = None
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch size must be >= 1")
        if self.lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {self.lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_f1_weighted: float
    wall_seconds: float

    def as_tsv(self) -> str:
        return (f"{self.epoch}\t{self.train_loss:.6f}\t{self.val_accuracy:.6f}"
                f"\t{self.val_f1_weighted:.6f}\t{self.wall_seconds:.3f}")


LOG_HEADER = "epoch\ttrain_loss\tval_accuracy\tval_f1_weighted\twall_seconds"


@dataclass
class TrainResult:
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0


def write_log(path, result: TrainResult) -> None:
    lines = [LOG_HEADER] + [row.as_tsv() for row in result.log]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def evaluate(bundle: ModelBundle, examples: list[Example],
             n_classes: int) -> mt.MetricsReport:
    """Forward-only pass; returns the metric report for the split."""
    if not examples:
        raise DataError("cannot evaluate an empty split")
    y = [ex.label for ex in examples]
    y_hat = [predict(forward_example(bundle, ex)[0]) for ex in examples]
    return mt.report(y, y_hat, n_classes)


def train(bundle: ModelBundle, train_examples: list[Example],
          val_examples: list[Example], config: TrainConfig,
          clock=time.perf_counter) -> TrainResult:
    """Epoch loop with seeded shuffling and best-accuracy model retention.

    The bundle is left holding the parameters of the best epoch.  ``clock``
    exists so reproducibility harnesses can inject a deterministic timer.
    """
    if not train_examples or not val_examples:
        raise DataError("training needs non-empty train and validation splits")
    named = list(bundle.named_parameters(freeze_encoder=config.freeze_encoder))
    optimizer = make_optimizer(
        OptimizerConfig(algorithm=config.optimizer, lr=config.lr,
                        weight_decay=config.weight_decay), named)
    n_classes = bundle.config.n_classes
    root = RandomSource(config.seed)
    result = TrainResult(best_epoch=0, best_val_accuracy=-1.0)
    best_state = {name: p.data.copy() for name, p in bundle.all_named_parameters()}

    for epoch in range(1, config.epochs + 1):
        start = clock()
        shuffle_rng = root.derive(f"shuffle-epoch{epoch}")
        dropout_rng = root.derive(f"dropout-epoch{epoch}")
        order = [train_examples[i] for i in shuffle_rng.permutation(len(train_examples))]
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            optimizer.zero_grad()
            with Tape() as tape:
                losses = [
                    forward_example(bundle, ex, dropout_rng, training=True,
                                    with_loss=True)[1]
                    for ex in batch
                ]
                tape.backward(average_losses(losses))
            epoch_loss += sum(loss.item() for loss in losses)
            optimizer.step()
        val_report = evaluate(bundle, val_examples, n_classes)
        result.log.append(EpochLog(
            epoch=epoch,
            train_loss=epoch_loss / len(order),
            val_accuracy=val_report.accuracy,
            val_f1_weighted=val_report.f1_weighted,
            wall_seconds=clock() - start,
        ))
        if val_report.accuracy > result.best_val_accuracy:
            result.best_val_accuracy = val_report.accuracy
            result.best_epoch = epoch
            best_state = {name: p.data.copy()
                          for name, p in bundle.all_named_parameters()}

    for name, p in bundle.all_named_parameters():
        p.data = best_state[name].copy()
    return result
