"""
Training loops: the Explanandum on labelled sequences, then the Explainer against the frozen
Explanandum.

Both loops use Adam with a cosine learning-rate schedule, evaluate the validation loss after
every epoch, keep the parameters of the best validation epoch, and stop early once the
validation loss has not improved for `patience` epochs.

Examples:
    >>> cosine_lr(0, 100, 0.0002)
    0.0002
    >>> cosine_lr(50, 100, 0.0002)
    0.0001
    >>> cosine_lr(100, 100, 0.0002)
    0.0

    >>> stopper = EarlyStopping(patience=2)
    >>> [stopper.step(1.0) for _ in range(3)]
    [False, False, True]
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from wyr.autodiff.layers import parameter_digest
from wyr.autodiff.optim import Adam
from wyr.autodiff.tensor import no_grad
from wyr.data.dataset import LabeledDataset, LabelAssignment, iter_batches, sample_subset
from wyr.data.tokenizer import TokenBatch
from wyr.errors import FrozenParameterError, NonFiniteLossError
from wyr.losses import AreaBounds, LossBreakdown, LossWeights, total_loss
from wyr.masking import nontarget_mask, target_mask
from wyr.models.explainer import Explainer, ExplainerConfig
from wyr.models.explanandum import Explanandum, ExplanandumConfig, explanandum_loss

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["L_c", "L_e", "L_a", "L_tv", "total"]


@dataclass(frozen=True)
class TrainConfig:
    """
    Attributes:
        lr: base learning rate at the start of the cosine schedule
        batch_size: items per optimisation step
        epochs: maximum number of epochs
        patience: epochs without validation improvement before stopping
        weight_decay: L2 weight decay of the optimiser
        warmup_steps: linear warm-up steps before the cosine schedule
        subset_fraction: share of the training set used, drawn once with `seed`
        seed: seed of the shuffling and subset draws
        progress: show progress bars
    """

    lr: float = 2e-4
    batch_size: int = 48
    epochs: int = 5
    patience: int = 3
    weight_decay: float = 0.0
    warmup_steps: int = 0
    subset_fraction: float = 1.0
    seed: int = 0
    progress: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ValueError(f"patience must be at least 1, got {self.patience}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError(
                f"batch_size and epochs must be at least 1, got {self.batch_size}, {self.epochs}"
            )
        if self.warmup_steps < 0 or self.weight_decay < 0:
            raise ValueError("warmup_steps and weight_decay must be non-negative")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")


@dataclass
class TrainHistory:
    """Per-epoch and per-step records of a training run."""

    epochs: List[Dict[str, float]] = field(default_factory=list)
    steps: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.epochs)

    def steps_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.steps)

    def save(self, directory: Union[str, Path], prefix: str) -> Tuple[Path, Path]:
        """Write `<prefix>_history.csv` and `<prefix>_steps.csv`."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        epochs = directory / f"{prefix}_history.csv"
        steps = directory / f"{prefix}_steps.csv"
        self.to_frame().to_csv(epochs, index=False)
        self.steps_frame().to_csv(steps, index=False)
        return epochs, steps


class EarlyStopping:
    """Signals a stop once the monitored loss has not improved for `patience` checks."""

    def __init__(self, patience: int = 3, min_delta: float = 0.0):
        if patience < 1:
            raise ValueError(f"patience must be at least 1, got {patience}")
        self.patience = patience
        self.min_delta = min_delta
        self.best: Optional[float] = None
        self.counter = 0

    def improved(self, value: float) -> bool:
        return self.best is None or self.best - value > self.min_delta

    def step(self, value: float) -> bool:
        if self.improved(value):
            self.best = value
            self.counter = 0
            return False
        self.counter += 1
        logger.info("no improvement for %d of %d epochs", self.counter, self.patience)
        return self.counter >= self.patience


def cosine_lr(step: int, total_steps: int, base: float) -> float:
    """
    `base * 0.5 * (1 + cos(pi * step / total_steps))`.

    Raises:
        ValueError: for `total_steps < 1` or a step outside `[0, total_steps]`
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be at least 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step must lie in [0, {total_steps}], got {step}")
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def scheduled_lr(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warm-up for `warmup_steps`, then the cosine schedule over the remaining steps."""
    warmup = min(config.warmup_steps, total_steps - 1)
    if step < warmup:
        return config.lr * (step + 1) / warmup
    return cosine_lr(step - warmup, total_steps - warmup, config.lr)


def _check_finite(value: float, what: str, epoch: int, step: int, lr: float) -> None:
    if not math.isfinite(value):
        raise NonFiniteLossError(
            f"{what} loss became {value} at epoch {epoch}, step {step} (lr={lr:.3g})"
        )


def _steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def _progress(iterable, total: int, desc: str, config: TrainConfig):
    return tqdm(iterable, total=total, desc=desc, leave=False, disable=not config.progress)


def validation_loss(model: Explanandum, data: LabeledDataset, batch_size: int) -> float:
    """Mean summed cross-entropy over `data`."""
    total = 0.0
    with no_grad():
        for batch in iter_batches(data, batch_size):
            loss = explanandum_loss(model(batch.tokens), batch.labels, reduction="sum")
            total += loss.item()
    return total / len(data)


def train_explanandum(
    train: LabeledDataset,
    val: LabeledDataset,
    model_config: ExplanandumConfig,
    config: TrainConfig = TrainConfig(),
) -> Tuple[Explanandum, TrainHistory]:
    """
    Fit a new Explanandum by minimising the summed per-head cross-entropy.

    Raises:
        ValueError: for an empty training set
        NonFiniteLossError: when a training loss is NaN or infinite
    """
    if len(train) == 0:
        raise ValueError("the training set is empty")
    if len(val) == 0:
        logger.warning("no validation data; selecting epochs by training loss")
    model = Explanandum(model_config)
    optimiser = Adam(
        list(model.named_parameters()), lr=config.lr, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)
    per_epoch = _steps_per_epoch(len(train), config.batch_size)
    total_steps = config.epochs * per_epoch
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    best_state = model.state_dict()
    step = 0

    logger.info(
        "training explanandum on %d items (%d validation) for up to %d epochs",
        len(train), len(val), config.epochs,
    )
    for epoch in range(config.epochs):
        started = time.perf_counter()
        model.train()
        train_total = 0.0
        batches = iter_batches(train, config.batch_size, shuffle=True, rng=rng)
        for batch in _progress(batches, per_epoch, f"explanandum {epoch}", config):
            lr = scheduled_lr(step, total_steps, config)
            optimiser.lr = lr
            optimiser.zero_grad()
            loss = explanandum_loss(model(batch.tokens), batch.labels)
            value = loss.item()
            _check_finite(value, "explanandum", epoch, step, lr)
            loss.backward()
            optimiser.step()
            train_total += value * len(batch.index)
            history.steps.append({"epoch": epoch, "step": step, "loss": value, "lr": lr})
            step += 1
        train_loss = train_total / len(train)
        val_loss = validation_loss(model, val, config.batch_size) if len(val) else train_loss
        history.epochs.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "lr": lr,
                "seconds": time.perf_counter() - started,
            }
        )
        logger.info(
            "explanandum epoch %d: train %.4f, validation %.4f, lr %.3g",
            epoch, train_loss, val_loss, lr,
        )
        if stopper.improved(val_loss):
            best_state = model.state_dict()
            history.best_epoch = epoch
        if stopper.step(val_loss):
            history.stopped_early = True
            logger.info("early stopping after epoch %d", epoch)
            break

    model.load_state_dict(best_state)
    return model.eval(), history


def mask_losses(
    explainer: Explainer,
    explanandum: Explanandum,
    tokens: TokenBatch,
    labels: LabelAssignment,
    weights: LossWeights,
    bounds: AreaBounds,
    reduction: str = "mean",
) -> LossBreakdown:
    """Explain a batch and evaluate the full Explainer objective on it."""
    S = explainer.explain(tokens)
    m = target_mask(S, labels)
    n = nontarget_mask(S, labels)
    return total_loss(tokens, labels, S, m, n, weights, bounds, explanandum, reduction)


def explainer_validation_loss(
    explainer: Explainer,
    explanandum: Explanandum,
    data: LabeledDataset,
    weights: LossWeights,
    bounds: AreaBounds,
    batch_size: int,
) -> Dict[str, float]:
    """Item-averaged loss terms over `data`, with the Explainer in evaluation mode."""
    sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
    explainer.eval()
    with no_grad():
        for batch in iter_batches(data, batch_size):
            terms = mask_losses(
                explainer, explanandum, batch.tokens, batch.labels, weights, bounds, "sum"
            ).as_floats()
            for key in LOSS_COLUMNS:
                sums[key] += terms[key]
    return {key: value / len(data) for key, value in sums.items()}


def _require_frozen(explanandum: Explanandum) -> None:
    trainable = [name for name, p in explanandum.named_parameters() if p.requires_grad]
    if trainable:
        raise FrozenParameterError(f"explanandum parameters are trainable: {trainable}")
    touched = [name for name, p in explanandum.named_parameters() if p.grad is not None]
    if touched:
        raise FrozenParameterError(f"explanandum parameters received gradients: {touched}")


def train_explainer(
    train: LabeledDataset,
    val: LabeledDataset,
    explanandum: Explanandum,
    explainer_config: ExplainerConfig,
    weights: LossWeights = LossWeights(),
    bounds: AreaBounds = AreaBounds(),
    config: TrainConfig = TrainConfig(),
) -> Tuple[Explainer, TrainHistory]:
    """
    Fit a new Explainer against a frozen Explanandum.

    Raises:
        FrozenParameterError: when the Explanandum is not frozen, or its parameters receive a
            gradient or change during training
        NonFiniteLossError: when a training loss is NaN or infinite
    """
    if len(train) == 0:
        raise ValueError("the training set is empty")
    _require_frozen(explanandum)
    digest = parameter_digest(explanandum)
    explanandum.eval()

    data = sample_subset(train, config.subset_fraction, seed=config.seed)
    explainer = Explainer(explainer_config, head_classes=train.head_classes)
    optimiser = Adam(
        list(explainer.named_parameters()), lr=config.lr, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)
    per_epoch = _steps_per_epoch(len(data), config.batch_size)
    total_steps = config.epochs * per_epoch
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    best_state = explainer.state_dict()
    step = 0

    logger.info(
        "training explainer on %d items (%d validation) for up to %d epochs",
        len(data), len(val), config.epochs,
    )
    for epoch in range(config.epochs):
        started = time.perf_counter()
        explainer.train()
        sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
        batches = iter_batches(data, config.batch_size, shuffle=True, rng=rng)
        for batch in _progress(batches, per_epoch, f"explainer {epoch}", config):
            lr = scheduled_lr(step, total_steps, config)
            optimiser.lr = lr
            optimiser.zero_grad()
            breakdown = mask_losses(
                explainer, explanandum, batch.tokens, batch.labels, weights, bounds
            )
            terms = breakdown.as_floats()
            _check_finite(terms["total"], "explainer", epoch, step, lr)
            breakdown.total.backward()
            _require_frozen(explanandum)
            optimiser.step()
            for key in LOSS_COLUMNS:
                sums[key] += terms[key] * len(batch.index)
            history.steps.append({"epoch": epoch, "step": step, **terms, "lr": lr})
            logger.debug("step %d: %s", step, terms)
            step += 1

        train_terms = {key: value / len(data) for key, value in sums.items()}
        if len(val):
            val_terms = explainer_validation_loss(
                explainer, explanandum, val, weights, bounds, config.batch_size
            )
        else:
            val_terms = train_terms
        history.epochs.append(
            {
                "epoch": epoch,
                "train_loss": train_terms["total"],
                "val_loss": val_terms["total"],
                **{f"val_{key}": val_terms[key] for key in LOSS_COLUMNS[:-1]},
                "lr": lr,
                "seconds": time.perf_counter() - started,
            }
        )
        logger.info(
            "explainer epoch %d: train %.4f, validation %.4f (L_c %.4f), lr %.3g",
            epoch, train_terms["total"], val_terms["total"], val_terms["L_c"], lr,
        )
        if stopper.improved(val_terms["total"]):
            best_state = explainer.state_dict()
            history.best_epoch = epoch
        if stopper.step(val_terms["total"]):
            history.stopped_early = True
            logger.info("early stopping after epoch %d", epoch)
            break

    explainer.load_state_dict(best_state)
    if parameter_digest(explanandum) != digest:
        raise FrozenParameterError("explanandum parameters changed during explainer training")
    return explainer.eval(), history
