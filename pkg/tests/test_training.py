import numpy as np
import pandas as pd
import pytest

import wyr.synthetic.genomics.planted_motif  # noqa: F401
from wyr import training
from wyr.autodiff.layers import parameter_digest
from wyr.autodiff.tensor import Tensor
from wyr.data.dataset import stratified_split
from wyr.errors import FrozenParameterError, NonFiniteLossError
from wyr.losses import AreaBounds, LossWeights
from wyr.models.explainer import ExplainerConfig
from wyr.models.explanandum import ExplanandumConfig
from wyr.synthetic.utilities import retrieve
from wyr.training import (
    EarlyStopping,
    TrainConfig,
    TrainHistory,
    cosine_lr,
    scheduled_lr,
    train_explainer,
    train_explanandum,
)

FAST = TrainConfig(lr=0.01, batch_size=4, epochs=2, patience=2, progress=False)


@pytest.fixture(scope="module")
def splits():
    collection = retrieve("planted_motif_flat", sequence_length=30, classes=2, motif_tokens=2)
    data = collection.run(n_per_class=8, random_state=0)
    return stratified_split(data, test_fraction=0.25, val_fraction=0.25, seed=0)


def model_config(data):
    return ExplanandumConfig(
        vocab_size=data.vocabulary.size, head_classes=data.head_classes, embedding_dim=8
    )


def explainer_config(data):
    return ExplainerConfig(
        vocab_size=data.vocabulary.size,
        num_classes=sum(data.head_classes),
        embedding_dim=8,
        hidden_size=4,
    )


@pytest.fixture(scope="module")
def frozen(splits):
    train, val, _ = splits
    model, _ = train_explanandum(train, val, model_config(train), FAST)
    return model.freeze()


def test_cosine_schedule():
    assert cosine_lr(0, 10, 1.0) == 1.0
    assert cosine_lr(5, 10, 1.0) == pytest.approx(0.5)
    assert cosine_lr(10, 10, 1.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0)
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1.0)


def test_warmup_then_cosine():
    config = TrainConfig(lr=1.0, warmup_steps=2)
    rates = [scheduled_lr(step, 10, config) for step in range(11)]
    assert rates[:3] == [0.5, 1.0, 1.0]
    assert rates[-1] == pytest.approx(0.0)
    assert all(a >= b for a, b in zip(rates[1:], rates[2:]))


def test_early_stopping():
    stopper = EarlyStopping(patience=2, min_delta=0.1)
    assert [stopper.step(v) for v in (1.0, 0.95, 0.5, 0.45, 0.44)] == [
        False,
        False,
        False,
        False,
        True,
    ]
    assert stopper.best == 0.5
    with pytest.raises(ValueError):
        EarlyStopping(patience=0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(lr=0.0),
        dict(patience=0),
        dict(batch_size=0),
        dict(epochs=0),
        dict(warmup_steps=-1),
        dict(subset_fraction=1.5),
        dict(subset_fraction=0.0),
    ],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_history_save(tmp_path):
    history = TrainHistory(
        epochs=[{"epoch": 0, "train_loss": 1.0, "val_loss": 1.5}],
        steps=[{"epoch": 0, "step": 0, "loss": 1.0, "lr": 0.1}],
    )
    epochs, steps = history.save(tmp_path, "explanandum")
    assert epochs.name == "explanandum_history.csv"
    assert pd.read_csv(steps)["lr"].tolist() == [0.1]


def test_train_explanandum(splits):
    train, val, _ = splits
    model, history = train_explanandum(train, val, model_config(train), FAST)
    assert not model.training
    assert len(history.epochs) == 2
    assert len(history.steps) == 2 * 2
    assert 0 <= history.best_epoch < 2
    assert all(np.isfinite(row["val_loss"]) for row in history.epochs)


def test_train_explanandum_is_deterministic(splits):
    train, val, _ = splits
    first, h1 = train_explanandum(train, val, model_config(train), FAST)
    second, h2 = train_explanandum(train, val, model_config(train), FAST)
    assert parameter_digest(first) == parameter_digest(second)
    assert [s["loss"] for s in h1.steps] == [s["loss"] for s in h2.steps]


def test_train_explanandum_without_validation_data(splits):
    train, _, _ = splits
    _, history = train_explanandum(train, train.subset([]), model_config(train), FAST)
    assert all(row["val_loss"] == row["train_loss"] for row in history.epochs)


def test_early_stopping_restores_the_best_epoch(splits, monkeypatch):
    train, val, _ = splits
    losses = iter([1.0, 2.0, 3.0])
    digests = []

    def fake_validation_loss(model, data, batch_size):
        digests.append(parameter_digest(model))
        return next(losses)

    monkeypatch.setattr(training, "validation_loss", fake_validation_loss)
    config = TrainConfig(lr=0.01, batch_size=4, epochs=5, patience=1, progress=False)
    model, history = train_explanandum(train, val, model_config(train), config)

    assert history.stopped_early
    assert history.best_epoch == 0
    assert len(history.epochs) == 2
    assert parameter_digest(model) == digests[0]


def test_non_finite_loss_stops_training(splits, monkeypatch):
    train, val, _ = splits
    monkeypatch.setattr(
        training, "explanandum_loss", lambda logits, labels: Tensor([np.nan]).sum()
    )
    with pytest.raises(NonFiniteLossError, match="epoch 0, step 0"):
        train_explanandum(train, val, model_config(train), FAST)


def test_empty_training_set(splits):
    train, val, _ = splits
    with pytest.raises(ValueError):
        train_explanandum(train.subset([]), val, model_config(train), FAST)


def test_train_explainer_leaves_the_explanandum_untouched(splits, frozen):
    train, val, _ = splits
    before = parameter_digest(frozen)
    explainer, history = train_explainer(
        train, val, frozen, explainer_config(train), LossWeights(), AreaBounds(), FAST
    )
    assert parameter_digest(frozen) == before
    assert all(p.grad is None and not p.requires_grad for p in frozen.parameters())
    assert not explainer.training
    assert explainer.head_classes == train.head_classes
    assert {"val_L_c", "val_L_e", "val_L_a", "val_L_tv"} <= set(history.epochs[0])
    assert {"L_c", "L_e", "L_a", "L_tv", "total", "lr"} <= set(history.steps[0])
    for row in history.steps:
        expected = row["L_c"] + row["L_e"] + row["L_a"] + row["L_tv"]
        assert row["total"] == pytest.approx(expected, abs=1e-12)


def test_train_explainer_refuses_a_trainable_explanandum(splits):
    train, val, _ = splits
    model, _ = train_explanandum(train, val, model_config(train), FAST)
    with pytest.raises(FrozenParameterError):
        train_explainer(train, val, model, explainer_config(train), config=FAST)
    model.freeze()
    next(iter(model.parameters())).requires_grad = True
    with pytest.raises(FrozenParameterError):
        train_explainer(train, val, model, explainer_config(train), config=FAST)


def test_train_explainer_is_deterministic(splits, frozen):
    train, val, _ = splits
    runs = [
        train_explainer(train, val, frozen, explainer_config(train), config=FAST)
        for _ in range(2)
    ]
    (first, h1), (second, h2) = runs
    assert parameter_digest(first) == parameter_digest(second)
    assert [s["total"] for s in h1.steps] == [s["total"] for s in h2.steps]


def test_train_explainer_on_a_subset(splits, frozen):
    train, val, _ = splits
    config = TrainConfig(
        lr=0.01, batch_size=2, epochs=1, subset_fraction=0.5, warmup_steps=1, progress=False
    )
    empty = val.subset([])
    _, history = train_explainer(train, empty, frozen, explainer_config(train), config=config)
    assert len(history.steps) == int(np.ceil(round(0.5 * len(train)) / 2))
    assert history.epochs[0]["val_loss"] == history.epochs[0]["train_loss"]
