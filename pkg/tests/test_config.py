import json
from pathlib import Path

import pytest

from wyr.config import RunConfig, load_config
from wyr.losses import AreaBounds, LossWeights

QUICKSTART = Path(__file__).resolve().parents[1] / "configs" / "quickstart.yaml"


def test_defaults():
    config = RunConfig()
    assert config.losses.weights() == LossWeights(1.0, 1.0, 1.0)
    assert config.losses.bounds() == AreaBounds(0.1, 0.5)
    assert config.evaluation.threshold == 0.5
    assert config.data.experiment == "planted_motif"


def test_bundled_quickstart_config_loads():
    config = load_config(QUICKSTART)
    assert config.data.params["fine_classes"] == 12
    assert config.explainer["hidden_size"] == 16
    assert config.train_explainer.batch_size == 48
    assert config.evaluation.threads == 2
    assert config.train_explanandum.lr == config.train_explainer.lr == 0.003


def test_seed_reaches_both_trainers():
    config = RunConfig.from_dict({"seed": 9, "train_explainer": {"epochs": 2}})
    assert config.train_explanandum.seed == 9
    assert config.train_explainer.seed == 9
    assert config.train_explainer.epochs == 2
    assert config.train_explainer.lr == 2e-4
    assert config.train_explanandum.lr == 2e-4


@pytest.mark.parametrize(
    "payload",
    [
        {"model": {}},
        {"losses": {"alpha": 1.0}},
        {"train_explainer": {"seed": 3}},
        {"explanandum": {"vocab_size": 10}},
        {"explainer": {"num_classes": 3}},
    ],
)
def test_unknown_or_derived_keys_are_rejected(payload):
    with pytest.raises(ValueError):
        RunConfig.from_dict(payload)


@pytest.mark.parametrize(
    "payload",
    [
        {"losses": {"a": 0.6, "b": 0.5}},
        {"losses": {"tv": -1.0}},
        {"data": {"test_fraction": 0.6, "val_fraction": 0.5}},
        {"evaluation": {"threads": 0}},
        {"train_explanandum": {"lr": 0.0}},
    ],
)
def test_invalid_values_are_rejected(payload):
    with pytest.raises(ValueError):
        config = RunConfig.from_dict(payload)
        config.losses.bounds()
        config.losses.weights()


def test_dict_form_is_stable_and_complete():
    config = RunConfig.from_dict({"seed": 4, "explainer": {"hidden_size": 8}})
    again = RunConfig.from_dict(config.to_dict())
    assert again == config
    assert again.digest() == config.digest()
    assert RunConfig.from_dict({"seed": 5}).digest() != config.digest()


def test_overrides():
    config = RunConfig().with_overrides(seed=7, epochs=1, batch_size=2, lr=0.5, threads=3)
    assert config.seed == 7
    for trainer in (config.train_explanandum, config.train_explainer):
        assert (trainer.epochs, trainer.batch_size, trainer.lr, trainer.seed) == (1, 2, 0.5, 7)
    assert config.evaluation.threads == 3
    assert RunConfig().with_overrides() == RunConfig()


def test_model_configs_take_sizes_from_the_data():
    config = RunConfig.from_dict({"seed": 2, "explanandum": {"pooling": "cls"}})
    explanandum = config.explanandum_config(67, (4, 12), ("coarse", "fine"))
    assert (explanandum.vocab_size, explanandum.head_classes) == (67, (4, 12))
    assert explanandum.pooling == "cls"
    assert explanandum.seed == 2
    explainer = config.explainer_config(67, 16)
    assert (explainer.num_classes, explainer.seed) == (16, 2)


@pytest.mark.parametrize("suffix", [".json", ".toml", ".yaml"])
def test_load_config_formats(tmp_path, suffix):
    path = tmp_path / f"run{suffix}"
    if suffix == ".json":
        path.write_text(json.dumps({"seed": 3, "losses": {"b": 0.4}}))
    elif suffix == ".toml":
        path.write_text("seed = 3\n\n[losses]\nb = 0.4\n")
    else:
        path.write_text("seed: 3\nlosses:\n  b: 0.4\n")
    config = load_config(path)
    assert config.seed == 3
    assert config.losses.b == 0.4


def test_load_config_errors(tmp_path):
    assert load_config(None) == RunConfig()
    bad_suffix = tmp_path / "run.ini"
    bad_suffix.write_text("seed = 1")
    with pytest.raises(ValueError):
        load_config(bad_suffix)
    listing = tmp_path / "run.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        load_config(listing)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == RunConfig()
