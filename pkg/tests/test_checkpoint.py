import json

import numpy as np
import pytest

from wyr.autodiff.layers import parameter_digest
from wyr.data.tokenizer import TokenSequence, Vocabulary
from wyr.errors import CheckpointError, VocabularyMismatchError
from wyr.models.checkpoint import (
    check_vocabulary,
    load_checkpoint,
    load_explainer,
    load_explanandum,
    save_checkpoint,
)
from wyr.models.explainer import Explainer, ExplainerConfig
from wyr.models.explanandum import Explanandum, ExplanandumConfig

VOCAB = Vocabulary(k=2)


def explanandum():
    config = ExplanandumConfig(
        vocab_size=VOCAB.size, head_classes=(2, 4), head_names=("coarse", "fine"), embedding_dim=8
    )
    return Explanandum(config)


def explainer():
    config = ExplainerConfig(vocab_size=VOCAB.size, num_classes=6, hidden_size=4, embedding_dim=8)
    return Explainer(config, head_classes=(2, 4))


def test_explanandum_round_trip_keeps_predictions(tmp_path):
    model = explanandum()
    path = save_checkpoint(tmp_path / "explanandum.json", model, VOCAB, extra={"epochs": 3})
    restored, vocab = load_explanandum(path)
    x = TokenSequence([4, 5, 6])
    assert vocab == VOCAB
    assert restored.config == model.config
    assert parameter_digest(restored) == parameter_digest(model)
    for a, b in zip(model(x), restored(x)):
        assert np.array_equal(a.data, b.data)
    assert load_checkpoint(path)["extra"] == {"epochs": 3}


def test_explainer_round_trip_keeps_running_statistics(tmp_path):
    model = explainer()
    model.explain([TokenSequence([4, 5, 6]), TokenSequence([7, 8])])
    model.eval()
    path = save_checkpoint(tmp_path / "explainer.json", model, VOCAB)
    restored, _ = load_explainer(path)
    assert not restored.training
    assert restored.head_classes == (2, 4)
    x = TokenSequence([9, 10, 11, 12])
    assert np.array_equal(model.explain(x).numpy(), restored.explain(x).numpy())


def test_saving_is_byte_stable(tmp_path):
    model = explanandum()
    first = save_checkpoint(tmp_path / "a.json", model, VOCAB)
    second = save_checkpoint(tmp_path / "b.json", model, VOCAB)
    assert first.read_bytes() == second.read_bytes()


def test_missing_and_malformed_checkpoints(tmp_path):
    with pytest.raises(CheckpointError):
        load_explanandum(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_explanandum(broken)
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(CheckpointError):
        load_explanandum(other)


def test_kind_and_version_are_checked(tmp_path):
    path = save_checkpoint(tmp_path / "explainer.json", explainer(), VOCAB)
    with pytest.raises(CheckpointError):
        load_explanandum(path)
    payload = json.loads(path.read_text())
    payload["version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError):
        load_explainer(path)


def test_parameter_shape_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "explanandum.json", explanandum(), VOCAB)
    payload = json.loads(path.read_text())
    payload["parameters"].pop("head_0.bias")
    path.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError):
        load_explanandum(path)


def test_check_vocabulary():
    check_vocabulary(VOCAB, Vocabulary(k=2), "explanandum")
    with pytest.raises(VocabularyMismatchError, match="explanandum"):
        check_vocabulary(VOCAB, Vocabulary(k=3), "explanandum")
