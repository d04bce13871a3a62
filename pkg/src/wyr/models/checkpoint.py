"""
JSON checkpoints holding a model's configuration and named flat parameter arrays.

Examples:
    >>> import tempfile
    >>> from pathlib import Path
    >>> from wyr.data.tokenizer import Vocabulary
    >>> from wyr.models.explanandum import Explanandum, ExplanandumConfig
    >>> vocab = Vocabulary(k=2)
    >>> model = Explanandum(ExplanandumConfig(vocab_size=vocab.size, encoder="none"))
    >>> path = Path(tempfile.mkdtemp()) / "explanandum.json"
    >>> _ = save_checkpoint(path, model, vocab)
    >>> restored, restored_vocab = load_explanandum(path)
    >>> restored_vocab == vocab, parameter_digest(restored) == parameter_digest(model)
    (True, True)
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from wyr.autodiff.layers import Module, parameter_digest
from wyr.data.tokenizer import Vocabulary
from wyr.errors import CheckpointError, VocabularyMismatchError
from wyr.models.explainer import Explainer, ExplainerConfig
from wyr.models.explanandum import Explanandum, ExplanandumConfig

logger = logging.getLogger(__name__)

FORMAT = "wyr-checkpoint"
VERSION = 1
KINDS = {
    "explanandum": (Explanandum, ExplanandumConfig),
    "explainer": (Explainer, ExplainerConfig),
}


def _kind(model: Module) -> str:
    for kind, (cls, _) in KINDS.items():
        if isinstance(model, cls):
            return kind
    raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")


def _arrays(named) -> Dict[str, Dict[str, Any]]:
    return {
        name: {"shape": list(np.shape(value)), "values": np.asarray(value).reshape(-1).tolist()}
        for name, value in named
    }


def save_checkpoint(
    path: Union[str, Path],
    model: Module,
    vocabulary: Vocabulary,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write `model` as a single JSON document with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = _kind(model)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "config": dataclasses.asdict(model.config),
        "vocabulary": vocabulary.to_dict(),
        "vocabulary_digest": vocabulary.digest(),
        "parameter_digest": parameter_digest(model),
        "parameters": _arrays((name, p.data) for name, p in model.named_parameters()),
        "buffers": _arrays(model.named_buffers()),
    }
    if kind == "explainer":
        payload["head_classes"] = list(model.head_classes)
    if extra:
        payload["extra"] = extra
    path.write_text(json.dumps(payload, sort_keys=True))
    logger.info("saved %s checkpoint to %s", kind, path)
    return path


def load_checkpoint(path: Union[str, Path], kind: Optional[str] = None) -> Dict[str, Any]:
    """
    Read and validate a checkpoint document.

    Raises:
        CheckpointError: for a missing or malformed file, another format or version, or a
            checkpoint of another kind
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as error:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {error}") from error
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    if kind is not None and payload.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {payload.get('kind')}, expected a {kind}")
    return payload


def _restore(payload: Dict[str, Any], path: Path) -> Tuple[Module, Vocabulary]:
    cls, config_cls = KINDS[payload["kind"]]
    config_fields = dict(payload["config"])
    for key in ("head_classes", "head_names"):
        if key in config_fields:
            config_fields[key] = tuple(config_fields[key])
    try:
        config = config_cls(**config_fields)
    except TypeError as error:
        raise CheckpointError(f"{path}: malformed config: {error}") from error
    if payload["kind"] == "explainer":
        model = cls(config, head_classes=payload.get("head_classes", ()))
    else:
        model = cls(config)
    state = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for section in ("parameters", "buffers")
        for name, entry in payload[section].items()
    }
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as error:
        raise CheckpointError(f"{path}: {error}") from error
    vocabulary = Vocabulary(**{k: v for k, v in payload["vocabulary"].items() if k != "specials"})
    if vocabulary.digest() != payload["vocabulary_digest"]:
        raise CheckpointError(f"{path}: vocabulary digest does not match its vocabulary")
    return model, vocabulary


def load_explanandum(path: Union[str, Path]) -> Tuple[Explanandum, Vocabulary]:
    return _restore(load_checkpoint(path, "explanandum"), Path(path))


def load_explainer(path: Union[str, Path]) -> Tuple[Explainer, Vocabulary]:
    model, vocabulary = _restore(load_checkpoint(path, "explainer"), Path(path))
    return model.eval(), vocabulary


def check_vocabulary(expected: Vocabulary, found: Vocabulary, what: str) -> None:
    """
    Raises:
        VocabularyMismatchError: when the two vocabularies differ
    """
    if expected.digest() != found.digest():
        raise VocabularyMismatchError(
            f"{what} was built for vocabulary {found.to_dict()} ({found.digest()}), "
            f"the data uses {expected.to_dict()} ({expected.digest()})"
        )
