"""
Run configuration: one object grouping every section a pipeline run needs.

Files may be JSON, TOML or YAML; every key must name a known field.

Examples:
    >>> config = RunConfig.from_dict({"seed": 3, "losses": {"a": 0.2}})
    >>> config.losses.bounds()
    AreaBounds(a=0.2, b=0.5)
    >>> config.train_explainer.seed
    3
    >>> RunConfig.from_dict({"losses": {"alpha": 1}})
    Traceback (most recent call last):
    ...
    ValueError: unknown keys in section 'losses': ['alpha']
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import yaml

from wyr.evaluation.report import EvaluationConfig
from wyr.losses import AreaBounds, LossWeights
from wyr.models.explainer import ExplainerConfig
from wyr.models.explanandum import ExplanandumConfig
from wyr.training import TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = (
    "data",
    "explanandum",
    "explainer",
    "train_explanandum",
    "train_explainer",
    "losses",
    "evaluation",
)


@dataclass(frozen=True)
class DataConfig:
    """
    Attributes:
        experiment: registered synthetic dataset used by `gen-data`
        params: keyword arguments of the experiment's factory
        n_per_class: items generated per finest class
        test_fraction: share held out for evaluation
        val_fraction: share held out for validation
    """

    experiment: str = "planted_motif"
    params: Dict[str, Any] = field(default_factory=dict)
    n_per_class: int = 250
    test_fraction: float = 0.13
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError(f"n_per_class must be at least 1, got {self.n_per_class}")
        if self.test_fraction < 0 or self.val_fraction < 0:
            raise ValueError("test_fraction and val_fraction must be non-negative")
        if self.test_fraction + self.val_fraction >= 1:
            raise ValueError("test_fraction and val_fraction must sum to less than 1")


@dataclass(frozen=True)
class LossConfig:
    """Loss weights `entropy`, `area`, `tv` and the area bounds `a`, `b`."""

    entropy: float = 1.0
    area: float = 1.0
    tv: float = 1.0
    a: float = 0.1
    b: float = 0.5

    def weights(self) -> LossWeights:
        return LossWeights(self.entropy, self.area, self.tv)

    def bounds(self) -> AreaBounds:
        return AreaBounds(self.a, self.b)


def _fields(cls, exclude: Sequence[str] = ()) -> set:
    return {f.name for f in dataclasses.fields(cls)} - set(exclude)


def _checked(name: str, payload: Optional[dict], allowed: set) -> dict:
    payload = dict(payload or {})
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ValueError(f"unknown keys in section {name!r}: {unknown}")
    return payload


# Fields filled in from the data or the run seed rather than from the file.
_EXPLANANDUM_DERIVED = ("vocab_size", "head_classes", "head_names")
_EXPLAINER_DERIVED = ("vocab_size", "num_classes")


@dataclass(frozen=True)
class RunConfig:
    """
    Attributes:
        seed: the one seed behind data generation, splitting, initialisation and shuffling
        data: dataset generation and splitting
        explanandum: `ExplanandumConfig` fields other than those taken from the data
        explainer: `ExplainerConfig` fields other than those taken from the data
        train_explanandum: training of the Explanandum
        train_explainer: training of the Explainer
        losses: loss weights and area bounds
        evaluation: evaluation settings
    """

    seed: int = 0
    data: DataConfig = DataConfig()
    explanandum: Dict[str, Any] = field(default_factory=dict)
    explainer: Dict[str, Any] = field(default_factory=dict)
    train_explanandum: TrainConfig = TrainConfig(batch_size=64, epochs=15)
    train_explainer: TrainConfig = TrainConfig(batch_size=48, epochs=20)
    losses: LossConfig = LossConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    @classmethod
    def from_dict(cls, payload: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Raises:
            ValueError: for an unknown section or key, or an invalid value
        """
        payload = _checked("<root>", payload, set(SECTIONS) | {"seed"})
        seed = int(payload.get("seed", 0))
        trainers = {}
        for name, default in (
            ("train_explanandum", cls.train_explanandum),
            ("train_explainer", cls.train_explainer),
        ):
            section = _checked(name, payload.get(name), _fields(TrainConfig, ["seed"]))
            trainers[name] = dataclasses.replace(default, seed=seed, **section)
        return cls(
            seed=seed,
            data=DataConfig(**_checked("data", payload.get("data"), _fields(DataConfig))),
            explanandum=_checked(
                "explanandum",
                payload.get("explanandum"),
                _fields(ExplanandumConfig, _EXPLANANDUM_DERIVED + ("seed",)),
            ),
            explainer=_checked(
                "explainer",
                payload.get("explainer"),
                _fields(ExplainerConfig, _EXPLAINER_DERIVED + ("seed",)),
            ),
            losses=LossConfig(**_checked("losses", payload.get("losses"), _fields(LossConfig))),
            evaluation=EvaluationConfig(
                **_checked("evaluation", payload.get("evaluation"), _fields(EvaluationConfig))
            ),
            **trainers,
        )

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        for name in ("train_explanandum", "train_explainer"):
            out[name].pop("seed")
        return out

    def digest(self) -> str:
        """sha256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(
        self,
        seed: Optional[int] = None,
        epochs: Optional[int] = None,
        batch_size: Optional[int] = None,
        lr: Optional[float] = None,
        threads: Optional[int] = None,
    ) -> "RunConfig":
        """Apply command-line overrides; `epochs`, `batch_size` and `lr` reach both trainers."""
        payload = self.to_dict()
        if seed is not None:
            payload["seed"] = seed
        for name in ("train_explanandum", "train_explainer"):
            for key, value in (("epochs", epochs), ("batch_size", batch_size), ("lr", lr)):
                if value is not None:
                    payload[name][key] = value
        if threads is not None:
            payload["evaluation"]["threads"] = threads
        return RunConfig.from_dict(payload)

    def explanandum_config(
        self, vocab_size: int, head_classes: Sequence[int], head_names: Sequence[str] = ()
    ) -> ExplanandumConfig:
        return ExplanandumConfig(
            vocab_size=vocab_size,
            head_classes=tuple(head_classes),
            head_names=tuple(head_names),
            seed=self.seed,
            **self.explanandum,
        )

    def explainer_config(self, vocab_size: int, num_classes: int) -> ExplainerConfig:
        return ExplainerConfig(
            vocab_size=vocab_size, num_classes=num_classes, seed=self.seed, **self.explainer
        )


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """
    Read a `.json`, `.toml`, `.yaml` or `.yml` file; no path gives the defaults.

    Raises:
        ValueError: for another suffix, a document that is not a mapping, or unknown keys
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix == ".json":
        payload = json.loads(text)
    elif suffix == ".toml":
        payload = tomllib.loads(text)
    elif suffix in (".yaml", ".yml"):
        payload = yaml.safe_load(text)
    else:
        raise ValueError(f"config {path} must be .json, .toml, .yaml or .yml")
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ValueError(f"config {path} must hold a mapping at the top level")
    config = RunConfig.from_dict(payload)
    logger.info("loaded config %s (digest %s)", path, config.digest()[:12])
    return config
