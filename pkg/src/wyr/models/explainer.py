"""
The Explainer: a bidirectional LSTM that emits one soft mask per class for every token.

Examples:
    >>> import numpy as np
    >>> from wyr.data.tokenizer import TokenSequence
    >>> from wyr.models.explainer import Explainer, ExplainerConfig
    >>> explainer = Explainer(ExplainerConfig(vocab_size=19, num_classes=16, seed=0)).eval()
    >>> S = explainer.explain(TokenSequence([4, 5, 6, 7, 8]))
    >>> S.values.shape
    (1, 5, 16)
    >>> bool(((S.values.data > 0) & (S.values.data < 1)).all())
    True

    Hidden and cell states of both directions give 4 x hidden features per token:
    >>> ExplainerConfig(vocab_size=19, num_classes=16, hidden_size=40).feature_width
    160
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from wyr.autodiff.functional import valid_positions
from wyr.autodiff.layers import BatchNorm, BidirectionalLSTM, Embedding, Linear, Module
from wyr.autodiff.tensor import Tensor, concat
from wyr.data.tokenizer import TokenBatch, TokenSequence, as_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExplainerConfig:
    """
    Attributes:
        vocab_size: size of the Explainer's own token vocabulary
        num_classes: mask columns, the sum of every head's class count
        embedding_dim: width of the token embedding
        hidden_size: LSTM units per direction
        num_layers: stacked LSTM layers
        include_cell_state: concatenate cell states next to hidden states per token
        batch_norm_momentum: weight of the newest batch in the running statistics
        seed: initialisation seed
    """

    vocab_size: int
    num_classes: int
    embedding_dim: int = 32
    hidden_size: int = 16
    num_layers: int = 2
    include_cell_state: bool = True
    batch_norm_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "num_classes", "embedding_dim", "hidden_size", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")

    @property
    def feature_width(self) -> int:
        return (4 if self.include_cell_state else 2) * self.hidden_size


@dataclass
class MaskStack:
    """
    Per-class soft masks `S`, shape `(B, d, C)`, with padded rows forced to 0.

    Attributes:
        values: the masks; column `c` of item `b` is `values[b, :, c]`
        valid_len: valid tokens per item
        head_classes: class count of every head, in column order
    """

    values: Tensor
    valid_len: np.ndarray
    head_classes: Tuple[int, ...]

    def __post_init__(self):
        self.valid_len = np.asarray(self.valid_len, dtype=np.int64).reshape(-1)
        self.head_classes = tuple(int(c) for c in self.head_classes)
        if self.values.ndim != 3 or self.values.shape[0] != self.valid_len.shape[0]:
            raise ValueError(
                f"mask stack of shape {self.values.shape} for {len(self.valid_len)} items"
            )
        if self.values.shape[-1] != sum(self.head_classes):
            raise ValueError(
                f"{self.values.shape[-1]} columns for heads with {sum(self.head_classes)} classes"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, c: int) -> Tensor:
        """Class `c`'s mask for every item, `(B, d)`."""
        return self.values[:, :, c]

    def numpy(self) -> np.ndarray:
        return self.values.data.copy()


class Explainer(Module):
    """Embedding, stacked biLSTM, ReLU, batch normalisation, then one sigmoid unit per class."""

    def __init__(self, config: ExplainerConfig, head_classes: Sequence[int] = ()):
        super().__init__()
        self.config = config
        self.head_classes = tuple(head_classes) or (config.num_classes,)
        if sum(self.head_classes) != config.num_classes:
            raise ValueError(
                f"heads with {sum(self.head_classes)} classes for {config.num_classes} mask columns"
            )
        rng = np.random.default_rng(config.seed)
        self.embedding = Embedding(config.vocab_size, config.embedding_dim, rng=rng)
        self.lstm = BidirectionalLSTM(
            config.embedding_dim, config.hidden_size, num_layers=config.num_layers, rng=rng
        )
        self.norm = BatchNorm(config.feature_width, momentum=config.batch_norm_momentum)
        self.dense = Linear(config.feature_width, config.num_classes, rng=rng)

    def explain(self, x: Union[TokenSequence, TokenBatch, Sequence[TokenSequence]]) -> MaskStack:
        """
        Raises:
            ValueError: for a sequence without valid tokens
            IndexError: for a token id outside the vocabulary
        """
        batch = as_batch(x)
        if np.any(batch.valid_len < 1):
            raise ValueError("cannot explain an empty sequence")
        states = self.lstm(self.embedding(batch.ids), batch.valid_len)
        if self.config.include_cell_state:
            parts = ["hidden_forward", "cell_forward", "hidden_backward", "cell_backward"]
        else:
            parts = ["hidden_forward", "hidden_backward"]
        features = concat([states[p] for p in parts], axis=-1).relu()
        features = self.norm(features, batch.valid_len)
        masks = self.dense(features).sigmoid()
        valid = valid_positions(batch.valid_len, batch.length).astype(np.float64)[..., None]
        return MaskStack(masks * valid, batch.valid_len, self.head_classes)

    __call__ = explain
