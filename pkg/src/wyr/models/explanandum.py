"""
The Explanandum: the token classifier being explained.

Token embeddings pass through an optional self-attention encoder, are pooled over valid tokens
(mean pooling) or read from a prepended CLS token, and feed one linear head per classification
level. A soft mask scales embedding rows; with mean pooling it scales the encoder outputs a
second time, so a fully masked input pools to the zero vector and yields the head biases.

Examples:
    >>> import numpy as np
    >>> from wyr.data.tokenizer import TokenSequence
    >>> from wyr.masking import SoftMask
    >>> from wyr.models.explanandum import Explanandum, ExplanandumConfig
    >>> model = Explanandum(ExplanandumConfig(vocab_size=19, head_classes=(4, 12), seed=0))
    >>> x = TokenSequence([4, 9, 14, 5])

    An all-ones mask changes nothing:
    >>> plain, ones = model(x), model(x, SoftMask.from_values(np.ones(4)))
    >>> all((a.data == b.data).all() for a, b in zip(plain, ones))
    True

    A fully masked sequence gives exactly the head biases:
    >>> zeros = model(x, SoftMask.from_values(np.zeros(4)))
    >>> bool((zeros[0].data[0] == model.head(0).bias.data).all())
    True
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from wyr.autodiff.functional import mean_pool_valid, one_hot, reduce_items, softmax
from wyr.autodiff.layers import Embedding, Linear, Module, SelfAttention
from wyr.autodiff.tensor import Tensor, concat
from wyr.data.dataset import LabelAssignment
from wyr.data.tokenizer import CLS, TokenBatch, TokenSequence, as_batch
from wyr.masking import SoftMask, apply_mask

logger = logging.getLogger(__name__)

ENCODERS = ("attention", "none")
POOLINGS = ("mean", "cls")

MaskLike = Union[SoftMask, Tensor, np.ndarray]


@dataclass(frozen=True)
class ExplanandumConfig:
    """
    Attributes:
        vocab_size: token vocabulary size, specials included
        head_classes: class count of every classification head
        head_names: names of the heads, in order
        embedding_dim: embedding width `h`
        encoder: `attention` for one self-attention block, `none` for a bag of embeddings
        pooling: `mean` over valid tokens or the `cls` token's encoder output
        seed: initialisation seed
    """

    vocab_size: int
    head_classes: Tuple[int, ...] = (4, 12)
    head_names: Tuple[str, ...] = ()
    embedding_dim: int = 32
    encoder: str = "attention"
    pooling: str = "mean"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "head_classes", tuple(int(c) for c in self.head_classes))
        names = tuple(self.head_names) or tuple(f"head{i}" for i in range(len(self.head_classes)))
        object.__setattr__(self, "head_names", names)
        if not self.head_classes or min(self.head_classes) < 1:
            raise ValueError(f"head_classes must be positive counts, got {self.head_classes}")
        if len(self.head_names) != len(self.head_classes):
            raise ValueError(f"{len(self.head_names)} names for {len(self.head_classes)} heads")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.vocab_size <= CLS:
            raise ValueError(
                f"vocab_size must exceed the special tokens, got {self.vocab_size}"
            )


@dataclass
class HeadLogits:
    """Pre-softmax scores, one `(B, C_head)` tensor per head."""

    logits: List[Tensor]
    head_names: Tuple[str, ...]

    @property
    def finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.logits)

    def __len__(self) -> int:
        return len(self.logits)

    def __getitem__(self, head: int) -> Tensor:
        return self.logits[head]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.logits)

    def probs(self) -> List[Tensor]:
        return [softmax(t, axis=-1) for t in self.logits]


class Explanandum(Module):
    def __init__(self, config: ExplanandumConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.embedding = Embedding(config.vocab_size, config.embedding_dim, rng=rng)
        if config.encoder == "attention":
            self.encoder = SelfAttention(config.embedding_dim, rng=rng)
        for i, classes in enumerate(config.head_classes):
            setattr(self, f"head_{i}", Linear(config.embedding_dim, classes, rng=rng))

    @property
    def head_classes(self) -> Tuple[int, ...]:
        return self.config.head_classes

    def head(self, i: int) -> Linear:
        return getattr(self, f"head_{i}")

    def embed(self, x: Union[TokenSequence, TokenBatch]) -> Tensor:
        """
        Embedding rows of every token, `(B, d, h)`; padding rows are kept.

        Raises:
            IndexError: for a token id outside the vocabulary
        """
        return self.embedding(as_batch(x).ids)

    def _mask_values(self, mask: MaskLike, batch: TokenBatch) -> Tensor:
        values = mask.values if isinstance(mask, SoftMask) else mask
        if not isinstance(values, Tensor):
            values = Tensor(values)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.shape != batch.ids.shape:
            raise ValueError(f"mask of shape {values.shape} for tokens of shape {batch.ids.shape}")
        if np.any(values.data < 0) or np.any(values.data > 1):
            raise ValueError("mask values must lie in [0, 1]")
        return values

    def forward(
        self,
        x: Union[TokenSequence, TokenBatch, Sequence[TokenSequence]],
        mask: Optional[MaskLike] = None,
    ) -> HeadLogits:
        """
        Classify, optionally through a soft mask of shape `(B, d)`.

        Raises:
            ValueError: for a mask of the wrong shape or with values outside [0, 1]
        """
        batch = as_batch(x)
        values = self._mask_values(mask, batch) if mask is not None else None
        ids, valid_len = batch.ids, batch.valid_len
        if self.config.pooling == "cls":
            ids = np.concatenate([np.full((len(batch), 1), CLS), ids], axis=1)
            valid_len = valid_len + 1
            if values is not None:
                values = concat([Tensor(np.ones((len(batch), 1))), values], axis=1)

        hidden = self.embedding(ids)
        if values is not None:
            hidden = apply_mask(hidden, values)
        if self.config.encoder == "attention":
            hidden = self.encoder(hidden, valid_len)

        if self.config.pooling == "cls":
            pooled = hidden[:, 0, :]
        else:
            if values is not None:
                hidden = apply_mask(hidden, values)
            pooled = mean_pool_valid(hidden, valid_len, allow_empty=True)

        logits = [self.head(i)(pooled) for i in range(len(self.config.head_classes))]
        return HeadLogits(logits, self.config.head_names)

    __call__ = forward

    def predict_probs(
        self,
        x: Union[TokenSequence, TokenBatch, Sequence[TokenSequence]],
        mask: Optional[MaskLike] = None,
    ) -> List[Tensor]:
        """Softmax of each head's logits, one `(B, C_head)` tensor per head."""
        return self.forward(x, mask).probs()


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.data.max(axis=-1, keepdims=True)
    return shifted - shifted.exp().sum(axis=-1, keepdims=True).log()


def explanandum_loss(
    logits: Union[HeadLogits, Sequence[Tensor]], y: LabelAssignment, reduction: str = "mean"
) -> Tensor:
    """
    Sum over heads of the cross-entropy of each head's softmax against its label.

    Examples:
        >>> y = LabelAssignment([[2]], head_classes=(4,))
        >>> round(explanandum_loss([Tensor(np.zeros((1, 4)))], y).item(), 4)
        1.3863
    """
    logits = list(logits)
    if len(logits) != len(y.head_classes):
        raise ValueError(f"{len(logits)} heads of logits for {len(y.head_classes)} label heads")
    total = None
    for h, head_logits in enumerate(logits):
        picked = (log_softmax(head_logits) * one_hot(y.indices[:, h], y.head_classes[h])).sum(-1)
        total = -picked if total is None else total - picked
    return reduce_items(total, reduction)
