"""
Occlusion baseline: a token's importance is the drop in true-class probability when its mask
entry is set to zero, summed over heads.

Examples:
    >>> import numpy as np
    >>> from wyr.data.dataset import LabelAssignment
    >>> from wyr.data.tokenizer import TokenSequence
    >>> from wyr.models.explanandum import Explanandum, ExplanandumConfig
    >>> model = Explanandum(ExplanandumConfig(vocab_size=19, head_classes=(3,), encoder="none"))
    >>> y = LabelAssignment([[0]], head_classes=(3,))
    >>> scores = occlusion_importance(model, TokenSequence([4, 4, 9]), y)
    >>> scores.shape
    (1, 3)

    Identical tokens get identical scores:
    >>> bool(np.isclose(scores[0, 0], scores[0, 1]))
    True
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from wyr.autodiff.tensor import no_grad
from wyr.data.dataset import LabelAssignment
from wyr.data.tokenizer import TokenBatch, TokenSequence, as_batch
from wyr.models.explanandum import Explanandum

logger = logging.getLogger(__name__)


def _true_probability(
    explanandum: Explanandum, tokens: TokenBatch, mask: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Summed over heads, the probability of each row's true class."""
    probs = explanandum.predict_probs(tokens, mask)
    rows = np.arange(len(tokens))
    return sum(p.data[rows, labels[h]] for h, p in enumerate(probs))


def _variants(length: int) -> np.ndarray:
    """The all-ones mask followed by one mask per position with that position zeroed."""
    return np.vstack([np.ones((1, length)), 1.0 - np.eye(length)])


def occlusion_importance(
    explanandum: Explanandum,
    x: Union[TokenSequence, TokenBatch, Sequence[TokenSequence]],
    y: LabelAssignment,
) -> np.ndarray:
    """
    Per-token occlusion scores, `(B, d)`, zero on padding.

    Each item is scored with `valid_len + 1` forward passes batched together: the unmasked
    input and one pass per occluded token. Higher scores mark more important tokens.
    """
    batch = as_batch(x)
    if len(y) != len(batch):
        raise ValueError(f"{len(y)} label rows for {len(batch)} sequences")
    scores = np.zeros(batch.ids.shape)
    with no_grad():
        for i in range(len(batch)):
            n = int(batch.valid_len[i])
            if n == 0:
                continue
            variants = _variants(n)
            tokens = TokenBatch(np.repeat(batch.ids[i : i + 1, :n], n + 1, axis=0), [n] * (n + 1))
            labels = np.repeat(y.indices[i : i + 1], n + 1, axis=0).T
            p = _true_probability(explanandum, tokens, variants, labels)
            scores[i, :n] = p[0] - p[1:]
    return scores


@dataclass(frozen=True)
class Additivity:
    """Summed single-token drops against the drop from occluding every token at once."""

    summed_drop: float
    total_drop: float

    @property
    def gap(self) -> float:
        return self.summed_drop - self.total_drop


def occlusion_additivity(
    explanandum: Explanandum,
    x: Union[TokenSequence, TokenBatch, Sequence[TokenSequence]],
    y: LabelAssignment,
    scores: np.ndarray,
) -> Additivity:
    """Mean over items of both drops; single-token drops need not add up to the total."""
    batch = as_batch(x)
    with no_grad():
        full = _true_probability(explanandum, batch, None, y.indices.T)
        empty = _true_probability(
            explanandum, batch, np.zeros(batch.ids.shape), y.indices.T
        )
    return Additivity(
        summed_drop=float(np.mean(np.asarray(scores).sum(axis=-1))),
        total_drop=float(np.mean(full - empty)),
    )
