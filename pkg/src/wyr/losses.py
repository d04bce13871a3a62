"""
The four Explainer loss terms and their weighted sum.

Every term works on batches and is computed over valid positions only. Per-item values are
combined by `reduction` (`mean`, `sum` or `none`).

Examples:
    >>> import numpy as np
    >>> from wyr.autodiff.tensor import Tensor
    >>> from wyr.masking import SoftMask

    Entropy term at the uniform distribution over four classes:
    >>> round(entropy_loss([Tensor(np.full((1, 4), 0.25))]).item(), 4)
    -0.3466

    Bounding measure with ten valid positions, a = 0.1 and b = 0.3:
    >>> bounds = AreaBounds(0.1, 0.3)
    >>> round(bounding_measure(Tensor(np.ones(10)), bounds).item(), 12)
    0.7
    >>> round(bounding_measure(Tensor(np.zeros(10)), bounds).item(), 12)
    0.1

    Total variation of an alternating mask:
    >>> m, n = SoftMask.from_values([0, 1, 0, 1]), SoftMask.from_values([0, 0, 0, 0])
    >>> tv_loss(m, n).item()
    0.75
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np

from wyr.autodiff.functional import (
    one_hot,
    reduce_items,
    sort_descending,
    valid_positions,
)
from wyr.autodiff.tensor import Tensor
from wyr.data.dataset import LabelAssignment
from wyr.masking import SoftMask, complement, true_columns

if TYPE_CHECKING:
    from wyr.data.tokenizer import TokenBatch
    from wyr.models.explainer import MaskStack
    from wyr.models.explanandum import Explanandum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """Multipliers of the entropy, area and total-variation terms."""

    entropy: float = 1.0
    area: float = 1.0
    tv: float = 1.0

    def __post_init__(self):
        for name in ("entropy", "area", "tv"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True)
class AreaBounds:
    """Minimum and maximum fraction `a` and `b` of a class mask that may be switched on."""

    a: float = 0.1
    b: float = 0.5

    def __post_init__(self):
        if not 0 < self.a < self.b < 1:
            raise ValueError(f"area bounds need 0 < a < b < 1, got a={self.a}, b={self.b}")


@dataclass
class LossBreakdown:
    classification: Tensor
    entropy: Tensor
    area: Tensor
    tv: Tensor
    total: Tensor

    def as_floats(self) -> Dict[str, float]:
        """Scalar values keyed `L_c`, `L_e`, `L_a`, `L_tv`, `total`."""
        return {
            "L_c": self.classification.item(),
            "L_e": self.entropy.item(),
            "L_a": self.area.item(),
            "L_tv": self.tv.item(),
            "total": self.total.item(),
        }


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def _counts(valid_len: np.ndarray) -> np.ndarray:
    valid_len = np.asarray(valid_len, dtype=np.int64)
    if np.any(valid_len < 1):
        raise ValueError("mask losses need at least one valid position per item")
    return valid_len


def classification_loss(
    probs_masked: Sequence[Tensor], y: LabelAssignment, reduction: str = "mean"
) -> Tensor:
    """
    Sum over heads of `-log p[y]` for the probabilities of the masked input.

    The logarithm clamps its input at 1e-12, so a zero probability gives a large finite loss.

    Examples:
        >>> y = LabelAssignment([[0]], head_classes=(4,))
        >>> round(classification_loss([Tensor(np.full((1, 4), 0.25))], y).item(), 4)
        1.3863
    """
    if len(probs_masked) != len(y.head_classes):
        raise ValueError(
            f"{len(probs_masked)} heads of probabilities for {len(y.head_classes)} heads"
        )
    total = None
    for h, probs in enumerate(probs_masked):
        picked = (probs * one_hot(y.indices[:, h], y.head_classes[h])).sum(axis=-1)
        term = -picked.log()
        total = term if total is None else total + term
    return reduce_items(total, reduction)


def entropy_loss(probs_complement: Sequence[Tensor], reduction: str = "mean") -> Tensor:
    """
    Mean over heads of `(1 / C_head) * sum_c p_c log p_c` for the complement-masked input.

    Zero probabilities contribute nothing.
    """
    if not probs_complement:
        raise ValueError("entropy_loss needs at least one head")
    total = None
    for probs in probs_complement:
        term = (probs * probs.log()).sum(axis=-1) * (1.0 / probs.shape[-1])
        total = term if total is None else total + term
    return reduce_items(total * (1.0 / len(probs_complement)), reduction)


def area_mean(mask: SoftMask, reduction: str = "none") -> Tensor:
    """
    Mean mask value over valid positions.

    Raises:
        ValueError: for an item without valid positions

    Examples:
        >>> area_mean(SoftMask(Tensor([[1.0, 1.0, 0.0, 0.0]]), [2])).data.tolist()
        [1.0]
    """
    counts = _counts(mask.valid_len)
    valid = mask.valid.astype(np.float64)
    return reduce_items((mask.values * valid).sum(axis=-1) * (1.0 / counts), reduction)


def bounding_measure(
    s: Tensor,
    bounds: AreaBounds,
    valid_len: Optional[np.ndarray] = None,
    reduction: str = "none",
) -> Tensor:
    """
    Penalty for a class mask whose switched-on area falls outside `[a, b]`.

    The mask is sorted from largest to smallest and compared with two prefix templates: one
    with `round(a * Z)` leading ones (shortfall below it is penalised) and one with
    `round(b * Z)` leading ones (excess above it is penalised), both divided by `Z`. Rounding
    is half-up and the lower count never exceeds the upper.

    Args:
        s: `(d,)` or `(B, d)` mask values in [0, 1], zero on padding
        bounds: the area bounds
        valid_len: valid positions per item; the full length when omitted
    """
    squeeze = s.ndim == 1
    if squeeze:
        s = s.reshape(1, -1)
    length = s.shape[-1]
    counts = _counts(np.full(s.shape[0], length) if valid_len is None else valid_len)
    k_max = _round_half_up(bounds.b * counts)
    k_min = np.minimum(_round_half_up(bounds.a * counts), k_max)
    q_min = valid_positions(k_min, length).astype(np.float64)
    q_max = valid_positions(k_max, length).astype(np.float64)

    valid = valid_positions(counts, length).astype(np.float64)
    sorted_values, _ = sort_descending(s * valid)
    shortfall = (q_min - sorted_values).relu().sum(axis=-1)
    excess = (sorted_values - q_max).relu().sum(axis=-1)
    per_item = (shortfall + excess) * (1.0 / counts)
    if squeeze and reduction == "none":
        return per_item.reshape(())
    return reduce_items(per_item, reduction)


def area_loss(
    m: SoftMask,
    n: SoftMask,
    S: "MaskStack",
    y: LabelAssignment,
    bounds: AreaBounds,
    reduction: str = "mean",
) -> Tensor:
    """Area of the target mask, area of the non-target mask, and the mean bounding measure of
    the true-class columns."""
    columns = true_columns(S, y)
    bounded = None
    for column in columns:
        term = bounding_measure(column, bounds, S.valid_len)
        bounded = term if bounded is None else bounded + term
    per_item = area_mean(m) + area_mean(n) + bounded * (1.0 / len(columns))
    return reduce_items(per_item, reduction)


def _variation(mask: SoftMask) -> Tensor:
    counts = _counts(mask.valid_len)
    if mask.length < 2:
        return mask.values.sum(axis=-1) * 0.0
    pairs = valid_positions(counts - 1, mask.length - 1).astype(np.float64)
    steps = (mask.values[:, 1:] - mask.values[:, :-1]).abs()
    return (steps * pairs).sum(axis=-1) * (1.0 / counts)


def tv_loss(m: SoftMask, n: SoftMask, reduction: str = "mean") -> Tensor:
    """Summed absolute neighbour differences of `m` and of `n`, each divided by `Z`."""
    return reduce_items(_variation(m) + _variation(n), reduction)


def total_loss(
    x: "TokenBatch",
    y: LabelAssignment,
    S: "MaskStack",
    m: SoftMask,
    n: SoftMask,
    weights: LossWeights,
    bounds: AreaBounds,
    explanandum: "Explanandum",
    reduction: str = "mean",
) -> LossBreakdown:
    """
    Classify through `m` and through its complement, then combine all four terms.

    Gradients reach `S` through `m` and `n` in both masked forward passes.
    """
    probs_masked = explanandum.predict_probs(x, m)
    probs_complement = explanandum.predict_probs(x, complement(m))
    l_c = classification_loss(probs_masked, y, reduction)
    l_e = entropy_loss(probs_complement, reduction)
    l_a = area_loss(m, n, S, y, bounds, reduction)
    l_tv = tv_loss(m, n, reduction)
    total = l_c + l_e * weights.entropy + l_a * weights.area + l_tv * weights.tv
    return LossBreakdown(l_c, l_e, l_a, l_tv, total)


def loss_terms(breakdowns: List[LossBreakdown]) -> Dict[str, float]:
    """Average the scalar terms of several breakdowns."""
    rows = [b.as_floats() for b in breakdowns]
    return {key: float(np.mean([r[key] for r in rows])) for key in rows[0]} if rows else {}
