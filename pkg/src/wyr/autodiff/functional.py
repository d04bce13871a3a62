"""
Differentiable operations used by the models and the mask losses.

Examples:
    >>> from wyr.autodiff.tensor import Tensor
    >>> from wyr.autodiff.functional import sort_descending, repeat_column, mean_pool_valid

    >>> values, perm = sort_descending(Tensor([0.2, 0.9, 0.5]))
    >>> values.data.tolist(), perm.tolist()
    ([0.9, 0.5, 0.2], [1, 2, 0])

    >>> repeat_column(Tensor([[0.25]]), 3).data.tolist()
    [[0.25, 0.25, 0.25]]

    >>> mean_pool_valid(Tensor([[2.0, 4.0], [4.0, 8.0]]), 2).data.tolist()
    [3.0, 6.0]
"""

from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np

from wyr.autodiff.tensor import Function, Tensor, stack


class Softmax(Function):
    """Softmax along one axis, stabilised by subtracting the maximum."""

    def forward(self, x, axis=-1):
        self.axis = axis
        shifted = np.exp(x - np.max(x, axis=axis, keepdims=True))
        self.out = shifted / np.sum(shifted, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return self.out * (grad - inner)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Examples:
        >>> p = softmax(Tensor([[1.0, 2.0, 3.0]]))
        >>> abs(float(p.data.sum()) - 1.0) < 1e-12
        True
    """
    return Softmax.apply(x, axis=axis)


class SortDescending(Function):
    def forward(self, v, perm):
        self.perm = perm
        return np.take_along_axis(v, perm, axis=-1)

    def backward(self, grad):
        out = np.zeros_like(grad)
        np.put_along_axis(out, self.perm, grad, axis=-1)
        return out


def sort_descending(v: Tensor) -> Tuple[Tensor, np.ndarray]:
    """
    Sort along the last axis from largest to smallest.

    Ties keep their original order. The gradient of the sorted values is scattered back through
    the permutation.

    Returns:
        the sorted tensor and the permutation `perm` with `sorted[..., i] == v[..., perm[i]]`
    """
    perm = np.argsort(-v.data, axis=-1, kind="stable")
    return SortDescending.apply(v, perm=perm), perm


def elementwise_max_reduce(columns: Sequence[Tensor]) -> Tensor:
    """
    Elementwise maximum over a list of equally shaped tensors.

    On ties the gradient flows to the column that comes first in the list.

    Raises:
        ValueError: for an empty list or columns of different shapes

    Examples:
        >>> elementwise_max_reduce([Tensor([0.2, 0.9]), Tensor([0.5, 0.1])]).data.tolist()
        [0.5, 0.9]
    """
    if len(columns) == 0:
        raise ValueError("elementwise_max_reduce needs at least one column")
    shapes = {c.shape for c in columns}
    if len(shapes) != 1:
        raise ValueError(f"columns must share one shape, got {sorted(shapes)}")
    if len(columns) == 1:
        return columns[0]
    return stack(columns, axis=-1).max(axis=-1)


class RepeatColumn(Function):
    def forward(self, mask, width):
        return np.repeat(mask, width, axis=-1)

    def backward(self, grad):
        return grad.sum(axis=-1, keepdims=True)


def repeat_column(mask: Tensor, width: int) -> Tensor:
    """
    Repeat a `(..., d, 1)` column `width` times into `(..., d, width)`.

    Raises:
        ValueError: when `width < 1` or the last dimension is not 1
    """
    if width < 1:
        raise ValueError(f"width must be at least 1, got {width}")
    if mask.ndim < 1 or mask.shape[-1] != 1:
        raise ValueError(f"repeat_column expects a trailing dimension of 1, got {mask.shape}")
    return RepeatColumn.apply(mask, width=int(width))


class MeanPoolValid(Function):
    def forward(self, x, weights):
        self.weights = weights
        return np.sum(x * weights, axis=-2)

    def backward(self, grad):
        return np.expand_dims(grad, -2) * self.weights


def valid_positions(valid_count: np.ndarray, length: int) -> np.ndarray:
    """Boolean `(..., length)` array that is True before each row's valid count."""
    return np.arange(length) < np.asarray(valid_count)[..., None]


def mean_pool_valid(
    x: Tensor,
    valid_count: Union[int, Sequence[int], np.ndarray],
    allow_empty: bool = False,
) -> Tensor:
    """
    Average the first `valid_count` rows of a `(..., d, h)` tensor.

    Rows at or after `valid_count` are padding and do not contribute. With `allow_empty`, a
    count of zero gives the zero vector instead of an error.

    Raises:
        ValueError: when a count is outside `[1, d]` (`[0, d]` with `allow_empty`)
    """
    length = x.shape[-2]
    counts = np.asarray(valid_count, dtype=np.int64)
    if counts.shape != x.shape[:-2]:
        raise ValueError(f"valid_count shape {counts.shape} does not match {x.shape[:-2]}")
    low = 0 if allow_empty else 1
    if np.any(counts < low) or np.any(counts > length):
        raise ValueError(f"valid_count must lie in [{low}, {length}], got {counts.tolist()}")
    mask = valid_positions(counts, length).astype(np.float64)
    weights = (mask / np.maximum(counts, 1)[..., None])[..., None]
    return MeanPoolValid.apply(x, weights=weights)


class Take(Function):
    """Row gather from a table, `table[ids]`; repeated ids accumulate their gradient."""

    def forward(self, table, ids):
        self.ids = ids
        return table[ids]

    def backward(self, grad):
        (table,) = self.tensors
        out = np.zeros_like(table.data)
        np.add.at(out, self.ids, grad)
        return out


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """
    Gather rows of an embedding table.

    Raises:
        IndexError: for an id outside the table
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for a table of {table.shape[0]} rows")
    return Take.apply(table, ids=ids)


REDUCTIONS = ("mean", "sum", "none")


def reduce_items(per_item: Tensor, reduction: str) -> Tensor:
    """
    Reduce a per-item loss by `mean`, `sum` or `none`.

    Examples:
        >>> reduce_items(Tensor([1.0, 3.0]), "mean").item()
        2.0
    """
    if reduction == "mean":
        return per_item.mean()
    if reduction == "sum":
        return per_item.sum()
    if reduction == "none":
        return per_item
    raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


def one_hot(indices: np.ndarray, count: int) -> np.ndarray:
    """
    Examples:
        >>> one_hot(np.array([0, 2]), 3).tolist()
        [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    """
    indices = np.asarray(indices, dtype=np.int64)
    return (indices[..., None] == np.arange(count)).astype(np.float64)
