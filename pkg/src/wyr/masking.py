"""
Target, complement and non-target masks, their application to embeddings, and the rounded and
chunked variants used for evaluation.

A mask stack holds one column per class, all heads' classes concatenated in head order. The
target mask of an item is the elementwise maximum of its true columns; the non-target mask is
the maximum of all other columns.

Examples:
    >>> import numpy as np
    >>> from wyr.autodiff.tensor import Tensor
    >>> from wyr.data.dataset import LabelAssignment
    >>> from wyr.models.explainer import MaskStack
    >>> values = Tensor([[[0.2, 0.5, 0.4], [0.9, 0.1, 0.3]]])
    >>> S = MaskStack(values, valid_len=[2], head_classes=(3,))
    >>> y = LabelAssignment([[0]], head_classes=(3,))
    >>> target_mask(S, y).values.data.tolist()
    [[0.2, 0.9]]
    >>> nontarget_mask(S, y).values.data.tolist()
    [[0.5, 0.3]]
    >>> complement(target_mask(S, y)).values.data.round(6).tolist()
    [[0.8, 0.1]]
    >>> round_mask(SoftMask.from_values([0.49, 0.5, 0.51])).values.tolist()
    [[0, 1, 1]]
    >>> segment_chunks(BinaryMask.from_values([1, 1, 0, 0, 1]))[0].chunks
    [(0, 2, True), (2, 4, False), (4, 5, True)]
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np

from wyr.autodiff.functional import elementwise_max_reduce, repeat_column, valid_positions
from wyr.autodiff.tensor import Tensor

if TYPE_CHECKING:
    from wyr.data.dataset import LabelAssignment
    from wyr.models.explainer import MaskStack

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
# Added to true columns so they never win the non-target maximum over values in [0, 1].
_EXCLUDED = -2.0


@dataclass
class SoftMask:
    """
    A batch of real masks in [0, 1], shape `(B, d)`, zero beyond each row's `valid_len`.
    """

    values: Tensor
    valid_len: np.ndarray

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(self.values)
        self.valid_len = np.asarray(self.valid_len, dtype=np.int64).reshape(-1)
        if self.values.ndim != 2 or self.values.shape[0] != self.valid_len.shape[0]:
            raise ValueError(
                f"mask of shape {self.values.shape} does not match {self.valid_len.shape[0]} rows"
            )

    @classmethod
    def from_values(cls, values: Sequence[float], valid_len: Optional[int] = None) -> "SoftMask":
        """A single-row mask; `valid_len` defaults to the full length."""
        row = np.asarray(values, dtype=np.float64).reshape(1, -1)
        return cls(Tensor(row), [row.shape[1] if valid_len is None else valid_len])

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return valid_positions(self.valid_len, self.length)

    def numpy(self) -> np.ndarray:
        return self.values.data.copy()

    def row(self, i: int) -> np.ndarray:
        """The valid entries of row `i`."""
        return self.values.data[i, : self.valid_len[i]].copy()

    def detach(self) -> "SoftMask":
        return SoftMask(self.values.detach(), self.valid_len)


@dataclass
class BinaryMask:
    """A batch of 0/1 masks, shape `(B, d)`, zero beyond each row's `valid_len`."""

    values: np.ndarray
    valid_len: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.int64))
        self.valid_len = np.asarray(self.valid_len, dtype=np.int64).reshape(-1)
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("binary masks hold only 0 and 1")
        if self.values.shape[0] != self.valid_len.shape[0]:
            raise ValueError(
                f"mask of shape {self.values.shape} does not match {self.valid_len.shape[0]} rows"
            )

    @classmethod
    def from_values(cls, values: Sequence[int], valid_len: Optional[int] = None) -> "BinaryMask":
        row = np.asarray(values, dtype=np.int64).reshape(1, -1)
        return cls(row, [row.shape[1] if valid_len is None else valid_len])

    def __len__(self) -> int:
        return self.values.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.values[i, : self.valid_len[i]].copy()

    def as_soft(self) -> SoftMask:
        return SoftMask(Tensor(self.values.astype(np.float64)), self.valid_len)


@dataclass
class ChunkSegmentation:
    """Maximal runs of one row of a binary mask as half-open `(start, end, important)` ranges."""

    chunks: List[Tuple[int, int, bool]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.chunks)

    def ranges(self, important: bool) -> List[Tuple[int, int]]:
        return [(s, e) for s, e, flag in self.chunks if flag == important]

    def lengths(self, important: bool) -> List[int]:
        return [e - s for s, e in self.ranges(important)]

    def to_list(self) -> List[List[int]]:
        return [[s, e, int(flag)] for s, e, flag in self.chunks]


def _check_stack(S: "MaskStack", y: "LabelAssignment") -> None:
    if len(y) != S.values.shape[0]:
        raise ValueError(f"{len(y)} label rows for a mask stack of {S.values.shape[0]} items")
    if y.total_classes != S.values.shape[-1]:
        raise ValueError(
            f"labels span {y.total_classes} classes but the mask stack has {S.values.shape[-1]}"
        )


def _true_column(S: "MaskStack", columns: np.ndarray) -> Tensor:
    """Gather one column per item: `columns` is `(B,)`, the result `(B, d)`."""
    batch, length, _ = S.values.shape
    index = np.broadcast_to(np.asarray(columns)[:, None, None], (batch, length, 1))
    return S.values.take_along_axis(index, axis=2).reshape(batch, length)


def true_columns(S: "MaskStack", y: "LabelAssignment") -> List[Tensor]:
    """Each head's true-class column, one `(B, d)` tensor per head."""
    _check_stack(S, y)
    columns = y.columns()
    return [_true_column(S, columns[:, h]) for h in range(columns.shape[1])]


def target_mask(S: "MaskStack", y: "LabelAssignment") -> SoftMask:
    """Elementwise maximum over the true-class columns of every head."""
    valid = valid_positions(S.valid_len, S.values.shape[1]).astype(np.float64)
    m = elementwise_max_reduce(true_columns(S, y))
    return SoftMask(m * valid, S.valid_len)


def nontarget_mask(S: "MaskStack", y: "LabelAssignment") -> SoftMask:
    """
    Elementwise maximum over every column that is not a true class.

    Raises:
        ValueError: when every column is a true class
    """
    _check_stack(S, y)
    if y.total_classes <= len(y.head_classes):
        raise ValueError("no non-target columns: every head has a single class")
    excluded = _EXCLUDED * y.true_indicator()[:, None, :]
    valid = valid_positions(S.valid_len, S.values.shape[1]).astype(np.float64)
    n = (S.values + excluded).max(axis=-1)
    return SoftMask(n * valid, S.valid_len)


def complement(m: SoftMask) -> SoftMask:
    """`1 - m` on valid positions; the padded tail stays 0."""
    valid = m.valid.astype(np.float64)
    return SoftMask((1.0 - m.values) * valid, m.valid_len)


def apply_mask(E: Tensor, m: Union[SoftMask, Tensor]) -> Tensor:
    """
    Scale each embedding row `E[..., i, :]` by its mask value.

    Raises:
        ValueError: when the mask does not cover exactly the rows of `E`

    Examples:
        >>> apply_mask(Tensor([[[2.0, 4.0]]]), SoftMask.from_values([0.25])).data.tolist()
        [[[0.5, 1.0]]]
    """
    values = m.values if isinstance(m, SoftMask) else m
    if not isinstance(values, Tensor):
        values = Tensor(values)
    if values.shape != E.shape[:-1]:
        raise ValueError(f"mask of shape {values.shape} for embeddings of shape {E.shape}")
    column = values.reshape(*values.shape, 1)
    return E * repeat_column(column, E.shape[-1])


def round_mask(m: SoftMask, threshold: float = DEFAULT_THRESHOLD) -> BinaryMask:
    """
    1 where the mask reaches `threshold`, else 0; padding stays 0.

    Raises:
        ValueError: when `threshold` is outside (0, 1)
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    rounded = (m.values.data >= threshold) & m.valid
    return BinaryMask(rounded.astype(np.int64), m.valid_len)


def segment_row(values: Sequence[int]) -> ChunkSegmentation:
    values = np.asarray(values)
    if values.size == 0:
        return ChunkSegmentation([])
    edges = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [values.size]])
    return ChunkSegmentation(
        [(int(s), int(e), bool(values[s])) for s, e in zip(starts, ends)]
    )


def segment_chunks(b: BinaryMask) -> List[ChunkSegmentation]:
    """Split every row's valid range into maximal runs of equal value."""
    return [segment_row(b.row(i)) for i in range(len(b))]


def export_masks(
    path: Union[str, Path],
    ids: Sequence[str],
    m: SoftMask,
    threshold: float = DEFAULT_THRESHOLD,
) -> Path:
    """Write one JSON line per item: `{id, mask, rounded, chunks}`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rounded = round_mask(m, threshold)
    segments = segment_chunks(rounded)
    with path.open("w", encoding="utf-8") as fh:
        for i, item_id in enumerate(ids):
            record = {
                "id": item_id,
                "mask": m.row(i).tolist(),
                "rounded": rounded.row(i).tolist(),
                "chunks": segments[i].to_list(),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    logger.info("wrote %d masks to %s", len(ids), path)
    return path
