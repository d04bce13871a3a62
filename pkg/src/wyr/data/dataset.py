"""
Labelled token datasets, their JSON Lines persistence, stratified splitting and batching.

Examples:
    >>> from wyr.data.tokenizer import TokenSequence, Vocabulary
    >>> from wyr.data.dataset import Head, LabeledDataset, stratified_split
    >>> data = LabeledDataset(
    ...     sequences=[TokenSequence([4, 5, 6]) for _ in range(100)],
    ...     labels=[[i % 4] for i in range(100)],
    ...     heads=[Head("coarse", 4)],
    ...     vocabulary=Vocabulary(k=2),
    ... )
    >>> train, val, test = stratified_split(data, test_fraction=0.2, seed=0)
    >>> len(train), len(val), len(test)
    (80, 0, 20)
    >>> np.bincount(test.labels[:, 0]).tolist()
    [5, 5, 5, 5]
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from wyr.data.tokenizer import TokenBatch, TokenSequence, Vocabulary

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.jsonl"
LABELS_FILE = "labels.json"


@dataclass(frozen=True)
class Head:
    """One classification level: its name and class count, optionally with class names."""

    name: str
    classes: int
    class_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError(f"head {self.name!r} needs at least one class, got {self.classes}")
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
            if len(self.class_names) != self.classes:
                raise ValueError(
                    f"head {self.name!r}: {len(self.class_names)} names for {self.classes} classes"
                )

    def class_name(self, index: int) -> str:
        return self.class_names[index] if self.class_names else str(index)


@dataclass
class LabelAssignment:
    """
    True class per head for a batch of items.

    `columns()` maps each head's class to its column in a mask stack whose columns are all
    heads' classes concatenated in head order.

    Examples:
        >>> y = LabelAssignment([[1, 5]], head_classes=(4, 12))
        >>> y.columns().tolist()
        [[1, 9]]
        >>> LabelAssignment([[4]], head_classes=(4,))
        Traceback (most recent call last):
        ...
        IndexError: label 4 of head 0 outside [0, 4)
    """

    indices: np.ndarray
    head_classes: Tuple[int, ...]

    def __post_init__(self):
        self.indices = np.atleast_2d(np.asarray(self.indices, dtype=np.int64))
        self.head_classes = tuple(int(c) for c in self.head_classes)
        if self.indices.shape[1] != len(self.head_classes):
            raise ValueError(
                f"{self.indices.shape[1]} labels per item for {len(self.head_classes)} heads"
            )
        for head, count in enumerate(self.head_classes):
            column = self.indices[:, head]
            bad = column[(column < 0) | (column >= count)]
            if bad.size:
                raise IndexError(f"label {int(bad[0])} of head {head} outside [0, {count})")

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.head_classes)[:-1]]).astype(np.int64)

    @property
    def total_classes(self) -> int:
        return int(sum(self.head_classes))

    def columns(self) -> np.ndarray:
        return self.indices + self.offsets[None, :]

    def true_indicator(self) -> np.ndarray:
        """`(B, C)` array that is 1 on each item's true columns."""
        out = np.zeros((len(self), self.total_classes))
        np.put_along_axis(out, self.columns(), 1.0, axis=1)
        return out

    def __getitem__(self, index) -> "LabelAssignment":
        return LabelAssignment(self.indices[index], self.head_classes)


@dataclass
class Batch:
    tokens: TokenBatch
    labels: LabelAssignment
    index: np.ndarray
    flags: Optional[np.ndarray] = None


@dataclass
class LabeledDataset:
    """
    Token sequences with one label per head and, for synthetic data, per-token importance flags.

    Attributes:
        sequences: tokenised sequences
        labels: `(N, H)` class index per head
        heads: the classification heads
        vocabulary: the vocabulary the sequences were tokenised with
        flags: per-token 0/1 ground-truth importance, parallel to `sequences`
        ids: record identifiers
        bases: the nucleotide strings the tokens were cut from
    """

    sequences: List[TokenSequence]
    labels: np.ndarray
    heads: List[Head]
    vocabulary: Vocabulary
    flags: Optional[List[np.ndarray]] = None
    ids: List[str] = field(default_factory=list)
    bases: Optional[List[str]] = None

    def __post_init__(self):
        self.heads = list(self.heads)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(
            len(self.sequences), len(self.heads)
        )
        if not self.ids:
            self.ids = [f"seq{i:06d}" for i in range(len(self.sequences))]
        if len(self.ids) != len(self.sequences):
            raise ValueError(f"{len(self.ids)} ids for {len(self.sequences)} sequences")
        LabelAssignment(self.labels, self.head_classes)
        if self.flags is not None:
            self.flags = [np.asarray(f, dtype=np.int64) for f in self.flags]
            if len(self.flags) != len(self.sequences):
                raise ValueError(f"{len(self.flags)} flag rows for {len(self.sequences)} sequences")
            for seq, flag in zip(self.sequences, self.flags):
                if flag.shape != (seq.valid_len,):
                    raise ValueError(f"flags of length {flag.shape} for {seq.valid_len} tokens")
        if self.bases is not None and len(self.bases) != len(self.sequences):
            raise ValueError(f"{len(self.bases)} base strings for {len(self.sequences)} sequences")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def head_classes(self) -> Tuple[int, ...]:
        return tuple(h.classes for h in self.heads)

    @property
    def has_flags(self) -> bool:
        return self.flags is not None

    def label_assignment(self, index: Optional[np.ndarray] = None) -> LabelAssignment:
        labels = self.labels if index is None else self.labels[index]
        return LabelAssignment(labels, self.head_classes)

    def subset(self, index: Sequence[int]) -> "LabeledDataset":
        index = [int(i) for i in index]
        return LabeledDataset(
            sequences=[self.sequences[i] for i in index],
            labels=self.labels[index],
            heads=self.heads,
            vocabulary=self.vocabulary,
            flags=[self.flags[i] for i in index] if self.flags is not None else None,
            ids=[self.ids[i] for i in index],
            bases=[self.bases[i] for i in index] if self.bases is not None else None,
        )

    def batch(self, index: Sequence[int]) -> Batch:
        index = np.asarray(index, dtype=np.int64)
        tokens = TokenBatch.from_sequences([self.sequences[i] for i in index])
        flags = None
        if self.flags is not None:
            flags = np.zeros(tokens.ids.shape, dtype=np.int64)
            for row, i in enumerate(index):
                flags[row, : len(self.flags[i])] = self.flags[i]
        return Batch(tokens, self.label_assignment(index), index, flags)

    # ------------------------------------------------------------------ persistence
    def metadata(self) -> dict:
        return {
            "heads": [
                {"name": h.name, "classes": h.classes, "class_names": list(h.class_names or [])}
                for h in self.heads
            ],
            "vocabulary": self.vocabulary.to_dict(),
            "vocabulary_digest": self.vocabulary.digest(),
        }

    def save(self, directory: Union[str, Path]) -> Tuple[Path, Path]:
        """Write `dataset.jsonl` and the `labels.json` label dictionary into `directory`."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        records = directory / DATASET_FILE
        with records.open("w", encoding="utf-8") as fh:
            for i, seq in enumerate(self.sequences):
                record = {
                    "id": self.ids[i],
                    "ids": seq.tokens,
                    "valid_len": seq.valid_len,
                    "labels": self.labels[i].tolist(),
                }
                if self.flags is not None:
                    record["flags"] = self.flags[i].tolist()
                if self.bases is not None:
                    record["bases"] = self.bases[i]
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        labels = directory / LABELS_FILE
        labels.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        logger.info("wrote %d records to %s", len(self), records)
        return records, labels

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "LabeledDataset":
        directory = Path(directory)
        meta = json.loads((directory / LABELS_FILE).read_text())
        vocabulary = Vocabulary(k=meta["vocabulary"]["k"], alphabet=meta["vocabulary"]["alphabet"])
        heads = [
            Head(h["name"], h["classes"], tuple(h["class_names"]) or None) for h in meta["heads"]
        ]
        sequences, labels, flags, ids, bases = [], [], [], [], []
        with (directory / DATASET_FILE).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                sequences.append(TokenSequence(record["ids"], record["valid_len"]))
                labels.append(record["labels"])
                ids.append(record["id"])
                flags.append(record.get("flags"))
                bases.append(record.get("bases"))
        has_flags = bool(flags) and all(f is not None for f in flags)
        has_bases = bool(bases) and all(b is not None for b in bases)
        data = cls(
            sequences=sequences,
            labels=np.asarray(labels, dtype=np.int64).reshape(len(sequences), len(heads)),
            heads=heads,
            vocabulary=vocabulary,
            flags=flags if has_flags else None,
            ids=ids,
            bases=bases if has_bases else None,
        )
        logger.info("loaded %d records from %s", len(data), directory)
        return data


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(
    data: LabeledDataset,
    test_fraction: float,
    val_fraction: float = 0.0,
    seed: Optional[int] = None,
) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """
    Split into train, validation and test sets, preserving each label combination's share.

    Items are grouped by their full label tuple; each group is shuffled and cut so that every
    requested partition receives its rounded share, and at least one item.

    Raises:
        ValueError: when fractions are negative or sum to 1 or more, or when a label combination
            has fewer items than there are partitions
    """
    for name, value in (("test_fraction", test_fraction), ("val_fraction", val_fraction)):
        if value < 0:
            raise ValueError(f"{name} must be non-negative, got {value}")
    if test_fraction + val_fraction >= 1:
        raise ValueError(f"fractions must sum to less than 1, got {test_fraction + val_fraction}")

    partitions = 1 + (test_fraction > 0) + (val_fraction > 0)
    rng = np.random.default_rng(seed)
    groups: Dict[Tuple[int, ...], List[int]] = {}
    for i, row in enumerate(data.labels):
        groups.setdefault(tuple(row.tolist()), []).append(i)

    train, val, test = [], [], []
    for key in sorted(groups):
        members = np.asarray(groups[key])
        if len(members) < partitions:
            raise ValueError(
                f"label combination {key} has {len(members)} items, "
                f"fewer than {partitions} partitions"
            )
        members = members[rng.permutation(len(members))]
        n_test = max(1, _round_half_up(test_fraction * len(members))) if test_fraction else 0
        n_val = max(1, _round_half_up(val_fraction * len(members))) if val_fraction else 0
        while n_test + n_val > len(members) - 1:
            if n_val > 1 and n_val >= n_test:
                n_val -= 1
            else:
                n_test -= 1
        test.extend(members[:n_test])
        val.extend(members[n_test : n_test + n_val])
        train.extend(members[n_test + n_val :])

    logger.info("split %d items into %d/%d/%d", len(data), len(train), len(val), len(test))
    return data.subset(sorted(train)), data.subset(sorted(val)), data.subset(sorted(test))


def sample_subset(
    data: LabeledDataset, fraction: float, seed: Optional[int] = None
) -> LabeledDataset:
    """
    A seed-fixed random subset of `fraction` of the items, kept in original order.

    Examples:
        >>> from wyr.data.tokenizer import Vocabulary
        >>> data = LabeledDataset(
        ...     [TokenSequence([4])] * 10, [[0]] * 10, [Head("h", 2)], Vocabulary(k=2)
        ... )
        >>> len(sample_subset(data, 0.3, seed=1))
        3
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return data
    count = max(1, _round_half_up(fraction * len(data)))
    chosen = np.random.default_rng(seed).choice(len(data), size=count, replace=False)
    return data.subset(sorted(chosen.tolist()))


def iter_batches(
    data: LabeledDataset,
    batch_size: int,
    shuffle: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[Batch]:
    """Yield batches padded to the longest sequence in each batch."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    order = np.arange(len(data))
    if shuffle:
        order = (rng if rng is not None else np.random.default_rng()).permutation(len(data))
    for start in range(0, len(data), batch_size):
        yield data.batch(order[start : start + batch_size])
