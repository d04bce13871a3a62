"""
Planted-motif sequences: random background with class-specific motifs at known token positions.

Every head-class owns one or more motifs. A sequence labelled `(c_1, ..., c_H)` carries the
motifs of each `(head, c_h)` at token-aligned, non-overlapping positions, and its importance
flags are 1 exactly on those tokens.

Examples:
    >>> from wyr.synthetic.genomics.planted_motif import planted_motif
    >>> s = planted_motif()
    >>> s.name
    'Planted Motif'
    >>> s.vocabulary.size
    67
    >>> [(h.name, h.classes) for h in s.motif_spec.heads]
    [('coarse', 4), ('fine', 12)]

    Every sequence gets one coarse and one fine motif of six tokens each:
    >>> data = s.run(n_per_class=2, random_state=7)
    >>> len(data), int(data.flags[0].sum())
    (24, 12)

    Fine classes are nested three to a coarse class:
    >>> data.labels[:6].tolist()
    [[0, 0], [0, 0], [0, 1], [0, 1], [0, 2], [0, 2]]

    Re-scanning the bases recovers the recorded flags:
    >>> all((a == b).all() for a, b in zip(s.ground_truth(data), data.flags))
    True

    >>> s.plotter(data)  # doctest: +SKIP
    >>> plt.show()  # doctest: +SKIP
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autora.variable import DV, IV, ValueType, VariableCollection
from wyr.data.dataset import Head, LabeledDataset
from wyr.data.tokenizer import Vocabulary, kmer_tokenize
from wyr.synthetic.utilities import SyntheticDatasetCollection, register

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class MotifSpec:
    """
    How planted-motif sequences are built.

    Attributes:
        heads: the classification heads; every head's class count must divide the last head's
        motifs: `motifs[h][c]` is the tuple of motif strings planted for class `c` of head `h`
        sequence_length: bases per sequence
        k: k-mer length; every motif length is a multiple of it
        alphabet: the nucleotide symbols
        background: sampling probability of each alphabet symbol; uniform when omitted
        copies: how often each motif is planted per sequence
    """

    heads: Tuple[Head, ...]
    motifs: Tuple[Tuple[Tuple[str, ...], ...], ...]
    sequence_length: int = 192
    k: int = 3
    alphabet: str = "ACGT"
    background: Optional[Tuple[float, ...]] = None
    copies: int = 1

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(
            self, "motifs", tuple(tuple(tuple(m) for m in head) for head in self.motifs)
        )
        if len(self.motifs) != len(self.heads):
            raise ValueError(f"{len(self.motifs)} motif groups for {len(self.heads)} heads")
        finest = self.heads[-1].classes
        for head, group in zip(self.heads, self.motifs):
            if head.classes < 2:
                raise ValueError(f"head {head.name!r} needs at least 2 classes, got {head.classes}")
            if finest % head.classes:
                raise ValueError(
                    f"head {head.name!r} has {head.classes} classes, which do not divide {finest}"
                )
            if len(group) != head.classes:
                raise ValueError(
                    f"head {head.name!r}: {len(group)} motif sets for {head.classes} classes"
                )
        everything = [m for group in self.motifs for ms in group for m in ms]
        if len(set(everything)) != len(everything):
            raise ValueError("motifs must be pairwise distinct")
        for motif in everything:
            if not motif or len(motif) % self.k:
                raise ValueError(f"motif {motif!r} is not a multiple of k={self.k} bases long")
            if set(motif) - set(self.alphabet):
                raise ValueError(f"motif {motif!r} uses symbols outside {self.alphabet!r}")
        if self.copies < 1:
            raise ValueError(f"copies must be at least 1, got {self.copies}")
        if self.background is not None:
            p = np.asarray(self.background, dtype=float)
            if p.shape != (len(self.alphabet),) or np.any(p < 0) or not np.isclose(p.sum(), 1):
                raise ValueError(f"background must be a distribution over {self.alphabet!r}")
        longest = max(self.planted_tokens(labels) for labels in self.label_table())
        if longest > self.tokens:
            raise ValueError(
                f"motifs need {longest} tokens but sequences only have {self.tokens}"
            )

    @property
    def tokens(self) -> int:
        return self.sequence_length // self.k

    def label_table(self) -> np.ndarray:
        """One row per finest class: the label of every head, coarse heads derived by nesting."""
        finest = self.heads[-1].classes
        fine = np.arange(finest)
        return np.stack([fine // (finest // h.classes) for h in self.heads], axis=1)

    def motifs_for(self, labels: Sequence[int]) -> List[str]:
        return [m for h, c in enumerate(labels) for m in self.motifs[h][int(c)]] * self.copies

    def planted_tokens(self, labels: Sequence[int]) -> int:
        return sum(len(m) // self.k for m in self.motifs_for(labels))

    def all_motifs(self) -> List[str]:
        return [m for group in self.motifs for ms in group for m in ms]


def random_motifs(
    heads: Sequence[Head],
    motif_tokens: int,
    k: int,
    alphabet: str = "ACGT",
    per_class: int = 1,
    seed: Optional[int] = 0,
) -> Tuple[Tuple[Tuple[str, ...], ...], ...]:
    """Draw pairwise-distinct random motifs of `motif_tokens * k` bases for every head-class."""
    rng = np.random.default_rng(seed)
    seen = set()
    groups = []
    for head in heads:
        group = []
        for _ in range(head.classes):
            motifs = []
            while len(motifs) < per_class:
                motif = "".join(rng.choice(list(alphabet), size=motif_tokens * k))
                if motif not in seen:
                    seen.add(motif)
                    motifs.append(motif)
            group.append(tuple(motifs))
        groups.append(tuple(group))
    return tuple(groups)


def scan_motifs(bases: str, motifs: Sequence[str], k: int) -> np.ndarray:
    """
    Flag every token covered by an occurrence of any motif starting at a token boundary.

    Examples:
        >>> scan_motifs("AAACCCGGGAAA", ["CCCGGG"], 3).tolist()
        [0, 1, 1, 0]
        >>> scan_motifs("ACCCGG", ["CCCGGG"], 3).tolist()
        [0, 0]
    """
    tokens = len(bases) // k
    flags = np.zeros(tokens, dtype=np.int64)
    for start in range(tokens):
        offset = start * k
        for motif in motifs:
            if bases.startswith(motif, offset) and offset + len(motif) <= tokens * k:
                flags[start : start + len(motif) // k] = 1
    return flags


def _place(lengths: Sequence[int], tokens: int, rng: np.random.Generator) -> List[int]:
    """Uniformly random non-overlapping token start positions for blocks of `lengths` tokens."""
    free = tokens - sum(lengths)
    slots = np.sort(rng.choice(free + len(lengths), size=len(lengths), replace=False))
    starts, used = [], 0
    for j, (slot, length) in enumerate(zip(slots, lengths)):
        starts.append(int(slot) - j + used)
        used += length
    return starts


def _sample_sequence(
    spec: MotifSpec, labels: Sequence[int], rng: np.random.Generator
) -> Tuple[str, np.ndarray]:
    motifs = spec.motifs_for(labels)
    order = rng.permutation(len(motifs))
    motifs = [motifs[i] for i in order]
    everything = spec.all_motifs()
    symbols = np.array(list(spec.alphabet))
    for _ in range(MAX_ATTEMPTS):
        chars = rng.choice(symbols, size=spec.sequence_length, p=spec.background)
        flags = np.zeros(spec.tokens, dtype=np.int64)
        starts = _place([len(m) // spec.k for m in motifs], spec.tokens, rng)
        for motif, start in zip(motifs, starts):
            chars[start * spec.k : start * spec.k + len(motif)] = list(motif)
            flags[start : start + len(motif) // spec.k] = 1
        bases = "".join(chars)
        if np.array_equal(scan_motifs(bases, everything, spec.k), flags):
            return bases, flags
    raise RuntimeError(f"could not avoid spurious motif occurrences in {MAX_ATTEMPTS} attempts")


def generate_motif_dataset(
    spec: MotifSpec, n_per_class: int, seed: Optional[int] = None
) -> LabeledDataset:
    """
    Generate a class-balanced dataset of `n_per_class` sequences per finest class.

    Background draws that happen to contain any motif outside the planted positions are
    redrawn, so the flags are exactly the tokens where a motif occurs.

    Raises:
        ValueError: for `n_per_class < 1`; invalid specs fail when the `MotifSpec` is built
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be at least 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    vocabulary = Vocabulary(k=spec.k, alphabet=spec.alphabet)
    sequences, labels, flags, bases = [], [], [], []
    for row in spec.label_table():
        for _ in range(n_per_class):
            seq, flag = _sample_sequence(spec, row, rng)
            bases.append(seq)
            sequences.append(kmer_tokenize(seq, vocabulary))
            labels.append(row.tolist())
            flags.append(flag)
    logger.info(
        "generated %d planted-motif sequences of %d tokens", len(sequences), spec.tokens
    )
    return LabeledDataset(
        sequences=sequences,
        labels=labels,
        heads=list(spec.heads),
        vocabulary=vocabulary,
        flags=flags,
        bases=bases,
    )


def _variables(spec: MotifSpec) -> VariableCollection:
    sequence = IV(
        name="sequence",
        variable_label="Nucleotide sequence",
        units="bases",
    )
    label_variables = [
        DV(
            name=head.name,
            allowed_values=np.arange(head.classes),
            value_range=(0, head.classes - 1),
            variable_label=f"{head.name.capitalize()} class",
        )
        for head in spec.heads
    ]
    importance = DV(
        name="importance",
        value_range=(0, 1),
        allowed_values=np.array([0, 1]),
        variable_label="Token lies inside a planted motif",
        type=ValueType.PROBABILITY_SAMPLE,
    )
    return VariableCollection(
        independent_variables=[sequence],
        dependent_variables=label_variables + [importance],
    )


def _collection(
    name: str,
    spec: MotifSpec,
    params: Dict,
    factory_function,
    description: Optional[str],
) -> SyntheticDatasetCollection:
    vocabulary = Vocabulary(k=spec.k, alphabet=spec.alphabet)

    def run(n_per_class: int = 100, random_state: Optional[int] = None) -> LabeledDataset:
        return generate_motif_dataset(spec, n_per_class, seed=random_state)

    def ground_truth(dataset: LabeledDataset) -> List[np.ndarray]:
        """Flags recovered by re-scanning each sequence for its own classes' motifs."""
        if dataset.bases is None:
            raise ValueError("ground truth needs the nucleotide strings of the dataset")
        return [
            scan_motifs(b, spec.motifs_for(row), spec.k)
            for b, row in zip(dataset.bases, dataset.labels)
        ]

    def plotter(dataset: Optional[LabeledDataset] = None, masks=None):
        """Plot where motifs sit along the sequence and, optionally, the mean mask there."""
        import matplotlib.pyplot as plt

        if dataset is None:
            dataset = run(n_per_class=20, random_state=0)
        plt.figure()
        profile = np.mean(np.stack([f.astype(float) for f in dataset.flags]), axis=0)
        plt.plot(np.arange(len(profile)), profile, label="Motif frequency")
        if masks is not None:
            mean_mask = np.mean(np.stack([np.asarray(m, dtype=float) for m in masks]), axis=0)
            plt.plot(np.arange(len(mean_mask)), mean_mask, label="Mean mask")
        plt.xlabel("Token position")
        plt.ylabel("Fraction")
        plt.ylim(0, 1)
        plt.legend()
        plt.title(name)

    return SyntheticDatasetCollection(
        name=name,
        description=description,
        params=params,
        variables=_variables(spec),
        vocabulary=vocabulary,
        motif_spec=spec,
        run=run,
        ground_truth=ground_truth,
        plotter=plotter,
        factory_function=factory_function,
    )


def planted_motif(
    name: str = "Planted Motif",
    k: int = 3,
    sequence_length: int = 192,
    coarse_classes: int = 4,
    fine_classes: int = 12,
    motif_tokens: int = 6,
    motifs_per_class: int = 1,
    copies: int = 1,
    background: Optional[Tuple[float, ...]] = None,
    motif_seed: int = 0,
):
    """
    Two-level planted-motif sequences with nested labels.

    Ground truth: each sequence carries one motif for its coarse class and one for its fine
    class; the tokens covered by them are the important ones.

    Parameters:
        name: name of the dataset
        k: k-mer length of the tokeniser
        sequence_length: bases per sequence
        coarse_classes: classes of the coarse head
        fine_classes: classes of the fine head, nested evenly inside the coarse classes
        motif_tokens: motif length in tokens
        motifs_per_class: alternative motifs per class, all planted
        copies: plantings of each motif per sequence
        background: symbol probabilities of the background; uniform when omitted
        motif_seed: seed of the random motif draw
    """
    params = dict(
        name=name,
        k=k,
        sequence_length=sequence_length,
        coarse_classes=coarse_classes,
        fine_classes=fine_classes,
        motif_tokens=motif_tokens,
        motifs_per_class=motifs_per_class,
        copies=copies,
        background=background,
        motif_seed=motif_seed,
    )
    heads = (Head("coarse", coarse_classes), Head("fine", fine_classes))
    spec = MotifSpec(
        heads=heads,
        motifs=random_motifs(heads, motif_tokens, k, per_class=motifs_per_class, seed=motif_seed),
        sequence_length=sequence_length,
        k=k,
        background=background,
        copies=copies,
    )
    return _collection(name, spec, params, planted_motif, planted_motif.__doc__)


def planted_motif_flat(
    name: str = "Planted Motif (single head)",
    k: int = 3,
    sequence_length: int = 192,
    classes: int = 4,
    motif_tokens: int = 6,
    copies: int = 1,
    motif_seed: int = 0,
):
    """
    Single-head planted-motif sequences.

    Ground truth: each sequence carries its class motif `copies` times.

    Parameters:
        name: name of the dataset
        k: k-mer length of the tokeniser
        sequence_length: bases per sequence
        classes: number of classes
        motif_tokens: motif length in tokens
        copies: plantings of the motif per sequence
        motif_seed: seed of the random motif draw
    """
    params = dict(
        name=name,
        k=k,
        sequence_length=sequence_length,
        classes=classes,
        motif_tokens=motif_tokens,
        copies=copies,
        motif_seed=motif_seed,
    )
    heads = (Head("class", classes),)
    spec = MotifSpec(
        heads=heads,
        motifs=random_motifs(heads, motif_tokens, k, seed=motif_seed),
        sequence_length=sequence_length,
        k=k,
        copies=copies,
    )
    return _collection(name, spec, params, planted_motif_flat, planted_motif_flat.__doc__)


register("planted_motif", planted_motif)
register("planted_motif_flat", planted_motif_flat)
