"""
FASTA and labels-CSV ingestion.

The labels CSV has a header row `id,<head1>,<head2>,...`. Class names per head are collected in
sorted order into the label dictionary; records without a complete label row, or shorter than one
k-mer, are skipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from wyr.data.dataset import Head, LabeledDataset
from wyr.data.tokenizer import Vocabulary, kmer_tokenize
from wyr.errors import FastaFormatError

logger = logging.getLogger(__name__)


@dataclass
class IngestReport:
    """Counts of what `load_fasta` kept and skipped."""

    loaded: int = 0
    skipped_ids: List[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.skipped_ids)


def read_fasta(path: Union[str, Path]) -> Iterator[Tuple[str, str]]:
    """
    Yield `(id, sequence)` pairs; the id is the header up to its first whitespace.

    Raises:
        FastaFormatError: for sequence lines before the first header, empty headers or duplicate ids
    """
    header: Optional[str] = None
    chunks: List[str] = []
    seen = set()
    with Path(path).open(encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(">"):
                if header is not None:
                    yield header, "".join(chunks)
                fields = line[1:].split()
                if not fields:
                    raise FastaFormatError(f"{path}:{number}: empty FASTA header")
                header = fields[0]
                if header in seen:
                    raise FastaFormatError(f"{path}:{number}: duplicate record id {header!r}")
                seen.add(header)
                chunks = []
            elif header is None:
                raise FastaFormatError(f"{path}:{number}: sequence data before the first header")
            else:
                chunks.append(line)
    if header is not None:
        yield header, "".join(chunks)


def load_fasta(
    fasta_path: Union[str, Path],
    labels_csv_path: Union[str, Path],
    vocab: Vocabulary,
    heads: Optional[Sequence[str]] = None,
) -> Tuple[LabeledDataset, IngestReport]:
    """
    Read sequences and their labels into a dataset.

    Args:
        fasta_path: FASTA file with `>id` headers
        labels_csv_path: CSV with an `id` column and one column per head
        vocab: the tokeniser's vocabulary
        heads: head columns to use, in order; all non-id columns when omitted

    Returns:
        the dataset and a report listing the ids that were skipped for lacking a label or
        a whole k-mer
    """
    table = pd.read_csv(labels_csv_path, dtype=str)
    if "id" not in table.columns:
        raise FastaFormatError(f"{labels_csv_path}: labels CSV needs an 'id' column")
    head_names = list(heads) if heads is not None else [c for c in table.columns if c != "id"]
    if not head_names:
        raise FastaFormatError(f"{labels_csv_path}: labels CSV has no head columns")
    missing = [h for h in head_names if h not in table.columns]
    if missing:
        raise FastaFormatError(f"{labels_csv_path}: missing head columns {missing}")

    table = table.drop_duplicates("id", keep="first").set_index("id")[head_names]
    complete = table.dropna()
    class_names = {h: tuple(sorted(complete[h].unique())) for h in head_names}
    head_list = [Head(h, len(class_names[h]), class_names[h]) for h in head_names]
    lookup = {h: {name: i for i, name in enumerate(class_names[h])} for h in head_names}

    report = IngestReport()
    sequences, labels, ids, bases = [], [], [], []
    for record_id, seq in read_fasta(fasta_path):
        if record_id not in complete.index:
            logger.warning("skipping %s: no complete label row", record_id)
            report.skipped_ids.append(record_id)
            continue
        seq = seq.upper()
        tokens = kmer_tokenize(seq, vocab)
        if tokens.valid_len == 0:
            logger.warning(
                "skipping %s: %d bases, shorter than one %d-mer", record_id, len(seq), vocab.k
            )
            report.skipped_ids.append(record_id)
            continue
        row = complete.loc[record_id]
        sequences.append(tokens)
        labels.append([lookup[h][row[h]] for h in head_names])
        ids.append(record_id)
        bases.append(seq)
    report.loaded = len(sequences)

    data = LabeledDataset(
        sequences=sequences,
        labels=np.asarray(labels, dtype=np.int64).reshape(len(sequences), len(head_list)),
        heads=head_list,
        vocabulary=vocab,
        ids=ids,
        bases=bases,
    )
    logger.info("loaded %d records from %s, skipped %d", report.loaded, fasta_path, report.skipped)
    return data, report
