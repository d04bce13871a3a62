"""
Non-overlapping k-mer tokenisation of nucleotide strings.

Examples:
    >>> from wyr.data.tokenizer import Vocabulary, kmer_tokenize, detokenize
    >>> vocab = Vocabulary(k=2)
    >>> vocab.size
    19
    >>> kmer_tokenize("ACGT", vocab).ids
    [4, 14]
    >>> kmer_tokenize("ACG", vocab).ids
    [4]
    >>> detokenize(kmer_tokenize("ACGTTT", vocab).ids, vocab)
    ['AC', 'GT', 'TT']

    A 1500-base sequence becomes 250 six-mers:
    >>> len(kmer_tokenize("ACGTAC" * 250, Vocabulary(k=6)).ids)
    250
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

PAD = 0
UNK = 1
CLS = 2
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]")


@dataclass(frozen=True)
class Vocabulary:
    """
    All k-mers over an ordered alphabet plus three special tokens.

    Attributes:
        k: k-mer length
        alphabet: ordered symbols; a k-mer's id is 3 plus its base-|alphabet| value
    """

    k: int = 3
    alphabet: str = "ACGT"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ValueError(
                f"alphabet must be non-empty with distinct symbols, got {self.alphabet!r}"
            )

    @property
    def size(self) -> int:
        return len(self.alphabet) ** self.k + len(SPECIAL_TOKENS)

    def token_id(self, kmer: str) -> int:
        if len(kmer) != self.k:
            raise ValueError(f"expected a {self.k}-mer, got {kmer!r}")
        value = 0
        base = len(self.alphabet)
        for char in kmer:
            index = self.alphabet.find(char)
            if index < 0:
                return UNK
            value = value * base + index
        return len(SPECIAL_TOKENS) + value

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise IndexError(f"token id {token_id} outside vocabulary of {self.size}")
        if token_id < len(SPECIAL_TOKENS):
            return SPECIAL_TOKENS[token_id]
        value = token_id - len(SPECIAL_TOKENS)
        base = len(self.alphabet)
        chars = []
        for _ in range(self.k):
            value, index = divmod(value, base)
            chars.append(self.alphabet[index])
        return "".join(reversed(chars))

    def to_dict(self) -> dict:
        return {"k": self.k, "alphabet": self.alphabet, "specials": list(SPECIAL_TOKENS)}

    def digest(self) -> str:
        """Stable identifier used to match checkpoints with datasets."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class TokenSequence:
    """Token ids of one sequence; ids beyond `valid_len` are padding."""

    ids: List[int]
    valid_len: int = field(default=-1)

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if self.valid_len < 0:
            self.valid_len = sum(1 for i in self.ids if i != PAD)
        if self.valid_len > len(self.ids):
            raise ValueError(f"valid_len {self.valid_len} exceeds {len(self.ids)} ids")

    def __len__(self) -> int:
        return self.valid_len

    @property
    def tokens(self) -> List[int]:
        return self.ids[: self.valid_len]


@dataclass
class TokenBatch:
    """A right-padded `(B, d)` batch of token ids."""

    ids: np.ndarray
    valid_len: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.valid_len = np.asarray(self.valid_len, dtype=np.int64)
        if self.ids.ndim != 2 or self.valid_len.shape != (self.ids.shape[0],):
            raise ValueError(f"ids {self.ids.shape} and valid_len {self.valid_len.shape} disagree")

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def length(self) -> int:
        return self.ids.shape[1]

    @classmethod
    def from_sequences(
        cls, sequences: Sequence[TokenSequence], min_length: int = 1
    ) -> "TokenBatch":
        width = max([min_length] + [s.valid_len for s in sequences])
        ids = np.full((len(sequences), width), PAD, dtype=np.int64)
        for row, seq in enumerate(sequences):
            ids[row, : seq.valid_len] = seq.tokens
        return cls(ids, np.array([s.valid_len for s in sequences], dtype=np.int64))

    def sequence(self, row: int) -> TokenSequence:
        n = int(self.valid_len[row])
        return TokenSequence(self.ids[row, :n].tolist(), n)


def as_batch(x: Union[TokenSequence, TokenBatch, Sequence[TokenSequence]]) -> TokenBatch:
    """Promote a single sequence or a list of sequences to a padded batch."""
    if isinstance(x, TokenBatch):
        return x
    if isinstance(x, TokenSequence):
        return TokenBatch.from_sequences([x])
    return TokenBatch.from_sequences(list(x))


def kmer_tokenize(seq: str, vocab: Vocabulary) -> TokenSequence:
    """
    Split a nucleotide string into consecutive, non-overlapping k-mers.

    The trailing remainder shorter than k is dropped; any k-mer containing a symbol outside the
    alphabet becomes UNK. Lower-case input is folded to upper case.

    Examples:
        >>> kmer_tokenize("", Vocabulary(k=2)).valid_len
        0
        >>> kmer_tokenize("ANGT", Vocabulary(k=2)).ids
        [1, 14]
    """
    seq = seq.upper()
    k = vocab.k
    ids = [vocab.token_id(seq[i : i + k]) for i in range(0, len(seq) - k + 1, k)]
    return TokenSequence(ids, len(ids))


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> List[str]:
    return [vocab.token(int(i)) for i in ids]
