"""Exception hierarchy shared by the data, model, training and command-line layers."""


class WyrError(Exception):
    """Base class for failures raised by this package."""


class FastaFormatError(WyrError):
    """A FASTA file could not be parsed."""


class CheckpointError(WyrError):
    """A checkpoint is missing, malformed or written by an unsupported version."""


class VocabularyMismatchError(WyrError):
    """A checkpoint and a dataset were built with different vocabularies."""


class FrozenParameterError(WyrError):
    """A parameter that must stay frozen was found trainable or was modified."""


class NonFiniteLossError(WyrError):
    """Training produced a NaN or infinite loss."""
