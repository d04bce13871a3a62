"""
Module for registering and retrieving synthetic datasets from an inventory.

Examples:
    A synthetic dataset is defined by a factory function which collects its parameters and
    returns a `SyntheticDatasetCollection`:
    >>> import numpy as np
    >>> from wyr.data.dataset import Head, LabeledDataset
    >>> from wyr.data.tokenizer import Vocabulary, kmer_tokenize
    >>> from wyr.synthetic.utilities import (register, retrieve, describe,
    ...     SyntheticDatasetCollection)
    >>> from autora.variable import IV, DV, VariableCollection

    >>> def homopolymer(length=12, k=3):
    ...     \"\"\"Poly-A versus poly-C sequences.
    ...     Ground truth: every token carries the class.
    ...     Parameters:
    ...         length: bases per sequence
    ...         k: k-mer length
    ...     \"\"\"
    ...     vocabulary = Vocabulary(k=k)
    ...     params = dict(length=length, k=k)
    ...     variables = VariableCollection(
    ...         independent_variables=[IV(name="sequence")],
    ...         dependent_variables=[DV(name="base", allowed_values=np.arange(2))],
    ...     )
    ...
    ...     def run(n_per_class, random_state=None):
    ...         bases = ["A" * length] * n_per_class + ["C" * length] * n_per_class
    ...         return LabeledDataset(
    ...             sequences=[kmer_tokenize(b, vocabulary) for b in bases],
    ...             labels=[[0]] * n_per_class + [[1]] * n_per_class,
    ...             heads=[Head("base", 2)],
    ...             vocabulary=vocabulary,
    ...             bases=bases,
    ...         )
    ...
    ...     def ground_truth(dataset):
    ...         return [np.ones(len(s), dtype=int) for s in dataset.sequences]
    ...
    ...     return SyntheticDatasetCollection(
    ...         name="Homopolymer",
    ...         description=homopolymer.__doc__,
    ...         params=params,
    ...         variables=variables,
    ...         vocabulary=vocabulary,
    ...         run=run,
    ...         ground_truth=ground_truth,
    ...         factory_function=homopolymer,
    ...     )

    We register the function, rather than evaluating it:
    >>> register("homopolymer", homopolymer)

    When we want to retrieve the dataset, we can just use the default values if we like:
    >>> s = retrieve("homopolymer")
    >>> len(s.run(n_per_class=3))
    6

    We can retrieve the docstring using the `describe` function
    >>> print(describe(s))  # doctest: +ELLIPSIS
    Poly-A versus poly-C sequences.
        Ground truth: every token carries the class.
        ...

    ... or using its id:
    >>> print(describe("homopolymer"))  # doctest: +ELLIPSIS
    Poly-A versus poly-C sequences.
    ...

    If we need to modify the parameter values, we pass them as arguments to `retrieve`:
    >>> retrieve("homopolymer", length=6).params
    {'length': 6, 'k': 3}
"""


from __future__ import annotations

from collections import abc
from dataclasses import dataclass
from functools import singledispatch
from typing import Any, Callable, Dict, Optional

from autora.variable import VariableCollection

from wyr.data.tokenizer import Vocabulary


@dataclass(frozen=True)
class SyntheticDatasetCollection:
    """
    Represents a synthetic labelled-sequence dataset with known important tokens.

    Attributes:
        name: the name of the dataset
        description: what the dataset contains and how it was built
        params: a dictionary with the settable parameters and their respective values
        variables: a VariableCollection describing the sequence, labels and importance flags
        vocabulary: the tokeniser's vocabulary
        motif_spec: motifs, heads and sequence layout of a planted-motif dataset, when there is one
        run: a function which takes `n_per_class` and `random_state` and returns a
            `LabeledDataset`
        ground_truth: a function which takes a dataset and returns per-token importance flags
            recovered from the sequences themselves
        plotter: a function which plots how often each token position is important and,
            optionally, mean masks against it
    """

    name: Optional[str] = None
    description: Optional[str] = None
    params: Optional[Dict] = None
    variables: Optional[VariableCollection] = None
    vocabulary: Optional[Vocabulary] = None
    motif_spec: Optional[Any] = None
    run: Optional[Callable] = None
    ground_truth: Optional[Callable] = None
    plotter: Optional[Callable] = None
    factory_function: Optional[_SyntheticDatasetFactory] = None


_SyntheticDatasetFactory = Callable[..., SyntheticDatasetCollection]

Inventory: Dict[str, _SyntheticDatasetFactory] = dict()
""" The dictionary of `SyntheticDatasetCollection` factories. """


def register(id_: str, factory_function: _SyntheticDatasetFactory) -> None:
    """
    Add a new synthetic dataset to the Inventory.

    Parameters:
         id_: the unique id for the dataset.
         factory_function: a function which returns a SyntheticDatasetCollection
    """
    Inventory[id_] = factory_function


def retrieve(id_: str, **kwargs) -> SyntheticDatasetCollection:
    """
    Retrieve a synthetic dataset from the Inventory.

    Parameters:
        id_: the unique id for the dataset
        **kwargs: keyword arguments for the factory function
    Returns:
        the synthetic dataset collection
    Raises:
        KeyError: for an id that was never registered
    """
    if id_ not in Inventory:
        raise KeyError(f"unknown synthetic dataset {id_!r}; known: {sorted(Inventory)}")
    return Inventory[id_](**kwargs)


@singledispatch
def describe(arg):
    """
    Return the docstring for a synthetic dataset.

    Args:
        arg: the dataset's ID, an object returned from the `retrieve` function,
            or a factory_function which creates a new dataset.
    """
    raise NotImplementedError(f"{arg=} not yet supported")


@describe.register
def _(func: abc.Callable):
    return func.__doc__


@describe.register
def _(collection: SyntheticDatasetCollection):
    return collection.description


@describe.register
def _(id_: str):
    return describe(retrieve(id_))
