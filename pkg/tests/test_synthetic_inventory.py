import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from wyr.synthetic.utilities import (
    SyntheticDatasetCollection,
    describe,
    register,
    retrieve,
)


@given(st.text())
def test_dataset_registration_retrieval_allows_any_string(name):
    collection = SyntheticDatasetCollection()
    register(name, lambda: collection)

    retrieved = retrieve(name)

    assert retrieved is collection


@given(st.text(), st.text())
def test_dataset_registration_retrieval_dont_collide_with_two_datasets(name1, name2):
    # We can register a dataset and retrieve it
    assume(name1 != name2)

    collection1 = SyntheticDatasetCollection()
    collection2 = SyntheticDatasetCollection()
    register(name1, lambda: collection1)
    retrieved1 = retrieve(name1)
    assert retrieved1 is collection1

    # We can register another dataset and retrieve it as well
    register(name2, lambda: collection2)
    retrieved2 = retrieve(name2)
    assert retrieved2 is collection2

    # We can still retrieve the first dataset, and it is equal to the first version
    retrieved3 = retrieve(name1)
    assert retrieved3 is collection1


def test_unknown_dataset_raises_key_error():
    with pytest.raises(KeyError):
        retrieve("no-such-dataset-registered-anywhere")


def test_describe_reads_the_collection_description():
    register("described", lambda: SyntheticDatasetCollection(description="two classes"))
    assert describe("described") == "two classes"
    assert describe(retrieve("described")) == "two classes"
