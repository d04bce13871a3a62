import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wyr.data.dataset import Head
from wyr.synthetic.genomics.planted_motif import (
    MotifSpec,
    generate_motif_dataset,
    planted_motif,
    planted_motif_flat,
    scan_motifs,
)
from wyr.synthetic.utilities import describe, register, retrieve

all_bundled_datasets = [
    ("planted_motif", planted_motif),
    ("planted_motif_flat", planted_motif_flat),
]

all_bundled_dataset_names = [b[0] for b in all_bundled_datasets]

for name, func in all_bundled_datasets:
    register(name, func)


@given(name=st.sampled_from(all_bundled_dataset_names))
def test_bundled_datasets_can_be_retrieved_by_name(name):
    collection = retrieve(name)
    assert collection is not None


@given(name=st.sampled_from(all_bundled_dataset_names))
def test_bundled_datasets_can_be_described_by_name(name):
    description = describe(name)
    assert isinstance(description, str)


@given(name=st.sampled_from(all_bundled_dataset_names))
def test_bundled_datasets_can_be_described_by_collection(name):
    collection = retrieve(name)
    description = describe(collection)
    assert isinstance(description, str)


@given(name=st.sampled_from(all_bundled_dataset_names))
def test_bundled_datasets_can_be_described_by_factory(name):
    collection = retrieve(name)
    description = describe(collection.factory_function)
    assert isinstance(description, str)


@settings(max_examples=5, deadline=None)
@given(
    name=st.sampled_from(all_bundled_dataset_names),
    seed=st.integers(min_value=0, max_value=2**16),
)
def test_bundled_datasets_are_balanced_and_flagged(name, seed):
    collection = retrieve(name, sequence_length=96)
    data = collection.run(n_per_class=2, random_state=seed)
    spec = collection.motif_spec
    finest = spec.heads[-1].classes

    assert len(data) == 2 * finest
    assert np.bincount(data.labels[:, -1]).tolist() == [2] * finest
    for seq, flags, row in zip(data.sequences, data.flags, data.labels):
        assert seq.valid_len == 32
        assert int(flags.sum()) == spec.planted_tokens(row)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**16))
def test_ground_truth_matches_generated_flags(seed):
    collection = retrieve("planted_motif", sequence_length=96, coarse_classes=2, fine_classes=4)
    data = collection.run(n_per_class=3, random_state=seed)
    recovered = collection.ground_truth(data)
    assert all(np.array_equal(a, b) for a, b in zip(recovered, data.flags))


def test_same_seed_gives_identical_datasets():
    collection = retrieve("planted_motif_flat", sequence_length=60, classes=3)
    first = collection.run(n_per_class=4, random_state=11)
    second = collection.run(n_per_class=4, random_state=11)
    assert first.bases == second.bases
    assert np.array_equal(first.labels, second.labels)


def test_coarse_labels_nest_fine_labels():
    data = retrieve("planted_motif").run(n_per_class=1, random_state=0)
    assert np.array_equal(data.labels[:, 0], data.labels[:, 1] // 3)


def test_no_motif_outside_planted_positions():
    collection = retrieve("planted_motif_flat", sequence_length=60, classes=2, motif_tokens=2)
    spec = collection.motif_spec
    data = collection.run(n_per_class=10, random_state=3)
    for bases, flags in zip(data.bases, data.flags):
        assert np.array_equal(scan_motifs(bases, spec.all_motifs(), spec.k), flags)


def test_parameters_are_recorded():
    collection = retrieve("planted_motif", motif_tokens=4)
    assert collection.params["motif_tokens"] == 4
    assert all(len(m) == 12 for m in collection.motif_spec.all_motifs())


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(motifs=((("AAA",), ("AAA",)),)),
        dict(motifs=((("AA",), ("CCC",)),)),
        dict(motifs=((("AAA",), ("CCC",)),), sequence_length=2),
        dict(motifs=((("AAA",), ("CCC",)),), copies=0),
        dict(motifs=((("AAA",), ("CCC",)),), background=(0.5, 0.5)),
    ],
)
def test_invalid_motif_specs_are_rejected(kwargs):
    with pytest.raises(ValueError):
        MotifSpec(heads=(Head("class", 2),), **kwargs)


def test_coarse_head_must_divide_fine_head():
    with pytest.raises(ValueError):
        retrieve("planted_motif", coarse_classes=5, fine_classes=12)


def test_generate_motif_dataset_from_a_hand_built_spec():
    spec = MotifSpec(
        heads=(Head("class", 2),),
        motifs=((("AAACCC",), ("GGGTTT",)),),
        sequence_length=18,
        k=3,
    )
    data = generate_motif_dataset(spec, n_per_class=3, seed=5)
    assert len(data) == 6
    assert data.labels[:, 0].tolist() == [0, 0, 0, 1, 1, 1]
    for bases, flags, row in zip(data.bases, data.flags, data.labels):
        assert len(bases) == 18
        assert ("AAACCC", "GGGTTT")[row[0]] in bases
        assert int(flags.sum()) == 2
    again = generate_motif_dataset(spec, n_per_class=3, seed=5)
    assert again.bases == data.bases
    with pytest.raises(ValueError):
        generate_motif_dataset(spec, n_per_class=0)


def test_plotter_draws_motif_frequency_and_mean_mask():
    matplotlib = pytest.importorskip("matplotlib")
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    collection = retrieve("planted_motif_flat", sequence_length=30, classes=2, motif_tokens=2)
    data = collection.run(n_per_class=3, random_state=1)
    masks = [np.full(len(f), 0.5) for f in data.flags]
    collection.plotter(data, masks)
    labels = [line.get_label() for line in plt.gca().get_lines()]
    assert labels == ["Motif frequency", "Mean mask"]
    plt.close("all")
