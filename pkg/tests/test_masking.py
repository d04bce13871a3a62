import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wyr.autodiff.tensor import Tensor
from wyr.data.dataset import LabelAssignment
from wyr.masking import (
    BinaryMask,
    SoftMask,
    apply_mask,
    complement,
    export_masks,
    nontarget_mask,
    round_mask,
    segment_chunks,
    target_mask,
)
from wyr.models.explainer import MaskStack

unit_floats = st.floats(min_value=0.0, max_value=1.0)


def stack(columns, valid_len, head_classes, requires_grad=False):
    """Build a one-item mask stack from per-class columns."""
    values = np.stack([np.asarray(c, dtype=float) for c in columns], axis=-1)[None]
    return MaskStack(Tensor(values, requires_grad=requires_grad), [valid_len], head_classes)


def test_target_mask_is_the_max_of_true_columns():
    S = stack([[0.2, 0.9], [0.0, 0.0], [0.0, 0.0], [0.5, 0.1]], 2, (2, 2))
    y = LabelAssignment([[0, 1]], head_classes=(2, 2))
    assert target_mask(S, y).values.data.tolist() == [[0.5, 0.9]]


def test_single_head_target_mask_is_the_true_column():
    S = stack([[0.3, 0.6, 0.7], [0.1, 0.2, 0.9]], 3, (2,))
    y = LabelAssignment([[1]], head_classes=(2,))
    assert target_mask(S, y).values.data.tolist() == [[0.1, 0.2, 0.9]]
    assert nontarget_mask(S, y).values.data.tolist() == [[0.3, 0.6, 0.7]]


def test_padding_is_zero_in_target_and_nontarget_masks():
    S = stack([[0.3, 0.6, 0.7], [0.1, 0.2, 0.9]], 2, (2,))
    y = LabelAssignment([[0]], head_classes=(2,))
    assert target_mask(S, y).values.data[0, 2] == 0.0
    assert nontarget_mask(S, y).values.data[0, 2] == 0.0


def test_nontarget_mask_is_the_max_of_other_columns():
    S = stack([[0.9, 0.9], [0.1, 0.8], [0.4, 0.2]], 2, (3,))
    y = LabelAssignment([[0]], head_classes=(3,))
    assert nontarget_mask(S, y).values.data.tolist() == [[0.4, 0.8]]


def test_nontarget_mask_needs_a_non_true_column():
    S = stack([[0.5, 0.5], [0.5, 0.5]], 2, (1, 1))
    y = LabelAssignment([[0, 0]], head_classes=(1, 1))
    with pytest.raises(ValueError):
        nontarget_mask(S, y)


def test_label_rows_must_match_the_stack():
    S = stack([[0.5], [0.5]], 1, (2,))
    with pytest.raises(ValueError):
        target_mask(S, LabelAssignment([[0], [1]], head_classes=(2,)))
    with pytest.raises(ValueError):
        target_mask(S, LabelAssignment([[0]], head_classes=(3,)))


def test_true_and_other_columns_feed_disjoint_masks():
    rng = np.random.default_rng(0)
    S = stack(rng.uniform(size=(5, 4)), 4, (2, 3), requires_grad=True)
    y = LabelAssignment([[1, 2]], head_classes=(2, 3))
    true = y.true_indicator()[0].astype(bool)

    target_mask(S, y).values.sum().backward()
    touched_by_m = np.abs(S.values.grad[0]).sum(axis=0) > 0
    S.values.zero_grad()
    nontarget_mask(S, y).values.sum().backward()
    touched_by_n = np.abs(S.values.grad[0]).sum(axis=0) > 0

    assert not np.any(touched_by_m & ~true)
    assert not np.any(touched_by_n & true)


def test_complement():
    m = SoftMask.from_values([0.25, 1.0])
    assert complement(m).values.data.tolist() == [[0.75, 0.0]]
    assert complement(SoftMask.from_values(np.ones(3))).values.data.tolist() == [[0.0] * 3]
    padded = SoftMask(Tensor([[0.25, 0.5, 0.0]]), [2])
    assert complement(padded).values.data.tolist() == [[0.75, 0.5, 0.0]]


@given(st.lists(unit_floats, min_size=1, max_size=20))
def test_complement_twice_is_identity(values):
    m = SoftMask.from_values(values)
    np.testing.assert_allclose(complement(complement(m)).values.data, m.values.data, atol=1e-12)


def test_apply_mask_scales_rows_without_turning_them():
    E = Tensor([[[2.0, 4.0], [1.0, -3.0], [5.0, 5.0]]])
    out = apply_mask(E, SoftMask.from_values([0.25, 1.0, 0.0])).data[0]
    assert out.tolist() == [[0.5, 1.0], [1.0, -3.0], [0.0, 0.0]]
    cosine = out[0] @ E.data[0, 0] / (np.linalg.norm(out[0]) * np.linalg.norm(E.data[0, 0]))
    assert cosine == pytest.approx(1.0)


def test_apply_all_ones_mask_is_exact():
    E = Tensor(np.random.default_rng(3).normal(size=(1, 4, 3)))
    assert np.array_equal(apply_mask(E, SoftMask.from_values(np.ones(4))).data, E.data)


def test_apply_mask_length_mismatch():
    with pytest.raises(ValueError):
        apply_mask(Tensor(np.ones((1, 3, 2))), SoftMask.from_values([1.0, 1.0]))


@given(
    st.lists(unit_floats, min_size=1, max_size=20),
    st.floats(min_value=0.01, max_value=0.99),
)
def test_round_mask_is_the_threshold_indicator(values, threshold):
    rounded = round_mask(SoftMask.from_values(values), threshold)
    assert rounded.values[0].tolist() == [int(v >= threshold) for v in values]


@pytest.mark.parametrize("threshold", [0.0, 1.0, -0.5])
def test_round_mask_threshold_range(threshold):
    with pytest.raises(ValueError):
        round_mask(SoftMask.from_values([0.5]), threshold)


def test_binary_masks_hold_only_zero_and_one():
    with pytest.raises(ValueError):
        BinaryMask.from_values([0, 2])


@given(st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=30))
def test_chunks_are_sorted_exhaustive_and_alternate(values):
    (segmentation,) = segment_chunks(BinaryMask.from_values(values))
    chunks = segmentation.chunks
    assert chunks[0][0] == 0
    assert chunks[-1][1] == len(values)
    for (_, end, flag), (start, _, next_flag) in zip(chunks, chunks[1:]):
        assert end == start
        assert flag != next_flag
    for start, end, flag in chunks:
        assert start < end
        assert set(values[start:end]) == {int(flag)}


def test_segment_examples():
    assert segment_chunks(BinaryMask.from_values([1, 1, 1]))[0].chunks == [(0, 3, True)]
    assert len(segment_chunks(BinaryMask.from_values([1, 0, 1, 0]))[0]) == 4
    (padded,) = segment_chunks(BinaryMask([[1, 0, 0]], [1]))
    assert padded.chunks == [(0, 1, True)]


def test_export_masks(tmp_path):
    m = SoftMask(Tensor([[0.9, 0.2, 0.7], [0.1, 0.6, 0.0]]), [3, 2])
    path = export_masks(tmp_path / "masks.jsonl", ["a", "b"], m)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["id"] for r in records] == ["a", "b"]
    assert records[0]["rounded"] == [1, 0, 1]
    assert records[0]["chunks"] == [[0, 1, 1], [1, 2, 0], [2, 3, 1]]
    assert records[1]["mask"] == [0.1, 0.6]
