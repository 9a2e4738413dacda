import numpy as np
import pytest
from hypothesis import given, strategies as st

from salesfc.errors import EmptyPartitionError
from salesfc.panel import FeatureMatrix, SplitSpec, clip_target, split_rows


def matrix_for_blocks(blocks):
    blocks = np.asarray(blocks)
    n = len(blocks)
    return FeatureMatrix(
        ("a", "b"),
        np.arange(2 * n, dtype=float).reshape(n, 2),
        np.arange(n, dtype=float),
        blocks,
        np.column_stack([np.arange(n), np.arange(n) + 100]),
    )


@pytest.mark.parametrize("x, expected", [(25, 20), (-3, 0), (7.5, 7.5)])
def test_clip_target_examples(x, expected):
    assert clip_target(x, 0, 20) == expected


def test_clip_target_arrays_and_reversed_bounds():
    np.testing.assert_array_equal(clip_target(np.array([-1.0, 3.0, 99.0])), [0.0, 3.0, 20.0])
    with pytest.raises(ValueError):
        clip_target(1.0, 5, 4)


@given(st.floats(allow_nan=False, allow_infinity=False, width=64),
       st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_clip_idempotent(x, lo, width):
    hi = lo + width
    once = clip_target(x, lo, hi)
    assert clip_target(once, lo, hi) == once
    assert lo <= once <= hi


def test_split_rows_partitions_by_block():
    m = matrix_for_blocks([30, 31, 32, 33, 34, 30, 33])
    train, val, test = split_rows(m, SplitSpec(range(0, 33), 33, 34))
    assert set(train.date_block) == {30, 31, 32}
    assert list(train.target) == [0, 1, 2, 5]  # order preserved
    assert set(val.date_block) == {33} and val.n_rows == 2
    assert set(test.date_block) == {34}


def test_split_spec_rejects_bad_order():
    with pytest.raises(ValueError):
        SplitSpec(range(0, 33), 32, 34)
    with pytest.raises(ValueError):
        SplitSpec(range(0, 33), 33, 33)


def test_split_rows_empty_test_partition():
    m = matrix_for_blocks([30, 31, 32, 33])
    with pytest.raises(EmptyPartitionError, match="empty partition"):
        split_rows(m, SplitSpec(range(0, 33), 33, 34))


@given(st.lists(st.integers(0, 20), min_size=1, max_size=60), st.integers(1, 15), st.integers(0, 5))
def test_split_partition_property(blocks, last_train, burn_in):
    m = matrix_for_blocks([b for b in blocks])
    spec = SplitSpec(range(burn_in, burn_in + last_train), burn_in + last_train, burn_in + last_train + 1)
    try:
        parts = split_rows(m, spec)
    except EmptyPartitionError:
        return
    seen = np.concatenate([p.target for p in parts]).astype(int)
    assert len(seen) == len(set(seen))  # disjoint
    dropped = set(range(m.n_rows)) - set(seen.tolist())
    for i in dropped:
        b = m.date_block[i]
        assert b < spec.train_blocks.start or b > spec.test_block


def test_feature_matrix_invariants():
    with pytest.raises(ValueError, match="duplicate"):
        FeatureMatrix(("a", "a"), np.zeros((1, 2)), [0.0], [0], [[0, 0]])
    with pytest.raises(ValueError):
        FeatureMatrix(("a",), np.zeros((2, 1)), [0.0], [0, 1], [[0, 0], [1, 1]])
    m = matrix_for_blocks([1, 2])
    with pytest.raises(ValueError):
        m.values[0, 0] = 5.0
    with pytest.raises(KeyError, match="zzz"):
        m.columns(["a", "zzz"])
