import numpy as np
import pytest

from streamws.encoding import (
    LabelBatch,
    LabelDomain,
    coverage_rates,
    encode_one_vs_rest,
    validate_batch,
)
from streamws.errors import InvalidClass, OutOfDomainVote, TooFewSources

K2 = LabelDomain(2)


def test_validate_accepts_in_range_codes():
    batch = validate_batch([[1, 2, 0]], K2)
    assert (batch.q, batch.m) == (1, 3)
    assert batch.votes.dtype == np.int64


def test_validate_reports_first_bad_entry():
    with pytest.raises(OutOfDomainVote) as info:
        validate_batch([[1, 3, 0]], K2)
    assert (info.value.row, info.value.col, info.value.value) == (0, 1, 3)


def test_validate_negative_vote():
    with pytest.raises(OutOfDomainVote) as info:
        validate_batch([[1, 1, 1], [1, 1, -1]], K2)
    assert (info.value.row, info.value.col) == (1, 2)


def test_validate_needs_three_sources():
    with pytest.raises(TooFewSources):
        validate_batch([[1, 2]], K2)


def test_validate_rejects_empty_and_fractional():
    with pytest.raises(ValueError):
        validate_batch(np.zeros((0, 3), dtype=int), K2)
    with pytest.raises(ValueError):
        validate_batch([[1.5, 1, 1]], K2)


def test_validated_votes_are_read_only():
    batch = validate_batch([[1, 2, 0]], K2)
    with pytest.raises(ValueError):
        batch.votes[0, 0] = 2


def test_domain_needs_two_classes():
    with pytest.raises(ValueError):
        LabelDomain(1)
    assert list(LabelDomain(3).classes) == [1, 2, 3]
    assert LabelDomain(3).abstain_code == 0


@pytest.mark.parametrize("vote,c,expected", [(2, 2, 1.0), (0, 1, 0.0), (0, 3, 0.0), (1, 2, -1.0)])
def test_encode_single_entries(vote, c, expected):
    batch = validate_batch([[vote, 0, 0]], LabelDomain(3))
    assert encode_one_vs_rest(batch, c, 3).values[0, 0] == expected


def test_encode_invalid_class():
    batch = validate_batch([[1, 2, 0]], K2)
    with pytest.raises(InvalidClass):
        encode_one_vs_rest(batch, 3, 2)
    with pytest.raises(InvalidClass):
        encode_one_vs_rest(batch, 0)


def test_binary_encodings_are_negations():
    rng = np.random.default_rng(0)
    batch = validate_batch(rng.integers(0, 3, size=(40, 5)), K2)
    e1 = encode_one_vs_rest(batch, 1, 2).values
    e2 = encode_one_vs_rest(batch, 2, 2).values
    np.testing.assert_array_equal(e1, -e2)


def test_exactly_one_class_matches_each_vote():
    rng = np.random.default_rng(1)
    batch = validate_batch(rng.integers(0, 5, size=(30, 4)), LabelDomain(4))
    encs = [encode_one_vs_rest(batch, c, 4).values for c in range(1, 5)]
    plus = sum((e == 1).astype(int) for e in encs)
    np.testing.assert_array_equal(plus, (batch.votes != 0).astype(int))
    for e in encs:
        np.testing.assert_array_equal(e != 0, batch.votes != 0)


@pytest.mark.parametrize("column,rate", [([1, 2, 1, 2], 1.0), ([0, 0, 0, 0], 0.0), ([1, 0, 2, 0], 0.5)])
def test_coverage(column, rate):
    votes = np.column_stack([column, [1] * 4, [1] * 4])
    assert coverage_rates(LabelBatch(votes))[0] == rate
