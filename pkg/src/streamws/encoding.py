"""Label domain, vote-batch validation and one-vs-rest encoding.

Votes are integers in ``{0, 1, ..., k}`` where 0 means the source abstained.
All moment algebra downstream runs on a signed encoding of a single target
class: +1 for a vote for that class, -1 for a vote for any other class and 0
for an abstention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidClass, OutOfDomainVote, TooFewSources

ABSTAIN = 0
MIN_SOURCES = 3


@dataclass(frozen=True)
class LabelDomain:
    num_classes: int
    abstain_code: int = field(default=ABSTAIN, init=False)

    def __post_init__(self):
        if int(self.num_classes) < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def classes(self) -> range:
        return range(1, self.num_classes + 1)


@dataclass(frozen=True)
class LabelBatch:
    votes: np.ndarray
    batch_index: int = 0

    @property
    def q(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]


@dataclass(frozen=True)
class EncodedMatrix:
    values: np.ndarray
    target_class: int


def validate_batch(raw, domain: LabelDomain, batch_index: int = 0) -> LabelBatch:
    votes = np.asarray(raw)
    if votes.ndim != 2 or votes.size == 0:
        raise ValueError("vote matrix must be a non-empty 2-D array")
    if not np.issubdtype(votes.dtype, np.integer):
        if not np.all(np.equal(np.mod(votes, 1), 0)):
            raise ValueError("votes must be integers")
    votes = votes.astype(np.int64)
    bad = (votes < 0) | (votes > domain.num_classes)
    if bad.any():
        row, col = (int(x) for x in np.argwhere(bad)[0])
        raise OutOfDomainVote(row, col, int(votes[row, col]))
    if votes.shape[1] < MIN_SOURCES:
        raise TooFewSources(
            f"{votes.shape[1]} sources given; at least {MIN_SOURCES} are required"
        )
    votes.setflags(write=False)
    return LabelBatch(votes, batch_index)


def encode_one_vs_rest(batch: LabelBatch, c: int, num_classes: int | None = None) -> EncodedMatrix:
    if num_classes is not None and not 1 <= c <= num_classes:
        raise InvalidClass(f"class {c} outside 1..{num_classes}")
    if c < 1:
        raise InvalidClass(f"class {c} outside 1..k")
    v = batch.votes
    values = np.where(v == c, 1.0, np.where(v == ABSTAIN, 0.0, -1.0))
    values.setflags(write=False)
    return EncodedMatrix(values, c)


def coverage_rates(batch: LabelBatch) -> np.ndarray:
    """Fraction of rows on which each source voted."""
    return (batch.votes != ABSTAIN).mean(axis=0)
