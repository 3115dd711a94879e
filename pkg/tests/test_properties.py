"""Randomized invariants checked with hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streamws.encoding import LabelDomain, encode_one_vs_rest, validate_batch
from streamws.estimator import EstimatorConfig, EstimatorState, ewma_update
from streamws.inference import posterior_batch
from streamws.moments import covariance


@st.composite
def vote_batches(draw):
    k = draw(st.integers(2, 5))
    m = draw(st.integers(3, 7))
    q = draw(st.integers(2, 40))
    votes = draw(arrays(np.int64, (q, m), elements=st.integers(0, k)))
    return k, votes


@settings(max_examples=150, deadline=None)
@given(vote_batches(), st.data())
def test_encoding_values_and_covariance_shape(kv, data):
    k, votes = kv
    c = data.draw(st.integers(1, k))
    enc = encode_one_vs_rest(validate_batch(votes, LabelDomain(k)), c)
    assert set(np.unique(enc.values)) <= {-1.0, 0.0, 1.0}
    assert np.array_equal(enc.values == 0, votes == 0)
    assert np.array_equal(enc.values == 1, votes == c)
    mom = covariance(enc)
    s = mom.sigma_o
    np.testing.assert_allclose(s, s.T, atol=0)
    assert np.linalg.eigvalsh(s).min() >= -1e-10
    assert np.all(np.abs(mom.nu) <= 1)


@settings(max_examples=150, deadline=None)
@given(vote_batches(), st.data())
def test_posterior_is_a_distribution(kv, data):
    k, votes = kv
    m = votes.shape[1]
    acc = data.draw(arrays(np.float64, (k, m), elements=st.floats(0, 1)))
    prior = np.asarray(data.draw(arrays(np.float64, k, elements=st.floats(0.01, 1))))
    prior = prior / prior.sum()
    probs, abstained, _ = posterior_batch(votes, acc, np.ones(m), prior)
    assert np.all(np.isfinite(probs)) and np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(abstained, ~votes.any(axis=1))
    np.testing.assert_allclose(probs[abstained], np.broadcast_to(prior, probs[abstained].shape))


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.lists(arrays(np.float64, 4, elements=st.floats(-1, 1)),
                                  min_size=1, max_size=20))
def test_ewma_stays_in_the_hull(alpha, updates):
    state = EstimatorState(config=EstimatorConfig(alpha=alpha), m=4)
    for u in updates:
        state = ewma_update(state, u)
    stacked = np.stack(updates)
    assert np.all(state.mu[0] <= stacked.max(axis=0) + 1e-12)
    assert np.all(state.mu[0] >= stacked.min(axis=0) - 1e-12)
    assert state.batches_seen == len(updates)
