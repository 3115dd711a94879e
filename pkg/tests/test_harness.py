import csv
import io
import json
import logging
from dataclasses import replace

import numpy as np
import pytest

from streamws import harness
from streamws.errors import LengthMismatch, TooFewExamples
from streamws.estimator import EstimatorConfig
from streamws.harness import Dataset, HarnessConfig
from streamws.synthgen import SyntheticSpec, brute_force_posterior, generate


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("streamws").setLevel(logging.ERROR)
    yield
    logging.getLogger("streamws").setLevel(logging.NOTSET)


def _data(spec, n):
    y, batch = generate(spec, n)
    return Dataset(batch.votes, y)


def test_accuracy_examples():
    assert harness.accuracy([1, 2, 1], [1, 2, 2]) == pytest.approx(2 / 3)
    assert harness.accuracy([3, 3], [3, 3]) == 1.0
    with pytest.raises(LengthMismatch):
        harness.accuracy([1, 2], [1])
    with pytest.raises(ValueError):
        harness.accuracy([], [])


def test_accuracy_is_permutation_invariant():
    rng = np.random.default_rng(0)
    y, y_hat = rng.integers(1, 4, 100), rng.integers(1, 4, 100)
    p = rng.permutation(100)
    assert harness.accuracy(y, y_hat) == harness.accuracy(y[p], y_hat[p])


def test_fold_split_examples():
    assert [len(f) for f in harness.fold_split(10)] == [2] * 5
    folds = harness.fold_split(11)
    assert [len(f) for f in folds] == [3, 2, 2, 2, 2]
    assert list(folds[0]) == [0, 1, 2] and list(folds[4]) == [9, 10]
    with pytest.raises(TooFewExamples):
        harness.fold_split(4)


@pytest.mark.parametrize("t,order", [(5, [5, 1, 2, 3]), (1, [1, 2, 3, 4]), (2, [2, 3, 4, 5])])
def test_fold_rotation(t, order):
    assert harness.test_fold_order(5, t) == order
    folds = harness.fold_split(10)
    expected = np.concatenate([np.arange(2 * (f - 1), 2 * f) for f in order])
    np.testing.assert_array_equal(harness.test_sequence(folds, t), expected)


def test_minibatch_partition_examples():
    parts = harness.minibatch_partition(np.arange(1000))
    assert len(parts) == 100 and all(len(p) == 10 for p in parts)
    sizes = [len(p) for p in harness.minibatch_partition(np.arange(1005))]
    assert sizes == [11] * 5 + [10] * 95
    with pytest.raises(TooFewExamples):
        harness.minibatch_partition(np.arange(50))


@pytest.mark.parametrize("n", [20, 37, 500, 1003])
def test_protocol_covers_each_index_once_in_order(n):
    folds = harness.fold_split(n)
    for t in range(1, 6):
        seq = harness.test_sequence(folds, t)
        parts = harness.minibatch_partition(seq, num_batches=min(10, len(seq)))
        flat = np.concatenate(parts)
        np.testing.assert_array_equal(flat, seq)
        assert len(set(flat.tolist())) == len(flat)


def test_perfect_sources_are_perfect():
    data = _data(SyntheticSpec(m=5, k=2, accuracy=(1,) * 5, seed=2), 5000)
    rep = harness.run_incremental(data, HarnessConfig(num_batches=10))
    assert rep.mean_accuracy == 1.0


def _bayes_oracle(spec, data):
    cache = {}
    hits = 0
    for v, y in zip(data.votes, data.labels):
        key = tuple(v)
        if key not in cache:
            cache[key] = int(np.argmax(brute_force_posterior(spec, v))) + 1
        hits += cache[key] == y
    return hits / len(data)


def test_combining_beats_best_source_and_nears_bayes():
    spec = SyntheticSpec(m=3, k=2, accuracy=(0.75, 0.65, 0.7), seed=3)
    data = _data(spec, 20000)
    rep = harness.run_incremental(data, HarnessConfig(num_batches=40))
    oracle = _bayes_oracle(spec, data)
    assert rep.mean_accuracy >= 0.75 + 0.02
    assert oracle - rep.mean_accuracy <= 0.02


def test_replay_is_identical():
    spec = SyntheticSpec(m=5, k=3, accuracy=(0.8, 0.6, 0.7, 0.65, 0.75), seed=4)
    data = _data(spec, 6000)
    cfg = HarnessConfig(num_batches=20, estimator=EstimatorConfig(num_classes=3))
    a = harness.run_incremental(data, cfg)
    b = harness.run_incremental(data, cfg)
    np.testing.assert_array_equal(a.per_batch_accuracy, b.per_batch_accuracy)
    np.testing.assert_array_equal(a.mu_trace, b.mu_trace)


def test_baseline_on_one_batch_equals_incremental():
    spec = SyntheticSpec(m=5, k=2, accuracy=(0.8, 0.6, 0.7, 0.65, 0.75), seed=5)
    data = _data(spec, 2000)
    cfg = HarnessConfig(num_batches=1)
    inc = harness.run_incremental(data, cfg)
    base = harness.run_offline_baseline(data, cfg)
    assert inc.mean_accuracy == base.mean_accuracy
    np.testing.assert_allclose(inc.mu_trace[0], base.mu_trace[0])


def _drift_data():
    base = (0.85, 0.7, 0.75, 0.65, 0.7)
    spec = SyntheticSpec(m=5, k=2, accuracy=base, drift=((20, (0.3,) + base[1:]),),
                         batch_size=500, seed=6)
    return _data(spec, 40 * 500)


def test_incremental_adapts_where_baseline_cannot():
    data = _drift_data()
    cfg = HarnessConfig(num_batches=40)
    inc = harness.run_incremental(data, cfg)
    base = harness.run_offline_baseline(data, cfg)
    assert inc.mean_accuracy >= base.mean_accuracy


def test_frozen_estimates_lose_after_drift():
    data = _drift_data()
    cfg = HarnessConfig(num_batches=40)
    frozen = harness.run_incremental(data, replace(cfg, estimator=EstimatorConfig(alpha=0.0)))
    moving = harness.run_incremental(data, replace(cfg, estimator=EstimatorConfig(alpha=0.05)))
    assert moving.per_batch_accuracy[20:].mean() > frozen.per_batch_accuracy[20:].mean()


def test_single_alpha_sweep_matches_run():
    data = _data(SyntheticSpec(m=4, k=2, accuracy=(0.8, 0.6, 0.7, 0.75), seed=7), 3000)
    cfg = HarnessConfig(num_batches=10, estimator=EstimatorConfig(alpha=0.1))
    (alpha, acc), = harness.alpha_sweep(data, [0.1], cfg)
    assert alpha == 0.1
    assert acc == harness.run_incremental(data, cfg).mean_accuracy


def test_prequential_labels_first_batch_with_prior():
    data = _data(SyntheticSpec(m=4, k=2, accuracy=(0.9, 0.8, 0.85, 0.8), seed=8,
                               prior=(0.3, 0.7)), 2000)
    cfg = HarnessConfig(num_batches=10, prequential=True,
                        estimator=EstimatorConfig(class_balance=(0.3, 0.7)))
    rep = harness.run_incremental(data, cfg)
    first = data.labels[:200]
    assert rep.per_batch_accuracy[0] == pytest.approx(np.mean(first == 2))
    assert rep.per_batch_accuracy[1:].mean() > 0.9


def test_evaluate_outputs():
    data = _data(SyntheticSpec(m=4, k=2, accuracy=(0.8, 0.6, 0.7, 0.75), seed=9), 5000)
    cfg = HarnessConfig(num_batches=10)
    rows, summary = harness.evaluate(data, cfg, "incremental")
    assert len(rows) == 5 * 10
    assert [t["folds"] for t in summary["tests"]][4] == [5, 1, 2, 3]
    parsed = list(csv.DictReader(io.StringIO(harness.rows_to_csv(rows))))
    assert list(parsed[0]) == ["test", "batch", "start", "end", "accuracy"]
    assert json.loads(harness.summary_json(summary))["mode"] == "incremental"

    rows, summary = harness.evaluate(data, cfg, "sweep", alphas=(0.01, 0.1))
    assert len(rows) == 10
    table = harness.sweep_table_csv(summary).splitlines()
    assert table[0] == "Alpha,0.01,0.1"
    assert table[1].startswith("Accuracy,") and len(table[1].split(",")) == 3
    with pytest.raises(ValueError):
        harness.evaluate(data, cfg, "bogus")
