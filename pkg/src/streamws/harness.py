"""Evaluation protocol: ordered folds, minibatches, incremental vs offline runs."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import LabelBatch, LabelDomain, validate_batch
from .errors import LengthMismatch, StreamWSError, TooFewExamples
from .estimator import EstimatorConfig, initial_estimate, new_state, process_batch
from .inference import hard_labels, posterior_batch

log = logging.getLogger(__name__)

TABLE_ALPHAS = (0.001, 0.01, 0.025, 0.05, 0.1, 0.25)


@dataclass(frozen=True)
class Dataset:
    votes: np.ndarray
    labels: np.ndarray
    ids: tuple | None = None

    def __post_init__(self):
        if self.votes.shape[0] != self.labels.shape[0]:
            raise LengthMismatch("votes and labels differ in length")

    def __len__(self):
        return self.votes.shape[0]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        ids = None if self.ids is None else tuple(self.ids[i] for i in idx)
        return Dataset(self.votes[idx], self.labels[idx], ids)


@dataclass(frozen=True)
class HarnessConfig:
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    num_batches: int = 100
    folds: int = 5
    folds_per_test: int = 4
    prequential: bool = False


@dataclass
class EvalReport:
    per_batch_accuracy: np.ndarray
    mean_accuracy: float
    per_source_accuracy: np.ndarray
    baseline_accuracy: float | None = None
    batch_bounds: list = field(default_factory=list)
    failed_batches: list = field(default_factory=list)
    mu_trace: np.ndarray | None = None
    config: dict = field(default_factory=dict)


def accuracy(y, y_hat) -> float:
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"{y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(y == y_hat))


def _even_ranges(n, parts):
    base, extra = divmod(n, parts)
    out, start = [], 0
    for p in range(parts):
        size = base + (1 if p < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def fold_split(n: int, folds: int = 5) -> list[range]:
    """Contiguous ordered folds; the first ``n % folds`` get one extra example."""
    if n < folds:
        raise TooFewExamples(f"{n} examples cannot fill {folds} folds")
    return _even_ranges(n, folds)


def test_sequence(folds: list, t: int, per_test: int = 4) -> np.ndarray:
    """Indices of fold ``t`` (1-based) followed by the next folds, wrapping around."""
    f = len(folds)
    if not 1 <= t <= f:
        raise ValueError(f"test index {t} outside 1..{f}")
    order = [(t - 1 + j) % f for j in range(min(per_test, f))]
    return np.concatenate([np.asarray(folds[i], dtype=np.int64) for i in order])


def test_fold_order(f: int, t: int, per_test: int = 4) -> list[int]:
    return [((t - 1 + j) % f) + 1 for j in range(min(per_test, f))]


def minibatch_partition(sequence, num_batches: int = 100) -> list[np.ndarray]:
    seq = np.asarray(sequence)
    if len(seq) < num_batches:
        raise TooFewExamples(f"{len(seq)} examples cannot fill {num_batches} batches")
    return [seq[r.start:r.stop] for r in _even_ranges(len(seq), num_batches)]


def source_accuracy(votes, labels) -> np.ndarray:
    """Each source's accuracy over all examples; an abstention counts as a miss."""
    votes = np.asarray(votes)
    return (votes == np.asarray(labels).reshape(-1, 1)).mean(axis=0)


def _label_with(state, votes):
    probs, _, _ = posterior_batch(
        votes, state.accuracy_matrix(), state.coverage, state.config.balance(), state.structure
    )
    return hard_labels(probs)


def _prior_labels(config: EstimatorConfig, n):
    return np.full(n, int(np.argmax(config.balance())) + 1)


def _config_echo(cfg: HarnessConfig, **extra):
    e = cfg.estimator
    echo = {
        "num_classes": e.num_classes,
        "alpha": e.alpha,
        "gamma": e.pcp.gamma,
        "threshold": e.threshold,
        "auto_threshold": e.auto_threshold,
        "partial_threshold": e.partial_threshold,
        "num_batches": cfg.num_batches,
        "prequential": cfg.prequential,
        "seed": e.seed,
    }
    echo.update(extra)
    return echo


def run_incremental(data: Dataset, cfg: HarnessConfig | None = None) -> EvalReport:
    """Stream the dataset in order through the incremental estimator."""
    cfg = cfg or HarnessConfig()
    ecfg = cfg.estimator
    domain = LabelDomain(ecfg.num_classes)
    parts = minibatch_partition(np.arange(len(data)), cfg.num_batches)
    state = new_state(ecfg, data.votes.shape[1])
    accs, failed, bounds, trace = [], [], [], []
    for b, idx in enumerate(parts):
        batch = validate_batch(data.votes[idx], domain, b)
        before = state
        try:
            state, _ = process_batch(state, batch)
        except (StreamWSError, np.linalg.LinAlgError) as exc:
            log.warning("batch %d failed: %s", b, exc)
            failed.append(b)
        labeler = before if cfg.prequential else state
        if labeler.batches_seen > 0:
            y_hat = _label_with(labeler, batch.votes)
        else:
            y_hat = _prior_labels(ecfg, batch.q)
        accs.append(accuracy(data.labels[idx], y_hat))
        bounds.append((int(idx[0]), int(idx[-1]) + 1))
        trace.append(None if state.mu is None else state.mu.copy())
    width = next((t.shape for t in trace if t is not None), None)
    mu_trace = None
    if width is not None:
        mu_trace = np.stack([t if t is not None else np.full(width, np.nan) for t in trace])
    per_batch = np.asarray(accs)
    return EvalReport(
        per_batch_accuracy=per_batch,
        mean_accuracy=float(per_batch.mean()),
        per_source_accuracy=source_accuracy(data.votes, data.labels),
        batch_bounds=bounds,
        failed_batches=failed,
        mu_trace=mu_trace,
        config=_config_echo(cfg, mode="incremental"),
    )


def run_offline_baseline(data: Dataset, cfg: HarnessConfig | None = None) -> EvalReport:
    """One structure-plus-accuracy pass over the pooled data; scored on the same batches."""
    cfg = cfg or HarnessConfig()
    ecfg = cfg.estimator
    domain = LabelDomain(ecfg.num_classes)
    pooled = validate_batch(data.votes, domain, 0)
    state = new_state(ecfg, pooled.m)
    state, _ = process_batch(state, pooled)
    y_hat = _label_with(state, pooled.votes)
    parts = minibatch_partition(np.arange(len(data)), cfg.num_batches)
    per_batch = np.array([accuracy(data.labels[idx], y_hat[idx]) for idx in parts])
    mean = float(per_batch.mean())
    return EvalReport(
        per_batch_accuracy=per_batch,
        mean_accuracy=mean,
        per_source_accuracy=source_accuracy(data.votes, data.labels),
        baseline_accuracy=mean,
        batch_bounds=[(int(p[0]), int(p[-1]) + 1) for p in parts],
        mu_trace=state.mu[None].copy(),
        config=_config_echo(cfg, mode="baseline"),
    )


def alpha_sweep(data: Dataset, alphas=TABLE_ALPHAS, cfg: HarnessConfig | None = None):
    """Mean incremental accuracy per alpha, sorted by alpha."""
    cfg = cfg or HarnessConfig()
    rows = []
    for a in sorted(float(x) for x in alphas):
        run_cfg = replace(cfg, estimator=replace(cfg.estimator, alpha=a))
        rows.append((a, run_incremental(data, run_cfg).mean_accuracy))
    return rows


# ---- fold protocol ---------------------------------------------------------

def fold_tests(data: Dataset, cfg: HarnessConfig):
    """Yield ``(t, fold_order, subset)`` for each rotation of the ordered folds."""
    folds = fold_split(len(data), cfg.folds)
    for t in range(1, cfg.folds + 1):
        seq = test_sequence(folds, t, cfg.folds_per_test)
        yield t, test_fold_order(cfg.folds, t, cfg.folds_per_test), data.take(seq)


def evaluate(data: Dataset, cfg: HarnessConfig, mode: str = "incremental", alphas=TABLE_ALPHAS):
    """Run the fold protocol. Returns ``(rows, summary)`` ready for CSV/JSON."""
    if mode not in ("incremental", "baseline", "sweep"):
        raise ValueError(f"unknown mode {mode!r}")
    rows, tests = [], []
    if mode == "sweep":
        per_alpha = {float(a): [] for a in alphas}
        for t, order, sub in fold_tests(data, cfg):
            for a, acc in alpha_sweep(sub, alphas, cfg):
                per_alpha[a].append(acc)
                rows.append({"test": t, "alpha": a, "mean_accuracy": acc})
        table = [(a, float(np.mean(v))) for a, v in sorted(per_alpha.items())]
        summary = {
            "mode": "sweep",
            "alphas": [a for a, _ in table],
            "accuracy": [acc for _, acc in table],
            "config": _config_echo(cfg, mode="sweep"),
        }
        return rows, summary

    runner = run_incremental if mode == "incremental" else run_offline_baseline
    for t, order, sub in fold_tests(data, cfg):
        rep = runner(sub, cfg)
        for b, (acc, (lo, hi)) in enumerate(zip(rep.per_batch_accuracy, rep.batch_bounds)):
            rows.append({"test": t, "batch": b, "start": lo, "end": hi, "accuracy": float(acc)})
        tests.append({
            "test": t,
            "folds": order,
            "mean_accuracy": rep.mean_accuracy,
            "per_source_accuracy": [float(x) for x in rep.per_source_accuracy],
            "failed_batches": rep.failed_batches,
        })
    summary = {
        "mode": mode,
        "mean_accuracy": float(np.mean([t["mean_accuracy"] for t in tests])),
        "tests": tests,
        "config": _config_echo(cfg, mode=mode),
    }
    return rows, summary


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def sweep_table_csv(summary: dict) -> str:
    """Two-row wide table: an Alpha header row and an Accuracy row."""
    alphas = ",".join(repr(a) for a in summary["alphas"])
    accs = ",".join(f"{a:.5f}" for a in summary["accuracy"])
    return f"Alpha,{alphas}\nAccuracy,{accs}\n"


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"
