"""Posterior over the latent label given source votes and estimated accuracies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .structure import DependencyStructure

ACC_FLOOR = 1e-6


@dataclass(frozen=True)
class PosteriorLabel:
    probs: np.ndarray
    hard: int
    abstained: bool
    clamped: bool = False


def source_weights(structure: DependencyStructure | None, m: int) -> np.ndarray:
    """1 / size of each source's connected component in the dependency graph."""
    w = np.ones(m)
    if structure is None:
        return w
    for comp in structure.components():
        w[comp] = 1.0 / len(comp)
    return w


def _accuracy_table(accuracies, k, m):
    a = np.asarray(accuracies, dtype=np.float64)
    if a.ndim == 1:
        a = np.tile(a, (k, 1))
    if a.shape != (k, m):
        raise ValueError(f"accuracies must have shape ({m},) or ({k}, {m})")
    return a


def _prepare(accuracies, coverage, prior, structure, m):
    prior = np.asarray(prior, dtype=np.float64)
    k = prior.shape[0]
    if abs(prior.sum() - 1.0) > 1e-9 or np.any(prior < 0):
        raise ValueError("prior must be a probability vector")
    a = _accuracy_table(accuracies, k, m)
    usable = np.ones(m, dtype=bool)
    if coverage is not None:
        usable &= np.asarray(coverage, dtype=np.float64) > 0
    usable &= ~np.isnan(a).any(axis=0)
    a = np.where(np.isnan(a), 0.5, a)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    clamped = bool(np.any((a[:, usable] < ACC_FLOOR) | (a[:, usable] > 1 - ACC_FLOOR)))
    a = np.clip(a, ACC_FLOOR, 1.0 - ACC_FLOOR)
    log_hit = np.log(a)
    log_miss = np.log((1.0 - a) / (k - 1))
    weights = source_weights(structure, m) * usable
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    return k, log_hit, log_miss, weights, log_prior, clamped


def _normalize(scores):
    top = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - top)
    return e / e.sum(axis=1, keepdims=True)


def hard_label(p) -> int:
    """Argmax class (1-based); ties go to the smallest class index."""
    probs = p.probs if isinstance(p, PosteriorLabel) else np.asarray(p)
    return int(np.argmax(probs)) + 1


def posterior_batch(votes, accuracies, coverage, prior, structure=None):
    """Vectorized posterior. Returns ``(probs (n, k), abstained (n,), clamped)``."""
    votes = np.asarray(votes, dtype=np.int64)
    if votes.ndim == 1:
        votes = votes.reshape(1, -1)
    m = votes.shape[1]
    k, log_hit, log_miss, weights, log_prior, clamped = _prepare(
        accuracies, coverage, prior, structure, m
    )
    scores = _kernels.posterior_scores(votes, log_hit, log_miss, weights, log_prior)
    probs = _normalize(scores)
    abstained = ~np.any((votes != 0) & (weights > 0), axis=1)
    if abstained.any():
        probs[abstained] = np.asarray(prior, dtype=np.float64)
    return probs, abstained, clamped


def posterior(lambda_vec, accuracies, coverage, prior, structure=None) -> PosteriorLabel:
    probs, abstained, clamped = posterior_batch(
        np.asarray(lambda_vec).reshape(1, -1), accuracies, coverage, prior, structure
    )
    p = probs[0]
    return PosteriorLabel(p, hard_label(p), bool(abstained[0]), clamped)


def hard_labels(probs) -> np.ndarray:
    return np.argmax(np.asarray(probs), axis=1) + 1
