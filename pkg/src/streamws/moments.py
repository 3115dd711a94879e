"""Per-batch labeling rates, vote covariance and a guarded inverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import EncodedMatrix
from .errors import DegenerateBatch, NotInvertible

DEFAULT_EPS_REL = 1e-6
MAX_CONDITION = 1e14


@dataclass(frozen=True)
class MomentEstimates:
    nu: np.ndarray
    sigma_o: np.ndarray
    n: int


@dataclass(frozen=True)
class ClassPrior:
    """Mean and variance of the signed class indicator Y in {-1, +1}."""

    e_y: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.e_y < 1.0:
            raise ValueError(f"E[Y] must lie in (-1, 1), got {self.e_y}")

    @property
    def sigma_s(self) -> float:
        return 1.0 - self.e_y ** 2

    @classmethod
    def from_class_balance(cls, p_c: float) -> "ClassPrior":
        return cls(2.0 * float(p_c) - 1.0)


def labeling_rates(encoded: EncodedMatrix) -> np.ndarray:
    return np.asarray(encoded.values, dtype=np.float64).mean(axis=0)


def covariance(encoded: EncodedMatrix) -> MomentEstimates:
    x = np.asarray(encoded.values, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise DegenerateBatch(f"need at least 2 examples for a covariance, got {n}")
    nu = x.mean(axis=0)
    sigma = x.T @ x / n - np.outer(nu, nu)
    # exact symmetry; x.T @ x is symmetric only up to BLAS rounding
    sigma = 0.5 * (sigma + sigma.T)
    return MomentEstimates(nu, sigma, n)


def regularized_inverse(sigma, eps_rel: float = DEFAULT_EPS_REL) -> np.ndarray:
    """Inverse of ``sigma``, ridged by ``eps_rel * trace / m`` when near-singular."""
    a = np.asarray(sigma, dtype=np.float64)
    m = a.shape[0]
    delta = eps_rel * np.trace(a) / m
    evals = np.linalg.eigvalsh(a)
    if evals[0] >= delta:
        delta = 0.0
    if delta <= 0.0 and evals[0] <= 0.0:
        # zero trace and a non-positive spectrum: nothing to ridge against
        raise NotInvertible("matrix is singular and has no scale for a ridge")
    shifted = a + delta * np.eye(m)
    shifted_evals = evals + delta
    lo = np.min(np.abs(shifted_evals))
    hi = np.max(np.abs(shifted_evals))
    if lo == 0.0 or hi / lo > MAX_CONDITION:
        raise NotInvertible(f"condition estimate {hi / lo if lo else np.inf:.3e} too large")
    inv = np.linalg.inv(shifted)
    return 0.5 * (inv + inv.T)


def ridge_amount(sigma, eps_rel: float = DEFAULT_EPS_REL) -> float:
    a = np.asarray(sigma, dtype=np.float64)
    delta = eps_rel * np.trace(a) / a.shape[0]
    return 0.0 if np.linalg.eigvalsh(a)[0] >= delta else float(delta)
