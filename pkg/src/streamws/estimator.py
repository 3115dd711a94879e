"""Source-accuracy estimation for a single batch and the streaming EWMA state.

The initial batch learns the dependency structure with PCP and reads z off
the low-rank component. Every later batch refits z against the fixed
dependency mask, converts it to source/label correlations and folds the
result into an exponentially weighted moving average.

For ``k > 2`` each class gets its own one-vs-rest run; all runs share the
structure learned from the class-1 encoding of the first batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .encoding import LabelBatch, coverage_rates, encode_one_vs_rest
from .errors import (
    NoConvergence,
    NoCoverage,
    NonPositiveC,
    SignAmbiguity,
    Underdetermined,
)
from .moments import ClassPrior, DEFAULT_EPS_REL, covariance, regularized_inverse
from .pcp import PcpConfig, pcp_decompose
from .structure import (
    DependencyStructure,
    auto_threshold,
    break_symmetry,
    edges_from_sparse,
    recover_abs_z,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
# a masked fit whose |z| exceeds this multiple of the target scale is treated
# as diverging; the batch is then reported as failed
DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class EstimatorConfig:
    num_classes: int = 2
    alpha: float = DEFAULT_ALPHA
    pcp: PcpConfig = field(default_factory=PcpConfig)
    # absolute T on |S_ij|; None picks it automatically:
    #   "partial": |S_ij| / sqrt(S_ii S_jj) > partial_threshold
    #   "max-fraction": |S_ij| > max_fraction * max off-diagonal |S|
    threshold: float | None = None
    auto_threshold: str = "partial"
    partial_threshold: float = 0.5
    max_fraction: float = 0.25
    fit_tol: float = 1e-8
    fit_max_iter: int = 5000
    restarts: int = 5
    eps_rel: float = DEFAULT_EPS_REL
    class_balance: tuple | None = None  # None -> uniform
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.fit_tol <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.auto_threshold not in ("partial", "max-fraction"):
            raise ValueError(f"unknown auto_threshold mode {self.auto_threshold!r}")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if self.class_balance is not None:
            p = np.asarray(self.class_balance, dtype=np.float64)
            if p.shape != (self.num_classes,) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
                raise ValueError("class_balance must be a positive vector summing to 1")

    def balance(self) -> np.ndarray:
        if self.class_balance is None:
            return np.full(self.num_classes, 1.0 / self.num_classes)
        return np.asarray(self.class_balance, dtype=np.float64)

    def run_classes(self) -> list[int]:
        """Target classes that get their own estimation run."""
        return [1] if self.num_classes == 2 else list(range(1, self.num_classes + 1))

    def prior_for(self, c: int) -> ClassPrior:
        return ClassPrior.from_class_balance(self.balance()[c - 1])


@dataclass(frozen=True)
class ZFit:
    z: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    diverged: bool = False


@dataclass(frozen=True)
class AccuracyEstimate:
    z: np.ndarray
    c: float
    sigma_os: np.ndarray
    mu: np.ndarray
    clamped: np.ndarray
    target_class: int = 1


@dataclass(frozen=True)
class EstimatorState:
    """Streaming state. ``mu`` and ``z`` hold one row per estimation run."""

    config: EstimatorConfig
    m: int
    mu: np.ndarray | None = None
    z: np.ndarray | None = None
    coverage: np.ndarray | None = None
    structure: DependencyStructure | None = None
    batches_seen: int = 0

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def classes(self) -> list[int]:
        return self.config.run_classes()

    def accuracy_matrix(self) -> np.ndarray:
        """Per-class conditional accuracies, shape (k, m)."""
        if self.batches_seen < 1:
            raise ValueError("no batch has been processed yet")
        return accuracies_from_runs(self.mu, self.coverage, self.config)


# --------------------------------------------------------------------------
# masked rank-one fit
# --------------------------------------------------------------------------

def _as_pairs(mask, m):
    if isinstance(mask, DependencyStructure):
        return mask.mask_arrays()
    pairs = sorted((min(i, j), max(i, j)) for i, j in mask)
    rows = np.array([p[0] for p in pairs], dtype=np.int64)
    cols = np.array([p[1] for p in pairs], dtype=np.int64)
    return rows, cols


def masked_objective(z, k_inv, mask) -> float:
    z = np.asarray(z, dtype=np.float64)
    rows, cols = _as_pairs(mask, z.shape[0])
    k_inv = np.asarray(k_inv, dtype=np.float64)
    return _kernels.masked_objective(z, rows, cols, k_inv[rows, cols])


def _residual_curvature(z, rows, cols, target):
    """Second-order term of the Hessian (halved): ``r_p`` at (i, j) and (j, i)."""
    r = target + z[rows] * z[cols]
    out = np.zeros((z.shape[0], z.shape[0]))
    out[rows, cols] = r
    out[cols, rows] = r
    return out


def _damped_newton(z, rows, cols, target, tol, max_iter, bound=np.inf):
    # Plain Gauss-Newton drops the residual term and only converges linearly
    # when the batch covariance cannot be fit exactly, which is the usual
    # case for small batches. The full Hessian is cheap here, so use it with
    # Levenberg damping to keep every step a descent direction.
    m = z.shape[0]
    eye = np.eye(m)
    obj, grad, jtj = _kernels.masked_normal_eqs(z, rows, cols, target)
    hess = jtj + _residual_curvature(z, rows, cols, target)
    damping = 1e-3 * max(1.0, float(np.max(np.diag(jtj))))
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= tol:
            return z, obj, gnorm, it - 1
        try:
            step = np.linalg.solve(hess + damping * eye, -0.5 * grad)
        except np.linalg.LinAlgError:
            step = None
        slope = np.inf if step is None else float(grad @ step)
        if not slope < 0:
            damping *= 10.0
            if damping > 1e12:
                break
            continue
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = z + t * step
            cand_obj = _kernels.masked_objective(cand, rows, cols, target)
            if cand_obj <= obj + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            damping *= 10.0
            if damping > 1e12:
                break
            continue
        z = cand
        if np.max(np.abs(z)) > bound:
            # the infimum sits at infinity (inconsistent signs in a noisy
            # inverse); iterating further only walks off along the valley
            break
        damping = max(damping * (0.3 if t == 1.0 else 2.0), 1e-12)
        obj, grad, jtj = _kernels.masked_normal_eqs(z, rows, cols, target)
        hess = jtj + _residual_curvature(z, rows, cols, target)
    return z, obj, float(np.max(np.abs(grad))), it


def fit_z_masked(k_inv, mask, init=None, tol: float = 1e-8, max_iter: int = 5000,
                 *, restarts: int = 5, seed: int = 0) -> ZFit:
    """Minimize ``sum over masked pairs (k_inv_ij + z_i z_j)^2``.

    ``init`` (the previous batch's solution, say) is tried first, followed
    by ``restarts`` random positive starts; the lowest objective wins. A warm
    start alone can stay trapped near a degenerate solution once one batch
    produced an outlying z, so the restarts are kept on warm starts too.

    ``grad_norm`` is measured in the rescaled units described below.
    """
    k_inv = np.asarray(k_inv, dtype=np.float64)
    m = k_inv.shape[0]
    rows, cols = _as_pairs(mask, m)
    if rows.shape[0] < m:
        raise Underdetermined(f"mask has {rows.shape[0]} pairs, need at least {m}")
    target = np.ascontiguousarray(k_inv[rows, cols])

    # Near-singular batches give inverse entries of order 1e6, where an
    # absolute gradient tolerance is below float resolution. Such problems
    # are solved in units of the mean |target| (never scaled up below 1).
    unit = max(1.0, float(np.mean(np.abs(target)))) if target.size else 1.0
    target = target / unit
    root = np.sqrt(unit)

    rng = np.random.default_rng(seed)
    scale = np.sqrt(np.mean(np.abs(target))) if target.size else 1.0
    starts = [scale * rng.uniform(0.5, 1.5, m) for _ in range(max(0, restarts))]
    if init is not None:
        starts.insert(0, np.asarray(init, dtype=np.float64) / root)
    elif not starts:
        starts = [scale * np.ones(m)]

    bound = DIVERGENCE_FACTOR * max(scale, 1e-12)
    best = None
    for z0 in starts:
        z, obj, gnorm, iters = _damped_newton(z0, rows, cols, target, tol, max_iter, bound)
        if best is None or obj * unit**2 < best.objective:
            best = ZFit(z * root, float(obj) * unit**2, gnorm, iters,
                        bool(np.max(np.abs(z)) > bound))
    if best.grad_norm > tol:
        raise NoConvergence(best.iterations, best.grad_norm, best)
    return best


# --------------------------------------------------------------------------
# closed-form steps
# --------------------------------------------------------------------------

def estimate_c(z, sigma_o, sigma_s: float) -> float:
    if sigma_s <= 0:
        raise ValueError("class variance must be positive")
    z = np.asarray(z, dtype=np.float64)
    c = (1.0 + float(z @ np.asarray(sigma_o) @ z)) / sigma_s
    if c <= 0:
        raise NonPositiveC(f"c = {c:.3e}; covariance is not positive semidefinite")
    return c


def estimate_mu(sigma_o, z, c: float, prior: ClassPrior, nu, coverage=None,
                target_class: int = 1) -> AccuracyEstimate:
    if c <= 0:
        raise NonPositiveC(f"c = {c:.3e}")
    sigma_o = np.asarray(sigma_o, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    sigma_os = sigma_o @ z / np.sqrt(c)
    mu = sigma_os + prior.e_y * np.asarray(nu, dtype=np.float64)
    if coverage is None:
        bound = np.ones_like(mu)
    else:
        bound = np.asarray(coverage, dtype=np.float64)
    clamped = np.abs(mu) > bound
    mu = np.clip(mu, -bound, bound)
    return AccuracyEstimate(z, float(c), sigma_os, mu, clamped, target_class)


def correlation_to_accuracy(mu_i, r_i):
    """Conditional accuracy P(vote correct | voted) from E[vote * Y] and coverage."""
    mu_i = np.asarray(mu_i, dtype=np.float64)
    r_i = np.asarray(r_i, dtype=np.float64)
    if np.any(r_i <= 0):
        raise NoCoverage("source never votes; its accuracy is undefined")
    out = (mu_i + r_i) / (2.0 * r_i)
    return float(out) if out.ndim == 0 else out


def one_vs_rest_to_class_accuracy(agreement, p_c: float, k: int):
    """Invert the one-vs-rest agreement rate into a k-class accuracy.

    Assumes the source votes the truth with probability ``a`` and spreads
    mistakes uniformly, so that
    ``agreement = p_c a + (1 - p_c)(1 - (1 - a)/(k - 1))``.
    For ``k = 2`` this is the identity.
    """
    agreement = np.asarray(agreement, dtype=np.float64)
    if k == 2:
        return np.clip(agreement, 0.0, 1.0)
    offset = (1.0 - p_c) * (k - 2) / (k - 1)
    slope = p_c + (1.0 - p_c) / (k - 1)
    return np.clip((agreement - offset) / slope, 0.0, 1.0)


def accuracies_from_runs(mu_runs, coverage, config: EstimatorConfig) -> np.ndarray:
    k = config.num_classes
    mu_runs = np.atleast_2d(mu_runs)
    coverage = np.asarray(coverage, dtype=np.float64)
    m = coverage.shape[0]
    safe = np.where(coverage > 0, coverage, 1.0)
    out = np.empty((k, m))
    if k == 2:
        a = np.clip((mu_runs[0] + safe) / (2.0 * safe), 0.0, 1.0)
        out[:] = a
    else:
        balance = config.balance()
        for row, c in enumerate(config.run_classes()):
            agree = np.clip((mu_runs[row] + safe) / (2.0 * safe), 0.0, 1.0)
            out[c - 1] = one_vs_rest_to_class_accuracy(agree, balance[c - 1], k)
    out[:, coverage <= 0] = np.nan
    return out


def ewma_update(state: EstimatorState, mu_b, coverage_b=None, z_b=None) -> EstimatorState:
    mu_b = np.atleast_2d(np.asarray(mu_b, dtype=np.float64))
    if state.batches_seen == 0 or state.mu is None:
        mu = mu_b.copy()
        cov = None if coverage_b is None else np.asarray(coverage_b, dtype=np.float64).copy()
    else:
        a = state.alpha
        mu = (1.0 - a) * state.mu + a * mu_b
        cov = state.coverage
        if coverage_b is not None:
            cov = (1.0 - a) * state.coverage + a * np.asarray(coverage_b, dtype=np.float64)
    z = state.z if z_b is None else np.atleast_2d(np.asarray(z_b, dtype=np.float64))
    return replace(state, mu=mu, coverage=cov, z=z, batches_seen=state.batches_seen + 1)


# --------------------------------------------------------------------------
# per-batch pipeline
# --------------------------------------------------------------------------

def _moments_and_inverse(batch, c, config):
    enc = encode_one_vs_rest(batch, c, config.num_classes)
    mom = covariance(enc)
    return mom, regularized_inverse(mom.sigma_o, config.eps_rel)


def _finish(mom, z, prior, cov, config, c):
    """c-hat and mu from a signed z; retries with a stronger ridge if c <= 0."""
    sigma = mom.sigma_o
    try:
        chat = estimate_c(z, sigma, prior.sigma_s)
    except NonPositiveC:
        ridge = 100 * config.eps_rel * max(np.trace(sigma) / sigma.shape[0], 1e-12)
        sigma = sigma + ridge * np.eye(sigma.shape[0])
        chat = estimate_c(z, sigma, prior.sigma_s)
    return estimate_mu(sigma, z, chat, prior, mom.nu, cov, target_class=c)


def _signed(abs_z, k_inv, structure, sigma_o):
    try:
        return break_symmetry(abs_z, k_inv, structure, sigma_o)
    except SignAmbiguity as exc:
        log.warning("sign graph disconnected (%s); fixing signs per component", exc.components)
        return break_symmetry(abs_z, k_inv, structure, sigma_o, allow_disconnected=True)


def learn_structure(batch: LabelBatch, config: EstimatorConfig):
    """PCP on the class-1 inverse covariance; returns (structure, PcpResult, moments, k_inv)."""
    mom, k_inv = _moments_and_inverse(batch, 1, config)
    try:
        res = pcp_decompose(k_inv, config.pcp)
    except NoConvergence as exc:
        log.warning("PCP stopped early: %s", exc)
        res = exc.result
    structure = _threshold(res.s_hat, config)
    if len(structure.mask) < batch.m:
        raise Underdetermined(
            f"learned graph leaves {len(structure.mask)} independent pairs; need {batch.m}"
        )
    return structure, res, mom, k_inv


def _threshold(s_hat, config):
    if config.threshold is not None:
        return edges_from_sparse(s_hat, config.threshold)
    if config.auto_threshold == "partial":
        return edges_from_sparse(s_hat, config.partial_threshold, normalized=True)
    return edges_from_sparse(s_hat, auto_threshold(s_hat, config.max_fraction))


def initial_estimate(batch: LabelBatch, config: EstimatorConfig):
    """Structure plus per-class estimates from a single batch (no prior state)."""
    structure, res, mom1, k_inv1 = learn_structure(batch, config)
    cov = coverage_rates(batch)
    estimates = []
    for c in config.run_classes():
        prior = config.prior_for(c)
        if c == 1:
            mom, k_inv = mom1, k_inv1
            z = _signed(recover_abs_z(res.l_hat), k_inv, structure, mom.sigma_o)
        else:
            mom, k_inv = _moments_and_inverse(batch, c, config)
            fit = fit_z_masked(k_inv, structure, None, config.fit_tol, config.fit_max_iter,
                               restarts=config.restarts, seed=config.seed + c)
            z = _signed(np.abs(fit.z), k_inv, structure, mom.sigma_o)
        estimates.append(_finish(mom, z, prior, cov, config, c))
    return structure, estimates


def batch_estimate(batch: LabelBatch, state: EstimatorState) -> list[AccuracyEstimate]:
    """Per-class estimates for a later batch against the fixed mask."""
    config = state.config
    cov = coverage_rates(batch)
    estimates = []
    for row, c in enumerate(config.run_classes()):
        prior = config.prior_for(c)
        mom, k_inv = _moments_and_inverse(batch, c, config)
        prev = state.z[row]
        warm = prev if np.any(np.abs(prev) > 1e-8) else None
        try:
            fit = fit_z_masked(k_inv, state.structure, warm, config.fit_tol,
                               config.fit_max_iter, restarts=config.restarts,
                               seed=config.seed + c)
            z = fit.z
        except NoConvergence as exc:
            if exc.result.diverged:
                raise
            log.warning("masked fit for class %d: %s", c, exc)
            z = exc.result.z
        z = _signed(np.abs(z), k_inv, state.structure, mom.sigma_o)
        estimates.append(_finish(mom, z, prior, cov, config, c))
    return estimates


def new_state(config: EstimatorConfig, m: int) -> EstimatorState:
    return EstimatorState(config=config, m=m)


def process_batch(state: EstimatorState, batch: LabelBatch):
    """Advance the stream by one batch. Returns ``(new_state, estimates)``.

    Errors propagate and leave ``state`` untouched (it is immutable).
    """
    if batch.m != state.m:
        raise ValueError(f"batch has {batch.m} sources, state expects {state.m}")
    cov = coverage_rates(batch)
    if state.batches_seen == 0:
        structure, estimates = initial_estimate(batch, state.config)
        state = replace(state, structure=structure)
    else:
        estimates = batch_estimate(batch, state)
    mu_b = np.vstack([e.mu for e in estimates])
    z_b = np.vstack([e.z for e in estimates])
    return ewma_update(state, mu_b, cov, z_b), estimates
