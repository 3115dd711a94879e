"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. The compiled
path is used unless numba is missing or ``STREAMWS_DISABLE_NUMBA`` is set to
a truthy value before import. Both twins stay importable so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("STREAMWS_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on",
}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# --------------------------------------------------------------------------
# posterior log-scores
# --------------------------------------------------------------------------

def posterior_scores_numpy(votes, log_hit, log_miss, weights, log_prior):
    """Unnormalized log-posterior per example and class.

    ``votes`` is (n, m) with codes 0..k; ``log_hit[y, i]`` is the log
    likelihood of source i voting y+1 when the truth is y+1, ``log_miss[y, i]``
    the log likelihood of one particular wrong vote.
    """
    n, m = votes.shape
    k = log_prior.shape[0]
    codes = np.arange(1, k + 1).reshape(1, k, 1)
    v = votes.reshape(n, 1, m)
    hit = v == codes
    w = np.where(votes != 0, weights.reshape(1, m), 0.0).reshape(n, 1, m)
    contrib = np.where(hit, log_hit.reshape(1, k, m), log_miss.reshape(1, k, m))
    return log_prior.reshape(1, k) + (contrib * w).sum(axis=2)


def _posterior_scores_loop(votes, log_hit, log_miss, weights, log_prior):
    n, m = votes.shape
    k = log_prior.shape[0]
    out = np.empty((n, k))
    for t in range(n):
        for y in range(k):
            s = log_prior[y]
            for i in range(m):
                v = votes[t, i]
                if v == 0:
                    continue
                if v == y + 1:
                    s += weights[i] * log_hit[y, i]
                else:
                    s += weights[i] * log_miss[y, i]
            out[t, y] = s
    return out


# --------------------------------------------------------------------------
# masked rank-one least squares
# --------------------------------------------------------------------------

def masked_normal_eqs_numpy(z, rows, cols, target):
    """Residuals r_p = target_p + z_i z_j over mask pairs p = (i, j).

    Returns (objective, gradient, Gauss-Newton matrix J^T J).
    """
    m = z.shape[0]
    r = target + z[rows] * z[cols]
    obj = float(r @ r)
    npair = rows.shape[0]
    jac = np.zeros((npair, m))
    idx = np.arange(npair)
    jac[idx, rows] = z[cols]
    jac[idx, cols] += z[rows]
    grad = 2.0 * (jac.T @ r)
    return obj, grad, jac.T @ jac


def _masked_normal_eqs_loop(z, rows, cols, target):
    m = z.shape[0]
    grad = np.zeros(m)
    jtj = np.zeros((m, m))
    obj = 0.0
    for p in range(rows.shape[0]):
        i = rows[p]
        j = cols[p]
        r = target[p] + z[i] * z[j]
        obj += r * r
        grad[i] += 2.0 * r * z[j]
        grad[j] += 2.0 * r * z[i]
        jtj[i, i] += z[j] * z[j]
        jtj[j, j] += z[i] * z[i]
        jtj[i, j] += z[i] * z[j]
        jtj[j, i] += z[i] * z[j]
    return obj, grad, jtj


def masked_objective_numpy(z, rows, cols, target):
    r = target + z[rows] * z[cols]
    return float(r @ r)


def _masked_objective_loop(z, rows, cols, target):
    obj = 0.0
    for p in range(rows.shape[0]):
        r = target[p] + z[rows[p]] * z[cols[p]]
        obj += r * r
    return obj


if HAVE_NUMBA:
    posterior_scores_numba = numba.njit(cache=True, nogil=True)(_posterior_scores_loop)
    masked_normal_eqs_numba = numba.njit(cache=True)(_masked_normal_eqs_loop)
    masked_objective_numba = numba.njit(cache=True)(_masked_objective_loop)
else:  # pragma: no cover
    posterior_scores_numba = None
    masked_normal_eqs_numba = None
    masked_objective_numba = None


def posterior_scores(votes, log_hit, log_miss, weights, log_prior):
    votes = np.ascontiguousarray(votes, dtype=np.int64)
    args = (
        votes,
        np.ascontiguousarray(log_hit, dtype=np.float64),
        np.ascontiguousarray(log_miss, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(log_prior, dtype=np.float64),
    )
    if USE_NUMBA:
        return posterior_scores_numba(*args)
    return posterior_scores_numpy(*args)


def masked_normal_eqs(z, rows, cols, target):
    if USE_NUMBA:
        return masked_normal_eqs_numba(z, rows, cols, target)
    return masked_normal_eqs_numpy(z, rows, cols, target)


def masked_objective(z, rows, cols, target):
    if USE_NUMBA:
        return masked_objective_numba(z, rows, cols, target)
    return masked_objective_numpy(z, rows, cols, target)
