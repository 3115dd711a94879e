"""Independent oracles and fixtures shared by the test modules.

Nothing here calls into streamws except to build inputs; each oracle is a
direct, slow, or closed-form computation written separately from the code
under test.
"""

from __future__ import annotations

import itertools
import json
import os
import subprocess
import sys

import numpy as np

SRC = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")


def two_pass_covariance(x):
    """Population covariance by explicit centering, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    q, m = x.shape
    mean = [sum(x[t, i] for t in range(q)) / q for i in range(m)]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = sum((x[t, i] - mean[i]) * (x[t, j] - mean[j]) for t in range(q)) / q
    return np.array(mean), out


def planted_instance(seed, m=20, support=0.10, z_norm=1.5):
    """Sparse K* plus rank-one z*z*^T with an incoherent (equal-magnitude) z*.

    Returns ``(m_in, k_star, z_star)`` with ``m_in = K* - z* z*^T``.
    """
    rng = np.random.default_rng(seed)
    pairs = list(itertools.combinations(range(m), 2))
    count = int(round(support * len(pairs)))
    chosen = rng.choice(len(pairs), size=count, replace=False)
    k = np.eye(m) * 2.0
    for idx in chosen:
        i, j = pairs[idx]
        k[i, j] = k[j, i] = rng.choice([-0.5, 0.5])
    z = rng.choice([-1.0, 1.0], size=m) * (z_norm / np.sqrt(m))
    return k - np.outer(z, z), k, z


def triplet_abs_z(k_inv):
    """Closed form for three conditionally independent sources."""
    a = -np.asarray(k_inv, dtype=np.float64)
    z1 = np.sqrt(abs(a[0, 1] * a[0, 2] / a[1, 2]))
    z2 = np.sqrt(abs(a[0, 1] * a[1, 2] / a[0, 2]))
    z3 = np.sqrt(abs(a[0, 2] * a[1, 2] / a[0, 1]))
    return np.array([z1, z2, z3])


def enumerate_votes(m, k=2):
    return [np.array(v) for v in itertools.product(range(k + 1), repeat=m)]


def run_cli(*args, stdin=None, cwd=None, env=None):
    full_env = dict(os.environ)
    full_env["PYTHONPATH"] = SRC + os.pathsep + full_env.get("PYTHONPATH", "")
    full_env.setdefault("STREAMWS_LOG_LEVEL", "ERROR")
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "streamws.cli", *args],
        input=stdin,
        capture_output=True,
        text=True,
        cwd=cwd,
        env=full_env,
        timeout=600,
    )


def write_spec(path, **spec):
    with open(path, "w") as fh:
        json.dump(spec, fh)
    return path
