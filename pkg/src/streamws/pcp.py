"""Principal Component Pursuit on a symmetric matrix.

Splits ``M`` into a sparse part ``S`` and a low-rank part ``L`` with
``S - L = M`` by minimizing ``||L||_* + gamma * ||S||_1``. Solved with the
alternating direction method of multipliers on the augmented Lagrangian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence


@dataclass(frozen=True)
class PcpConfig:
    gamma: float | None = None  # None -> 1/sqrt(m)
    tol: float = 1e-7
    max_iter: int = 1000
    rho: float = 1.0
    penalize_diagonal: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def gamma_for(self, m: int) -> float:
        return self.gamma if self.gamma is not None else 1.0 / np.sqrt(m)


@dataclass
class PcpResult:
    s_hat: np.ndarray
    l_hat: np.ndarray
    iterations: int
    residual: float
    objective: list[float]


def soft_threshold(x, tau: float):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def singular_value_threshold(x, tau: float) -> np.ndarray:
    """Shrink the eigenvalue magnitudes of a symmetric matrix by ``tau``."""
    x = np.asarray(x, dtype=np.float64)
    if tau == 0:
        return x.copy()
    w, v = np.linalg.eigh(0.5 * (x + x.T))
    w = np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)
    keep = w != 0.0
    if not keep.any():
        return np.zeros_like(x)
    vk = v[:, keep]
    out = (vk * w[keep]) @ vk.T
    return 0.5 * (out + out.T)


def _objective(s, l, gamma):
    return float(np.abs(np.linalg.eigvalsh(l)).sum() + gamma * np.abs(s).sum())


def _psd_project(l):
    w, v = np.linalg.eigh(0.5 * (l + l.T))
    w = np.maximum(w, 0.0)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def pcp_decompose(m_in, config: PcpConfig | None = None, *, raise_on_fail: bool = True) -> PcpResult:
    config = config or PcpConfig()
    mat = np.asarray(m_in, dtype=np.float64)
    mat = 0.5 * (mat + mat.T)
    n = mat.shape[0]
    gamma = config.gamma_for(n)
    rho = config.rho
    scale = max(1.0, float(np.linalg.norm(mat)))

    s = np.zeros_like(mat)
    l = np.zeros_like(mat)
    y = np.zeros_like(mat)
    history = []
    residual = float(np.linalg.norm(mat)) / scale
    it = 0
    if residual == 0.0:
        return PcpResult(s, l, 0, 0.0, [0.0])

    for it in range(1, config.max_iter + 1):
        l = singular_value_threshold(s - mat + y / rho, 1.0 / rho)
        s_prev = s
        s = soft_threshold(l + mat - y / rho, gamma / rho)
        if not config.penalize_diagonal:
            np.fill_diagonal(s, np.diag(l + mat - y / rho))
        r = s - l - mat
        y = y + rho * r
        residual = float(np.linalg.norm(r)) / scale
        change = float(np.linalg.norm(s - s_prev)) * rho / scale
        history.append(_objective(s, l, gamma))
        if residual <= config.tol and change <= config.tol:
            break

    l_psd = _psd_project(l)
    result = PcpResult(s, l_psd, it, residual, history)
    if residual > config.tol and raise_on_fail:
        raise NoConvergence(it, residual, result)
    return result
