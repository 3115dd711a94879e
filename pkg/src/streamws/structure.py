"""Dependency graph from the sparse component, signed z from the low-rank one."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import SignAmbiguity

DEFAULT_T_FRACTION = 0.25
Z_FLOOR = 1e-8


@dataclass(frozen=True)
class DependencyStructure:
    m: int
    edges: frozenset
    threshold: float

    @property
    def mask(self) -> frozenset:
        return frozenset(p for p in combinations(range(self.m), 2) if p not in self.edges)

    def mask_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = sorted(self.mask)
        rows = np.array([p[0] for p in pairs], dtype=np.int64)
        cols = np.array([p[1] for p in pairs], dtype=np.int64)
        return rows, cols

    def components(self) -> list[list[int]]:
        """Connected components of the edge graph, each sorted, ordered by first node."""
        parent = list(range(self.m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in sorted(self.edges):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        groups: dict[int, list[int]] = {}
        for v in range(self.m):
            groups.setdefault(find(v), []).append(v)
        return sorted(groups.values(), key=lambda g: g[0])

    @classmethod
    def empty(cls, m: int) -> "DependencyStructure":
        return cls(m, frozenset(), 0.0)

    @classmethod
    def from_edges(cls, m: int, edges, threshold: float = 0.0) -> "DependencyStructure":
        norm = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j or not (0 <= i < m and 0 <= j < m):
                raise ValueError(f"bad edge ({i}, {j}) for m={m}")
            norm.add((min(i, j), max(i, j)))
        return cls(m, frozenset(norm), float(threshold))


def auto_threshold(s_hat, fraction: float = DEFAULT_T_FRACTION) -> float:
    s = np.asarray(s_hat, dtype=np.float64)
    off = s[~np.eye(s.shape[0], dtype=bool)]
    return fraction * float(np.abs(off).max()) if off.size else 0.0


def normalized_sparse(s_hat) -> np.ndarray:
    """``|S_ij| / sqrt(|S_ii S_jj|)``: the sparse part on a partial-correlation scale."""
    s = np.asarray(s_hat, dtype=np.float64)
    d = np.sqrt(np.abs(np.diag(s)))
    d = np.where(d > 0, d, np.inf)
    return np.abs(s) / np.outer(d, d)


def edges_from_sparse(s_hat, t: float | None = None, *, normalized: bool = False) -> DependencyStructure:
    """Pairs whose sparse-component magnitude exceeds ``t``.

    ``t=None`` picks a quarter of the largest off-diagonal magnitude. With
    ``normalized`` the entries are compared on the partial-correlation scale.
    """
    s = np.asarray(s_hat, dtype=np.float64)
    m = s.shape[0]
    if normalized:
        s = normalized_sparse(s)
    if t is None:
        t = auto_threshold(s)
    if t < 0:
        raise ValueError("threshold must be non-negative")
    edges = frozenset(
        (i, j) for i, j in combinations(range(m), 2) if abs(s[i, j]) > t
    )
    return DependencyStructure(m, edges, float(t))


def recover_abs_z(l_hat) -> np.ndarray:
    d = np.diag(np.asarray(l_hat, dtype=np.float64))
    return np.sqrt(np.maximum(d, 0.0))


def _sign_components(abs_z, k_inv, structure):
    active = [i for i in range(len(abs_z)) if abs_z[i] > Z_FLOOR]
    act = set(active)
    adj: dict[int, list[int]] = {i: [] for i in active}
    for i, j in sorted(structure.mask):
        if i in act and j in act and k_inv[i, j] != 0.0:
            adj[i].append(j)
            adj[j].append(i)
    return active, adj


def break_symmetry(abs_z, k_inv, structure: DependencyStructure, sigma_o=None,
                   *, allow_disconnected: bool = False) -> np.ndarray:
    """Assign signs to ``abs_z`` from the off-graph entries of the inverse covariance.

    Off the dependency graph ``k_inv[i, j] = -z_i z_j``, so each masked pair
    fixes the relative sign of two entries. Signs are propagated breadth-first
    from the largest entry; the global sign makes the implied mean
    source/label covariance positive (sources better than random on average).
    With ``allow_disconnected`` each component gets that rule on its own,
    otherwise a disconnected sign graph raises SignAmbiguity.
    """
    abs_z = np.asarray(abs_z, dtype=np.float64)
    k_inv = np.asarray(k_inv, dtype=np.float64)
    m = abs_z.shape[0]
    z = abs_z.copy()
    active, adj = _sign_components(abs_z, k_inv, structure)
    if not active:
        return z

    sign = np.ones(m)
    seen: set[int] = set()
    comps: list[list[int]] = []
    # seeds in order of decreasing |z|, ties to the lower index
    for seed in sorted(active, key=lambda i: (-abs_z[i], i)):
        if seed in seen:
            continue
        comp = [seed]
        seen.add(seed)
        queue = deque([seed])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v in seen:
                    continue
                sign[v] = sign[u] * (1.0 if -k_inv[u, v] > 0 else -1.0)
                seen.add(v)
                comp.append(v)
                queue.append(v)
        comps.append(sorted(comp))

    if len(comps) > 1 and not allow_disconnected:
        raise SignAmbiguity(sorted(comps))

    z = abs_z * sign
    if sigma_o is None:
        sigma_o = np.linalg.inv(k_inv)
    sigma_o = np.asarray(sigma_o, dtype=np.float64)
    for comp in comps:
        zc = np.zeros(m)
        zc[comp] = z[comp]
        if np.sum(sigma_o @ zc) < 0:
            z[comp] = -z[comp]
    return z
