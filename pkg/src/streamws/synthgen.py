"""Synthetic weak-supervision streams with exactly known moments and posteriors.

Each source abstains with probability ``1 - r_i``; otherwise it votes the
true class with probability ``a_i`` and a uniformly chosen wrong class
otherwise. A dependent source (child) copies its parent's vote verbatim with
probability ``rho`` and otherwise draws on its own, which makes it
conditionally dependent on the parent given the label.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .encoding import LabelBatch
from .errors import TooLarge

MAX_ENUM_SOURCES = 8


@dataclass(frozen=True)
class SyntheticSpec:
    m: int
    k: int
    accuracy: tuple
    coverage: tuple | None = None
    prior: tuple | None = None
    dependencies: tuple = ()  # (parent, child, rho), 0-based
    drift: tuple = ()  # (batch_index, accuracy vector), 0-based batches
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k < 2 or self.m < 1:
            raise ValueError("need k >= 2 and m >= 1")
        acc = np.asarray(self.accuracy, dtype=np.float64)
        if acc.shape != (self.m,) or np.any(acc < 0) or np.any(acc > 1):
            raise ValueError("accuracy must be m values in [0, 1]")
        cov = self.coverage_vec()
        if cov.shape != (self.m,) or np.any(cov < 0) or np.any(cov > 1):
            raise ValueError("coverage must be m values in [0, 1]")
        p = self.prior_vec()
        if p.shape != (self.k,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("prior must be k non-negative values summing to 1")
        children = set()
        for parent, child, rho in self.dependencies:
            if not (0 <= parent < self.m and 0 <= child < self.m) or parent == child:
                raise ValueError(f"bad dependency ({parent}, {child})")
            if child in children:
                raise ValueError(f"source {child} has more than one parent")
            if not 0.0 <= rho <= 1.0:
                raise ValueError("copy probability must lie in [0, 1]")
            children.add(child)
        self.topological_order()  # raises on cycles
        for b, a in self.drift:
            if np.asarray(a).shape != (self.m,):
                raise ValueError("drift accuracy vectors must have length m")
        if self.drift and not self.batch_size:
            raise ValueError("drift needs batch_size to map rows to batches")

    def coverage_vec(self) -> np.ndarray:
        if self.coverage is None:
            return np.ones(self.m)
        return np.asarray(self.coverage, dtype=np.float64)

    def prior_vec(self) -> np.ndarray:
        if self.prior is None:
            return np.full(self.k, 1.0 / self.k)
        return np.asarray(self.prior, dtype=np.float64)

    def parents(self) -> dict[int, tuple[int, float]]:
        return {int(c): (int(p), float(rho)) for p, c, rho in self.dependencies}

    def topological_order(self) -> list[int]:
        parents = self.parents()
        order, state = [], {}

        def visit(v):
            if state.get(v) == 1:
                raise ValueError("dependency cycle")
            if state.get(v) == 2:
                return
            state[v] = 1
            if v in parents:
                visit(parents[v][0])
            state[v] = 2
            order.append(v)

        for v in range(self.m):
            visit(v)
        return order

    def accuracy_at(self, batch_index: int | None = None) -> np.ndarray:
        acc = np.asarray(self.accuracy, dtype=np.float64)
        if batch_index is None:
            return acc
        for b, a in sorted(self.drift, key=lambda d: d[0]):
            if batch_index >= b:
                acc = np.asarray(a, dtype=np.float64)
        return acc

    # ---- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "accuracy": [float(x) for x in self.accuracy],
            "coverage": None if self.coverage is None else [float(x) for x in self.coverage],
            "prior": None if self.prior is None else [float(x) for x in self.prior],
            "dependencies": [[int(p), int(c), float(r)] for p, c, r in self.dependencies],
            "drift": [[int(b), [float(x) for x in a]] for b, a in self.drift],
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        def tup(x):
            return None if x is None else tuple(float(v) for v in x)

        return cls(
            m=int(d["m"]),
            k=int(d["k"]),
            accuracy=tup(d["accuracy"]),
            coverage=tup(d.get("coverage")),
            prior=tup(d.get("prior")),
            dependencies=tuple((int(p), int(c), float(r)) for p, c, r in d.get("dependencies", ())),
            drift=tuple((int(b), tup(a)) for b, a in d.get("drift", ())),
            batch_size=d.get("batch_size"),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls.from_dict(json.loads(text))


# ---- sampling --------------------------------------------------------------

def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _row_accuracy(spec: SyntheticSpec, n: int) -> np.ndarray:
    acc = np.tile(np.asarray(spec.accuracy, dtype=np.float64), (n, 1))
    if spec.drift:
        rows = np.arange(n) // spec.batch_size
        for b, a in sorted(spec.drift, key=lambda d: d[0]):
            acc[rows >= b] = np.asarray(a, dtype=np.float64)
    return acc


def generate(spec: SyntheticSpec, n: int):
    """Draw ``n`` examples. Returns ``(y, LabelBatch)`` with y in 1..k."""
    rng = _rng(spec.seed)
    k = spec.k
    y = rng.choice(np.arange(1, k + 1), size=n, p=spec.prior_vec())
    acc = _row_accuracy(spec, n)
    cov = spec.coverage_vec()
    parents = spec.parents()
    votes = np.zeros((n, spec.m), dtype=np.int64)
    for i in spec.topological_order():
        voted = rng.random(n) < cov[i]
        correct = rng.random(n) < acc[:, i]
        w = rng.integers(1, k, size=n) if k > 2 else np.ones(n, dtype=np.int64)
        wrong = np.where(w < y, w, w + 1)
        own = np.where(voted, np.where(correct, y, wrong), 0)
        if i in parents:
            p, rho = parents[i]
            copy = rng.random(n) < rho
            own = np.where(copy, votes[:, p], own)
        votes[:, i] = own
    votes.setflags(write=False)
    return y, LabelBatch(votes, 0)


# ---- exact quantities ------------------------------------------------------

def _own_vote_dist(a, r, k):
    """P(vote = v | Y = y) as a (k, k+1) table for an independent source."""
    t = np.full((k, k + 1), r * (1.0 - a) / (k - 1))
    t[:, 0] = 1.0 - r
    for y in range(k):
        t[y, y + 1] = r * a
    return t


def _transition(a, r, rho, k):
    """P(child vote = v | parent vote = u, Y = y) as (k, k+1, k+1)."""
    own = _own_vote_dist(a, r, k)
    out = np.empty((k, k + 1, k + 1))
    for y in range(k):
        out[y] = (1.0 - rho) * np.tile(own[y], (k + 1, 1)) + rho * np.eye(k + 1)
    return out


def vote_marginals(spec: SyntheticSpec, batch_index: int | None = None) -> np.ndarray:
    """P(lambda_i = v | Y = y) for every source, shape (m, k, k+1)."""
    k = spec.k
    acc = spec.accuracy_at(batch_index)
    cov = spec.coverage_vec()
    parents = spec.parents()
    out = np.zeros((spec.m, k, k + 1))
    for i in spec.topological_order():
        if i in parents:
            p, rho = parents[i]
            tr = _transition(acc[i], cov[i], rho, k)
            out[i] = np.einsum("yu,yuv->yv", out[p], tr)
        else:
            out[i] = _own_vote_dist(acc[i], cov[i], k)
    return out


def _ancestors(v, parents):
    chain = [v]
    while chain[-1] in parents:
        chain.append(parents[chain[-1]][0])
    return chain


def _pair_joint(spec, i, j, marg, acc, cov, parents):
    """P(lambda_i = u, lambda_j = v | Y = y), shape (k, k+1, k+1)."""
    k = spec.k
    ai, aj = _ancestors(i, parents), _ancestors(j, parents)
    common = [x for x in ai if x in aj]
    if not common:
        return np.einsum("yu,yv->yuv", marg[i], marg[j])
    lca = common[0]

    def path(node_chain):
        # transition from the LCA's vote down to the chain's first node
        t = np.tile(np.eye(k + 1), (k, 1, 1))
        below = node_chain[: node_chain.index(lca)]
        for node in reversed(below):
            p, rho = parents[node]
            t = np.einsum("yab,ybc->yac", t, _transition(acc[node], cov[node], rho, k))
        return t

    ti, tj = path(ai), path(aj)
    return np.einsum("yw,ywu,ywv->yuv", marg[lca], ti, tj)


def _encode_values(k, c):
    vals = np.full(k + 1, -1.0)
    vals[0] = 0.0
    vals[c] = 1.0
    return vals


def population_moments(spec: SyntheticSpec, c: int = 1, batch_index: int | None = None):
    """Exact (nu, Sigma_O) of the one-vs-rest encoding for class ``c``."""
    k = spec.k
    p = spec.prior_vec()
    acc = spec.accuracy_at(batch_index)
    cov = spec.coverage_vec()
    parents = spec.parents()
    marg = vote_marginals(spec, batch_index)
    e = _encode_values(k, c)
    nu = np.einsum("y,iyv,v->i", p, marg, e)
    second = np.zeros((spec.m, spec.m))
    for i in range(spec.m):
        second[i, i] = np.einsum("y,yv,v->", p, marg[i], e * e)
        for j in range(i + 1, spec.m):
            joint = _pair_joint(spec, i, j, marg, acc, cov, parents)
            second[i, j] = second[j, i] = np.einsum("y,yuv,u,v->", p, joint, e, e)
    return nu, second - np.outer(nu, nu)


def true_mu(spec: SyntheticSpec, c: int = 1, batch_index: int | None = None) -> np.ndarray:
    """Exact E[o_i Y] under the signed one-vs-rest encoding of class ``c``."""
    k = spec.k
    p = spec.prior_vec()
    marg = vote_marginals(spec, batch_index)
    e = _encode_values(k, c)
    ysign = np.where(np.arange(1, k + 1) == c, 1.0, -1.0)
    return np.einsum("y,y,iyv,v->i", p, ysign, marg, e)


def true_accuracy(spec: SyntheticSpec, batch_index: int | None = None) -> np.ndarray:
    """P(lambda_i = Y | lambda_i != 0), including the effect of copying."""
    marg = vote_marginals(spec, batch_index)
    p = spec.prior_vec()
    k = spec.k
    hit = np.array([sum(p[y] * marg[i, y, y + 1] for y in range(k)) for i in range(spec.m)])
    voted = np.einsum("y,iy->i", p, 1.0 - marg[:, :, 0])
    return hit / voted


def brute_force_posterior(spec: SyntheticSpec, lambda_vec, batch_index: int | None = None) -> np.ndarray:
    """p(y | votes) by enumerating the label and every copy/no-copy pattern."""
    if spec.m > MAX_ENUM_SOURCES:
        raise TooLarge(f"enumeration limited to {MAX_ENUM_SOURCES} sources")
    lam = [int(v) for v in lambda_vec]
    k = spec.k
    acc = spec.accuracy_at(batch_index)
    cov = spec.coverage_vec()
    parents = spec.parents()
    children = sorted(parents)
    prior = spec.prior_vec()

    def own_prob(i, v, y):
        if v == 0:
            return 1.0 - cov[i]
        if v == y:
            return cov[i] * acc[i]
        return cov[i] * (1.0 - acc[i]) / (k - 1)

    joint = np.zeros(k)
    for y in range(1, k + 1):
        total = 0.0
        for pattern in itertools.product((False, True), repeat=len(children)):
            copies = dict(zip(children, pattern))
            weight = 1.0
            for i in range(spec.m):
                if copies.get(i, False):
                    p, rho = parents[i]
                    weight *= rho * (1.0 if lam[i] == lam[p] else 0.0)
                else:
                    if i in parents:
                        weight *= 1.0 - parents[i][1]
                    weight *= own_prob(i, lam[i], y)
                if weight == 0.0:
                    break
            total += weight
        joint[y - 1] = prior[y - 1] * total
    z = joint.sum()
    if z == 0.0:
        return prior.copy()
    return joint / z


def records(y, batch: LabelBatch, start_id: int = 0):
    """JSONL-ready dicts with true labels attached."""
    for t in range(batch.q):
        yield {
            "id": f"ex{start_id + t:07d}",
            "labels": [int(v) for v in batch.votes[t]],
            "true_label": int(y[t]),
        }
