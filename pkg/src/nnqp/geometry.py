"""Builders and initial active sets for the geometric problem families.

* ``dksg``  -- proximity graph minimizing the weighted-edge reconstruction error
  ``sum_i |sum_j x_ij (p_i - p_j)|^2`` subject to every vertex having total
  incident weight at least 1.
* ``zhlg``  -- proximity graph with objective
  ``(1/d) b'x + (mu/2)|Ux - 1|^2 + (rho/2)|x|^2`` (``b`` holds squared edge
  lengths, ``U`` is the incidence matrix) and only ``x >= 0``.
* ``meb``   -- minimum enclosing ball, ``x`` are convex weights of the center.
* ``pd``    -- distance between the convex hulls of two point sets.

Edges ``(i, j)`` with ``i < j`` are indexed lexicographically, 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import NnqProblem


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    second: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.second is not None:
            q = np.atleast_2d(np.asarray(self.second, dtype=float))
            if q.shape[1] != pts.shape[1]:
                raise ValueError("both clouds must have the same dimension")
            if not np.all(np.isfinite(q)):
                raise ValueError("point coordinates must be finite")
            object.__setattr__(self, "second", q)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


class EdgeIndex:
    """Bijection between pairs ``i < j`` of ``n`` vertices and ``0 .. n(n-1)/2 - 1``."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("need at least two vertices")
        self.n = n
        self.count = n * (n - 1) // 2
        self.first, self.second = np.triu_indices(n, k=1)

    def index(self, i, j):
        i, j = np.minimum(i, j), np.maximum(i, j)
        if np.any(i == j):
            raise ValueError("an edge needs two distinct vertices")
        return i * self.n - i * (i + 1) // 2 + (j - i - 1)

    def pair(self, e):
        return self.first[e], self.second[e]

    def incident(self, v: int) -> np.ndarray:
        """Edge indices touching vertex ``v``, ordered by the other endpoint."""
        others = np.delete(np.arange(self.n), v)
        return self.index(np.full(others.size, v), others)

    def incidence_matrix(self) -> sp.csr_matrix:
        cols = np.repeat(np.arange(self.count), 2)
        rows = np.column_stack([self.first, self.second]).ravel()
        return sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(self.n, self.count))


def _require(cloud: PointCloud, n_min: int):
    if cloud.n < n_min:
        raise ValueError(f"need at least {n_min} points, got {cloud.n}")


def dksg_gram(points: np.ndarray) -> sp.csc_matrix:
    """Gram matrix of the DKSG design matrix, assembled per vertex.

    Vertex ``s`` contributes ``(p_s - p_t).(p_s - p_t')`` to every pair of edges
    ``(s, t), (s, t')``; edges that share no vertex have a zero entry.
    """
    n = points.shape[0]
    edges = EdgeIndex(n)
    rows, cols, vals = [], [], []
    for s in range(n):
        inc = edges.incident(s)
        diff = points[s] - np.delete(points, s, axis=0)
        block = diff @ diff.T
        rows.append(np.repeat(inc, inc.size))
        cols.append(np.tile(inc, inc.size))
        vals.append(block.ravel())
    q = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(edges.count, edges.count),
    )
    return q.tocsc()


def dksg_design(points: np.ndarray) -> np.ndarray:
    """The explicit ``dn x n(n-1)/2`` matrix whose Gram is :func:`dksg_gram` (small n only)."""
    n, d = points.shape
    edges = EdgeIndex(n)
    a = np.zeros((d * n, edges.count))
    for e in range(edges.count):
        i, j = edges.pair(e)
        a[i * d:(i + 1) * d, e] = points[i] - points[j]
        a[j * d:(j + 1) * d, e] = points[j] - points[i]
    return a


def build_dksg(cloud: PointCloud) -> NnqProblem:
    _require(cloud, 2)
    edges = EdgeIndex(cloud.n)
    return NnqProblem(
        gram=dksg_gram(cloud.points),
        linear=np.zeros(edges.count),
        ineq_matrix=edges.incidence_matrix(),
        ineq_rhs=np.ones(cloud.n),
        label="dksg",
        meta={"n": cloud.n, "d": cloud.d},
    )


def init_dksg(cloud: PointCloud, beta0: int, seed: int = 0) -> np.ndarray:
    """Initial active set: all edges except ``beta0`` random ones and the star of vertex 0."""
    _require(cloud, 2)
    edges = EdgeIndex(cloud.n)
    rng = np.random.default_rng(seed)
    sampled = rng.choice(edges.count, size=min(beta0, edges.count), replace=False)
    free = np.union1d(sampled, edges.incident(0))
    return np.setdiff1d(np.arange(edges.count), free)


def build_zhlg(cloud: PointCloud, mu: float = 16.0, rho: float = 2.0) -> NnqProblem:
    """ZHLG objective minus its constant ``(mu/2) n`` (kept in ``problem.constant``)."""
    _require(cloud, 2)
    if mu < 0 or rho < 0:
        raise ValueError("mu and rho must be non-negative")
    n, d = cloud.n, cloud.d
    edges = EdgeIndex(n)
    u = edges.incidence_matrix()
    gram = 0.5 * mu * (u.T @ u) + 0.5 * rho * sp.identity(edges.count)
    sq = np.sum((cloud.points[edges.first] - cloud.points[edges.second]) ** 2, axis=1)
    return NnqProblem(
        gram=sp.csc_matrix(gram),
        linear=sq / d - 2.0 * mu,
        label="zhlg",
        constant=0.5 * mu * n,
        meta={"n": n, "d": d, "mu": mu, "rho": rho},
    )


def zhlg_objective(cloud: PointCloud, x, mu: float = 16.0, rho: float = 2.0) -> float:
    """Direct evaluation of the original ZHLG objective (constant included)."""
    edges = EdgeIndex(cloud.n)
    u = edges.incidence_matrix()
    sq = np.sum((cloud.points[edges.first] - cloud.points[edges.second]) ** 2, axis=1)
    resid = u @ x - 1.0
    return float(sq @ x / cloud.d + 0.5 * mu * resid @ resid + 0.5 * rho * x @ x)


def init_zhlg(n: int, beta0: int, seed: int = 0) -> np.ndarray:
    nu = EdgeIndex(n).count
    rng = np.random.default_rng(seed)
    free = rng.choice(nu, size=min(beta0, nu), replace=False)
    return np.setdiff1d(np.arange(nu), free)


def build_meb(cloud: PointCloud) -> NnqProblem:
    _require(cloud, 1)
    p = cloud.points
    return NnqProblem(
        gram=p @ p.T,
        linear=-np.sum(p * p, axis=1),
        eq_matrix=np.ones((1, cloud.n)),
        eq_rhs=np.ones(1),
        label="meb",
        meta={"n": cloud.n, "d": cloud.d},
    )


def meb_ball(cloud: PointCloud, x, objective_value: float):
    """Center and radius from optimal weights; radius is ``sqrt(-f*)``."""
    center = np.asarray(x) @ cloud.points
    return center, float(np.sqrt(max(-objective_value, 0.0)))


def farthest_from_centroid(points: np.ndarray, k: int) -> np.ndarray:
    dist = np.sum((points - points.mean(axis=0)) ** 2, axis=1)
    # stable sort on -dist keeps lower indices first among ties
    order = np.argsort(-dist, kind="stable")
    return np.sort(order[:k])


def init_meb(cloud: PointCloud) -> np.ndarray:
    _require(cloud, 1)
    free = farthest_from_centroid(cloud.points, min(cloud.d + 1, cloud.n))
    return np.setdiff1d(np.arange(cloud.n), free)


def build_pd(cloud_p, cloud_q=None) -> NnqProblem:
    """Polytope distance between ``conv(P)`` and ``conv(Q)``.

    Accepts either two arrays or a single :class:`PointCloud` carrying both.
    """
    if isinstance(cloud_p, PointCloud) and cloud_q is None:
        p, q = cloud_p.points, cloud_p.second
    else:
        p = cloud_p.points if isinstance(cloud_p, PointCloud) else np.atleast_2d(np.asarray(cloud_p, float))
        q = cloud_q.points if isinstance(cloud_q, PointCloud) else np.atleast_2d(np.asarray(cloud_q, float))
    if q is None or p.shape[0] < 1 or q.shape[0] < 1:
        raise ValueError("polytope distance needs two non-empty point sets")
    if p.shape[1] != q.shape[1]:
        raise ValueError("both clouds must have the same dimension")
    m, n = p.shape[0], q.shape[0]
    g = np.vstack([p, -q])
    eq = np.zeros((2, m + n))
    eq[0, :m] = 1.0
    eq[1, m:] = 1.0
    return NnqProblem(
        gram=g @ g.T,
        linear=np.zeros(m + n),
        eq_matrix=eq,
        eq_rhs=np.ones(2),
        label="pd",
        meta={"m": m, "n": n, "d": p.shape[1]},
    )


def init_pd(m: int, n: int) -> np.ndarray:
    free = np.concatenate([np.arange(min(3, m)), m + np.arange(min(3, n))])
    return np.setdiff1d(np.arange(m + n), free)


def generate_cloud(kind: str, n: int, d: int, seed: int = 0, shift: float = 0.0) -> PointCloud:
    """Seeded synthetic clouds.

    ``unit-cube``: uniform in ``[0, 1]^d``. ``near-sphere``: uniform on the unit
    sphere, each point scaled by ``1 + eps`` with ``eps ~ U[-1e-4, 1e-4]``.
    ``shifted-cubes``: ``floor(n/2)`` points uniform in ``[-1, 1]^d`` and
    ``ceil(n/2)`` points in the same cube slid along the first axis until the two
    cubes are ``shift`` apart.
    """
    rng = np.random.default_rng(seed)
    if kind == "unit-cube":
        return PointCloud(rng.random((n, d)))
    if kind == "near-sphere":
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        eps = rng.uniform(-1e-4, 1e-4, size=(n, 1))
        return PointCloud((1.0 + eps) * g)
    if kind == "shifted-cubes":
        if n < 2:
            raise ValueError("shifted-cubes needs n >= 2")
        p = rng.uniform(-1.0, 1.0, size=(n // 2, d))
        q = rng.uniform(-1.0, 1.0, size=(n - n // 2, d))
        q[:, 0] += 2.0 + shift
        return PointCloud(p, q)
    raise ValueError(f"unknown cloud kind {kind!r}")
