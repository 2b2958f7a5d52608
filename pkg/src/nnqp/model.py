"""Problem instance, iterate state and certificate types for non-negative QPs.

A problem is

    minimize    x^T Q x + a^T x
    subject to  B x >= b,  C x = c,  x >= 0

where ``Q = A^T A`` is stored directly (``A`` itself is never kept). The
gradient is therefore ``2 Q x + a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

Matrix = Union[np.ndarray, sp.spmatrix, sp.sparray]

FAMILIES = ("dksg", "zhlg", "meb", "pd", "nnls", "generic")

# Support membership threshold.
EPS_X = 1e-10


class DimensionError(ValueError):
    """Raised when vector or matrix sizes do not agree with the problem."""


def _as_matrix(m, rows: int, cols: int, name: str) -> Matrix:
    if m is None:
        return np.zeros((rows, cols))
    if sp.issparse(m):
        m = sp.csr_matrix(m, dtype=float)
    else:
        m = np.atleast_2d(np.asarray(m, dtype=float))
        if m.size == 0:
            m = m.reshape(rows, cols)
    if m.shape != (rows, cols):
        raise DimensionError(f"{name} has shape {m.shape}, expected {(rows, cols)}")
    return m


def dense(m: Matrix) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m)


@dataclass(frozen=True)
class Tolerances:
    """Scale-aware thresholds; ``v`` and ``cs`` are multiplied by ``1 + |a|_inf``."""

    x: float = EPS_X
    v: float = 1e-9
    primal: float = 1e-8
    cs: float = 1e-7


@dataclass(frozen=True, eq=False)
class NnqProblem:
    """An instance of ``min x'Qx + a'x  s.t. Bx >= b, Cx = c, x >= 0``.

    ``gram`` may be a dense array or a scipy sparse matrix (kept in CSC form so
    column gathers are cheap). ``constant`` is an additive offset that is not
    part of the optimized objective but is added back when reporting values
    comparable to the original formulation (e.g. ``|b|^2`` for least squares).
    """

    gram: Matrix
    linear: np.ndarray
    ineq_matrix: Optional[Matrix] = None
    ineq_rhs: Optional[np.ndarray] = None
    eq_matrix: Optional[Matrix] = None
    eq_rhs: Optional[np.ndarray] = None
    label: str = "generic"
    constant: float = 0.0
    meta: dict = field(default_factory=dict)
    check: bool = True

    def __post_init__(self):
        linear = np.asarray(self.linear, dtype=float).ravel()
        nu = linear.size
        gram = self.gram
        if sp.issparse(gram):
            gram = sp.csc_matrix(gram, dtype=float)
        else:
            gram = np.asarray(gram, dtype=float)
        if gram.shape != (nu, nu):
            raise DimensionError(f"gram has shape {gram.shape}, expected {(nu, nu)}")
        kb = 0 if self.ineq_rhs is None else np.asarray(self.ineq_rhs).size
        kc = 0 if self.eq_rhs is None else np.asarray(self.eq_rhs).size
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "ineq_matrix", _as_matrix(self.ineq_matrix, kb, nu, "ineq_matrix"))
        object.__setattr__(self, "ineq_rhs", np.asarray(self.ineq_rhs if kb else np.zeros(0), dtype=float).ravel())
        object.__setattr__(self, "eq_matrix", _as_matrix(self.eq_matrix, kc, nu, "eq_matrix"))
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs if kc else np.zeros(0), dtype=float).ravel())
        if self.label not in FAMILIES:
            raise ValueError(f"unknown problem family {self.label!r}")
        if self.check:
            self._validate()

    def _validate(self):
        q = self.gram
        asym = abs(q - q.T)
        asym = asym.max() if asym.size else 0.0
        scale = abs(q).max() if q.size else 0.0
        if asym > 1e-12 * max(scale, 1.0):
            raise ValueError(f"gram is not symmetric (max asymmetry {asym:.3g})")
        rng = np.random.default_rng(0)
        for _ in range(4):
            z = rng.standard_normal(self.dim)
            rq = z @ (q @ z) / (z @ z)
            if rq < -1e-9 * max(scale, 1.0):
                raise ValueError(f"gram is not positive semidefinite (Rayleigh quotient {rq:.3g})")

    @property
    def dim(self) -> int:
        return self.linear.size

    @property
    def n_ineq(self) -> int:
        return self.ineq_rhs.size

    @property
    def n_eq(self) -> int:
        return self.eq_rhs.size

    def tolerances(self, base: Tolerances = Tolerances()) -> dict:
        """Absolute thresholds for this instance."""
        scale = 1.0 + (np.abs(self.linear).max() if self.dim else 0.0)
        return {
            "x": base.x,
            "v": base.v * scale,
            "primal_ineq": base.primal * (1.0 + (np.abs(self.ineq_rhs).max() if self.n_ineq else 0.0)),
            "primal_eq": base.primal * (1.0 + (np.abs(self.eq_rhs).max() if self.n_eq else 0.0)),
            "cs": base.cs * scale,
        }


@dataclass
class ActiveSetState:
    """Iterate of the active-set loop: ``primal`` is exactly zero on ``active``."""

    active: np.ndarray
    primal: np.ndarray
    iteration: int = 1
    eps_x: float = EPS_X

    def __post_init__(self):
        self.active = np.unique(np.asarray(self.active, dtype=np.intp))
        self.primal = np.asarray(self.primal, dtype=float).copy()
        self.primal[self.active] = 0.0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.primal > self.eps_x)


@dataclass(frozen=True)
class DualCertificate:
    ineq_dual: np.ndarray
    eq_dual: np.ndarray
    reduced_cost: np.ndarray


def _check_vector(problem: NnqProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != problem.dim:
        raise DimensionError(f"vector has length {x.size}, problem has {problem.dim} variables")
    return x


def objective(problem: NnqProblem, x) -> float:
    """Return ``x'Qx + a'x`` (the offset ``problem.constant`` is not included)."""
    x = _check_vector(problem, x)
    return float(x @ (problem.gram @ x) + problem.linear @ x)


def gradient(problem: NnqProblem, x, support: Optional[np.ndarray] = None) -> np.ndarray:
    """Return ``2 Q x + a`` touching only the columns of ``Q`` on the support of ``x``."""
    x = _check_vector(problem, x)
    if support is None:
        support = np.flatnonzero(x)
    g = problem.linear.copy()
    if support.size:
        cols = problem.gram[:, support]
        g += 2.0 * np.asarray(cols @ x[support]).ravel()
    return g


def recover_reduced_cost(problem: NnqProblem, x, ineq_dual=None, eq_dual=None) -> np.ndarray:
    """Multipliers of ``x >= 0`` from stationarity: ``v = grad f(x) - B'u - C'w``."""
    v = gradient(problem, x)
    if problem.n_ineq:
        u = np.asarray(ineq_dual, dtype=float).ravel()
        if u.size != problem.n_ineq:
            raise DimensionError("inequality dual has wrong length")
        v -= np.asarray(problem.ineq_matrix.T @ u).ravel()
    if problem.n_eq:
        w = np.asarray(eq_dual, dtype=float).ravel()
        if w.size != problem.n_eq:
            raise DimensionError("equality dual has wrong length")
        v -= np.asarray(problem.eq_matrix.T @ w).ravel()
    return v


def kkt_violations(problem: NnqProblem, x, cert: DualCertificate) -> dict:
    """Worst violation of each KKT block on the full problem (all as non-negative numbers)."""
    x = _check_vector(problem, x)
    v = cert.reduced_cost
    out = {
        "dual_v": max(0.0, -float(v.min())) if v.size else 0.0,
        "dual_u": max(0.0, -float(cert.ineq_dual.min())) if problem.n_ineq else 0.0,
        "primal_x": max(0.0, -float(x.min())) if x.size else 0.0,
        "primal_ineq": 0.0,
        "primal_eq": 0.0,
        "cs_u": 0.0,
        "cs_v": float(np.abs(v * x).max()) if x.size else 0.0,
    }
    if problem.n_ineq:
        slack = np.asarray(problem.ineq_matrix @ x).ravel() - problem.ineq_rhs
        out["primal_ineq"] = max(0.0, -float(slack.min()))
        out["cs_u"] = float(np.abs(cert.ineq_dual * slack).max())
    if problem.n_eq:
        out["primal_eq"] = float(np.abs(np.asarray(problem.eq_matrix @ x).ravel() - problem.eq_rhs).max())
    return out


def kkt_satisfied(problem: NnqProblem, x, cert: DualCertificate, base: Tolerances = Tolerances()) -> bool:
    tol = problem.tolerances(base)
    viol = kkt_violations(problem, x, cert)
    return (
        viol["dual_v"] <= tol["v"]
        and viol["dual_u"] <= tol["v"]
        and viol["primal_x"] == 0.0
        and viol["primal_ineq"] <= tol["primal_ineq"]
        and viol["primal_eq"] <= tol["primal_eq"]
        and viol["cs_u"] <= tol["cs"]
        and viol["cs_v"] <= tol["cs"]
    )


@dataclass
class IterationRecord:
    r: int
    objective: float
    n_candidates: int
    support_size: int
    active_size: int
    free_size: int
    branch: str
    step_norm: float
    subsolver_iterations: int
    x: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    candidates: Optional[np.ndarray] = None
    freed: Optional[np.ndarray] = None
    active: Optional[np.ndarray] = None
    next_active: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    tau: int = 0
    beta0: int = 0
    beta1: int = 0

    def __len__(self):
        return len(self.records)

    def objectives(self) -> np.ndarray:
        return np.array([rec.objective for rec in self.records])


@dataclass
class SolveResult:
    primal: np.ndarray
    certificate: DualCertificate
    objective: float
    trace: SolveTrace
    status: str
    iterations: int = 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.primal > EPS_X)
