"""The iterative free-variable selection loop.

Each iteration solves the problem restricted to the free variables, recovers
the multipliers of ``x >= 0`` on the fixed variables, and frees the ones whose
multiplier is negative. When many are negative (``|E| >= beta0``) and the
iteration budget ``beta1`` has not been used up, only the ``tau`` most negative
are freed and every free variable that is zero in the current iterate is fixed
again; otherwise all negative ones are freed and nothing is fixed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    DualCertificate,
    IterationRecord,
    NnqProblem,
    SolveResult,
    SolveTrace,
    Tolerances,
    kkt_satisfied,
    objective,
    recover_reduced_cost,
)
from .subsolver import extract_subproblem, solve_reduced

log = logging.getLogger(__name__)

SHRINK = "shrink"
REBUILD = "rebuild"
INITIAL = "initial"


def default_tau(nu: int) -> int:
    return max(1, math.ceil(4.0 * math.log(nu) ** 2)) if nu > 1 else 1


@dataclass
class DriverConfig:
    tau: Optional[int] = None
    beta0: Optional[int] = None
    beta1: int = 15
    hard_iteration_cap: Optional[int] = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    record_trace: bool = True

    def resolved(self, nu: int) -> "DriverConfig":
        tau = self.tau if self.tau is not None else default_tau(nu)
        beta0 = self.beta0 if self.beta0 is not None else 3 * tau
        cap = self.hard_iteration_cap if self.hard_iteration_cap is not None else nu + self.beta1 + 1
        cfg = DriverConfig(tau, beta0, self.beta1, cap, self.tolerances, self.record_trace)
        cfg.validate()
        return cfg

    def validate(self):
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.tau is not None and self.beta0 is not None and self.beta0 <= self.tau:
            raise ValueError("beta0 must exceed tau")
        if self.beta1 < 1:
            raise ValueError("beta1 must be at least 1")
        if self.hard_iteration_cap is not None and self.hard_iteration_cap < 1:
            raise ValueError("hard_iteration_cap must be positive")


class IterationCapError(RuntimeError):
    pass


def select_candidates(v, active, tol: float) -> np.ndarray:
    """Indices of ``active`` with ``v < -tol``, most negative first, ties by index."""
    active = np.asarray(active, dtype=np.intp)
    if active.size == 0:
        return active
    vals = np.asarray(v)[active]
    neg = active[vals < -tol]
    return neg[np.lexsort((neg, np.asarray(v)[neg]))]


def next_active_set(active, support, candidates, r: int, nu: int, tau: int, beta0: int, beta1: int):
    """Return ``(new_active, branch, freed)``."""
    candidates = np.asarray(candidates, dtype=np.intp)
    if candidates.size < beta0 or r > beta1:
        return np.setdiff1d(active, candidates), SHRINK, candidates
    freed = candidates[:tau]
    keep = np.union1d(support, freed)
    return np.setdiff1d(np.arange(nu), keep), REBUILD, freed


def solve(problem: NnqProblem, init_active, config: Optional[DriverConfig] = None) -> SolveResult:
    """Run the active-set loop from an initial active set.

    Parameters
    ----------
    problem : NnqProblem
        The full problem.
    init_active : array_like of int
        Indices fixed at zero in the first subproblem. The remaining variables
        must admit a feasible point.
    config : DriverConfig, optional
        Loop parameters; ``tau``, ``beta0`` and the iteration cap are filled
        in from the problem size when left as ``None``.

    Returns
    -------
    SolveResult
        Final iterate with its multipliers. ``status`` is ``"converged"``, or
        ``"beta1-fallback-converged"`` when the loop had to enter the
        shrink-only regime.

    Raises
    ------
    IterationCapError
        If the hard iteration cap is reached (a defect, not a user error).
    SubsolverError
        Propagated from the reduced solves.
    """
    cfg = (config or DriverConfig()).resolved(problem.dim)
    nu = problem.dim
    tol = problem.tolerances(cfg.tolerances)
    trace = SolveTrace(tau=cfg.tau, beta0=cfg.beta0, beta1=cfg.beta1)

    active = np.unique(np.asarray(init_active, dtype=np.intp))
    qp = extract_subproblem(problem, active)
    rep = solve_reduced(qp)
    x = qp.scatter(rep.primal, nu)
    u, w = rep.ineq_dual, rep.eq_dual
    sub_iters = rep.iterations
    branch = INITIAL
    step = 0.0
    r = 1
    while True:
        f = objective(problem, x)
        v = recover_reduced_cost(problem, x, u, w)
        support = np.flatnonzero(x > tol["x"])
        cand = select_candidates(v, active, tol["v"])
        rec = IterationRecord(
            r=r,
            objective=f,
            n_candidates=int(cand.size),
            support_size=int(support.size),
            active_size=int(active.size),
            free_size=nu - int(active.size),
            branch=branch,
            step_norm=step,
            subsolver_iterations=sub_iters,
        )
        if cfg.record_trace:
            rec.x, rec.v, rec.candidates, rec.active = x.copy(), v, cand, active
        trace.records.append(rec)
        if cand.size == 0:
            status = "beta1-fallback-converged" if r > cfg.beta1 else "converged"
            break
        if r >= cfg.hard_iteration_cap:
            raise IterationCapError(f"hard iteration cap {cfg.hard_iteration_cap} reached")
        new_active, branch, freed = next_active_set(
            active, support, cand, r, nu, cfg.tau, cfg.beta0, cfg.beta1
        )
        if cfg.record_trace:
            rec.freed, rec.next_active = freed, new_active
        qp = extract_subproblem(problem, new_active)
        rep = solve_reduced(qp, warm_start=x[qp.free])
        x_new = qp.scatter(rep.primal, nu)
        step = float(np.linalg.norm(x_new - x))
        x, u, w, active = x_new, rep.ineq_dual, rep.eq_dual, new_active
        sub_iters = rep.iterations
        r += 1
        log.debug("r=%d branch=%s |E|=%d free=%d f=%.12g", r, branch, cand.size, qp.size, f)

    cert = DualCertificate(ineq_dual=u, eq_dual=w, reduced_cost=v)
    if not kkt_satisfied(problem, x, cert, cfg.tolerances):
        log.warning("final iterate does not meet the KKT tolerances")
    return SolveResult(
        primal=x,
        certificate=cert,
        objective=objective(problem, x),
        trace=trace,
        status=status,
        iterations=r,
    )
