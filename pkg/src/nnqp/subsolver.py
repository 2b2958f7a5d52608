"""Convex QP solver for the free-variable subproblem.

Solves

    minimize    1/2 x'Hx + g'x
    subject to  Bx >= b,  Cx = c,  x >= 0

with a primal-dual interior-point method (Mehrotra predictor-corrector) and
returns all multipliers, with the sign convention

    Hx + g - B'u - C'w - z = 0,   u >= 0,  z >= 0.

The interior-point iterate is finished by a polishing pass that guesses the
optimal active sets from the complementarity pairs and solves the resulting
equality-constrained KKT system directly; when the guess is certified the
returned point has exact zeros off its support.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .model import NnqProblem, dense

log = logging.getLogger(__name__)

MAX_ITER = 100
STEP_FRACTION = 0.995


class SubsolverError(RuntimeError):
    """Base class for subproblem failures."""


class InfeasibleError(SubsolverError):
    pass


class MaxIterationsError(SubsolverError):
    pass


class FactorizationError(SubsolverError):
    pass


class EmptySubproblemError(ValueError):
    pass


@dataclass
class ReducedQp:
    """The QP restricted to the free variables ``free`` (all others fixed at 0)."""

    free: np.ndarray
    hessian: np.ndarray
    linear: np.ndarray
    ineq: np.ndarray
    ineq_rhs: np.ndarray
    eq: np.ndarray
    eq_rhs: np.ndarray

    @property
    def size(self) -> int:
        return self.free.size

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.hessian @ x) + self.linear @ x)

    def scatter(self, x_free, nu: int) -> np.ndarray:
        x = np.zeros(nu)
        x[self.free] = x_free
        return x


@dataclass
class SubsolverReport:
    primal: np.ndarray
    ineq_dual: np.ndarray
    eq_dual: np.ndarray
    bound_dual: np.ndarray
    kkt_residual: float
    iterations: int
    polished: bool = False


def extract_subproblem(problem: NnqProblem, active) -> ReducedQp:
    """Gather the rows/columns of ``2Q``, ``a``, ``B`` and ``C`` for the free variables."""
    mask = np.ones(problem.dim, dtype=bool)
    active = np.asarray(active, dtype=np.intp).ravel()
    if active.size and (active.min() < 0 or active.max() >= problem.dim):
        raise IndexError("active set index out of range")
    mask[active] = False
    free = np.flatnonzero(mask)
    if free.size == 0:
        raise EmptySubproblemError("every variable is in the active set")
    if sp.issparse(problem.gram):
        hess = 2.0 * problem.gram[:, free][free, :].toarray()
    else:
        hess = 2.0 * problem.gram[np.ix_(free, free)]
    ineq = dense(problem.ineq_matrix[:, free]) if problem.n_ineq else np.zeros((0, free.size))
    eq = dense(problem.eq_matrix[:, free]) if problem.n_eq else np.zeros((0, free.size))
    return ReducedQp(
        free=free,
        hessian=hess,
        linear=problem.linear[free].copy(),
        ineq=np.asarray(ineq, dtype=float),
        ineq_rhs=problem.ineq_rhs.copy(),
        eq=np.asarray(eq, dtype=float),
        eq_rhs=problem.eq_rhs.copy(),
    )


def _kkt_residual(qp: ReducedQp, x, u, w, z) -> float:
    """Scaled worst violation among stationarity, feasibility, signs and complementarity."""
    g_scale = 1.0 + np.abs(qp.linear).max()
    stat = qp.hessian @ x + qp.linear - qp.ineq.T @ u - qp.eq.T @ w - z
    res = np.abs(stat).max() / g_scale
    res = max(res, max(0.0, -x.min()))
    res = max(res, max(0.0, -z.min()) / g_scale)
    res = max(res, np.abs(x * z).max() / g_scale)
    if qp.ineq_rhs.size:
        slack = qp.ineq @ x - qp.ineq_rhs
        b_scale = 1.0 + np.abs(qp.ineq_rhs).max()
        res = max(res, max(0.0, -slack.min()) / b_scale)
        res = max(res, max(0.0, -u.min()) / g_scale)
        res = max(res, np.abs(u * slack).max() / (g_scale * b_scale))
    if qp.eq_rhs.size:
        res = max(res, np.abs(qp.eq @ x - qp.eq_rhs).max() / (1.0 + np.abs(qp.eq_rhs).max()))
    return float(res)


def _max_step(v, dv) -> float:
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, (-v[neg] / dv[neg]).min()))


class _Newton:
    """Factorization of the reduced Newton system for one interior-point iterate."""

    def __init__(self, qp: ReducedQp, x, z, w, u):
        self.qp, self.x, self.z, self.w, self.u = qp, x, z, w, u
        n = qp.size
        m = qp.hessian + np.diag(z / x)
        if qp.ineq_rhs.size:
            bw = qp.ineq * (u / w)[:, None]
            m += qp.ineq.T @ bw
        self.m = m
        delta = 0.0
        base = 1e-10 * (1.0 + np.trace(qp.hessian) / n)
        for attempt in range(4):
            try:
                self.chol = sla.cho_factor(m + delta * np.eye(n), lower=True, check_finite=False)
                break
            except (np.linalg.LinAlgError, ValueError):
                delta = base if attempt == 0 else 2.0 * delta
        else:
            raise FactorizationError("Newton matrix is not positive definite after regularization")
        self.schur = None
        if qp.eq_rhs.size:
            mc = sla.cho_solve(self.chol, qp.eq.T, check_finite=False)
            s = qp.eq @ mc
            self.mc = mc
            self.schur = sla.lu_factor(s + 1e-14 * np.trace(s) * np.eye(s.shape[0]), check_finite=False)

    def _solve_reduced_system(self, rhs, rhs_e):
        m_rhs = sla.cho_solve(self.chol, rhs, check_finite=False)
        if self.schur is None:
            return m_rhs, np.zeros(0)
        dy = sla.lu_solve(self.schur, rhs_e - self.qp.eq @ m_rhs, check_finite=False)
        return m_rhs + self.mc @ dy, dy

    def solve(self, r_d, r_e, r_i, r_xz, r_wu):
        qp, x, z, w, u = self.qp, self.x, self.z, self.w, self.u
        rhs = -r_d - r_xz / x
        if qp.ineq_rhs.size:
            rhs -= qp.ineq.T @ ((r_wu + u * r_i) / w)
        dx, dy = self._solve_reduced_system(rhs, -r_e)
        # one step of iterative refinement against the unregularized matrix
        res = rhs - (self.m @ dx - qp.eq.T @ dy)
        res_e = -r_e - qp.eq @ dx
        ddx, ddy = self._solve_reduced_system(res, res_e)
        dx, dy = dx + ddx, dy + ddy
        dz = -(r_xz + z * dx) / x
        if qp.ineq_rhs.size:
            dw = qp.ineq @ dx + r_i
            du = -(r_wu + u * dw) / w
        else:
            dw = du = np.zeros(0)
        return dx, dz, dw, du, dy


def _polish(qp: ReducedQp, x, z, w, u, rounds: int = 3):
    """Solve the KKT system on the guessed support; return (x, u, y, z) or None."""
    n = qp.size
    pos = x > z
    act = u > w if qp.ineq_rhs.size else np.zeros(0, dtype=bool)
    g_scale = 1.0 + np.abs(qp.linear).max()
    tol = 1e-9
    for _ in range(rounds):
        p = np.flatnonzero(pos)
        a = np.flatnonzero(act)
        k = p.size
        cons = np.vstack([qp.ineq[np.ix_(a, p)], qp.eq[:, p]])
        rhs_c = np.concatenate([qp.ineq_rhs[a], qp.eq_rhs])
        mcon = cons.shape[0]
        kkt = np.zeros((k + mcon, k + mcon))
        kkt[:k, :k] = qp.hessian[np.ix_(p, p)]
        kkt[:k, k:] = cons.T
        kkt[k:, :k] = cons
        rhs = np.concatenate([-qp.linear[p], rhs_c])
        if kkt.size == 0:
            sol = np.zeros(0)
        else:
            try:
                with np.errstate(all="ignore"), warnings.catch_warnings():
                    warnings.simplefilter("error", sla.LinAlgWarning)
                    try:
                        sol = sla.solve(kkt, rhs, assume_a="sym")
                    except sla.LinAlgWarning:
                        # singular support system: any consistent solution will do
                        sol = sla.lstsq(kkt, rhs)[0]
                if not np.all(np.isfinite(sol)) or np.abs(kkt @ sol - rhs).max() > 1e-9 * (1 + np.abs(rhs).max()):
                    raise np.linalg.LinAlgError
            except (np.linalg.LinAlgError, ValueError):
                return None
        xp = np.zeros(n)
        xp[p] = sol[:k]
        mult = -sol[k:]
        up = np.zeros(qp.ineq_rhs.size)
        up[a] = mult[: a.size]
        yp = mult[a.size:]
        zp = qp.hessian @ xp + qp.linear - qp.ineq.T @ up - qp.eq.T @ yp
        zp[p] = 0.0
        bad_x = xp < -tol * (1.0 + np.abs(xp).max())
        bad_z = zp < -tol * g_scale
        bad_u = up < -tol * g_scale
        slack = qp.ineq @ xp - qp.ineq_rhs if qp.ineq_rhs.size else np.zeros(0)
        bad_s = slack < -tol * (1.0 + (np.abs(qp.ineq_rhs).max() if qp.ineq_rhs.size else 0.0))
        if not (bad_x.any() or bad_z.any() or bad_u.any() or bad_s.any()):
            xp = np.maximum(xp, 0.0)
            up = np.maximum(up, 0.0)
            zp = qp.hessian @ xp + qp.linear - qp.ineq.T @ up - qp.eq.T @ yp
            zp[p] = 0.0
            return xp, up, yp, zp
        pos = (pos & ~bad_x) | bad_z
        if act.size:
            act = (act & ~bad_u) | bad_s
    return None


def solve_reduced(
    qp: ReducedQp,
    warm_start: Optional[np.ndarray] = None,
    max_iter: int = MAX_ITER,
    tol: float = 1e-9,
    polish: bool = True,
) -> SubsolverReport:
    """Solve the reduced QP.

    Parameters
    ----------
    qp : ReducedQp
        Subproblem from :func:`extract_subproblem`.
    warm_start : ndarray, optional
        A guess for the free variables; it is shifted into the interior.
    max_iter : int
        Interior-point iteration budget.
    tol : float
        Relative tolerance on the scaled residuals and the duality gap.
    polish : bool
        Try to finish with an exact solve on the guessed support.

    Returns
    -------
    SubsolverReport

    Raises
    ------
    InfeasibleError, MaxIterationsError, FactorizationError
    """
    n = qp.size
    mb, mc = qp.ineq_rhs.size, qp.eq_rhs.size
    H, g, B, b, C, c = qp.hessian, qp.linear, qp.ineq, qp.ineq_rhs, qp.eq, qp.eq_rhs
    g_scale = 1.0 + np.abs(g).max()
    p_scale = 1.0 + max(np.abs(b).max() if mb else 0.0, np.abs(c).max() if mc else 0.0)

    if warm_start is not None and np.asarray(warm_start).size == n:
        ws = np.maximum(np.asarray(warm_start, dtype=float), 0.0)
        x = ws + max(1e-2, 0.1 * ws.mean())
    else:
        x = np.ones(n)
    z = np.ones(n) * max(1.0, 0.1 * g_scale)
    w = np.maximum(B @ x - b, 1.0) if mb else np.zeros(0)
    u = np.ones(mb)
    y = np.zeros(mc)

    stall = 0
    prev_mu = prev_prim = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        r_d = H @ x + g - B.T @ u - C.T @ y - z
        r_e = C @ x - c
        r_i = B @ x - w - b if mb else np.zeros(0)
        gap = x @ z + w @ u
        mu = gap / (n + mb)
        fval = abs(0.5 * x @ (H @ x) + g @ x)
        prim = max(np.abs(r_e).max() if mc else 0.0, np.abs(r_i).max() if mb else 0.0)
        dual = np.abs(r_d).max()
        d_scale = 1.0 + max(
            np.abs(g).max(),
            np.abs(H @ x).max(),
            np.abs(B.T @ u).max() if mb else 0.0,
            np.abs(C.T @ y).max() if mc else 0.0,
        )
        if dual <= tol * d_scale and prim <= tol * p_scale and gap <= 0.1 * tol * (1.0 + fval):
            converged = True
            break
        # an infeasible primal drives the multipliers off to infinity
        if prim > 1e-6 * p_scale and max(np.abs(z).max(), np.abs(y).max() if mc else 0.0) > 1e12 * g_scale:
            raise InfeasibleError(f"multipliers diverge with primal residual {prim:.3g}")
        # infeasible: complementarity keeps shrinking while the residual does not
        if prim > 1e-6 * p_scale and mu < prev_mu and prim > 0.5 * prev_prim:
            stall += 1
            if stall >= 10 and mu < 1e-8 * (1.0 + fval):
                raise InfeasibleError(f"primal residual stalled at {prim:.3g}")
        else:
            stall = 0
        prev_mu, prev_prim = mu, prim

        try:
            newton = _Newton(qp, x, z, w, u)
        except FactorizationError:
            if it == 1:
                raise
            log.debug("factorization failed at iteration %d; keeping current iterate", it)
            break
        # predictor
        dx, dz, dw, du, dy = newton.solve(r_d, r_e, r_i, x * z, w * u)
        alpha = min(_max_step(x, dx), _max_step(z, dz), _max_step(w, dw), _max_step(u, du))
        mu_aff = ((x + alpha * dx) @ (z + alpha * dz) + (w + alpha * dw) @ (u + alpha * du)) / (n + mb)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        r_xz = x * z + dx * dz - sigma * mu
        r_wu = w * u + dw * du - sigma * mu
        dx, dz, dw, du, dy = newton.solve(r_d, r_e, r_i, r_xz, r_wu)
        alpha = min(_max_step(x, dx), _max_step(z, dz), _max_step(w, dw), _max_step(u, du))
        alpha = min(1.0, STEP_FRACTION * alpha)
        x = x + alpha * dx
        z = z + alpha * dz
        y = y + alpha * dy
        if mb:
            w = w + alpha * dw
            u = u + alpha * du
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise FactorizationError("interior-point iterate became non-finite")

    if polish:
        pol = _polish(qp, x, z, w, u)
        if pol is not None:
            xp, up, yp, zp = pol
            res = _kkt_residual(qp, xp, up, yp, zp)
            if res <= max(tol, _kkt_residual(qp, np.maximum(x, 0), u, y, z)):
                return SubsolverReport(xp, up, yp, zp, res, it, polished=True)

    x = np.maximum(x, 0.0)
    res = _kkt_residual(qp, x, u, y, z)
    if not converged and res > 1e3 * tol:
        raise MaxIterationsError(f"no convergence after {max_iter} iterations (residual {res:.3g})")
    return SubsolverReport(x, u, y, z, res, it)
