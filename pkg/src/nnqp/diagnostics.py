"""Reference solutions and runtime checks on solver traces.

The checks here do not influence the solve; they re-derive quantities from a
recorded trace and compare them against the analytical bounds the active-set
loop is supposed to satisfy.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import (
    DualCertificate,
    IterationRecord,
    NnqProblem,
    SolveResult,
    SolveTrace,
    objective,
    gradient,
    recover_reduced_cost,
)
from .subsolver import extract_subproblem, solve_reduced
from .driver import REBUILD, SHRINK

ORACLE_MAX_DIM = 3000


class OracleSizeError(ValueError):
    pass


def full_oracle(problem: NnqProblem, max_dim: int = ORACLE_MAX_DIM) -> SolveResult:
    """Solve the whole problem with a single subsolver call (no active set)."""
    if problem.dim > max_dim:
        raise OracleSizeError(f"{problem.dim} variables exceeds the oracle limit of {max_dim}")
    qp = extract_subproblem(problem, np.zeros(0, dtype=np.intp))
    rep = solve_reduced(qp)
    x = qp.scatter(rep.primal, problem.dim)
    v = recover_reduced_cost(problem, x, rep.ineq_dual, rep.eq_dual)
    f = objective(problem, x)
    trace = SolveTrace(records=[IterationRecord(1, f, 0, int(np.count_nonzero(x > 1e-10)), 0, problem.dim, "oracle", 0.0, rep.iterations)])
    return SolveResult(x, DualCertificate(rep.ineq_dual, rep.eq_dual, v), f, trace, "converged", 1)


def relative_gap(f, f_ref) -> float:
    return abs(f - f_ref) / max(1.0, abs(f_ref))


@dataclass
class SandwichReport:
    step: float
    gain: float
    upper: float
    lower: float
    ok_upper: bool
    ok_lower: bool

    @property
    def ok(self) -> bool:
        return self.ok_upper and self.ok_lower


def _max_feasible_step(problem: NnqProblem, x, n) -> float:
    t = math.inf
    neg = n < 0
    if neg.any():
        t = min(t, float(np.min(np.maximum(x[neg], 0.0) / -n[neg])))
    if problem.n_ineq:
        slack = np.maximum(np.asarray(problem.ineq_matrix @ x).ravel() - problem.ineq_rhs, 0.0)
        bn = np.asarray(problem.ineq_matrix @ n).ravel()
        dec = bn < 0
        if dec.any():
            t = min(t, float(np.min(slack[dec] / -bn[dec])))
    return t


def check_descent_sandwich(problem: NnqProblem, x_r, x_next, slack: float = 1e-8) -> SandwichReport:
    """Bound the exact gain of a line search along ``x_next - x_r`` by the directional derivative.

    With ``n`` the unit direction and ``y`` the feasible minimizer of ``f`` on the
    ray, checks ``-|x_r - y| <grad, n> / 2 <= f(x_r) - f(y) <= -|x_r - y| <grad, n>``.
    """
    x_r = np.asarray(x_r, dtype=float)
    d = np.asarray(x_next, dtype=float) - x_r
    length = float(np.linalg.norm(d))
    if length == 0.0:
        return SandwichReport(0.0, 0.0, 0.0, 0.0, True, True)
    n = d / length
    gn = float(gradient(problem, x_r) @ n)
    curv = float(n @ (problem.gram @ n))
    if gn >= 0.0:
        step = 0.0
    else:
        step = -gn / (2.0 * curv) if curv > 0 else math.inf
        step = min(step, _max_feasible_step(problem, x_r, n))
        if not math.isfinite(step):
            raise ValueError("objective is unbounded along the direction")
    # exact for a quadratic; avoids cancellation between two large objective values
    gain = -step * gn - step * step * curv
    upper = -step * gn
    lower = 0.5 * upper
    tol = slack * (1.0 + abs(upper))
    return SandwichReport(step, gain, upper, lower, gain <= upper + tol, gain >= lower - tol)


@dataclass
class CosineReport:
    cosine: float
    bound: float
    alpha: float
    n_used: int

    @property
    def ok(self) -> bool:
        return self.cosine >= self.bound

    @property
    def margin(self) -> float:
        return self.cosine - self.bound


def cosine_bound(n_candidates: int, tau: int, nu: int) -> float:
    if n_candidates == 0:
        return 0.0
    alpha = min(1.0, tau / n_candidates)
    if nu < 2:
        return 1.0
    return math.sqrt(alpha / (2.0 * math.log(nu)))


def check_cosine_bound(v, candidates, tau: int, nu: int) -> CosineReport:
    """Angle between ``-v`` projected onto the candidate coordinates and its top-``tau`` restriction."""
    v = np.asarray(v, dtype=float)
    cand = np.asarray(candidates, dtype=np.intp)
    if cand.size == 0:
        return CosineReport(1.0, 0.0, 1.0, 0)
    alpha = min(1.0, tau / cand.size)
    used = cand[: min(tau, cand.size)]
    proj = np.zeros_like(v)
    proj[cand] = -v[cand]
    direction = np.zeros_like(v)
    direction[used] = -v[used]
    norm_p, norm_d = np.linalg.norm(proj), np.linalg.norm(direction)
    if norm_p == 0.0 or norm_d == 0.0:
        cos = 1.0
    else:
        cos = float(np.clip(proj @ direction / (norm_p * norm_d), -1.0, 1.0))
    return CosineReport(cos, cosine_bound(cand.size, tau, nu), alpha, int(used.size))


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return math.nan
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _stats(values) -> dict:
    vals = np.array([x for x in values if x is not None and math.isfinite(x)])
    if vals.size == 0:
        return {"mean": None, "median": None, "max": None, "count": 0}
    return {"mean": float(vals.mean()), "median": float(np.median(vals)), "max": float(vals.max()), "count": int(vals.size)}


def convergence_report(trace: SolveTrace, x_star, f_star: Optional[float] = None, lam: float = 10.0) -> ConvergenceReport:
    """Per-iteration gap, move and cosine ratios against a reference optimum.

    Iterations already within ``1e-12 (1 + |f*|)`` of the optimum are skipped.
    Needs a trace recorded with iterates (``record_trace=True``).
    """
    x_star = np.asarray(x_star, dtype=float)
    recs = trace.records
    if f_star is None:
        f_star = min(rec.objective for rec in recs) if recs else 0.0
    eps = 1e-12 * (1.0 + abs(f_star))
    rows = []
    for cur, nxt in zip(recs[:-1], recs[1:]):
        if cur.x is None or nxt.x is None:
            raise ValueError("trace has no recorded iterates")
        gap = cur.objective - f_star
        if gap <= eps:
            continue
        to_star = x_star - cur.x
        move = nxt.x - cur.x
        dist = float(np.linalg.norm(to_star))
        move_ratio = float(np.linalg.norm(move)) / dist if dist > 0 else math.nan
        c_move, c_star = _cos(cur.v, move), _cos(cur.v, to_star)
        rows.append({
            "r": cur.r,
            "gap_ratio": (nxt.objective - f_star) / gap,
            "move_ratio": move_ratio,
            "cosine_ratio": c_move / c_star if c_star not in (0.0,) and math.isfinite(c_star) and math.isfinite(c_move) else math.nan,
            "lambda_ok": bool(move_ratio >= 1.0 / lam) if math.isfinite(move_ratio) else False,
        })
    summary = {
        "lambda": lam,
        "gap_ratio": _stats(r["gap_ratio"] for r in rows),
        "move_ratio": _stats(r["move_ratio"] for r in rows),
        "cosine_ratio": _stats(r["cosine_ratio"] for r in rows),
        "lambda_ok_fraction": (sum(r["lambda_ok"] for r in rows) / len(rows)) if rows else None,
    }
    return ConvergenceReport(rows, summary)


@dataclass
class PolicyReport:
    shrink_after_beta1: bool = True
    rebuild_disjoint: bool = True
    monotone: bool = True
    sandwich_pass: int = 0
    sandwich_total: int = 0
    cosine_pass: int = 0
    cosine_total: int = 0
    worst_cosine_margin: Optional[float] = None

    @property
    def ok(self) -> bool:
        return (
            self.shrink_after_beta1
            and self.rebuild_disjoint
            and self.monotone
            and self.sandwich_pass == self.sandwich_total
            and self.cosine_pass == self.cosine_total
        )


def check_policy(problem: NnqProblem, trace: SolveTrace, eps_x: float = 1e-10) -> PolicyReport:
    """Re-check the update rule and the per-iteration bounds on a recorded trace.

    Fills ``record.diagnostics`` with the sandwich and cosine results.
    """
    rep = PolicyReport()
    nu = problem.dim
    recs = trace.records
    for cur, nxt in zip(recs[:-1], recs[1:]):
        if cur.next_active is None:
            raise ValueError("trace has no recorded active sets")
        if cur.r > trace.beta1 and cur.n_candidates > 0:
            rep.shrink_after_beta1 &= cur.next_active.size < cur.active.size and nxt.branch == SHRINK
        if nxt.branch == REBUILD:
            support = np.flatnonzero(cur.x > eps_x)
            rep.rebuild_disjoint &= np.intersect1d(cur.next_active, np.union1d(support, cur.freed)).size == 0
            cos = check_cosine_bound(cur.v, cur.candidates, trace.tau, nu)
            cur.diagnostics["cosine"] = cos.cosine
            cur.diagnostics["cosine_bound"] = cos.bound
            rep.cosine_total += 1
            rep.cosine_pass += cos.ok
            m = cos.margin
            rep.worst_cosine_margin = m if rep.worst_cosine_margin is None else min(rep.worst_cosine_margin, m)
        rep.monotone &= nxt.objective <= cur.objective + 1e-9 * (1.0 + abs(cur.objective))
        sw = check_descent_sandwich(problem, cur.x, nxt.x)
        cur.diagnostics["sandwich_ok"] = sw.ok
        cur.diagnostics["sandwich_gain"] = sw.gain
        rep.sandwich_total += 1
        rep.sandwich_pass += sw.ok
    return rep


def support_condition(problem: NnqProblem, x, eps_x: float = 1e-10) -> float:
    """Condition number of ``Q`` restricted to the support of ``x`` (desk scale)."""
    s = np.flatnonzero(np.asarray(x) > eps_x)
    if s.size == 0:
        return 1.0
    q = problem.gram[:, s][s, :] if not isinstance(problem.gram, np.ndarray) else problem.gram[np.ix_(s, s)]
    q = q.toarray() if hasattr(q, "toarray") else q
    return float(np.linalg.cond(q))


TRACE_COLUMNS = [
    "r", "objective", "n_candidates", "support_size", "active_size", "free_size", "branch",
    "step_norm", "subsolver_iterations", "gap_ratio", "move_ratio", "cosine_ratio", "lambda_ok",
    "sandwich_ok", "cosine", "cosine_bound",
]


def trace_rows(trace: SolveTrace, report: Optional[ConvergenceReport] = None) -> list:
    by_r = {row["r"]: row for row in report.rows} if report else {}
    rows = []
    for rec in trace.records:
        row = {k: getattr(rec, k) for k in TRACE_COLUMNS[:9]}
        row.update({k: by_r.get(rec.r, {}).get(k, "") for k in ("gap_ratio", "move_ratio", "cosine_ratio", "lambda_ok")})
        for k in ("sandwich_ok", "cosine", "cosine_bound"):
            row[k] = rec.diagnostics.get(k, "")
        rows.append(row)
    return rows


def write_trace_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def summary_json(report: ConvergenceReport, policy: Optional[PolicyReport] = None) -> str:
    out = {"convergence": report.summary}
    if policy is not None:
        out["policy"] = asdict(policy) | {"ok": policy.ok}
    return json.dumps(out, indent=2, sort_keys=True)
