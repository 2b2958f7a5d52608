"""Command-line interface.

    nnqp meb --generate unit-cube --n 1000 --d 200 --seed 7 --oracle
    nnqp pd --p p.csv --q q.csv
    nnqp dksg --input points.csv --trace trace.csv --oracle
    nnqp deblur --psf turbulence --sigma 1 --image img.pgm --self-blur
    nnqp bench --problem meb --n 500 1000 --d 50 --reps 5 --output bench.csv
    nnqp selftest

Results are written as JSON (``schema`` 1), traces and benchmarks as CSV,
images as binary PGM.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics, geometry, imaging
from .driver import DriverConfig, solve
from .io import SCHEMA_VERSION, dumps, read_points
from .model import EPS_X, NnqProblem, Tolerances, kkt_satisfied

log = logging.getLogger("nnqp")

PROBLEMS = ("meb", "pd", "dksg", "zhlg", "deblur")


@dataclass
class Prepared:
    problem: NnqProblem
    init_active: np.ndarray
    build_time: float
    payload: callable = None
    extra: dict = field(default_factory=dict)


def driver_config(args) -> DriverConfig:
    tol = Tolerances(
        v=args.tol_v if args.tol_v is not None else Tolerances.v,
        primal=args.tol_primal if args.tol_primal is not None else Tolerances.primal,
    )
    cfg = DriverConfig(tau=args.tau, beta0=args.beta0, beta1=args.beta1, tolerances=tol)
    cfg.validate()
    return cfg


def _cloud(args) -> geometry.PointCloud:
    if getattr(args, "input", None):
        return geometry.PointCloud(read_points(args.input))
    return geometry.generate_cloud(args.generate, args.n, args.d, seed=args.seed)


def _edges_payload(cloud, x):
    edges = geometry.EdgeIndex(cloud.n)
    keep = np.flatnonzero(x > EPS_X)
    i, j = edges.pair(keep)
    return {"edges": [[int(a), int(b), float(w)] for a, b, w in zip(i, j, x[keep])]}


def prepare(kind: str, args) -> Prepared:
    t0 = time.perf_counter()
    cfg = driver_config(args)
    if kind == "meb":
        cloud = _cloud(args)
        problem = geometry.build_meb(cloud)
        init = geometry.init_meb(cloud)

        def payload(res):
            center, radius = geometry.meb_ball(cloud, res.primal, res.objective)
            return {"center": center, "radius": radius}

    elif kind == "pd":
        if args.p or args.q:
            if not (args.p and args.q):
                raise ValueError("pd needs both --p and --q")
            cloud = geometry.PointCloud(read_points(args.p), read_points(args.q))
        else:
            cloud = geometry.generate_cloud("shifted-cubes", args.n, args.d, seed=args.seed, shift=args.shift)
        problem = geometry.build_pd(cloud)
        m = cloud.points.shape[0]
        init = geometry.init_pd(m, cloud.second.shape[0])

        def payload(res):
            x = res.primal
            return {
                "distance": float(np.sqrt(max(res.objective, 0.0))),
                "closest_p": x[:m] @ cloud.points,
                "closest_q": x[m:] @ cloud.second,
            }

    elif kind in ("dksg", "zhlg"):
        cloud = _cloud(args)
        nu = geometry.EdgeIndex(cloud.n).count
        beta0 = cfg.resolved(nu).beta0
        if kind == "dksg":
            problem = geometry.build_dksg(cloud)
            init = geometry.init_dksg(cloud, beta0, seed=args.seed)
        else:
            problem = geometry.build_zhlg(cloud, mu=args.mu, rho=args.rho)
            init = geometry.init_zhlg(cloud.n, beta0, seed=args.seed)

        def payload(res):
            return _edges_payload(cloud, res.primal)

    elif kind == "deblur":
        if args.image:
            image = imaging.read_pgm(args.image)
        else:
            image = imaging.synthetic_sparse_image(args.n, args.d or args.n, density=args.density, seed=args.seed)
        if args.threshold is not None:
            image = imaging.sparsify(image, args.threshold)
        if args.psf == "turbulence":
            op = imaging.build_turbulence_psf(args.sigma, image.shape)
        else:
            op = imaging.build_outoffocus_psf(args.radius, image.shape)
        original = image if args.self_blur or not args.image else None
        observed = imaging.blur(op, image) if original is not None else image
        problem = imaging.build_nnls(op, observed)
        resolved = cfg.resolved(problem.dim)
        init = imaging.init_deblur(problem, resolved.tau, resolved.beta0, seed=args.seed)

        def payload(res):
            rec = imaging.ImageGrid.from_vector(res.primal, image.shape)
            out = {"shape": list(image.shape), "residual_norm_sq": res.objective + problem.constant}
            if original is not None:
                out["relative_mse"] = imaging.relative_mse(rec, original)
            if args.output_image:
                imaging.write_pgm(args.output_image, rec)
                out["output_image"] = str(args.output_image)
            return out

    else:
        raise ValueError(f"unknown problem {kind!r}")
    return Prepared(problem, init, time.perf_counter() - t0, payload)


def run_one(kind: str, args) -> dict:
    prep = prepare(kind, args)
    cfg = driver_config(args)
    record = bool(args.trace) or args.oracle
    cfg.record_trace = record
    problem = prep.problem
    t0 = time.perf_counter()
    res = solve(problem, prep.init_active, cfg)
    solve_time = time.perf_counter() - t0
    resolved = cfg.resolved(problem.dim)
    result = {
        "schema": SCHEMA_VERSION,
        "problem": kind,
        "status": res.status,
        "objective": res.objective,
        "reported_objective": res.objective + problem.constant,
        "iterations": res.iterations,
        "nu": problem.dim,
        "support_size": int(res.support.size),
        "kkt_ok": kkt_satisfied(problem, res.primal, res.certificate, resolved.tolerances),
        "config": {"tau": resolved.tau, "beta0": resolved.beta0, "beta1": resolved.beta1, "seed": args.seed},
        "payload": prep.payload(res),
    }
    if not args.no_timings:
        result["timings"] = {"build": prep.build_time, "solve": solve_time}
    report = None
    if args.oracle:
        t1 = time.perf_counter()
        ref = diagnostics.full_oracle(problem)
        oracle_time = time.perf_counter() - t1
        result["oracle"] = {
            "objective": ref.objective,
            "rel_gap": diagnostics.relative_gap(res.objective, ref.objective),
            "support_size": int(ref.support.size),
        }
        if not args.no_timings:
            result["oracle"]["time"] = oracle_time
        report = diagnostics.convergence_report(res.trace, ref.primal, ref.objective)
        policy = diagnostics.check_policy(problem, res.trace)
        result["diagnostics"] = {"convergence": report.summary, "policy_ok": policy.ok,
                                 "sandwich": [policy.sandwich_pass, policy.sandwich_total],
                                 "cosine": [policy.cosine_pass, policy.cosine_total],
                                 "support_condition": diagnostics.support_condition(problem, res.primal)}
    if args.trace:
        diagnostics.write_trace_csv(args.trace, diagnostics.trace_rows(res.trace, report))
    return result


def _emit(args, payload: dict):
    text = dumps(payload)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


BENCH_COLUMNS = ["problem", "n", "d", "seed", "solvennq_time", "oracle_time", "iterations",
                 "nnz", "nnz_pct", "objective", "rel_gap"]


def bench(args) -> list:
    """One averaged row per ``(n, d)`` cell; repetitions use seeds ``seed, seed+1, ...``."""
    rows = []
    for n in args.n:
        for d in args.d:
            acc = {k: [] for k in BENCH_COLUMNS[4:]}
            for rep in range(args.reps):
                sub = argparse.Namespace(**vars(args))
                sub.n, sub.d, sub.seed = n, d, args.seed + rep
                sub.trace, sub.output_image, sub.image, sub.input, sub.p, sub.q = None, None, None, None, None, None
                sub.self_blur = True
                prep = prepare(args.problem, sub)
                cfg = driver_config(args)
                cfg.record_trace = False
                t0 = time.perf_counter()
                res = solve(prep.problem, prep.init_active, cfg)
                acc["solvennq_time"].append(time.perf_counter() - t0)
                acc["iterations"].append(res.iterations)
                acc["nnz"].append(res.support.size)
                acc["nnz_pct"].append(100.0 * res.support.size / prep.problem.dim)
                acc["objective"].append(res.objective)
                if args.oracle:
                    t1 = time.perf_counter()
                    ref = diagnostics.full_oracle(prep.problem)
                    acc["oracle_time"].append(time.perf_counter() - t1)
                    acc["rel_gap"].append(diagnostics.relative_gap(res.objective, ref.objective))
            row = {"problem": args.problem, "n": n, "d": d, "seed": args.seed}
            for k, vals in acc.items():
                row[k] = float(np.mean(vals)) if vals else ""
            if args.no_timings:
                row["solvennq_time"] = row["oracle_time"] = ""
            rows.append(row)
    return rows


def selftest(args) -> bool:
    """Small instances of every family checked against the one-shot oracle."""
    ok_all = True
    cases = [
        ("meb", dict(generate="unit-cube", n=300, d=20)),
        ("pd", dict(n=300, d=5, shift=4.0)),
        ("dksg", dict(generate="unit-cube", n=25, d=3)),
        ("zhlg", dict(generate="unit-cube", n=25, d=3)),
        ("deblur", dict(n=16, d=16, psf="turbulence", sigma=1.0)),
    ]
    for kind, over in cases:
        sub = argparse.Namespace(**vars(args))
        for k, v in dict(input=None, p=None, q=None, image=None, trace=None, output_image=None,
                         self_blur=True, threshold=None, density=0.12, mu=16.0, rho=2.0,
                         radius=1.0, oracle=True, no_timings=True).items():
            setattr(sub, k, v)
        for k, v in over.items():
            setattr(sub, k, v)
        try:
            out = run_one(kind, sub)
            ok = out["kkt_ok"] and out["oracle"]["rel_gap"] <= 1e-6 and out["diagnostics"]["policy_ok"]
            detail = f"rel_gap={out['oracle']['rel_gap']:.2e} iterations={out['iterations']}"
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= ok
        print(f"{'PASS' if ok else 'FAIL'} {kind:7s} {detail}")
    return ok_all


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=int)
    p.add_argument("--beta0", type=int)
    p.add_argument("--beta1", type=int, default=15)
    p.add_argument("--tol-v", type=float, help="multiplier of 1+|a|_inf for the negativity test on v")
    p.add_argument("--tol-primal", type=float, help="relative primal feasibility tolerance")
    p.add_argument("--oracle", action="store_true", help="also solve the full problem in one call and compare")
    p.add_argument("--trace", type=Path, help="per-iteration CSV")
    p.add_argument("--output", type=Path, help="result file (default: stdout)")
    p.add_argument("--no-timings", action="store_true", help="omit wall-clock fields")
    p.add_argument("-v", "--verbose", action="store_true")


def _generator(p, kinds, default):
    p.add_argument("--input", type=Path, help="point CSV")
    p.add_argument("--generate", choices=kinds, default=default)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnqp", description="Active-set solver for non-negative convex QPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("meb", help="minimum enclosing ball")
    _common(p)
    _generator(p, ["unit-cube", "near-sphere"], "unit-cube")

    p = sub.add_parser("pd", help="distance between two convex hulls")
    _common(p)
    p.add_argument("--p", type=Path, help="point CSV for the first set")
    p.add_argument("--q", type=Path, help="point CSV for the second set")
    p.add_argument("--n", type=int, default=200, help="total generated points")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--shift", type=float, default=4.0, help="gap between the generated cubes")

    for name in ("dksg", "zhlg"):
        p = sub.add_parser(name, help=f"{name.upper()} proximity graph")
        _common(p)
        _generator(p, ["unit-cube", "near-sphere"], "unit-cube")
        p.set_defaults(n=40, d=5)
        if name == "zhlg":
            p.add_argument("--mu", type=float, default=16.0)
            p.add_argument("--rho", type=float, default=2.0)

    p = sub.add_parser("deblur", help="non-negative least-squares deblurring")
    _common(p)
    _add_deblur(p)

    p = sub.add_parser("bench", help="seeded benchmark grid, CSV output")
    _common(p)
    p.add_argument("--problem", choices=PROBLEMS, default="meb")
    p.add_argument("--n", type=int, nargs="+", default=[500])
    p.add_argument("--d", type=int, nargs="+", default=[20])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--generate", default="unit-cube")
    p.add_argument("--shift", type=float, default=4.0)
    p.add_argument("--mu", type=float, default=16.0)
    p.add_argument("--rho", type=float, default=2.0)
    _add_deblur(p, with_image=False)

    p = sub.add_parser("selftest", help="quick oracle check on every problem family")
    _common(p)
    return parser


def _add_deblur(p, with_image: bool = True):
    if with_image:
        p.add_argument("--image", type=Path, help="PGM image (P2 or P5)")
        p.add_argument("--self-blur", action="store_true", help="treat --image as the original and blur it first")
        p.add_argument("--output-image", type=Path, help="write the recovered image as P5 PGM")
        p.add_argument("--n", type=int, default=32, help="synthetic image rows")
        p.add_argument("--d", type=int, help="synthetic image columns (default: rows)")
    p.add_argument("--psf", choices=["turbulence", "out-of-focus"], default="turbulence")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--threshold", type=float, help="zero out intensities at or below this value")
    p.add_argument("--density", type=float, default=0.12, help="non-zero fraction of synthetic images")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return 0 if selftest(args) else 1
        if args.command == "bench":
            rows = bench(args)
            fh = open(args.output, "w", newline="") if args.output else sys.stdout
            try:
                writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
                writer.writeheader()
                writer.writerows(rows)
            finally:
                if args.output:
                    fh.close()
            return 0
        _emit(args, run_one(args.command, args))
        return 0
    except Exception as exc:
        log.debug("failure", exc_info=True)
        _emit(args, {"schema": SCHEMA_VERSION, "error": {"type": type(exc).__name__, "message": str(exc)}})
        return 2


if __name__ == "__main__":
    sys.exit(main())
