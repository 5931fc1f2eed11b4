"""Command-line harness.

Subcommands: eval, solve, smooth, simulate, cv, bench.  Exit codes: 0 on
success, 1 on usage errors, 2 on solver failures.  Logging level comes
from the PLQ_LOG environment variable (error | info | debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import bench
from .errors import PlqError
from .ipsolve import SolveOptions, problem_from_dict, solve
from .kalman import SmootherSpec, model_from_dict, smooth_plq, support_vectors
from .penalties import CATALOGUE_KINDS, evaluate, make_catalogue

log = logging.getLogger("plq")


def _setup_logging() -> None:
    level = os.environ.get("PLQ_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _penalty_args(p: argparse.ArgumentParser, prefix: str = "penalty") -> None:
    p.add_argument(f"--{prefix}", choices=CATALOGUE_KINDS, default="huber")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=1.0)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plq", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("eval", help="evaluate a catalogue penalty")
    _penalty_args(pe)
    pe.add_argument("--y", type=float, nargs="+", required=True)
    pe.add_argument("--dual", action="store_true",
                    help="use the dual maximization instead of the closed form")

    ps = sub.add_parser("solve", help="solve an assembled PLQ problem")
    ps.add_argument("--config", required=True, help="problem JSON file")
    ps.add_argument("--out", default=None, help="output directory")
    ps.add_argument("--format", choices=["csv"], default="csv")

    pm = sub.add_parser("smooth", help="run the PLQ Kalman smoother")
    pm.add_argument("--config", required=True, help="model JSON file")
    pm.add_argument("--data", required=True, help="measurements CSV (k, z_1..z_m)")
    pm.add_argument("--penalty-process", choices=CATALOGUE_KINDS, default="l2")
    pm.add_argument("--penalty-meas", choices=CATALOGUE_KINDS, default="l2")
    pm.add_argument("--kappa", type=float, default=1.0)
    pm.add_argument("--eps", type=float, default=0.1)
    pm.add_argument("--weights", choices=["none", "standardized"], default="none")
    pm.add_argument("--out", default=".", help="output directory")
    pm.add_argument("--format", choices=["csv"], default="csv")

    pg = sub.add_parser("simulate", help="generate the oscillator data set")
    pg.add_argument("--count", type=int, default=2000)
    pg.add_argument("--p", type=float, default=0.1)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out", default=".")

    pc = sub.add_parser("cv", help="cross-validate the spline smoother")
    pc.add_argument("--data", required=True, help="CSV with columns t, z")
    pc.add_argument("--penalty-meas", choices=["l2", "vapnik"], default="vapnik")
    pc.add_argument("--lambda2", type=float, nargs="+", default=None,
                    help="lambda^2 grid values (default: 10 log-spaced in [0.01, 1e4])")
    pc.add_argument("--eps-grid", type=float, nargs="+", default=None,
                    help="eps grid values (default: 20 linear in [0, 1])")
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--workers", type=int, default=1)
    pc.add_argument("--out", default=".")

    pb = sub.add_parser("bench", help="benchmark suites")
    pb.add_argument("--suite", choices=["table1", "scaling"], default="table1")
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--out", default=".")
    pb.add_argument("--n-list", type=int, nargs="+",
                    default=[250, 500, 1000, 2000, 4000])
    pb.add_argument("--penalty-meas", choices=CATALOGUE_KINDS, default="vapnik")
    pb.add_argument("--eps", type=float, default=0.3)
    return ap


def _read_measurements(path: str) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:]


def _cmd_eval(args) -> int:
    pen = make_catalogue(args.penalty, dim=len(args.y), kappa=args.kappa,
                         eps=args.eps, lam=args.lam)
    val = evaluate(pen, np.asarray(args.y), method="dual" if args.dual else "auto")
    print(f"{val:.17g}" if np.isfinite(val) else "inf")
    return 0


def _cmd_solve(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        spec = json.load(fh)
    prob = problem_from_dict(spec, base_dir=os.path.dirname(args.config) or ".")
    y, u, stats = solve(prob, SolveOptions())
    print(f"iterations,{stats.iterations}")
    print(f"kkt_inf,{stats.final_kkt_inf:.17g}")
    print(f"objective,{evaluate(prob.penalty, y):.17g}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        bench.write_csv(os.path.join(args.out, "solution.csv"),
                        ["i", "y"], [(i, v) for i, v in enumerate(y)])
    return 0


def _cmd_smooth(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        model = model_from_dict(json.load(fh))
    z = _read_measurements(args.data)
    spec = SmootherSpec(
        process=args.penalty_process, meas=args.penalty_meas,
        process_params={"kappa": args.kappa} if args.penalty_process == "huber"
        else ({"eps": args.eps} if args.penalty_process in ("vapnik", "hinge") else {}),
        meas_params={"kappa": args.kappa} if args.penalty_meas == "huber"
        else ({"eps": args.eps} if args.penalty_meas in ("vapnik", "hinge") else {}),
        weight_mode=args.weights)
    res = smooth_plq(model, z, spec)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "xhat.csv")
    n = res.xhat.shape[1]
    bench.write_csv(path, ["k"] + [f"xhat_{j + 1}" for j in range(n)],
                    ((k + 1, *res.xhat[k]) for k in range(res.xhat.shape[0])))
    print(f"wrote,{path}")
    print(f"iterations,{res.stats.iterations}")
    print(f"kkt_inf,{res.stats.final_kkt_inf:.17g}")
    if spec.meas == "vapnik":
        sv = support_vectors(res, args.eps)
        print(f"support_vectors,{sv.size}")
    return 0


def _cmd_simulate(args) -> int:
    t, truth, z = bench.simulate_expsin8(args.count, args.p, args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "simulated.csv")
    bench.write_csv(path, ["t", "truth", "z"], zip(t, truth, z))
    print(f"wrote,{path}")
    return 0


def _cmd_cv(args) -> int:
    data = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
    t, z = data[:, 0], data[:, 1]
    lam2 = args.lambda2 if args.lambda2 else np.logspace(-2, 4, 10)
    eps = args.eps_grid if args.eps_grid is not None else np.linspace(0.0, 1.0, 20)
    grid = bench.CvGrid(lam2, eps, seed=args.seed)
    (l2b, epsb), surface, _ = bench.cross_validate(
        t, z, grid, meas_kind=args.penalty_meas, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "cv_surface.csv")
    bench.write_csv(path, ["lambda2", "eps", "rel_pred_error"], surface)
    print(f"best_lambda2,{l2b:.17g}")
    print(f"best_eps,{epsb:.17g}")
    print(f"wrote,{path}")
    return 0


def _cmd_bench(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.suite == "table1":
        rows = bench.run_table1_suite(bench.BenchConfig(seed=args.seed))
        path = os.path.join(args.out, "table1.csv")
        bench.table1_rows_to_csv(rows, path)
        bad = [r for r in rows if r["status"] != "ok"]
        print(f"wrote,{path}")
        print(f"rows,{len(rows)}")
        print(f"failures,{len(bad)}")
        return 0 if not bad else 2
    spec = SmootherSpec(process="l2", meas=args.penalty_meas,
                        meas_params={"eps": args.eps})
    rows, slope = bench.bench_scaling(args.n_list, spec, seed=args.seed)
    path = os.path.join(args.out, "scaling.csv")
    bench.write_csv(path, ["N", "median_seconds"], rows)
    print(f"wrote,{path}")
    print(f"slope,{slope:.17g}")
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    handlers = {
        "eval": _cmd_eval,
        "solve": _cmd_solve,
        "smooth": _cmd_smooth,
        "simulate": _cmd_simulate,
        "cv": _cmd_cv,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        log.error("usage error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PlqError as exc:
        log.error("solver failure: %s", exc)
        print(f"solver error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
