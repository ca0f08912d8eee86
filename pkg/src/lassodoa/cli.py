"""Command line entry point: ``lassodoa <subcommand> ...``.

Subcommands
-----------
figure NAME     regenerate a figure dataset as CSV
mc              Monte Carlo summary for one scenario
solve           estimate positions from a data file (class, ml or cbf)
consistency     consistency verdict and margin curve for a configuration
threshold       asymptotic resolution-threshold search
lambda-stats    moments of the optimal regularization

Exit status is 0 on success, 1 when a certificate fails and 2 on usage or
scenario errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import textio
from .baselines import cbf_estimate, nlls_ml_estimate
from .class_estimator import CertificationError, ClassOptions, solve_class, solve_class_for_order
from .consistency import check_consistency, resolution_threshold_search
from .experiments import (
    FIGURES,
    ExperimentConfig,
    ScenarioError,
    lambda_moment_rows,
    load_config,
    run_figure,
    run_montecarlo,
    write_csv,
)
from .manifold import NoiseModel, SparseRepresentation, UlaManifold, load_geometry
from .performance import extreme_value_moments, montecarlo_lambda_moments
from .perturbation import build_expansion

log = logging.getLogger("lassodoa")


def _config(args) -> ExperimentConfig:
    over = {k: getattr(args, k, None) for k in ("m", "trials", "seed", "sigma", "T")}
    if getattr(args, "methods", None):
        over["methods"] = tuple(args.methods.split(","))
    if args.config:
        return load_config(args.config, **over)
    return ExperimentConfig(**{k: v for k, v in over.items() if v is not None})


def _add_config_args(p, methods=False):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--m", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float)
    if methods:
        p.add_argument("--methods", help="comma-separated subset of class,ml,cbf")


def cmd_figure(args) -> int:
    cfg = _config(args)
    rows = run_figure(args.name, cfg, output=args.output)
    if args.output is None:
        write_csv(sys.stdout, rows, comment=f"figure={args.name}")
    return 0


def cmd_mc(args) -> int:
    cfg = _config(args)
    res = run_montecarlo(cfg, require_theory=args.theory)
    print(f"m={res.m} sigma={res.sigma:g} trials={cfg.trials} seed={cfg.seed}")
    for meth, agg in res.aggregates.items():
        print(
            f"{meth}: bias={np.array2string(agg.bias, precision=4)} var={np.array2string(agg.variance, precision=4)}"
            f" mse={np.array2string(agg.mse, precision=4)} outliers={agg.outlier_rate:.3f}"
        )
    if res.prediction is not None:
        p = res.prediction
        print(f"theory: bias={np.array2string(p.bias, precision=4)} var={np.array2string(p.variance, precision=4)}")
    return 0 if res.all_certified else 1


def _load_data(path):
    header, mats = textio.read_matrices(path)
    if "X" not in mats:
        raise ValueError("data file needs an [X] matrix")
    return header, mats["X"].astype(complex)


def cmd_solve(args) -> int:
    header, X = _load_data(args.data)
    man = load_geometry(args.geometry) if args.geometry else UlaManifold(X.shape[0])
    if args.method == "class":
        opts = ClassOptions(
            initial_grid=args.grid,
            verify_fineness=args.fineness,
            tol=args.tol,
        )
        try:
            if args.lam is not None:
                sol = solve_class(X, man, args.lam, opts)
            elif args.order is not None:
                sol = solve_class_for_order(X, man, args.order, opts).solution
            else:
                raise ValueError("class needs --lam or --order")
        except CertificationError as e:
            print(f"certification failed: {e}; largest violation at theta={e.violation_theta:.10g}", file=sys.stderr)
            return 1
        head, mats = textio.solution_record(sol)
        textio.write_matrices(args.output or sys.stdout, head, mats)
        return 0 if sol.certificate.passed else 1
    if args.order is None:
        raise ValueError("ml and cbf need --order")
    est = nlls_ml_estimate(X, man, args.order) if args.method == "ml" else cbf_estimate(X, man, args.order, args.fineness)
    head = {"kind": est.method, "order": est.order, "objective": repr(est.objective), "flagged": str(est.flagged).lower()}
    textio.write_matrices(args.output or sys.stdout, head, {"thetas": est.thetas, "amplitudes": est.amplitudes})
    return 0


def _truth_from_args(args):
    th = np.array([float(x) for x in args.thetas.split(",")])
    amps = np.array([complex(x) for x in args.amplitudes.split(",")]) if args.amplitudes else np.ones(th.size)
    return SparseRepresentation(th, amps)


def cmd_consistency(args) -> int:
    man = load_geometry(args.geometry) if args.geometry else UlaManifold(args.m or 15)
    truth = _truth_from_args(args)
    v = check_consistency(man, truth, args.fineness)
    rows = [{"theta_or_delta": t, "lhs_value": x} for t, x in zip(v.scan_thetas, v.scan_values)]
    if args.output:
        write_csv(args.output, rows)
    print(f"consistent={str(v.consistent).lower()} worst_theta={v.worst_theta:.10g} worst_value={v.worst_value:.10g} margin={v.margin:.6g}")
    return 0


def cmd_threshold(args) -> int:
    res = resolution_threshold_search(samples=args.samples, seed=args.seed or 0)
    if args.output:
        rows = [{"theta_or_delta": t, "lhs_value": np.nan} for t in res.per_sample if np.isfinite(t)]
        write_csv(args.output, rows)
    print(f"threshold_delta={res.threshold:.8g} threshold_over_pi={res.threshold / np.pi:.6f} monotone={str(res.monotone).lower()}")
    return 0


def cmd_lambda_stats(args) -> int:
    rows = []
    T, sigma = args.T or 1, args.sigma or 1.0
    ms = [int(x) for x in args.ms.split(",")]
    if args.mode == "asymptotic":
        for m in ms:
            mo = extreme_value_moments(m, T, sigma, args.gamma)
            rows.append({"m": m, "E_lambda": mo.mean, "E_lambda_sq": mo.mean_square, "source": mo.source})
    elif args.exact:
        for m in ms:
            cfg = ExperimentConfig(m=m, T=T, sigma=sigma)
            exp = build_expansion(UlaManifold(m), cfg.truth(m))
            mo = montecarlo_lambda_moments(exp, NoiseModel(sigma, args.seed or 0), args.trials or 200)
            rows.append({"m": m, "E_lambda": mo.mean, "E_lambda_sq": mo.mean_square, "source": mo.source})
    else:
        cfg = ExperimentConfig(T=T, sigma=sigma, lambda_ms=tuple(ms), lambda_trials=args.trials or 2000, seed=args.seed or 0)
        for r in lambda_moment_rows(cfg):
            rows.append({"m": r["m"], "E_lambda": r["E_lambda"], "E_lambda_sq": r["E_lambda_sq"], "source": "montecarlo"})
    write_csv(args.output or sys.stdout, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lassodoa", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("figure", help="regenerate a figure dataset")
    f.add_argument("name", choices=FIGURES)
    _add_config_args(f, methods=True)
    f.add_argument("--output")
    f.set_defaults(func=cmd_figure)

    mc = sub.add_parser("mc", help="Monte Carlo summary")
    _add_config_args(mc, methods=True)
    mc.add_argument("--theory", action="store_true", help="fail if the first-order analysis does not apply")
    mc.set_defaults(func=cmd_mc)

    s = sub.add_parser("solve", help="estimate positions from a data file")
    s.add_argument("data", help="matrix file with an [X] block")
    s.add_argument("--method", choices=("class", "ml", "cbf"), default="class")
    s.add_argument("--geometry", help="array geometry file (default: ULA with m = rows of X)")
    s.add_argument("--lam", type=float)
    s.add_argument("--order", type=int)
    s.add_argument("--grid", type=int, help="initial grid size")
    s.add_argument("--fineness", type=float, help="verification scan fineness")
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--output")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("consistency", help="consistency verdict for true positions")
    c.add_argument("--thetas", required=True, help="comma-separated positions")
    c.add_argument("--amplitudes", help="comma-separated complex amplitudes (default 1)")
    c.add_argument("--m", type=int)
    c.add_argument("--geometry")
    c.add_argument("--fineness", type=float)
    c.add_argument("--output", help="CSV of the scanned left-hand side")
    c.set_defaults(func=cmd_consistency)

    t = sub.add_parser("threshold", help="asymptotic resolution threshold")
    t.add_argument("--samples", type=int, default=200)
    t.add_argument("--seed", type=int)
    t.add_argument("--output")
    t.set_defaults(func=cmd_threshold)

    ls = sub.add_parser("lambda-stats", help="moments of the optimal regularization")
    ls.add_argument("--ms", default="32,64,128,256,512,1024")
    ls.add_argument("--T", type=int)
    ls.add_argument("--sigma", type=float)
    ls.add_argument("--trials", type=int)
    ls.add_argument("--seed", type=int)
    ls.add_argument("--mode", choices=("asymptotic", "montecarlo"), default="asymptotic")
    ls.add_argument("--exact", action="store_true", help="montecarlo mode: use the linearized optimum instead of the dual maximum")
    ls.add_argument("--gamma", type=float, default=1.3)
    ls.add_argument("--output")
    ls.set_defaults(func=cmd_lambda_stats)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return int(args.func(args))
    except (ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
