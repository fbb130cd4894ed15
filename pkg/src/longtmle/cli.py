"""Command line: ``longtmle {coarsen,simulate,estimate,report}``.

Exit codes: 0 success, 1 analysis aborted (structured record on stderr and in
``error.json``), 2 invalid usage or configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .coarsen import CoarsenConfig, coarsen_dataset, read_daily_csv, write_daily_csv
from .data_model import write_csv
from .errors import LongTmleError, SchemaError
from .inference import EstimateReport
from .oracle import expand_to_daily, simulate, truth_table
from .pipeline import SCENARIOS, AnalysisConfig, run

log = logging.getLogger("longtmle")


def _error(exc: Exception, code: int) -> int:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(rec), file=sys.stderr)
    return code


def cmd_coarsen(args) -> int:
    cohort = read_daily_csv(args.input)
    cfg = CoarsenConfig(args.unit, args.max_intervals, aggregation=args.aggregation,
                        impute_indicators=not args.no_impute_indicators)
    ds = coarsen_dataset(cohort, cfg)
    write_csv(ds, args.out)
    log.info("wrote %d person-time rows for %d subjects to %s", ds.n_rows, ds.n_subjects, args.out)
    return 0


def cmd_simulate(args) -> int:
    scen = SCENARIOS[args.scenario]()
    ds = simulate(scen.dgp, args.n, seed=args.seed)
    if args.daily:
        write_daily_csv(expand_to_daily(ds, args.unit, seed=args.seed, horizon=scen.dgp.tau), args.out)
    else:
        write_csv(ds, args.out)
    if args.truth:
        tt = truth_table(scen.dgp, scen.regimes, scen.t0_grid, mc_reps=args.mc_reps, seed=args.seed)
        Path(args.truth).write_text(tt.to_json())
    log.info("simulated %d subjects (%d rows) to %s", ds.n_subjects, ds.n_rows, args.out)
    return 0


def _overrides(args) -> dict:
    o: dict = {}
    if args.data:
        o["input"] = {"long": args.data, "daily": None, "simulate": None}
    if args.theta:
        o["regimes"] = [{"theta": t} for t in args.theta]
    if args.t0_grid:
        o["t0_grid"] = [int(x) for x in args.t0_grid.split(",")]
    if args.mode:
        o.setdefault("q", {})["mode"] = args.mode
    if args.q_strategy:
        o.setdefault("q", {})["strategy"] = args.q_strategy
    if args.g_strategy:
        o.setdefault("g", {})["strategy"] = args.g_strategy
    if args.estimators:
        o["estimators"] = args.estimators.split(",")
    if args.seed is not None:
        o["seed"] = args.seed
    if args.n_jobs is not None:
        o["n_jobs"] = args.n_jobs
    if args.bootstrap is not None:
        o["ipw_bootstrap"] = args.bootstrap
    return o


def cmd_estimate(args) -> int:
    import yaml

    from .pipeline import _merge

    try:
        base = AnalysisConfig.load(args.config).raw
        cfg = AnalysisConfig.from_dict(_merge(base, _overrides(args)))
    except (SchemaError, OSError, yaml.YAMLError, KeyError, ValueError) as exc:
        return _error(exc, 2)
    res = run(cfg, args.out)
    if res.status != 0:
        print(json.dumps(res.error), file=sys.stderr)
        return 1
    log.info("wrote results to %s", res.output_dir)
    if args.report:
        from .plotting import render_report

        render_report(res.report, res.output_dir / "report")
    return 0


def cmd_report(args) -> int:
    from .plotting import render_report

    src = Path(args.run)
    path = src / "estimates.json" if src.is_dir() else src
    report = EstimateReport.from_json(path)
    out = Path(args.out) if args.out else path.parent / "report"
    paths = render_report(report, out)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="longtmle", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("coarsen", help="daily event file -> interval person-time CSV")
    c.add_argument("--unit", type=int, required=True, help="interval width in days")
    c.add_argument("--max-intervals", type=int, required=True)
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--aggregation", choices=["any", "first-day", "majority"], default="any")
    c.add_argument("--no-impute-indicators", action="store_true")
    c.set_defaults(func=cmd_coarsen)

    s = sub.add_parser("simulate", help="draw a synthetic cohort and its true risks")
    s.add_argument("--scenario", choices=sorted(SCENARIOS), default="default")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    fmt = s.add_mutually_exclusive_group()
    fmt.add_argument("--daily", action="store_true", help="write daily event records")
    fmt.add_argument("--interval", action="store_true", help="write interval rows (default)")
    s.add_argument("--unit", type=int, default=90, help="days per interval for --daily")
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="also write the true risks as JSON")
    s.add_argument("--mc-reps", type=int, default=1_000_000)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run an analysis from a YAML config")
    e.add_argument("--config", required=True)
    e.add_argument("--out", help="output directory (overrides output_dir)")
    e.add_argument("--data", help="long-format CSV (overrides input)")
    e.add_argument("--theta", "--regime", dest="theta", type=float, action="append", help="regime threshold (repeatable)")
    e.add_argument("--t0-grid", help="comma-separated horizons")
    e.add_argument("--mode", choices=["stratified", "pooled"])
    e.add_argument("--q-strategy", "--q", dest="q_strategy", choices=["parametric", "dsl"])
    e.add_argument("--g-strategy", "--g", dest="g_strategy", choices=["parametric", "dsl"])
    e.add_argument("--estimators", help="comma-separated subset of tmle,ipw")
    e.add_argument("--seed", type=int)
    e.add_argument("--n-jobs", type=int)
    e.add_argument("--bootstrap", type=int, help="IPW bootstrap resamples")
    e.add_argument("--report", action="store_true", help="also render tables and figures")
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("report", help="render CSV tables and PNG figures from estimates.json")
    r.add_argument("--run", required=True, help="run directory or estimates.json")
    r.add_argument("--out", help="destination directory (default: <run>/report)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LongTmleError, ValueError, OSError) as exc:
        return _error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
