"""Command line entry point: simulate, explore, forecast, kyoto.

Exit status is 0 on success, 1 on a runtime failure and 2 on a configuration
or usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import CONTROLLER_NAMES, build_scenario, load_config
from .economics import (KyotoParams, kyoto_equilibrium, kyoto_expected_penalty, kyoto_wastage)
from .errors import ConfigError, DomainError, GeoCloudError, ParameterError, SimulationError
from .geotemporal import (fit_alpha, mape, read_trace_csv, ses_forecast, theta_forecast, write_trace_csv)
from .simulator import simulate

log = logging.getLogger("geocloud")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _setup_logging():
    level = os.environ.get("GEOCLOUD_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# -- simulate ---------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config, seed=args.seed, controller=args.controller)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, f"config: {exc}")
    try:
        result = simulate(cfg)
    except SimulationError as exc:
        return _fail(EXIT_RUNTIME, f"simulation failed at step {exc.step}: {exc.cause}")
    except GeoCloudError as exc:
        return _fail(EXIT_USAGE, f"config: {exc}")
    result.save(args.out)
    print(result.cost_report.summary())
    return EXIT_OK


# -- explore ----------------------------------------------------------------------

def weight_grid(step: float, k: int = 4) -> list[tuple[float, ...]]:
    """All k-tuples on a ``step`` grid in [0, 1] that sum to 1."""
    if not 0 < step <= 1:
        return []
    n = round(1 / step)
    if abs(n * step - 1) > 1e-9:
        return []
    out = []

    def rec(prefix, left):
        if len(prefix) == k - 1:
            out.append(tuple(round(i * step, 10) for i in prefix + [left]))
            return
        for i in range(left + 1):
            rec(prefix + [i], left - i)
    rec([], n)
    return out


def _explore_one(job):
    doc, base_dir, seed, weights = job
    w_ct, w_q, w_up, w_cd = weights
    cfg = build_scenario(doc, base_dir, seed=seed, controller="ga_hybrid",
                         controller_params={"weights": {"w_ct": w_ct, "w_q": w_q, "w_up": w_up, "w_cd": w_cd}})
    try:
        r = simulate(cfg)
    except SimulationError as exc:
        return weights, None, str(exc)
    return weights, r, None


def cmd_explore(args) -> int:
    grid = weight_grid(args.step)
    if not grid:
        return _fail(EXIT_USAGE, f"weight grid with step {args.step} is empty")
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text())
        build_scenario(doc, path.parent, seed=args.seed, controller="ga_hybrid")
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_USAGE, f"config: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_USAGE, f"config: {exc}")
    log.info("exploring %d weight combinations", len(grid))
    print(f"{len(grid)} weight combinations")
    jobs = [(doc, path.parent, args.seed, w) for w in grid]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_explore_one, jobs))
    else:
        results = [_explore_one(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    with open(out / "exploration.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["w_ct", "w_q", "w_up", "w_cd", "total_cost", "it_energy", "migrations",
                    "constraint_violations", "error"])
        for weights, r, err in results:
            if r is None:
                failed += 1
                w.writerow([*weights, "", "", "", "", err])
            else:
                w.writerow([*weights, repr(r.cost_report.total_cost), repr(r.cost_report.it_energy),
                            r.meta["migrations"], r.meta["constraint_violations"], ""])
    return EXIT_RUNTIME if failed else EXIT_OK


# -- forecast ---------------------------------------------------------------------

def cmd_forecast(args) -> int:
    try:
        series = read_trace_csv(args.series)
    except (OSError, GeoCloudError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    train, actual = series, None
    horizon = args.horizon
    if args.holdout:
        if args.holdout >= len(series):
            return _fail(EXIT_USAGE, "holdout must be shorter than the series")
        train = series.slice(0, len(series) - args.holdout)
        actual = series.slice(len(series) - args.holdout, len(series))
        horizon = args.holdout
    try:
        alpha = args.alpha if args.alpha is not None else fit_alpha(train)
        if args.method == "ses":
            fc = ses_forecast(train, alpha, horizon)
        else:
            fc = theta_forecast(train, alpha, args.drift_sigma, args.seed, horizon)
    except GeoCloudError as exc:
        return _fail(EXIT_USAGE, str(exc))
    if args.out:
        write_trace_csv(fc, args.out)
    else:
        print("timestamp,value")
        for t, v in zip(fc.timestamps(), fc.values):
            print(f"{t.isoformat()},{float(v)!r}")
    print(f"alpha {alpha}", file=sys.stderr if not args.out else sys.stdout)
    if actual is not None:
        try:
            print(f"MAPE {mape(actual, fc):.6f}")
        except DomainError as exc:
            return _fail(EXIT_RUNTIME, str(exc))
    return EXIT_OK


# -- kyoto ------------------------------------------------------------------------

def cmd_kyoto(args) -> int:
    try:
        p = KyotoParams(args.c_en, args.c_co2, args.c_viol, args.r_agreed, args.mean, args.max)
        r = kyoto_equilibrium(p)
    except (ParameterError, DomainError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    w, pen = kyoto_wastage(p, r), kyoto_expected_penalty(p, r)
    print(f"r_provisioned {r:g}")
    print(f"wastage {w:g}")
    print(f"expected_penalty {pen:g}")
    print(f"residual {abs(w - pen):.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="geocloud", description="Geo-distributed cloud simulator and controllers.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--controller", choices=CONTROLLER_NAMES)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("explore", help="sweep fitness weights of the GA controller")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--step", type=float, default=0.1)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_explore)

    f = sub.add_parser("forecast", help="forecast a trace with SES or Theta")
    f.add_argument("--series", required=True)
    f.add_argument("--method", choices=("ses", "theta"), default="ses")
    f.add_argument("--alpha", type=float)
    f.add_argument("--horizon", type=int, default=24)
    f.add_argument("--holdout", type=int, default=0)
    f.add_argument("--drift-sigma", type=float, default=0.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_forecast)

    k = sub.add_parser("kyoto", help="wastage-penalty balance")
    k.add_argument("--c-en", type=float, required=True)
    k.add_argument("--c-co2", type=float, default=0.0)
    k.add_argument("--c-viol", type=float, required=True)
    k.add_argument("--r-agreed", type=float, required=True)
    k.add_argument("--mean", type=float, required=True)
    k.add_argument("--max", type=float, required=True)
    k.set_defaults(func=cmd_kyoto)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
