"""Command-line entry point: ``jcaslab <command> --scenario FILE --out DIR``."""

import argparse
import os
import sys
from importlib import resources

import numpy as np

from . import harness, sensing
from .errors import ConfigError, ConvergenceError, DomainError, NumericRangeError

DEFAULT_PF_GRID = "1e-5,3e-5,1e-4,3e-4,1e-3,3e-3,0.01,0.03,0.1,0.3,0.5"


def _floats(text):
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        # start:stop:step, inclusive of stop
        a, b, c = (float(x) for x in text.split(":"))
        if c <= 0 or b < a:
            raise ConfigError(f"bad range {text!r}")
        n = int(np.floor((b - a) / c + 1e-9)) + 1
        return [round(float(v), 12) for v in a + c * np.arange(n)]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def default_scenario_text():
    return resources.files("jcaslab").joinpath("scenarios/default.toml").read_text()


def _load(args):
    if args.scenario in (None, "default"):
        sc = harness.parse_scenario(default_scenario_text())
    else:
        sc = harness.load_scenario(args.scenario)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.trials is not None:
        kw["trials"] = args.trials
    if getattr(args, "draws", None) is not None:
        kw["draws"] = args.draws
    try:
        return sc.with_(**kw) if kw else sc
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def build_parser():
    ap = argparse.ArgumentParser(prog="jcaslab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", default="default",
                       help="scenario TOML file, or 'default' for the built-in scenario")
        p.add_argument("--out", default=".", help="output directory for the CSV")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--draws", type=int, help="gain realizations per target angle")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        return p

    common(sub.add_parser("pdf", help="detector histograms and densities"))
    p = common(sub.add_parser("roc", help="ROC per illumination mode and method"))
    p.add_argument("--pf-grid", default=DEFAULT_PF_GRID)
    p.add_argument("--methods", default=",".join(sensing.METHODS))
    p = common(sub.add_parser("pd-sweep", help="detection probability sweeps"))
    p.add_argument("--var", choices=harness.SWEEPS, default="sigma_c_target")
    p.add_argument("--grid", default="0:0.2:0.02")
    p.add_argument("--methods", default="closed_form,clt")
    p = common(sub.add_parser("ber-sweep", help="BER versus target reflection strength"))
    p.add_argument("--grid", default="0:0.2:0.02")
    p.add_argument("--channels", type=int, default=2000)
    p = common(sub.add_parser("beampattern", help="per-stream gain versus angle"))
    p.add_argument("--grid", default="-89:89:0.5")
    p = common(sub.add_parser("sinr", help="communication SINR curves"))
    p.add_argument("--grid", default="0:1:0.05")
    common(sub.add_parser("validate", help="cross-method invariant suite"))
    p = sub.add_parser("init", help="write the default scenario file")
    p.add_argument("--out", default="scenario.toml")
    return ap


def run(args):
    if args.command == "init":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(default_scenario_text())
        print(args.out)
        return 0
    sc = _load(args)
    th = max(1, args.threads)
    methods = tuple(m for m in getattr(args, "methods", "").split(",") if m)
    for m in methods:
        if m not in sensing.METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if args.command == "pdf":
        res = harness.cmd_pdf(sc, threads=th)
    elif args.command == "roc":
        res = harness.cmd_roc(sc, _floats(args.pf_grid), methods, threads=th)
    elif args.command == "pd-sweep":
        res = harness.cmd_pd_sweep(sc, args.var, _floats(args.grid), methods, threads=th)
    elif args.command == "ber-sweep":
        res = harness.cmd_ber_sweep(sc, _floats(args.grid), channels=args.channels, threads=th)
    elif args.command == "beampattern":
        res = harness.cmd_beampattern(sc, _floats(args.grid))
    elif args.command == "sinr":
        res = harness.cmd_sinr(sc, _floats(args.grid))
    else:
        res = harness.cmd_validate(sc, threads=th)
        for name, ok, detail in res.rows:
            print(f"{'PASS' if ok else 'FAIL'}  {name:28s} {detail}")
    path = harness.write_csv(res, args.out)
    for k, v in res.summary.items():
        print(f"{k}: {v}")
    print(path)
    if args.command == "validate" and not res.summary["all_passed"]:
        return 2
    return 0


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return run(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, NumericRangeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
