"""Command line entry point: bbmspread <subcommand> [options]."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .. import feynman_kac as FK
from ..bbm_sim import run_ensemble
from .config import ConfigError, from_dict, load_config, with_overrides
from .report import emit_report, pde_block, run_scenario, write_csv
from .scenarios import build


def _config(args):
    cfg = load_config(args.config) if args.config else from_dict({"scenario": "dirac1d"})
    return with_overrides(cfg, args.seed, args.replicas, args.out)


def _emit(obj, as_json: bool, text: str):
    print(json.dumps(obj, indent=2, sort_keys=True) if as_json else text)


def cmd_spectral(args) -> int:
    cfg = _config(args)
    sc = build(cfg)
    lam = sc.lam
    out = {"scenario": cfg.scenario, "lambda": lam, "method": sc.spectral.method,
           "speed": sc.spectral.speed if lam < 0 else 0.0, "Lambda": {}}
    lines = [f"{cfg.scenario}: lambda = {lam:.12g} ({sc.spectral.method})"]
    if lam < 0:
        lines.append(f"front speed sqrt(-lambda/2) = {sc.spectral.speed:.12g}")
        for d in cfg.deltas:
            out["Lambda"][f"{d:g}"] = sc.spectral.big_lambda(d)
            lines.append(f"Lambda[{d:g}] = {sc.spectral.big_lambda(d):.12g}")
    else:
        lines.append("no bound state: lambda = 0")
    _emit(out, args.json, "\n".join(lines))
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sc = build(cfg)
    ens = run_ensemble(sc.settings, sc.measure, sc.offspring, sc.spectral, cfg.sim.replicas,
                       cfg.sim.seed, np.asarray(cfg.x0))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "timeseries.csv"
    write_csv(ens, path)
    agg = ens.aggregate
    summary = {"replicas": cfg.sim.replicas, "capped": ens.capped, "csv": str(path),
               "t": float(ens.t[-1]), "mean_Z": float(agg["Z"]["mean"][-1]),
               "mean_L": float(agg["L"]["mean"][-1])}
    _emit(summary, args.json,
          f"{cfg.sim.replicas} replicas ({ens.capped} capped) to t={ens.t[-1]:g}: "
          f"mean Z = {summary['mean_Z']:.6g}, mean L = {summary['mean_L']:.6g}; wrote {path}")
    return 0


def cmd_fk(args) -> int:
    cfg = _config(args)
    sc = build(cfg)
    nu = sc.measure if sc.offspring.mean == 2.0 else sc.measure.scaled(sc.offspring.mean - 1.0)
    t = cfg.sim.horizon
    rng = np.random.default_rng(cfg.sim.seed)
    x0 = np.asarray(cfg.x0)
    rows = []
    for ev in [FK.ALL] + [FK.norm_ge(d * t) for d in cfg.deltas]:
        est = FK.fk_value(nu, x0, t, ev, rng=rng, dt=cfg.sim.dt, eps=cfg.sim.eps)
        rows.append({"event": ev.describe(), "value": est.value, "stderr": est.stderr,
                     "log_value": est.log_value, "method": est.method})
    _emit({"t": t, "rows": rows}, args.json,
          "\n".join(f"E[exp(A_{t:g}); {r['event']}] = {r['value']:.8g} +- {r['stderr']:.2g} "
                    f"({r['method']})" for r in rows))
    return 0


def cmd_pde(args) -> int:
    cfg = _config(args)
    sc = build(cfg)
    blk = pde_block(sc)
    if blk is None:
        print("the front solver covers d = 1 scenarios with a bound state", file=sys.stderr)
        return 2
    yt = blk["y_half_over_T"]
    _emit(blk, args.json, f"y_half({blk['T']:g})/T = "
          f"{'n/a' if yt is None else format(yt, '.6g')} (speed {blk['speed']:.6g})")
    return 0


def cmd_report(args) -> int:
    cfg = _config(args)
    rep = run_scenario(cfg, simulate=not args.spectral_only, pde=args.pde)
    paths = emit_report(rep, cfg.out)
    if args.json:
        print(rep.dumps())
    else:
        for c in rep.criteria:
            print(c.line())
        print("wrote " + ", ".join(map(str, paths)))
    return 0 if rep.passed else 1


def cmd_selftest(args) -> int:
    from . import acceptance as A

    ids = list(A.ALL_CHECKS) if args.all else list(args.only or A.FAST_CHECKS)
    ok = True
    results = {}
    for k in ids:
        if k not in A.ALL_CHECKS:
            print(f"unknown check {k}", file=sys.stderr)
            return 2
        r = A.ALL_CHECKS[k]()
        ok &= r.passed
        results[k] = {"pass": r.passed, "criteria": [c.to_dict() for c in r.criteria]}
        if not args.json:
            print(r.line())
            if args.verbose:
                print(r.details())
    if args.json:
        print(json.dumps(results, indent=2, sort_keys=True))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbmspread",
                                description="Branching Brownian motion with measure-valued "
                                            "branching rates: spectra, simulation, checks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: dirac1d preset)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--replicas", type=int, help="override the replica count")
    common.add_argument("--json", action="store_true", help="print JSON to stdout")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("spectral", parents=[common], help="principal eigenvalue and rates"
                   ).set_defaults(fn=cmd_spectral)
    sub.add_parser("simulate", parents=[common], help="run the ensemble and write the CSV"
                   ).set_defaults(fn=cmd_simulate)
    sub.add_parser("fk", parents=[common], help="Feynman-Kac values at the horizon"
                   ).set_defaults(fn=cmd_fk)
    sub.add_parser("pde", parents=[common], help="median front of the FKPP equation"
                   ).set_defaults(fn=cmd_pde)
    rp = sub.add_parser("report", parents=[common], help="all checks, report.json, CSV")
    rp.add_argument("--spectral-only", action="store_true", help="skip the simulation")
    rp.add_argument("--pde", action="store_true", help="include the front solve")
    rp.set_defaults(fn=cmd_report)
    st = sub.add_parser("selftest", parents=[common], help="acceptance checks")
    st.add_argument("--all", action="store_true", help="run AC1-AC12 (minutes)")
    st.add_argument("--only", nargs="+", metavar="ACn", help="run the named checks")
    st.add_argument("-v", "--verbose", action="store_true", help="print every criterion")
    st.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
