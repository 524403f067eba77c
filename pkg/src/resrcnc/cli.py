"""Command line front end.

Verbs: run, region, compare, dump-lp, validate.  Exit codes: 0 success,
2 configuration problem, 3 simulation failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .config import get_scenario
from .engine import TrialRunner
from .matching import dump_lp
from .model import ConfigError, SimulationError

EXIT_CONFIG = 2
EXIT_SIM = 3
EXIT_IO = 4


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="abilene",
                   help="builtin name or path to a scenario file")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--outage-at", type=int, default=None)
    p.add_argument("--lambda-scale", type=float, default=None)
    p.add_argument("--variant", choices=("resrcnc", "rcnc"), default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="override the master seed")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel trial processes")


def _load(args) -> "experiments.ScenarioConfig":
    cfg = get_scenario(args.scenario)
    return cfg.with_overrides(
        trials=args.trials, horizon=args.horizon, outage_at=args.outage_at,
        lambda_scale=args.lambda_scale, variant=args.variant,
        master_seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="resrcnc",
        description="lifetime-constrained cloud network control simulator")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run one trial ensemble")
    _add_overrides(p)
    p.add_argument("--out", default="out/run", help="output directory")
    p.add_argument("--verbose-plots", action="store_true",
                   help="also emit flow-matching overlays")
    p.add_argument("--reuse", action="store_true",
                   help="skip simulation when the output dir already holds "
                        "a matching run")

    p = sub.add_parser("region", help="membership grid over arrival scales")
    _add_overrides(p)
    p.add_argument("--out", default="out/region")
    p.add_argument("--sweep", default="lambda_o=0.625,0.75,0.875,1.0",
                   help="grid spec, e.g. lambda_o=0.625,0.75,0.875,1.0")
    p.add_argument("--fresh", action="store_true",
                   help="ignore cached ensembles")

    p = sub.add_parser("compare", help="paired runs of several variants")
    _add_overrides(p)
    p.add_argument("--out", default="out/compare")
    p.add_argument("--variants", default="resrcnc,rcnc")
    p.add_argument("--fresh", action="store_true")

    p = sub.add_parser("dump-lp", help="write one slot's flow-matching LP")
    _add_overrides(p)
    p.add_argument("--out", default="out/lp.txt")
    p.add_argument("--at", type=int, default=0,
                   help="slot whose LP to dump (state advanced to it)")
    p.add_argument("--trial", type=int, default=0)

    p = sub.add_parser("validate", help="load a scenario and print its hash")
    p.add_argument("--scenario", default="abilene")
    return ap


def _parse_sweep(text: str) -> list[float]:
    if "=" not in text:
        raise ConfigError(f"sweep spec {text!r}: expected name=v1,v2,...")
    name, _, vals = text.partition("=")
    if name.strip() != "lambda_o":
        raise ConfigError(f"unknown sweep parameter {name.strip()!r}")
    try:
        out = [float(v) for v in vals.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"sweep values {vals!r}: {exc}") from None
    if not out:
        raise ConfigError("sweep needs at least one value")
    return out


def _cmd_run(args) -> int:
    cfg = _load(args)
    man = experiments.run_experiment(cfg, args.out, workers=args.workers,
                                     verbose=args.verbose_plots,
                                     reuse=args.reuse)
    print(f"wrote {man['trials']} trials to {args.out} "
          f"(config {man['config_hash']}, V={man['v_value']:.6g}, "
          f"{man['wall_seconds']:.1f}s)")
    return 0


def _cmd_region(args) -> int:
    cfg = _load(args)
    scales = _parse_sweep(args.sweep)
    path = experiments.run_region(cfg, scales, args.out,
                                  workers=args.workers, reuse=not args.fresh)
    print(f"wrote {path}")
    sys.stdout.write(Path(path).read_text())
    return 0


def _cmd_compare(args) -> int:
    cfg = _load(args)
    variants = [v for v in args.variants.split(",") if v]
    for v in variants:
        if v not in ("resrcnc", "rcnc"):
            raise ConfigError(f"unknown variant {v!r}")
    written = experiments.run_compare(cfg, variants, args.out,
                                      workers=args.workers,
                                      reuse=not args.fresh)
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_dump_lp(args) -> int:
    cfg = _load(args)
    scn, pol, exp = cfg.to_runtime()
    if args.at >= exp.horizon:
        raise ConfigError(f"--at {args.at} is past horizon {exp.horizon}")
    runner = TrialRunner(scn, pol, exp.horizon, exp.master_seed, args.trial)
    for t in range(args.at):
        runner.step(t)
    era = runner.era
    lp = era.template.assemble(runner.requests, runner.queues,
                               [f.value for f in runner.fading])
    sol, rhs = era.matcher.solve(runner.requests, runner.queues,
                                 [f.value for f in runner.fading])
    text = dump_lp(era.template, lp.objective, rhs, sol, slot=args.at)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out} ({era.template.num_vars} vars)")
    return 0


def _cmd_validate(args) -> int:
    cfg = get_scenario(args.scenario)
    d = cfg.data
    print(f"ok: {len(d['commodities'])} commodities, "
          f"{d['network']['num_nodes']} nodes, hash {cfg.config_hash}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "region": _cmd_region,
                "compare": _cmd_compare, "dump-lp": _cmd_dump_lp,
                "validate": _cmd_validate}
    try:
        return handlers[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
