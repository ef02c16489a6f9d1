"""``abmspde`` command line: run, compare, bench, sweep, plot."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..config import load_config, load_preset
from ..model import ConfigError
from .ensemble import RealizationError
from .experiments import plan_from_config, run_plan
from .plots import render_plots
from .tables import FormatError

SUBCOMMAND_KINDS = {"compare": "compare-models", "bench": "cost-benchmark", "sweep": "consistency-sweep"}
DEFAULT_PRESETS = {"run": "innovation", "compare": "compare", "bench": "cost", "sweep": "consistency"}


def resolve_config(ref: str | None, command: str):
    """A YAML path, or the name of a bundled preset."""
    ref = ref or DEFAULT_PRESETS[command]
    if Path(ref).is_file():
        return load_config(ref)
    return load_preset(ref)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML file or preset name")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--realizations", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", choices=("abm", "spde", "both"))
    p.add_argument("--workers", type=int, help="worker processes (default $ABMSPDE_WORKERS or 1)")
    p.add_argument("--n-list", type=lambda s: [int(v) for v in s.split(",")], help="comma separated N values")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abmspde", description=__doc__)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "experiment named by the config's experiment block"),
                        ("compare", "ABM vs SPDE over N"),
                        ("bench", "per-step cost over N"),
                        ("sweep", "discretisation consistency of the SPDE")):
        _common(sub.add_parser(name, help=help_))
    p = sub.add_parser("plot", help="render SVG figures from report tables")
    p.add_argument("reports", help="directory with report CSV files")
    p.add_argument("--out", help="figure directory (default <reports>/figures)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "plot":
            for path in render_plots(args.reports, args.out):
                print(path)
            return 0
        config = resolve_config(args.config, args.command)
        if args.seed is not None:
            config = replace(config, master_seed=args.seed, raw={**config.raw, "master_seed": args.seed})
        plan = plan_from_config(config, kind=SUBCOMMAND_KINDS.get(args.command), model=args.model,
                                realizations=args.realizations, out_dir=args.out, workers=args.workers,
                                n_list=args.n_list)
        run_plan(config, plan)
        print(plan.out_dir)
        return 0
    except (ConfigError, FormatError, RealizationError, FileNotFoundError, OSError) as exc:
        print(f"abmspde: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
