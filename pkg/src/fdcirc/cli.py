"""Command-line entry point: one subcommand per experiment.

Example:
    fdcirc elements --sweep 8,16,24,32 --trials 5 --seed 1 --out results/
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import ScenarioConfig, config_from_text, validate
from .experiments import EXPERIMENTS, SweepSpec, export, run_sweep, weight_grid

DEFAULT_SWEEPS = {
    "elements": [8, 16, 24, 32],
    "moving_user": [float(a) for a in range(1, 180)],
    "group_size": [1, 2, 4, 8, 16],
    "antennas": [1, 2],
    "users": [2, 3, 4],
    "security_power": [20.0, 30.0, 40.0],
    "convergence": [0],
    "beampatterns": [0],
}


def _parse_sweep(experiment: str, text: str | None) -> list:
    if experiment == "rate_region":
        if text:
            raise SystemExit("rate_region sweeps the weight simplex; --sweep not accepted")
        return weight_grid()
    if text is None:
        return DEFAULT_SWEEPS[experiment]
    values = [v for v in (s.strip() for s in text.split(",")) if v]
    if experiment in ("elements", "group_size", "antennas", "users"):
        return [int(v) for v in values]
    return [float(v) for v in values]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdcirc",
                                     description="FD wireless-circulator BD-RIS experiments")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--arms", default="NR,R,D", help="comma list of NR,R,D")
        p.add_argument("--sweep", default=None, help="comma list of swept values")
        p.add_argument("--structural-scattering", choices=("on", "off"), default=None)
        p.add_argument("--direct-links", choices=("on", "off"), default=None)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ScenarioConfig()
        if args.config:
            with open(args.config) as fh:
                cfg = config_from_text(fh.read())
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if args.structural_scattering is not None:
            overrides["structural_scattering"] = args.structural_scattering == "on"
        if args.direct_links is not None:
            overrides["direct_links"] = args.direct_links == "on"
        if overrides:
            cfg = dataclasses.replace(cfg, validated=False, **overrides)
        cfg = validate(cfg)
        spec = SweepSpec(experiment=args.experiment,
                         swept_values=_parse_sweep(args.experiment, args.sweep),
                         trials=cfg.trials,
                         arms=[a.strip() for a in args.arms.split(",") if a.strip()])
        rows = run_sweep(spec, cfg)
        paths = export(rows, args.format, args.out, args.experiment, cfg)
        print(f"wrote {paths['data']} ({len(rows)} rows) and {paths['manifest']}")
        return 0
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
