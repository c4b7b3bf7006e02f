"""Command line: ``vpntk run|sweep|calibrate|inspect``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace

from .evaluation import CONFIG_FIELD, DEFAULT_GRIDS, ablation_sweep
from .pipeline import ExperimentConfig, export_results, parse_overrides, read_config_file, read_results, run_experiment
from .privacy import calibrate_noise_multiplier, embedding_sensitivity


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file; flags override it")
    for f in fields(ExperimentConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*names, dest=f.name, metavar=f.name.upper(), default=None)


def _config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    flags = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig) if getattr(args, f.name) is not None}
    values.update(parse_overrides(flags))
    return ExperimentConfig(**values)


def cmd_run(args):
    cfg = _config(args)
    record = run_experiment(cfg)
    print(f"accuracy {record.accuracy:.4f}  sigma {record.privacy['sigma']:.6g}  "
          f"private reads {record.privacy['private_read_count']}  ({record.wall_clock:.1f}s)")
    if args.out:
        txt, jsonl = export_results([record], args.out)
        print(f"wrote {txt} and {jsonl}")
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    if args.grid:
        grid = [v if args.param == "loss_mode" else float(v) for v in args.grid.split(",")]
    else:
        grid = list(DEFAULT_GRIDS[args.param])
    seeds = list(range(args.seeds))
    result = ablation_sweep(replace(cfg, output_dir=None), args.param, grid, seeds, workers=args.workers)
    sys.stdout.write(result.table())
    if args.out:
        txt, jsonl = export_results(result, args.out)
        print(f"wrote {txt} and {jsonl}")
    return 1 if result.errors else 0


def cmd_calibrate(args):
    sigma = calibrate_noise_multiplier(args.epsilon, args.delta)
    print(f"sigma {sigma:.9g}")
    if args.m:
        sens = embedding_sensitivity(args.m)
        print(f"sensitivity {sens:.9g}  noise std {sigma * sens:.9g}")
    return 0


def cmd_inspect(args):
    kind, rows = read_results(args.path)
    for row in rows:
        print(json.dumps(row.to_dict() if hasattr(row, "to_dict") else row, indent=2, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="vpntk", description="Private data synthesis by NTK embedding matching.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.add_argument("--out", help="results path prefix (.txt and .jsonl are appended)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="ablation over kappa, eta, alpha or loss_mode")
    _add_config_flags(p)
    p.add_argument("--param", required=True, choices=sorted(CONFIG_FIELD))
    p.add_argument("--grid", help="comma-separated values; defaults to the standard grid")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="print the noise multiplier for (epsilon, delta)")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--m", type=int, help="record count, to also print the per-entry noise std")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("inspect", help="dump records from a results file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
