"""Command-line entry point: one subcommand per pipeline stage, plus ``run``.

    latentgraph run --out runs/desk
    latentgraph simulate --out runs/x --set simulation.duration_ms=50000
    latentgraph compare --estimate my_matrix.csv --truth runs/x/network/adjacency.csv
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .estimate import ConnectivityEstimate
from .lif import GroundTruthNetwork
from .metrics import compare
from .pipeline import (EXIT_CODES, STAGES, ConfigError, StageError, resolve_config, run_pipeline,
                       run_stage)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config, or a manifest.json to reproduce a run")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--profile", choices=("desk", "small"), default="desk")
    common.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    common.add_argument("--force", action="store_true", help="ignore the stage cache")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="latentgraph", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="all stages in order")
    for name in STAGES:
        sp = sub.add_parser(name, parents=[common], help=f"the {name} stage")
        if name == "compare":
            sp.add_argument("--estimate", type=Path, action="append", default=[],
                            help="score this N x N CSV instead of the pipeline estimates (repeatable)")
            sp.add_argument("--truth", type=Path, help="ground-truth adjacency CSV for --estimate")
    return p


def _compare_files(args, cfg) -> int:
    truth = args.truth or Path(cfg["output_dir"]) / "network/adjacency.csv"
    missing = [str(p) for p in [truth, *args.estimate] if not p.exists()]
    if missing:
        print(f"error: missing input files: {', '.join(missing)}", file=sys.stderr)
        return EXIT_CODES["compare"]
    a = io.load_matrix(truth)
    sign = np.where(a.sum(axis=0) < 0, -1, 1)
    net = GroundTruthNetwork(n=a.shape[0], adjacency=a, hub_ids=[], sign=sign)
    ests = [ConnectivityEstimate.load(p) for p in args.estimate]
    rep = compare(net, ests, [p.stem for p in args.estimate], k=cfg["metrics"]["spectral_k"])
    print(rep.table())
    print(json.dumps(rep.to_json(), sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.overrides, args.profile, args.out)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    try:
        if args.command == "run":
            man = run_pipeline(cfg, force=args.force)
            print((Path(cfg["output_dir"]) / "report/table.txt").read_text(), end="")
            print(f"manifest: {Path(cfg['output_dir']) / 'manifest.json'} ({man.config_hash[:12]})")
        elif args.command == "compare" and args.estimate:
            return _compare_files(args, cfg)
        else:
            run_stage(args.command, cfg, force=args.force)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
