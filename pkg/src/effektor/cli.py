"""Command line interface.

Subcommands:

- ``effektor simulate --config FILE --rq {1,2,3} --out DIR [--threads N]
  [--seed S]``: run one experiment protocol and write ``results_rq<k>.csv``
  plus ``manifest_rq<k>.json`` into the output directory.
- ``effektor effects --setting NAME --feature I --kind {pd,ale} --n N
  [--grid G] [--seed S]``: estimate a single ground-truth effect curve and
  print it as CSV on standard output.

Exit codes: 0 success, 1 validation error, 2 run finished but some cells
failed or are missing.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import dgp, effects, harness
from .exceptions import ConfigError, EffektorError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="effektor")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment protocol from a config file")
    sim.add_argument("--config", required=True, help="TOML experiment description")
    sim.add_argument("--rq", required=True, type=int, choices=(1, 2, 3))
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--seed", type=int, default=None, help="override the config's master_seed")

    eff = sub.add_parser("effects", help="print one estimated ground-truth effect curve")
    eff.add_argument("--setting", required=True)
    eff.add_argument("--feature", required=True, type=int)
    eff.add_argument("--kind", required=True, choices=(effects.PD, effects.ALE))
    eff.add_argument("--n", required=True, type=int)
    eff.add_argument("--grid", type=int, default=100)
    eff.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_simulate(args) -> int:
    cfg = harness.parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = harness.RUNNERS[args.rq](cfg, threads=max(args.threads, 1))
    csv_path = out_dir / f"results_rq{args.rq}.csv"
    harness.write_results(rows, csv_path)
    harness.write_manifest(cfg, args.rq, csv_path, out_dir / f"manifest_rq{args.rq}.json")
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 2 if harness.has_failures(rows) else 0


def _cmd_effects(args) -> int:
    spec = dgp.make_spec(args.setting)
    grid = effects.build_grid(spec, args.feature, args.grid)
    curve = effects.estimate_ground_truth_effect(
        spec, args.feature, args.kind, grid, n_gt=args.n, seed=args.seed
    )
    print("grid_index,x,value,flags")
    empty = curve.diagnostics.get("empty_bins")
    for j, g in enumerate(int(i) for i in grid.eval_mask.nonzero()[0]):
        flag = ""
        if empty is not None and args.kind == effects.ALE and g >= 1 and empty[g - 1]:
            flag = "empty_bin"
        print(f"{g},{float(grid.points[g])!r},{float(curve.values[j])!r},{flag}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_effects(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EffektorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
