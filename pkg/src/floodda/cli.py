"""Command-line front end: case generation, experiment runs, score merging
and transform-node dumps."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, FloodDAError, ValidationError
from .experiments import (_SCHEMA, ExperimentConfig, collect_phi_tables,
                          compare_runs, load_config, make_default_case,
                          run_experiment)

log = logging.getLogger("floodda")

_OVERRIDABLE = {k: t for k, (t, _) in _SCHEMA.items()
                if t in (int, float, str, bool) and k != "schema_version"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floodda",
        description="Ensemble flood-forecast experiments on a raster "
                    "diffusive-wave model.")
    parser.add_argument("--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("make-case", help="write the default desk-scale case")
    p.add_argument("outdir", type=Path)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("run", help="run one configured experiment")
    p.add_argument("--config", type=Path, required=True,
                   help="JSON experiment configuration")
    for key, typ in sorted(_OVERRIDABLE.items()):
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, type=_parse_bool, default=None,
                           metavar="BOOL", help=f"override config key {key}")
        else:
            p.add_argument(flag, type=typ, default=None,
                           help=f"override config key {key}")

    p = sub.add_parser("compare", help="merge score tables from several runs")
    p.add_argument("run_dirs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=None,
                   help="write the merged CSV here instead of stdout")

    p = sub.add_parser("dump-phi", help="export anamorphosis nodes from a run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--aggregate", action="store_true",
                   help="pool nodes across cycles per observation slot")
    p.add_argument("--out", type=Path, default=None)
    return parser


def _cmd_run(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    for key in _OVERRIDABLE:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    config = ExperimentConfig(raw=raw, case_dir=Path(args.config).parent.resolve())
    result = run_experiment(config)
    print(f"{config.run_label}: {len(result.scores)} score rows -> {result.outdir}")
    return 0


def _cmd_compare(args) -> int:
    rows = compare_runs(args.run_dirs, out_path=args.out)
    if args.out is None:
        print("time_s,experiment,metric,location,value")
        for t, exp, metric, location, value in rows:
            print(f"{t:.6f},{exp},{metric},{location},{float(value)!r}")
    else:
        print(f"{len(rows)} rows -> {args.out}")
    return 0


def _cmd_dump_phi(args) -> int:
    rows = collect_phi_tables(args.run_dir, aggregate=args.aggregate)
    if args.aggregate:
        lines = ["slot,y_physical,z_gaussian"]
        lines += [f"{slot},{y!r},{z!r}" for slot, y, z in rows]
    else:
        lines = ["cycle,slot,y_physical,z_gaussian"]
        lines += [f"{cycle},{slot},{y!r},{z!r}" for cycle, slot, y, z in rows]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        print(f"{len(rows)} rows -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "make-case":
            paths = make_default_case(args.outdir, seed=args.seed)
            print(f"case written to {paths['case_dir']}")
            return 0
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "compare":
            return _cmd_compare(args)
        if args.verb == "dump-phi":
            return _cmd_dump_phi(args)
        raise ConfigurationError(f"unknown verb {args.verb!r}")
    except (ConfigurationError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloodDAError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
