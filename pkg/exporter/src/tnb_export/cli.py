"""`tnb-export export --db <path> --tasks a,b,c --out file.json`"""

from __future__ import annotations

import argparse
import json
import sys

from .exporter import ExportSpec, export_benchmark
from .mapping import DEFAULT_TASKS, ExportError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnb-export")
    subs = parser.add_subparsers(dest="command", required=True)
    exp = subs.add_parser("export", help="convert the database to benchmark JSON")
    exp.add_argument("--db", required=True, help="path to the database file")
    exp.add_argument("--out", required=True, help="output benchmark JSON path")
    exp.add_argument("--tasks", default=",".join(DEFAULT_TASKS),
                     help="comma-separated task names")
    exp.add_argument("--api-module", default="api",
                     help="importable module exposing the database API")
    exp.add_argument("--api-class", default="TransNASBenchAPI")
    exp.add_argument("--mode", default="best", help="metric mode (best/final)")
    exp.add_argument("--metric", action="append", default=[], metavar="TASK=NAME[:negate]",
                     help="override the metric template for one task")
    return parser


def parse_metric_overrides(items):
    overrides = {}
    for item in items:
        task, _, rest = item.partition("=")
        if not rest:
            raise ExportError(f"bad --metric {item!r}; expected TASK=NAME[:negate]")
        name, _, flag = rest.partition(":")
        overrides[task] = (name, flag == "negate")
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(
            db_path=args.db,
            out_path=args.out,
            tasks=tuple(t.strip() for t in args.tasks.split(",") if t.strip()),
            api_module=args.api_module,
            api_class=args.api_class,
            mode=args.mode,
            metric_overrides=parse_metric_overrides(args.metric),
        )
        summary = export_benchmark(spec)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
