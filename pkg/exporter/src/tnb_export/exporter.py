"""Database-to-JSON conversion.

The database is reached only through its own API object (anything exposing
`task_list`, `all_arch_dict` and `get_single_metric`). Output is the
format_version-1 benchmark file: complete micro-space tabulation, metrics per
requested task and split, loss-like metrics negated so higher is better, and
records emitted in lexicographic op-tuple order with floats printed at 17
significant digits (bit-exact round trip for 64-bit values).
"""

from __future__ import annotations

import importlib
import json
import math
import os
from dataclasses import dataclass, field

from .mapping import (DEFAULT_TASKS, ExportError, METRIC_CANDIDATES,
                      METRIC_DISPLAY_NAMES, OP_NAMES, LEX_EDGES, SPLITS,
                      parse_arch_string)

MICRO_SIZE = 4 ** 6


@dataclass
class ExportSpec:
    db_path: str
    out_path: str
    tasks: tuple[str, ...] = DEFAULT_TASKS
    api_module: str = "api"
    api_class: str = "TransNASBenchAPI"
    mode: str = "best"
    search_space: str = "micro"
    metric_overrides: dict = field(default_factory=dict)  # task -> (name template, negate)


def open_api(spec: ExportSpec):
    try:
        module = importlib.import_module(spec.api_module)
    except ImportError as exc:
        raise ExportError(
            f"cannot import database API module {spec.api_module!r}: {exc}") from exc
    cls = getattr(module, spec.api_class, None)
    if cls is None:
        raise ExportError(f"{spec.api_module} has no class {spec.api_class}")
    if not os.path.exists(spec.db_path):
        raise ExportError(f"database file not found: {spec.db_path}")
    return cls(spec.db_path)


def resolve_metric(api, probe_arch: str, task: str, spec: ExportSpec):
    """Pick the first metric-name candidate the database answers for."""
    if task in spec.metric_overrides:
        candidates = [tuple(spec.metric_overrides[task])]
    else:
        candidates = METRIC_CANDIDATES.get(task)
        if candidates is None:
            raise ExportError(f"no metric mapping for task {task!r}")
    errors = []
    for template, negate in candidates:
        try:
            value = api.get_single_metric(probe_arch, task,
                                          template.format(split="valid"),
                                          mode=spec.mode)
        except Exception as exc:  # the API raises assorted types
            errors.append(f"{template}: {exc}")
            continue
        if value is not None:
            return template, negate
    raise ExportError(f"no usable metric for task {task!r}; tried {errors}")


def fetch_records(api, spec: ExportSpec):
    available = list(getattr(api, "task_list"))
    missing = [t for t in spec.tasks if t not in available]
    if missing:
        raise ExportError(
            f"tasks {missing} not in the database; available: {available}")
    arch_strings = list(api.all_arch_dict[spec.search_space])
    by_ops: dict[tuple[int, ...], str] = {}
    for s in arch_strings:
        ops = parse_arch_string(s)
        if ops in by_ops:
            raise ExportError(f"duplicate cell encoding from {s!r} and {by_ops[ops]!r}")
        by_ops[ops] = s
    if len(by_ops) != MICRO_SIZE:
        raise ExportError(
            f"expected {MICRO_SIZE} micro architectures, found {len(by_ops)}")

    probe = arch_strings[0]
    metric_of = {t: resolve_metric(api, probe, t, spec) for t in spec.tasks}

    records = []
    for ops in sorted(by_ops):
        arch_str = by_ops[ops]
        metrics = {}
        for task in spec.tasks:
            template, negate = metric_of[task]
            per_split = {}
            for split in SPLITS:
                value = api.get_single_metric(arch_str, task,
                                              template.format(split=split),
                                              mode=spec.mode)
                value = float(value)
                if not math.isfinite(value):
                    raise ExportError(
                        f"non-finite {task}/{split} metric for {arch_str}")
                per_split[split] = -value if negate else value
            metrics[task] = per_split
        records.append((ops, metrics))
    return records, metric_of


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_benchmark(records, spec: ExportSpec) -> None:
    """Emit the portable JSON by hand so float formatting stays exact."""
    header = {
        "format_version": 1,
        "search_space": {
            "node_count": 4,
            "edges": [list(e) for e in LEX_EDGES],
            "ops": list(OP_NAMES),
        },
        "tasks": [
            {"name": t, "metric_name": METRIC_DISPLAY_NAMES.get(t, t),
             "higher_is_better": True}
            for t in spec.tasks
        ],
    }
    with open(spec.out_path, "w", encoding="utf-8") as fh:
        fh.write('{"format_version":1,"search_space":')
        fh.write(json.dumps(header["search_space"], separators=(",", ":")))
        fh.write(',"tasks":')
        fh.write(json.dumps(header["tasks"], separators=(",", ":")))
        fh.write(',"records":[')
        for i, (ops, metrics) in enumerate(records):
            if i:
                fh.write(",")
            fh.write('{"ops":[' + ",".join(str(o) for o in ops) + '],"metrics":{')
            parts = []
            for task in spec.tasks:
                split_text = ",".join(
                    f'"{s}":{_fmt(metrics[task][s])}' for s in SPLITS)
                parts.append(f'"{task}":{{{split_text}}}')
            fh.write(",".join(parts))
            fh.write("}}")
        fh.write("]}\n")


def export_benchmark(spec: ExportSpec) -> dict:
    """Run the full conversion; returns a small summary dict."""
    api = open_api(spec)
    records, metric_of = fetch_records(api, spec)
    write_benchmark(records, spec)
    return {
        "records": len(records),
        "tasks": list(spec.tasks),
        "metrics": {t: template.format(split="<split>")
                    for t, (template, _neg) in metric_of.items()},
        "negated": [t for t, (_tpl, neg) in metric_of.items() if neg],
        "out": spec.out_path,
    }
