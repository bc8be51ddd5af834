"""Command-line entry point.

Configuration is layered: built-in defaults < config file (--config, JSON
object of option names) < environment variables (NASTL_<OPTION>) < flags.
--print-config shows every effective value with the layer it came from and
exits. Exit codes: 0 success, 1 domain error, 2 usage error. Subcommands
write only inside their --out target.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import analysis
from .benchmark import (default_synthetic_spec, generate_synthetic, load_benchmark,
                        save_benchmark, spec_from_json)
from .errors import NastlError, SpecError
from .shaping import SEGMENTSEMANTIC_EXPONENT, default_grid, sweep_gamma
from .trainer import (EvalProtocol, desk_config, evaluate, load_checkpoint,
                      load_runlog, paper_config, train)
from .qnetwork import QNetwork
from .transfer import ExperimentPlan, TransferRegime, run_matrix, run_regime

ENV_PREFIX = "NASTL_"


class Opt:
    def __init__(self, name, type=str, default=None, help="", required=False,
                 flag=False):
        self.name = name
        self.type = type
        self.default = default
        self.help = help
        self.required = required
        self.flag = flag  # boolean store_true option


def _add_opts(parser: argparse.ArgumentParser, opts: list[Opt]) -> None:
    for o in opts:
        arg = "--" + o.name.replace("_", "-")
        if o.flag:
            parser.add_argument(arg, action="store_true", default=argparse.SUPPRESS,
                                help=o.help)
        else:
            parser.add_argument(arg, type=o.type, default=argparse.SUPPRESS,
                                help=o.help)


class Layered:
    """Resolved option values plus the layer each one came from."""

    def __init__(self, opts: list[Opt], args: argparse.Namespace, file_cfg: dict):
        resolved: dict = {}
        sources: dict = {}
        for o in opts:
            value, source = o.default, "default"
            if o.name in file_cfg:
                value, source = file_cfg[o.name], "config-file"
            env_key = ENV_PREFIX + o.name.upper()
            if env_key in os.environ:
                raw = os.environ[env_key]
                value = (raw.lower() in ("1", "true", "yes")) if o.flag else o.type(raw)
                source = "env"
            if hasattr(args, o.name):
                value, source = getattr(args, o.name), "flag"
            if value is None and o.required:
                raise SpecError(f"missing required option --{o.name.replace('_', '-')}")
            resolved[o.name] = value
            sources[o.name] = source
        object.__setattr__(self, "_resolved", resolved)
        object.__setattr__(self, "_sources", sources)

    def __getattr__(self, name):
        try:
            return self._resolved[name]
        except KeyError:
            raise AttributeError(name) from None

    def print_config(self) -> None:
        for name in sorted(self._resolved):
            print(f"{name} = {self._resolved[name]!r}  ({self._sources[name]})")


def _shaping_for(task: str, raw: str) -> float | None:
    """'auto' enables the spread-maximizing exponent for segmentsemantic only."""
    if raw == "auto":
        return SEGMENTSEMANTIC_EXPONENT if task == "segmentsemantic" else None
    if raw == "off":
        return None
    return float(raw)


def _build_train_config(layered: Layered, task: str):
    make = paper_config if layered.preset == "paper" else desk_config
    kwargs = dict(seed=layered.seed, mode=layered.mode,
                  shaping_exponent=_shaping_for(task, layered.shaping))
    if layered.steps is not None:
        kwargs["total_steps"] = layered.steps
    if layered.eval_interval is not None:
        kwargs["eval_interval"] = layered.eval_interval
    return make(**kwargs)


TRAIN_OPTS = [
    Opt("bench", str, required=True, help="benchmark JSON file"),
    Opt("task", str, required=True, help="task to train on"),
    Opt("out", str, required=True, help="output directory"),
    Opt("preset", str, "desk", help="desk or paper"),
    Opt("seed", int, 0, help="master seed"),
    Opt("steps", int, None, help="override total environment steps"),
    Opt("eval_interval", int, None, help="environment steps between evaluations"),
    Opt("mode", str, "deterministic", help="deterministic or threaded"),
    Opt("shaping", str, "auto", help="'auto', 'off', or an exponent"),
]


def cmd_bench_gen(layered: Layered) -> int:
    if layered.spec:
        with open(layered.spec, encoding="utf-8") as fh:
            spec = spec_from_json(json.load(fh))
    else:
        spec = default_synthetic_spec()
    bench = generate_synthetic(layered.seed, spec)
    save_benchmark(bench, layered.out)
    print(f"wrote {bench.space.size} records x {len(bench.tasks)} tasks to {layered.out}")
    return 0


def cmd_bench_validate(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    print(f"{layered.bench}: OK ({bench.space.size} records, "
          f"{len(bench.tasks)} tasks: {', '.join(sorted(bench.tasks))})")
    return 0


def cmd_bench_correlate(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    names, mat = analysis.task_correlation_matrix(bench, split=layered.split)
    lines = ["task_a,task_b,kendall_tau"]
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            lines.append(f"{a},{b},{float(mat[i, j])!r}")
    text = "\n".join(lines) + "\n"
    if layered.out:
        with open(layered.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {layered.out}")
    else:
        print(text, end="")
    return 0


def cmd_sweep_gamma(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    if layered.values == "normalized":
        values = bench.normalized_column(layered.task, layered.split)
    elif layered.values == "raw":
        values = bench.oriented(layered.task, layered.split)
        if values.min() < 0.0 or values.max() > 1.0:
            raise SpecError(
                f"raw {layered.task}/{layered.split} metrics leave [0, 1]; "
                "use --values normalized")
    else:
        raise SpecError(f"--values must be 'normalized' or 'raw', got {layered.values!r}")
    grid = default_grid(points=layered.grid_points, stop=layered.grid_stop)
    best, table = sweep_gamma(values, grid)
    lines = ["exponent,spread,is_best"]
    for g, s in table:
        lines.append(f"{float(g)!r},{float(s)!r},{int(g == best)}")
    text = "\n".join(lines) + "\n"
    if layered.out:
        with open(layered.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(f"best exponent {best:.3f} (spread {dict(table)[best]:.6f})"
          + (f"; table in {layered.out}" if layered.out else ""))
    return 0


def cmd_train(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    cfg = _build_train_config(layered, layered.task)
    result = train(cfg, bench, layered.task, layered.out)
    final = result.final_eval
    print(f"trained {result.env_steps} steps ({result.updates} updates); "
          f"final eval mean {final.mean:.4f}" if final else "no evaluation ran")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    ckpt = load_checkpoint(layered.ckpt)
    qnet = QNetwork(ckpt.net_config)
    protocol = EvalProtocol(episodes=layered.episodes, episode_cap=layered.episode_cap,
                            max_candidates=layered.max_candidates,
                            pad_nodes=layered.pad_nodes, seed=layered.seed)
    report = evaluate(qnet, ckpt.params, bench, layered.task, protocol)
    doc = report.to_json()
    if layered.out:
        os.makedirs(os.path.dirname(layered.out) or ".", exist_ok=True)
        with open(layered.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    print(f"{layered.task}: mean {report.mean:.4f} std {report.std:.4f} "
          f"ci [{report.ci_low:.4f}, {report.ci_high:.4f}] best {report.best_arch}")
    return 0


def cmd_transfer_run(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    cfg = _build_train_config(layered, layered.target)
    ckpt = load_checkpoint(layered.source_ckpt) if layered.source_ckpt else None
    steps = layered.regime_steps
    if steps is None:
        if layered.regime == "zero_shot":
            steps = 0
        elif layered.regime == "fine_tune":
            steps = max(1, cfg.total_steps // 10)
        else:
            steps = cfg.total_steps
    regime = TransferRegime(layered.regime, steps)
    report, _ = run_regime(ckpt, layered.target, regime, cfg, bench, layered.out)
    print(f"{layered.regime} -> {layered.target}: mean {report.mean:.4f} "
          f"ci [{report.ci_low:.4f}, {report.ci_high:.4f}]")
    return 0


def cmd_transfer_matrix(layered: Layered) -> int:
    bench = load_benchmark(layered.bench)
    tasks = tuple(t.strip() for t in layered.tasks.split(",")) if layered.tasks \
        else tuple(sorted(bench.tasks))
    seeds = tuple(int(s) for s in str(layered.seeds).split(","))
    base = _build_train_config(layered, tasks[0])
    base = dataclasses.replace(base, shaping_exponent=None)
    pretrain = layered.pretrain_steps or base.total_steps
    interval = base.effective_eval_interval
    regimes = []
    for kind in (r.strip() for r in layered.regimes.split(",")):
        if kind == "zero_shot":
            regimes.append(TransferRegime.zero_shot())
        elif kind == "fine_tune":
            # snap the 10% budget onto the eval grid so the fine-tune cell can
            # be carved out of the retrain run
            steps = max(interval, round(pretrain / 10 / interval) * interval)
            regimes.append(TransferRegime("fine_tune", steps))
        elif kind == "retrain":
            regimes.append(TransferRegime.retrain(pretrain))
        else:
            raise SpecError(f"unknown regime {kind!r}")
    shaping = {t: _shaping_for(t, layered.shaping) for t in tasks}
    shaping = {t: e for t, e in shaping.items() if e is not None}
    plan = ExperimentPlan(tasks=tasks, seeds=seeds, pretrain_steps=pretrain,
                          regimes=tuple(regimes), benchmark_path=layered.bench,
                          out_root=layered.out, base_config=base,
                          shaping_exponents=shaping)
    manifest = run_matrix(plan, bench)
    print(f"matrix complete; manifest at {manifest}")
    return 0


def cmd_analyze_matrix(layered: Layered) -> int:
    report = analysis.performance_matrix(layered.dir, layered.regime)
    os.makedirs(os.path.dirname(layered.out) or ".", exist_ok=True)
    analysis.write_matrix_csv(report, layered.out)
    if layered.figure:
        analysis.render_matrix_figure(report, layered.figure)
    if report.missing:
        print(f"warning: {len(report.missing)} cells missing: {report.missing}")
    print(f"wrote {layered.out}" + (f" and {layered.figure}" if layered.figure else ""))
    return 0


def _matrix_curves(root: str, manifest: dict, regime: str, target: str):
    """Per source task: list of per-seed eval curves toward `target`."""
    curves: dict[str, list[analysis.TrainingCurve]] = {}
    for cell in manifest["cells"]:
        if cell["target"] != target or cell.get("status") != "done":
            continue
        if cell["source"] == cell["target"]:
            if cell["regime"] != "scratch":
                continue
        elif cell["regime"] != regime:
            continue
        events = load_runlog(os.path.join(root, cell["paths"]["runlog"]))
        curves.setdefault(cell["source"], []).append(analysis.curve_from_events(events))
    return curves


def cmd_analyze_curves(layered: Layered) -> int:
    manifest = analysis.load_manifest(layered.dir)
    targets = [layered.target] if layered.target else manifest["plan"]["tasks"]
    rows = ["target,source,step,walltime_s,mean,ci_low,ci_high,n"]
    for target in targets:
        curves = _matrix_curves(layered.dir, manifest, layered.regime, target)
        for source, runs in sorted(curves.items()):
            smoothed = [analysis.smoothed(c, layered.kernel) for c in runs]
            steps = smoothed[0].steps
            for s in smoothed[1:]:
                if not np.array_equal(s.steps, steps):
                    raise SpecError("runs have mismatched evaluation grids")
            for i, step in enumerate(steps):
                vals = [s.values[i] for s in smoothed]
                if len(vals) >= 2:
                    mean, lo, hi = analysis.bootstrap_ci(vals)
                else:
                    mean = lo = hi = float(vals[0])
                rows.append(f"{target},{source},{int(step)},"
                            f"{float(smoothed[0].walltimes[i])!r},"
                            f"{mean!r},{lo!r},{hi!r},{len(vals)}")
    os.makedirs(os.path.dirname(layered.out) or ".", exist_ok=True)
    with open(layered.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {layered.out}")
    return 0


def cmd_analyze_crossover(layered: Layered) -> int:
    manifest = analysis.load_manifest(layered.dir)
    tasks = manifest["plan"]["tasks"]
    rows = []
    for target in tasks:
        curves = _matrix_curves(layered.dir, manifest, layered.regime, target)
        references = curves.get(target, [])
        if not references:
            continue
        for source, runs in sorted(curves.items()):
            tte = analysis.time_to_equivalence(runs, references, kernel=layered.kernel)
            row = {"source": source, "target": target,
                   "pair_count": tte.pair_count, "crossed_count": tte.crossed_count}
            if tte.crossed_count:
                row.update(mean_steps=repr(tte.mean_steps),
                           ci_steps_low=repr(tte.ci_steps[0]),
                           ci_steps_high=repr(tte.ci_steps[1]),
                           mean_walltime_s=repr(tte.mean_walltime_s),
                           ci_walltime_low=repr(tte.ci_walltime_s[0]),
                           ci_walltime_high=repr(tte.ci_walltime_s[1]))
            rows.append(row)
    os.makedirs(os.path.dirname(layered.out) or ".", exist_ok=True)
    analysis.write_crossover_csv(rows, layered.out)
    print(f"wrote {layered.out}")
    return 0


COMMANDS = {
    ("bench", "gen"): (cmd_bench_gen, [
        Opt("seed", int, 0), Opt("out", str, required=True),
        Opt("spec", str, None, help="synthetic spec JSON (default: built-in demo)"),
    ]),
    ("bench", "validate"): (cmd_bench_validate, [
        Opt("bench", str, required=True, help="benchmark file to validate"),
    ]),
    ("bench", "correlate"): (cmd_bench_correlate, [
        Opt("bench", str, required=True), Opt("split", str, "valid"),
        Opt("out", str, None, help="CSV path (default: stdout)"),
    ]),
    ("sweep-gamma", None): (cmd_sweep_gamma, [
        Opt("bench", str, required=True), Opt("task", str, required=True),
        Opt("split", str, "valid"), Opt("grid_points", int, 2000),
        Opt("grid_stop", float, 2.0), Opt("out", str, None),
        Opt("values", str, "normalized", help="'normalized' or 'raw' metrics"),
    ]),
    ("train", None): (cmd_train, TRAIN_OPTS),
    ("eval", None): (cmd_eval, [
        Opt("bench", str, required=True), Opt("ckpt", str, required=True),
        Opt("task", str, required=True), Opt("episodes", int, 64),
        Opt("episode_cap", int, 50), Opt("max_candidates", int, 18),
        Opt("pad_nodes", int, 8), Opt("seed", int, 0), Opt("out", str, None),
    ]),
    ("transfer", "run"): (cmd_transfer_run, TRAIN_OPTS[:1] + [
        Opt("target", str, required=True), Opt("out", str, required=True),
        Opt("regime", str, required=True, help="zero_shot, fine_tune or retrain"),
        Opt("source_ckpt", str, None), Opt("regime_steps", int, None),
        Opt("preset", str, "desk"), Opt("seed", int, 0),
        Opt("steps", int, None), Opt("eval_interval", int, None),
        Opt("mode", str, "deterministic"), Opt("shaping", str, "auto"),
    ]),
    ("transfer", "matrix"): (cmd_transfer_matrix, TRAIN_OPTS[:1] + [
        Opt("out", str, required=True), Opt("tasks", str, None),
        Opt("seeds", str, "0"), Opt("pretrain_steps", int, None),
        Opt("regimes", str, "zero_shot,fine_tune,retrain"),
        Opt("preset", str, "desk"), Opt("seed", int, 0),
        Opt("steps", int, None), Opt("eval_interval", int, None),
        Opt("mode", str, "deterministic"), Opt("shaping", str, "auto"),
    ]),
    ("analyze", "matrix"): (cmd_analyze_matrix, [
        Opt("dir", str, required=True), Opt("regime", str, required=True),
        Opt("out", str, required=True),
        Opt("figure", str, None, help="optional rendered figure (svg/pdf/png)"),
    ]),
    ("analyze", "curves"): (cmd_analyze_curves, [
        Opt("dir", str, required=True), Opt("regime", str, "retrain"),
        Opt("target", str, None), Opt("kernel", int, 16),
        Opt("out", str, required=True),
    ]),
    ("analyze", "crossover"): (cmd_analyze_crossover, [
        Opt("dir", str, required=True), Opt("regime", str, "retrain"),
        Opt("kernel", int, 16), Opt("out", str, required=True),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nastl",
        description="Architecture-search lab: benchmarks, agents, transfer, analysis")
    parser.add_argument("--config", help="JSON config file (option name -> value)")
    parser.add_argument("--print-config", action="store_true",
                        help="show effective configuration and exit")
    subs = parser.add_subparsers(dest="command", required=True)
    groups: dict[str, argparse.ArgumentParser] = {}
    for (top, sub), (_fn, opts) in COMMANDS.items():
        if sub is None:
            sp = subs.add_parser(top)
            _add_opts(sp, opts)
            sp.set_defaults(_key=(top, None))
        else:
            if top not in groups:
                groups[top] = subs.add_parser(top)
                groups[top].required_subs = groups[top].add_subparsers(
                    dest="subcommand", required=True)
            sp = groups[top].required_subs.add_parser(sub)
            _add_opts(sp, opts)
            sp.set_defaults(_key=(top, sub))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    fn, opts = COMMANDS[args._key]
    try:
        file_cfg = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
            if not isinstance(file_cfg, dict):
                raise SpecError(f"{args.config}: config file must hold a JSON object")
        layered = Layered(opts, args, file_cfg)
        if args.print_config:
            layered.print_config()
            return 0
        return fn(layered)
    except NastlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
