"""Experiment-matrix orchestration: pretraining, transfer regimes, resume.

A plan expands into cells (seed, source, target, regime). Diagonal cells
(source == target) are single from-scratch training phases under the
"scratch" regime; off-diagonal cells initialize from the source task's
pretrained checkpoint. Fine-tune cells are carved out of their retrain
sibling when both regimes are planned: the retrain run checkpoints at the
fine-tune mark and the fine-tune cell is that checkpoint plus the log
truncated there, which is byte-identical to running the shorter schedule
separately in deterministic mode.

Everything lands under <root>/<seed>/<source>/<target>/<regime>/ and is
indexed by manifest.json; completed cells are skipped on resume, and a
manifest whose plan fingerprint differs from the requested plan refuses to
resume rather than silently mixing experiments.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .benchmark import Benchmark
from .errors import ContractError, SpecError, ValidationError
from .qnetwork import QNetwork
from .trainer import (Checkpoint, EvalProtocol, EvalReport, TrainConfig, evaluate,
                      load_checkpoint, load_runlog, train)
from .trainer.loop import _eval_seed, config_fingerprint
from .trainer.runlog import RunLogWriter

REGIMES = ("zero_shot", "fine_tune", "retrain")

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class TransferRegime:
    kind: str
    target_steps: int

    def __post_init__(self):
        if self.kind not in REGIMES + ("scratch",):
            raise SpecError(f"unknown regime {self.kind!r}")
        if self.kind == "zero_shot" and self.target_steps != 0:
            raise SpecError("zero_shot must have target_steps == 0")
        if self.kind != "zero_shot" and self.target_steps < 1:
            raise SpecError(f"{self.kind} needs positive target_steps")

    @classmethod
    def zero_shot(cls) -> "TransferRegime":
        return cls("zero_shot", 0)

    @classmethod
    def fine_tune(cls, pretrain_steps: int, fraction: float = 0.1) -> "TransferRegime":
        return cls("fine_tune", max(1, int(pretrain_steps * fraction)))

    @classmethod
    def retrain(cls, pretrain_steps: int) -> "TransferRegime":
        return cls("retrain", pretrain_steps)


@dataclass(frozen=True)
class ExperimentPlan:
    tasks: tuple[str, ...]
    seeds: tuple[int, ...]
    pretrain_steps: int
    regimes: tuple[TransferRegime, ...]
    benchmark_path: str
    out_root: str
    base_config: TrainConfig = field(default_factory=TrainConfig)
    shaping_exponents: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tasks:
            raise SpecError("plan needs at least one task")
        if not self.seeds:
            raise SpecError("plan needs at least one seed")
        if len(set(self.tasks)) != len(self.tasks):
            raise SpecError("duplicate tasks in plan")
        kinds = [r.kind for r in self.regimes]
        if len(set(kinds)) != len(kinds):
            raise SpecError("duplicate regimes in plan")

    def to_json(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "seeds": list(self.seeds),
            "pretrain_steps": self.pretrain_steps,
            "regimes": [[r.kind, r.target_steps] for r in self.regimes],
            "benchmark_path": self.benchmark_path,
            "base_config": dataclasses.asdict(self.base_config),
            "shaping_exponents": dict(sorted(self.shaping_exponents.items())),
        }

    def fingerprint(self) -> str:
        return config_fingerprint(self.to_json())


def cell_seed(seed: int, source: str, target: str) -> int:
    """Stable per-cell master seed; shared by fine_tune and retrain so the
    former is an exact prefix of the latter."""
    digest = hashlib.sha256(f"{seed}|{source}|{target}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _final_eval_report(result, task: str) -> EvalReport:
    events = load_runlog(result.runlog_path)
    evals = [e for e in events if e["type"] == "eval" and e["step"] == result.env_steps]
    if evals:
        e = evals[-1]
        return EvalReport(task=task, values=e["values"], mean=e["mean"], std=e["std"],
                          ci_low=e["ci_low"], ci_high=e["ci_high"],
                          best_arch=e["best_arch"])
    raise ValidationError(
        f"no final evaluation at step {result.env_steps} in {result.runlog_path}; "
        "choose an eval_interval dividing total_steps")


def _write_eval(report: EvalReport, out_dir: str) -> str:
    path = os.path.join(out_dir, "eval.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True)
        fh.write("\n")
    return path


def run_regime(source_ckpt: Checkpoint | None, target: str, regime: TransferRegime,
               cfg: TrainConfig, bench: Benchmark, out_dir: str):
    """Execute one transfer cell; returns (eval report, TrainResult | None).

    zero_shot evaluates the source parameters directly (zero target-task
    environment steps); fine_tune/retrain train on the target initialized
    from the source checkpoint; passing no checkpoint trains from scratch.
    """
    if regime.kind == "zero_shot":
        if source_ckpt is None:
            raise ContractError("zero_shot requires a source checkpoint")
        os.makedirs(out_dir, exist_ok=True)
        qnet = QNetwork(source_ckpt.net_config)
        protocol = EvalProtocol(
            episodes=cfg.eval_episodes, episode_cap=cfg.episode_cap,
            max_candidates=cfg.max_candidates, pad_nodes=cfg.pad_nodes,
            seed=_eval_seed(cfg.seed, 0))
        report = evaluate(qnet, source_ckpt.params, bench, target, protocol)
        doc = dataclasses.asdict(cfg)
        doc.update(task=target, regime="zero_shot", target_env_steps=0)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        with RunLogWriter(os.path.join(out_dir, "run.log.jsonl")) as log:
            log.log("config", 0, 0.0, config=json.loads(json.dumps(doc, default=str)),
                    fingerprint=config_fingerprint(doc))
            log.log("eval", 0, 0.0, mean=report.mean, std=report.std,
                    ci_low=report.ci_low, ci_high=report.ci_high,
                    n=len(report.values), values=report.values,
                    best_arch=report.best_arch)
        _write_eval(report, out_dir)
        return report, None

    if source_ckpt is not None and regime.kind not in ("fine_tune", "retrain"):
        raise ContractError(f"regime {regime.kind!r} does not take a checkpoint")
    run_cfg = dataclasses.replace(cfg, total_steps=regime.target_steps)
    result = train(run_cfg, bench, target, out_dir, init=source_ckpt)
    report = _final_eval_report(result, target)
    _write_eval(report, out_dir)
    return report, result


def _truncate_runlog(src_path: str, dst_path: str, upto_step: int) -> None:
    with open(src_path, encoding="utf-8") as src, \
            open(dst_path, "w", encoding="utf-8") as dst:
        for line in src:
            if not line.strip():
                continue
            if json.loads(line)["step"] <= upto_step:
                dst.write(line)


class MatrixRunner:
    """Expands a plan into cells and executes the missing ones."""

    def __init__(self, plan: ExperimentPlan, bench: Benchmark):
        self.plan = plan
        self.bench = bench
        self.root = plan.out_root
        missing = [t for t in plan.tasks if t not in bench.tasks]
        if missing:
            raise SpecError(f"benchmark lacks tasks {missing}")
        os.makedirs(self.root, exist_ok=True)
        self.manifest_path = os.path.join(self.root, MANIFEST_NAME)
        self.manifest = self._load_or_init_manifest()

    # -- manifest ------------------------------------------------------------

    def _load_or_init_manifest(self) -> dict:
        fingerprint = self.plan.fingerprint()
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path, encoding="utf-8") as fh:
                manifest = json.load(fh)
            if manifest.get("fingerprint") != fingerprint:
                raise ValidationError(
                    f"{self.manifest_path} belongs to a different plan "
                    f"(fingerprint {manifest.get('fingerprint')} != {fingerprint}); "
                    "refusing to resume")
            return manifest
        return {"format_version": 1, "fingerprint": fingerprint,
                "plan": self.plan.to_json(), "cells": []}

    def _save_manifest(self) -> None:
        with open(self.manifest_path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _cell_entry(self, seed: int, source: str, target: str, regime: str) -> dict:
        for cell in self.manifest["cells"]:
            if (cell["seed"], cell["source"], cell["target"], cell["regime"]) == \
                    (seed, source, target, regime):
                return cell
        cell = {"seed": seed, "source": source, "target": target, "regime": regime,
                "status": "pending", "paths": {}}
        self.manifest["cells"].append(cell)
        return cell

    def _cell_dir(self, seed: int, source: str, target: str, regime: str) -> str:
        return os.path.join(self.root, str(seed), source, target, regime)

    def _is_done(self, cell: dict) -> bool:
        if cell.get("status") != "done":
            return False
        return all(os.path.exists(os.path.join(self.root, p))
                   for p in cell["paths"].values())

    def _finish(self, cell: dict, paths: dict) -> None:
        cell["paths"] = {k: os.path.relpath(p, self.root) for k, p in paths.items()}
        cell["status"] = "done"
        self._save_manifest()

    # -- execution -----------------------------------------------------------

    def _cell_config(self, seed: int, source: str, target: str,
                     total_steps: int, checkpoint_at=()) -> TrainConfig:
        return dataclasses.replace(
            self.plan.base_config,
            total_steps=total_steps,
            seed=cell_seed(seed, source, target),
            shaping_exponent=self.plan.shaping_exponents.get(target),
            checkpoint_at=tuple(checkpoint_at),
        )

    def _scratch(self, seed: int, task: str) -> dict:
        cell = self._cell_entry(seed, task, task, "scratch")
        out_dir = self._cell_dir(seed, task, task, "scratch")
        if self._is_done(cell):
            return cell
        cfg = self._cell_config(seed, task, task, self.plan.pretrain_steps)
        result = train(cfg, self.bench, task, out_dir)
        report = _final_eval_report(result, task)
        eval_path = _write_eval(report, out_dir)
        self._finish(cell, {"dir": out_dir, "eval": eval_path,
                            "runlog": result.runlog_path,
                            "checkpoint": result.checkpoint_path})
        return cell

    def _source_checkpoint(self, seed: int, task: str) -> Checkpoint:
        cell = self._cell_entry(seed, task, task, "scratch")
        path = os.path.join(self.root, cell["paths"]["checkpoint"])
        return load_checkpoint(path)

    def _transfer_cell(self, seed: int, source: str, target: str,
                       regime: TransferRegime) -> None:
        cell = self._cell_entry(seed, source, target, regime.kind)
        if self._is_done(cell):
            return
        out_dir = self._cell_dir(seed, source, target, regime.kind)
        ckpt = self._source_checkpoint(seed, source)
        if regime.kind == "zero_shot":
            cfg = self._cell_config(seed, source, target, 1)
            run_regime(ckpt, target, regime, cfg, self.bench, out_dir)
            self._finish(cell, {"dir": out_dir, "eval": os.path.join(out_dir, "eval.json"),
                                "runlog": os.path.join(out_dir, "run.log.jsonl")})
            return
        retrain = self._regime_of("retrain")
        if regime.kind == "fine_tune" and retrain is not None and \
                self._can_truncate(regime, retrain):
            self._fine_tune_from_retrain(seed, source, target, cell, regime, retrain)
            return
        cfg = self._cell_config(seed, source, target, regime.target_steps)
        _, result = run_regime(ckpt, target, regime, cfg, self.bench, out_dir)
        self._finish(cell, {
            "dir": out_dir, "eval": os.path.join(out_dir, "eval.json"),
            "runlog": result.runlog_path,
            "checkpoint": result.checkpoint_path})

    def _regime_of(self, kind: str) -> TransferRegime | None:
        for r in self.plan.regimes:
            if r.kind == kind:
                return r
        return None

    def _can_truncate(self, fine: TransferRegime, retrain: TransferRegime) -> bool:
        interval = self.plan.base_config.eval_interval
        if interval is None:
            return False
        return fine.target_steps % interval == 0 and fine.target_steps <= retrain.target_steps

    def _retrain_cell_with_mark(self, seed: int, source: str, target: str,
                                retrain: TransferRegime, mark: int) -> dict:
        cell = self._cell_entry(seed, source, target, "retrain")
        out_dir = self._cell_dir(seed, source, target, "retrain")
        mark_ckpt = os.path.join(out_dir, f"ckpt_{mark:012d}.nt")
        if self._is_done(cell) and os.path.exists(mark_ckpt):
            return cell
        ckpt = self._source_checkpoint(seed, source)
        cfg = self._cell_config(seed, source, target, retrain.target_steps,
                                checkpoint_at=(mark,))
        _, result = run_regime(ckpt, target, retrain, cfg, self.bench, out_dir)
        self._finish(cell, {
            "dir": out_dir, "eval": os.path.join(out_dir, "eval.json"),
            "runlog": result.runlog_path,
            "checkpoint": result.checkpoint_path,
            "mark_checkpoint": mark_ckpt})
        return cell

    def _fine_tune_from_retrain(self, seed: int, source: str, target: str,
                                cell: dict, fine: TransferRegime,
                                retrain: TransferRegime) -> None:
        """The fine-tune cell is the retrain run truncated at the mark."""
        mark = fine.target_steps
        retrain_cell = self._retrain_cell_with_mark(seed, source, target, retrain, mark)
        out_dir = self._cell_dir(seed, source, target, "fine_tune")
        os.makedirs(out_dir, exist_ok=True)
        retrain_dir = os.path.join(self.root, retrain_cell["paths"]["dir"])
        runlog_path = os.path.join(out_dir, "run.log.jsonl")
        _truncate_runlog(os.path.join(retrain_dir, "run.log.jsonl"), runlog_path, mark)
        events = [e for e in load_runlog(runlog_path)
                  if e["type"] == "eval" and e["step"] == mark]
        if not events:
            raise ValidationError(f"retrain log lacks an evaluation at step {mark}")
        e = events[-1]
        report = EvalReport(task=target, values=e["values"], mean=e["mean"],
                            std=e["std"], ci_low=e["ci_low"], ci_high=e["ci_high"],
                            best_arch=e["best_arch"])
        eval_path = _write_eval(report, out_dir)
        mark_ckpt = os.path.join(retrain_dir, f"ckpt_{mark:012d}.nt")
        self._finish(cell, {"dir": out_dir, "eval": eval_path, "runlog": runlog_path,
                            "checkpoint": mark_ckpt})

    def run(self) -> str:
        """Execute all missing cells; returns the manifest path."""
        for seed in self.plan.seeds:
            for task in self.plan.tasks:
                self._scratch(seed, task)
            for source in self.plan.tasks:
                for target in self.plan.tasks:
                    if source == target:
                        continue
                    for regime in self.plan.regimes:
                        self._transfer_cell(seed, source, target, regime)
        self._save_manifest()
        return self.manifest_path


def run_matrix(plan: ExperimentPlan, bench: Benchmark) -> str:
    return MatrixRunner(plan, bench).run()
