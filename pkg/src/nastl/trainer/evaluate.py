"""Greedy evaluation episodes and the random-walk reference.

An evaluation runs seeded episodes with epsilon=0; each episode tracks the
best architecture visited, ranked by the validation-split metric, and
reports that architecture's raw test-split metric. The split discipline
mirrors training: validation values guide, test values score.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .. import search_space as ss
from ..analysis import bootstrap_ci
from ..benchmark import Benchmark
from ..environment import EnvConfig, NasEnv
from ..qnetwork import Params, QNetwork, argmax_valid


@dataclass(frozen=True)
class EvalProtocol:
    episodes: int = 64
    episode_cap: int = 50
    max_candidates: int = 50
    pad_nodes: int = 8
    seed: int = 0
    guide_split: str = "valid"
    report_split: str = "test"


@dataclass
class EvalReport:
    task: str
    values: list[float]      # per-episode test metric of the best-visited arch
    mean: float
    std: float
    ci_low: float
    ci_high: float
    best_arch: str           # overall best architecture seen, encoded

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(**obj)


def _make_report(task: str, values: list[float], best_arch: ss.Arch,
                 seed: int) -> EvalReport:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size >= 2:
        mean, lo, hi = bootstrap_ci(arr, seed=seed)
    else:
        mean = lo = hi = float(arr[0])
    return EvalReport(task=task, values=[float(v) for v in values], mean=mean,
                      std=float(arr.std()), ci_low=lo, ci_high=hi,
                      best_arch=ss.encode(best_arch))


def evaluate(qnet: QNetwork, params: Params, bench: Benchmark, task: str,
             protocol: EvalProtocol) -> EvalReport:
    """Mean over greedy episodes of the best-visited architecture's test metric."""
    seeds = np.random.SeedSequence([protocol.seed, 0x45564C]).generate_state(protocol.episodes)
    cfg = EnvConfig(task=task, split=protocol.guide_split,
                    max_candidates=protocol.max_candidates,
                    episode_cap=protocol.episode_cap, pad_nodes=protocol.pad_nodes)
    envs = [NasEnv(bench, dataclasses.replace(cfg, seed=int(s))) for s in seeds]
    encoder = envs[0].encoder
    guide = bench.normalized_column(task, protocol.guide_split)

    obs = [env.reset() for env in envs]
    best_arch = [env.current for env in envs]
    best_guide = [guide[ss.arch_index(bench.space, env.current)] for env in envs]
    active = list(range(len(envs)))
    values: list[float] = [0.0] * len(envs)
    while active:
        tokens, mask = encoder.batch_tokens([obs[i] for i in active])
        q, _ = qnet.forward(params, tokens, mask)
        actions = argmax_valid(q)
        still = []
        for row, i in enumerate(active):
            o, _, terminal, _ = envs[i].step(int(actions[row]))
            g = guide[ss.arch_index(bench.space, envs[i].current)]
            if g > best_guide[i]:
                best_guide[i] = g
                best_arch[i] = envs[i].current
            if terminal:
                values[i] = bench.metric(best_arch[i], task, protocol.report_split)
            else:
                obs[i] = o
                still.append(i)
        active = still
    overall = max(range(len(envs)), key=lambda i: best_guide[i])
    return _make_report(task, values, best_arch[overall], protocol.seed)


def random_walk_report(bench: Benchmark, task: str, protocol: EvalProtocol) -> EvalReport:
    """Budget-matched baseline: uniform neighbor moves for the full episode cap.

    Implemented directly on the search space (no environment, no network) so
    it stays an independent yardstick for trained agents.
    """
    rng = np.random.default_rng(np.random.SeedSequence([protocol.seed, 0x52574B]))
    guide = bench.normalized_column(task, protocol.guide_split)
    values = []
    best_overall: ss.Arch | None = None
    best_overall_guide = -np.inf
    for _ in range(protocol.episodes):
        arch = ss.random_arch(rng, bench.space)
        best, best_g = arch, guide[ss.arch_index(bench.space, arch)]
        for _ in range(protocol.episode_cap):
            nbrs = ss.neighbors(arch, bench.space)
            arch = nbrs[rng.integers(0, len(nbrs))]
            g = guide[ss.arch_index(bench.space, arch)]
            if g > best_g:
                best, best_g = arch, g
        values.append(bench.metric(best, task, protocol.report_split))
        if best_g > best_overall_guide:
            best_overall, best_overall_guide = best, best_g
    return _make_report(task, values, best_overall, protocol.seed)
