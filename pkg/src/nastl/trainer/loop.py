"""Actor/learner training runtime.

Roles: W workers collect experience on vectorized environments with
per-worker epsilon-greedy exploration and compute initial replay priorities
from their own parameter snapshot; shard owners hold the prioritized buffer;
one learner samples batches, applies the double-Q n-step update, refreshes
priorities, republishes parameters, and hard-copies online->target every
target_sync_interval environment steps; one logger stream records events.

Two schedulers share all of that machinery:

* deterministic (default): single-threaded round-robin workers -> shards ->
  learner -> bookkeeping. Bit-reproducible for a fixed seed; walltime is
  virtual (1 ms per environment step).
* threaded: worker threads feed the shards concurrently; the learner thread
  also owns evaluation/checkpoint scheduling so the event stream stays
  single-writer. Real wall-clock time, no reproducibility guarantee.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ..benchmark import Benchmark
from ..environment import EnvConfig, Observation, VecEnv, observation_dim
from ..errors import NumericFault, SpecError
from ..qnetwork import (AdamConfig, AdamState, NetConfig, Params, QNetwork,
                        adam_step, clip_global_norm)
from ..replay import ReplayConfig, ShardedReplay
from .checkpoint import Checkpoint, save_checkpoint
from .evaluate import EvalProtocol, EvalReport, evaluate
from .nstep import NStepAccumulator, NStepSample, Transition, compute_targets
from .runlog import RunLogWriter

VIRTUAL_SECONDS_PER_STEP = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200_000
    batch_size: int = 256
    n_step: int = 3
    discount: float = 0.99
    target_sync_interval: int = 8192
    workers: int = 4
    vector_width: int = 8
    publish_interval: int = 100       # learner updates between parameter broadcasts
    train_interval: int = 256         # environment steps per learner update
    eval_interval: int | None = None  # defaults to total_steps // 100
    eval_episodes: int = 64
    episode_cap: int = 50
    max_candidates: int = 18
    pad_nodes: int = 8
    split: str = "valid"
    shaping_exponent: float | None = None
    lr: float = 1e-3
    epsilon_base: float = 0.4
    epsilon_span: float = 7.0
    seed: int = 0
    mode: str = "deterministic"       # or "threaded"
    checkpoint_at: tuple[int, ...] = ()
    train_log_interval: int = 1       # learner updates between train events
    net: NetConfig = field(default_factory=lambda: NetConfig(
        d_model=32, ffn_hidden=128, head_hidden=32))
    replay: ReplayConfig = field(default_factory=ReplayConfig)

    def __post_init__(self):
        if self.n_step < 1:
            raise SpecError("n_step must be >= 1")
        if not (0.0 < self.discount <= 1.0):
            raise SpecError("discount must lie in (0, 1]")
        for f in ("total_steps", "batch_size", "target_sync_interval", "workers",
                  "vector_width", "publish_interval", "train_interval",
                  "eval_episodes", "episode_cap"):
            if getattr(self, f) < 1:
                raise SpecError(f"{f} must be positive")
        if self.mode not in ("deterministic", "threaded"):
            raise SpecError(f"unknown mode {self.mode!r}")

    @property
    def effective_eval_interval(self) -> int:
        return self.eval_interval if self.eval_interval else max(1, self.total_steps // 100)


def desk_config(**overrides) -> TrainConfig:
    """CPU-scale preset: full algorithm, reduced widths and budget. Parameters
    broadcast faster than at full scale because desk runs take far fewer
    learner updates overall."""
    base = dict(eval_interval=5000, publish_interval=10)
    base.update(overrides)
    return TrainConfig(**base)


def paper_config(**overrides) -> TrainConfig:
    """Full-scale preset with the published hyperparameters."""
    base = dict(
        total_steps=10_000_000, workers=8, vector_width=32, train_interval=16,
        publish_interval=100, max_candidates=50, lr=5e-5, eval_interval=None,
        net=NetConfig(),  # d_model 256, 2x4-head layers, 1024 ffn, 3-layer heads
    )
    base.update(overrides)
    return TrainConfig(**base)


def worker_epsilons(cfg: TrainConfig) -> list[float]:
    """Per-worker exploration rates: eps_i = base ** (1 + span * i / (W - 1))."""
    w = cfg.workers
    if w == 1:
        return [cfg.epsilon_base]
    return [cfg.epsilon_base ** (1.0 + cfg.epsilon_span * i / (w - 1)) for i in range(w)]


def effective_config(cfg: TrainConfig, task: str) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["task"] = task
    return doc


def config_fingerprint(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _eval_seed(master_seed: int, step: int) -> int:
    return int(np.random.SeedSequence([master_seed, 0x4556414C, step]).generate_state(1)[0])


@dataclass
class _Deferred:
    """Completed n-step sample waiting for its bootstrap value estimate."""
    sample: NStepSample
    q_sa: float
    disc_pow: float
    env_idx: int | None  # None: bootstrap obs is not an acting obs (episode end)


class Worker:
    """One experience collector over a vectorized environment."""

    def __init__(self, wid: int, bench: Benchmark, env_cfg: EnvConfig, width: int,
                 env_seeds: list[int], action_seed: int, epsilon: float,
                 n_step: int, discount: float, shard: int, priority_eps: float):
        self.wid = wid
        self.shard = shard
        self.epsilon = epsilon
        self.discount = discount
        self.priority_eps = priority_eps
        self.venv = VecEnv(bench, env_cfg, env_seeds)
        self.encoder = self.venv.encoder
        self.rng = np.random.default_rng(action_seed)
        self.accums = [NStepAccumulator(n_step, discount) for _ in range(width)]
        self.qsa: list[deque] = [deque() for _ in range(width)]
        self.obs: list[Observation] = self.venv.reset()
        self.deferred: list[_Deferred] = []
        self.steps = 0

    def round_inputs(self) -> list[Observation]:
        """Observations this round's forward pass must cover: the acting
        observations plus bootstrap observations of episode-end samples."""
        self._terminal_boot = [d.sample.bootstrap_obs for d in self.deferred
                               if d.env_idx is None]
        return self.obs + self._terminal_boot

    def collect(self, qnet: QNetwork, params: Params) -> list[tuple[NStepSample, float]]:
        """One vector step: act, accumulate, and price finished samples."""
        inputs = self.round_inputs()
        tokens, mask = self.encoder.batch_tokens(inputs)
        q, _ = qnet.forward(params, tokens, mask)
        return self.round_apply(q)

    def round_apply(self, q: np.ndarray) -> list[tuple[NStepSample, float]]:
        """Act and accumulate given Q rows aligned with round_inputs()."""
        width = self.venv.width
        out = []
        pos = width
        for d in self.deferred:
            if d.env_idx is None:
                v_boot = float(q[pos].max())
                pos += 1
            else:
                v_boot = float(q[d.env_idx].max())
            td = d.sample.return_n + d.disc_pow * v_boot - d.q_sa
            out.append((d.sample, abs(td) + self.priority_eps))
        self.deferred = []

        actions = []
        q_taken = []
        for i in range(width):
            n_valid = self.obs[i].n_valid
            if self.rng.random() < self.epsilon:
                a = int(self.rng.integers(0, n_valid))
            else:
                a = int(q[i].argmax())
            actions.append(a)
            q_taken.append(float(q[i, a]))

        vstep = self.venv.step(actions)
        for i in range(width):
            tr = Transition(obs=self.obs[i], action=actions[i],
                            reward=float(vstep.rewards[i]), next_obs=vstep.next_obs[i],
                            terminal=bool(vstep.terminals[i]),
                            timeout=bool(vstep.timeouts[i]))
            self.qsa[i].append(q_taken[i])
            for sample in self.accums[i].push(tr):
                q_sa = self.qsa[i].popleft()
                if not sample.bootstrap_needed:
                    out.append((sample, abs(sample.return_n - q_sa) + self.priority_eps))
                else:
                    env_idx = None if vstep.terminals[i] else i
                    self.deferred.append(_Deferred(
                        sample=sample, q_sa=q_sa,
                        disc_pow=self.discount ** sample.m, env_idx=env_idx))
        self.obs = vstep.obs
        self.steps += width
        return out


class Learner:
    """Owns online/target parameters, the optimizer and priority refresh."""

    def __init__(self, qnet: QNetwork, encoder, cfg: TrainConfig,
                 replay: ShardedReplay, params: Params, sample_seed: int):
        self.qnet = qnet
        self.encoder = encoder
        self.cfg = cfg
        self.replay = replay
        self.params = params
        self.target = {k: v.copy() for k, v in params.items()}
        self.adam = AdamState.init(params, AdamConfig(lr=cfg.lr))
        self.rng = np.random.default_rng(sample_seed)
        self.updates = 0

    def ready(self) -> bool:
        return len(self.replay) >= self.cfg.batch_size

    def update(self) -> tuple[float, float]:
        """One batch step; returns (loss, pre-clip gradient norm)."""
        cfg = self.cfg
        samples, refs, weights = self.replay.sample(cfg.batch_size, cfg.replay.beta, self.rng)
        targets = compute_targets(self.qnet, self.params, self.target, self.encoder,
                                  samples, cfg.discount)
        tokens, mask = self.encoder.batch_tokens([s.obs for s in samples])
        actions = np.array([s.action for s in samples], dtype=np.int64)
        loss, bundle, td = self.qnet.loss_and_grads(
            self.params, tokens, mask, actions, targets, weights)
        grad_norm = bundle.global_l2
        bundle = clip_global_norm(bundle)
        self.params, self.adam = adam_step(self.params, bundle, self.adam)
        self.replay.update_priorities(refs, td)
        self.updates += 1
        return loss, grad_norm

    def sync_target(self) -> None:
        self.target = {k: v.copy() for k, v in self.params.items()}


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: str
    runlog_path: str
    out_dir: str
    env_steps: int
    updates: int
    samples_trained: int
    final_eval: EvalReport | None


class _Run:
    """Shared wiring for both scheduling modes."""

    def __init__(self, cfg: TrainConfig, bench: Benchmark, task: str,
                 out_dir: str, init: Checkpoint | None):
        if task not in bench.tasks:
            raise SpecError(f"benchmark does not cover task {task!r}")
        os.makedirs(out_dir, exist_ok=True)
        self.cfg = cfg
        self.bench = bench
        self.task = task
        self.out_dir = out_dir

        net_cfg = cfg.net
        dim = observation_dim(bench.space, cfg.pad_nodes)
        if net_cfg.input_dim is None:
            net_cfg = replace(net_cfg, input_dim=dim)
        elif net_cfg.input_dim != dim:
            raise SpecError(f"net input_dim {net_cfg.input_dim} != observation dim {dim}")
        self.net_cfg = net_cfg
        self.qnet = QNetwork(net_cfg)

        self.config_doc = effective_config(cfg, task)
        self.fingerprint = config_fingerprint(self.config_doc)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(self.config_doc, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")

        seq = np.random.SeedSequence(cfg.seed)
        init_seed, learner_seed, *worker_seeds = seq.spawn(2 + cfg.workers)
        if init is not None:
            if init.net_config != net_cfg:
                raise SpecError(
                    f"checkpoint network config {init.net_config} does not match "
                    f"this run's {net_cfg}")
            params = {k: v.copy() for k, v in init.params.items()}
            self.base_lineage = list(init.lineage)
        else:
            params = self.qnet.init_params(np.random.default_rng(init_seed))
            self.base_lineage = []

        self.replay = ShardedReplay(cfg.replay)
        self.learner = Learner(self.qnet, None, cfg, self.replay, params,
                               int(learner_seed.generate_state(1)[0]))
        env_cfg = EnvConfig(task=task, split=cfg.split, max_candidates=cfg.max_candidates,
                            episode_cap=cfg.episode_cap, pad_nodes=cfg.pad_nodes,
                            shaping_exponent=cfg.shaping_exponent)
        epsilons = worker_epsilons(cfg)
        self.workers = []
        for wid in range(cfg.workers):
            states = worker_seeds[wid].generate_state(cfg.vector_width + 1)
            self.workers.append(Worker(
                wid=wid, bench=bench, env_cfg=env_cfg, width=cfg.vector_width,
                env_seeds=[int(s) for s in states[:-1]], action_seed=int(states[-1]),
                epsilon=epsilons[wid], n_step=cfg.n_step, discount=cfg.discount,
                shard=wid % cfg.replay.shards, priority_eps=cfg.replay.priority_epsilon))
        self.learner.encoder = self.workers[0].encoder

        self.published = self.learner.params
        self.env_steps = 0
        self.samples_trained = 0
        self.next_sync = cfg.target_sync_interval
        self.next_eval = 0  # evaluate untrained parameters too
        self.next_ckpts = sorted(set(cfg.checkpoint_at) | {cfg.total_steps})
        self.eval_reports: list[EvalReport] = []
        self.last_eval_step: int | None = None
        self._t0 = time.monotonic()

    def walltime(self) -> float:
        if self.cfg.mode == "deterministic":
            return self.env_steps * VIRTUAL_SECONDS_PER_STEP
        return time.monotonic() - self._t0

    def make_checkpoint(self, with_adam: bool = True) -> Checkpoint:
        lineage = self.base_lineage + [(self.task, self.env_steps)]
        return Checkpoint(
            net_config=self.net_cfg,
            params=self.learner.params,
            adam_state=self.learner.adam if with_adam else None,
            trained_steps=self.env_steps,
            lineage=lineage,
            rng_state=self.learner.rng.bit_generator.state,
            config_fingerprint=self.fingerprint,
        )

    def write_checkpoint(self, log: RunLogWriter) -> str:
        name = f"ckpt_{self.env_steps:012d}.nt"
        path = os.path.join(self.out_dir, name)
        save_checkpoint(self.make_checkpoint(), path)
        log.log("checkpoint-written", self.env_steps, self.walltime(), path=name)
        return path

    def run_eval(self, log: RunLogWriter) -> EvalReport:
        protocol = EvalProtocol(
            episodes=self.cfg.eval_episodes, episode_cap=self.cfg.episode_cap,
            max_candidates=self.cfg.max_candidates, pad_nodes=self.cfg.pad_nodes,
            seed=_eval_seed(self.cfg.seed, self.env_steps))
        report = evaluate(self.qnet, self.learner.params, self.bench, self.task, protocol)
        log.log("eval", self.env_steps, self.walltime(), mean=report.mean,
                std=report.std, ci_low=report.ci_low, ci_high=report.ci_high,
                n=len(report.values), values=report.values, best_arch=report.best_arch)
        self.eval_reports.append(report)
        self.last_eval_step = self.env_steps
        return report

    def learner_turn(self, log: RunLogWriter) -> None:
        """Catch the learner up to the configured update/step ratio."""
        cfg = self.cfg
        while (self.learner.ready()
               and self.learner.updates < self.env_steps // cfg.train_interval):
            try:
                loss, grad_norm = self.learner.update()
            except NumericFault:
                path = os.path.join(self.out_dir, "ckpt_diagnostic.nt")
                save_checkpoint(self.make_checkpoint(), path)
                raise
            self.samples_trained += cfg.batch_size
            if self.learner.updates % cfg.publish_interval == 0:
                self.published = self.learner.params
            if cfg.train_log_interval and self.learner.updates % cfg.train_log_interval == 0:
                log.log("train", self.env_steps, self.walltime(), loss=loss,
                        grad_norm=grad_norm, replay_size=len(self.replay),
                        updates=self.learner.updates)

    def bookkeeping(self, log: RunLogWriter) -> None:
        """Target syncs, evaluations and scheduled checkpoints, in step order."""
        while self.env_steps >= self.next_sync:
            self.learner.sync_target()
            self.next_sync += self.cfg.target_sync_interval
        while self.next_eval is not None and self.env_steps >= self.next_eval:
            self.run_eval(log)
            nxt = self.next_eval + self.cfg.effective_eval_interval
            self.next_eval = nxt if nxt <= self.cfg.total_steps else None
        while self.next_ckpts and self.env_steps >= self.next_ckpts[0]:
            final = self.next_ckpts[0] >= self.cfg.total_steps
            if final and self.last_eval_step != self.env_steps:
                # the eval grid missed the end of training; close the curve
                self.run_eval(log)
            self.write_checkpoint(log)
            self.next_ckpts.pop(0)


def train(cfg: TrainConfig, bench: Benchmark, task: str, out_dir: str,
          init: Checkpoint | None = None) -> TrainResult:
    """Run the actor/learner loop for cfg.total_steps environment steps."""
    run = _Run(cfg, bench, task, out_dir, init)
    runlog_path = os.path.join(out_dir, "run.log.jsonl")
    with RunLogWriter(runlog_path) as log:
        log.log("config", 0, run.walltime(), config=run.config_doc,
                fingerprint=run.fingerprint)
        if cfg.mode == "deterministic":
            _drive_deterministic(run, log)
        else:
            _drive_threaded(run, log)
        ckpt_path = os.path.join(run.out_dir, f"ckpt_{run.env_steps:012d}.nt")

    steps_by_worker = sum(w.steps for w in run.workers)
    assert steps_by_worker == run.env_steps, "environment step accounting drifted"
    return TrainResult(
        checkpoint=run.make_checkpoint(),
        checkpoint_path=ckpt_path,
        runlog_path=runlog_path,
        out_dir=run.out_dir,
        env_steps=run.env_steps,
        updates=run.learner.updates,
        samples_trained=run.samples_trained,
        final_eval=run.eval_reports[-1] if run.eval_reports else None,
    )


def _drive_deterministic(run: _Run, log: RunLogWriter) -> None:
    cfg = run.cfg
    encoder = run.workers[0].encoder
    run.bookkeeping(log)  # step-0 evaluation
    while run.env_steps < cfg.total_steps:
        # all workers hold the same snapshot here, so their forward passes
        # batch into a single call; round_apply keeps per-worker state apart
        inputs = []
        counts = []
        for worker in run.workers:
            batch = worker.round_inputs()
            counts.append(len(batch))
            inputs.extend(batch)
        tokens, mask = encoder.batch_tokens(inputs)
        q, _ = run.qnet.forward(run.published, tokens, mask)
        offset = 0
        for worker, count in zip(run.workers, counts):
            for sample, priority in worker.round_apply(q[offset:offset + count]):
                run.replay.insert(worker.shard, sample, priority)
            offset += count
            run.env_steps += cfg.vector_width
        run.learner_turn(log)
        run.bookkeeping(log)


def _drive_threaded(run: _Run, log: RunLogWriter) -> None:
    cfg = run.cfg
    lock = threading.Lock()
    errors: list[BaseException] = []

    def worker_loop(worker: Worker) -> None:
        try:
            while True:
                with lock:
                    if run.env_steps >= cfg.total_steps:
                        return
                    run.env_steps += cfg.vector_width
                for sample, priority in worker.collect(run.qnet, run.published):
                    run.replay.insert(worker.shard, sample, priority)
        except BaseException as exc:  # propagate to the driver
            errors.append(exc)

    threads = [threading.Thread(target=worker_loop, args=(w,), daemon=True)
               for w in run.workers]
    run.bookkeeping(log)
    for t in threads:
        t.start()
    # learner role doubles as the scheduler so the event stream stays ordered
    while True:
        with lock:
            steps = run.env_steps
        run.learner_turn(log)
        run.bookkeeping(log)
        if errors:
            raise errors[0]
        if steps >= cfg.total_steps and not any(t.is_alive() for t in threads):
            run.learner_turn(log)
            run.bookkeeping(log)
            break
        if not run.learner.ready():
            time.sleep(0.002)
    for t in threads:
        t.join()
