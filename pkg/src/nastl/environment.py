"""Incremental-improvement MDP over one benchmark task.

State = current architecture. The agent sees the current architecture plus
its one-edit neighborhood as candidate tokens; action 0 keeps the current
architecture and ends the episode, action k >= 1 moves to neighbor k-1.
Reward at every step is the (optionally shaped) min-max-normalized metric of
the architecture held after the action. Episodes that exhaust the step cap
end with timeout=True so the learner can keep bootstrapping through them.

Candidate encoding: the cell adjacency is embedded into a pad_nodes-sized
matrix at a random diagonal offset (drawn per candidate per encoding call),
edge operations are one-hot rows over every possible src<dst slot of the
padded graph (unused slots carry a dedicated pad class), plus an is_current
flag on token 0. Observations store the compact form (op vectors + offsets);
dense tensors are produced in vectorized batches.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import search_space as ss
from .benchmark import Benchmark, SPLITS
from .errors import ContractError, SpecError
from .shaping import gamma_transform


def observation_dim(space: ss.SearchSpace, pad_nodes: int) -> int:
    """Flattened candidate-token width for a space under a given padding."""
    n_slots = pad_nodes * (pad_nodes - 1) // 2
    return pad_nodes * pad_nodes + n_slots * (space.n_ops + 1) + 1


@dataclass(frozen=True)
class EnvConfig:
    task: str
    split: str = "valid"
    max_candidates: int = 50
    episode_cap: int = 50
    pad_nodes: int = 8
    shaping_exponent: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_candidates < 1:
            raise SpecError("max_candidates must be >= 1")
        if self.episode_cap < 1:
            raise SpecError("episode_cap must be >= 1")
        if self.split not in SPLITS:
            raise SpecError(f"unknown split {self.split!r}")
        if self.shaping_exponent is not None and self.shaping_exponent <= 0:
            raise SpecError("shaping exponent must be positive")


@dataclass
class Observation:
    """Compact candidate set; token 0 is the current architecture."""

    cands: np.ndarray    # (n_valid, n_edges) int16 op vectors
    offsets: np.ndarray  # (n_valid,) int16 diagonal offsets used for padding
    n_tokens: int        # mask length: max_candidates + 1

    @property
    def n_valid(self) -> int:
        return self.cands.shape[0]

    def mask(self) -> np.ndarray:
        return np.arange(self.n_tokens) < self.n_valid


class ObsEncoder:
    """Densifies compact observations; all index tables precomputed."""

    def __init__(self, space: ss.SearchSpace, pad_nodes: int, max_candidates: int):
        if pad_nodes < space.node_count:
            raise SpecError(
                f"pad_nodes {pad_nodes} smaller than node_count {space.node_count}")
        self.space = space
        self.pad_nodes = pad_nodes
        self.max_candidates = max_candidates
        self.n_tokens = max_candidates + 1
        self.n_offsets = pad_nodes - space.node_count + 1
        self.n_slots = pad_nodes * (pad_nodes - 1) // 2
        self.dim = observation_dim(space, pad_nodes)
        self._ops_base = pad_nodes * pad_nodes
        self._pad_class = space.n_ops

        # slot_index[(i, j)] for i<j in lexicographic order
        def slot(i: int, j: int) -> int:
            return i * pad_nodes - i * (i + 1) // 2 + (j - i - 1)

        self._adj_cols = np.empty((self.n_offsets, space.n_edges), dtype=np.int64)
        self._op_rows = np.empty((self.n_offsets, space.n_edges), dtype=np.int64)
        for r in range(self.n_offsets):
            for e, (s, d) in enumerate(space.edges):
                self._adj_cols[r, e] = (s + r) * pad_nodes + (d + r)
                self._op_rows[r, e] = slot(s + r, d + r)

    def draw_offsets(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(0, self.n_offsets, size=n).astype(np.int16)

    def encode_tokens(self, cands: np.ndarray, offsets: np.ndarray,
                      is_current: np.ndarray) -> np.ndarray:
        """(N, n_edges) op vectors + (N,) offsets -> (N, dim) float32 tokens."""
        n = cands.shape[0]
        k = self.space.n_ops + 1
        out = np.zeros((n, self.dim), dtype=np.float32)
        rows = np.arange(n)[:, None]
        out[rows, self._adj_cols[offsets]] = 1.0
        # every op slot defaults to the pad class, real edges overwrite theirs
        out[:, self._ops_base + self._pad_class:
            self._ops_base + self.n_slots * k:k] = 1.0
        edge_base = self._ops_base + self._op_rows[offsets] * k
        out[rows, edge_base + self._pad_class] = 0.0
        out[rows, edge_base + np.asarray(cands, dtype=np.int64)] = 1.0
        out[:, -1] = is_current.astype(np.float32)
        return out

    def encode_observation(self, arch: ss.Arch, neighbor_archs: list[ss.Arch],
                           rng: np.random.Generator) -> Observation:
        """Candidate set for one state; offsets drawn fresh per call."""
        if len(neighbor_archs) > self.max_candidates:
            keep = np.sort(rng.choice(len(neighbor_archs), size=self.max_candidates,
                                      replace=False))
            neighbor_archs = [neighbor_archs[i] for i in keep]
        cands = np.array([arch] + list(neighbor_archs), dtype=np.int16)
        offsets = self.draw_offsets(rng, cands.shape[0])
        return Observation(cands=cands, offsets=offsets, n_tokens=self.n_tokens)

    def batch_tokens(self, observations: list[Observation]) -> tuple[np.ndarray, np.ndarray]:
        """Stack observations -> (tokens (B,T,D) float32, mask (B,T) bool)."""
        b = len(observations)
        counts = np.array([o.n_valid for o in observations])
        flat_cands = np.concatenate([o.cands for o in observations], axis=0)
        flat_offsets = np.concatenate(
            [np.asarray(o.offsets, dtype=np.int64) for o in observations])
        t_idx = np.concatenate([np.arange(c) for c in counts])
        is_current = (t_idx == 0)
        flat = self.encode_tokens(flat_cands, flat_offsets, is_current)
        tokens = np.zeros((b, self.n_tokens, self.dim), dtype=np.float32)
        mask = np.zeros((b, self.n_tokens), dtype=bool)
        b_idx = np.repeat(np.arange(b), counts)
        tokens[b_idx, t_idx] = flat
        mask[b_idx, t_idx] = True
        return tokens, mask


class NasEnv:
    """Single environment instance; not safe for concurrent mutation."""

    def __init__(self, bench: Benchmark, cfg: EnvConfig):
        if cfg.task not in bench.tasks:
            raise SpecError(f"benchmark does not cover task {cfg.task!r}")
        self.bench = bench
        self.cfg = cfg
        self.space = bench.space
        self.encoder = ObsEncoder(self.space, cfg.pad_nodes, cfg.max_candidates)
        self.rng = np.random.default_rng(cfg.seed)
        self._rewards = bench.normalized_column(cfg.task, cfg.split)
        if cfg.shaping_exponent is not None:
            self._rewards = gamma_transform(self._rewards, cfg.shaping_exponent)
        self.current: ss.Arch | None = None
        self.steps = 0
        self.done = True
        self._last_neighbors: list[ss.Arch] = []

    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def _observe(self) -> Observation:
        self._last_neighbors = ss.neighbors(self.current, self.space)
        return self.encoder.encode_observation(self.current, self._last_neighbors, self.rng)

    def reward_of(self, arch: ss.Arch) -> float:
        return float(self._rewards[ss.arch_index(self.space, arch)])

    def reset(self) -> Observation:
        self.current = ss.random_arch(self.rng, self.space)
        self.steps = 0
        self.done = False
        return self._observe()

    def step(self, action: int) -> tuple[Observation, float, bool, bool]:
        """Returns (next_obs, reward, terminal, timeout).

        next_obs always encodes the post-action state, including on terminal
        steps, where it serves as the bootstrap observation.
        """
        if self.done:
            raise ContractError("step() on a finished episode; call reset()")
        n_valid = 1 + len(self._last_neighbors)
        if not (0 <= action < n_valid):
            raise ContractError(f"action {action} outside valid candidates [0, {n_valid})")
        self.steps += 1
        if action == 0:
            terminal, timeout = True, False
        else:
            self.current = self._last_neighbors[action - 1]
            timeout = self.steps >= self.cfg.episode_cap
            terminal = timeout
        reward = self.reward_of(self.current)
        obs = self._observe()
        self.done = terminal
        return obs, reward, terminal, timeout


@dataclass
class VecStep:
    """One synchronous step of all sub-environments.

    obs[i] is what the policy acts on next (the auto-reset observation when
    the episode ended); next_obs[i] is the true post-action observation of
    the transition, kept for bootstrapping.
    """

    obs: list[Observation]
    next_obs: list[Observation]
    rewards: np.ndarray
    terminals: np.ndarray
    timeouts: np.ndarray


class VecEnv:
    """Fixed-width batch of independently seeded environments."""

    def __init__(self, bench: Benchmark, cfg: EnvConfig, seeds: list[int]):
        self.envs = [NasEnv(bench, replace(cfg, seed=s)) for s in seeds]
        self.encoder = self.envs[0].encoder

    @property
    def width(self) -> int:
        return len(self.envs)

    def reset(self) -> list[Observation]:
        return [env.reset() for env in self.envs]

    def step(self, actions) -> VecStep:
        if len(actions) != self.width:
            raise ContractError(f"{len(actions)} actions for {self.width} environments")
        obs, next_obs = [], []
        rewards = np.zeros(self.width)
        terminals = np.zeros(self.width, dtype=bool)
        timeouts = np.zeros(self.width, dtype=bool)
        for i, (env, action) in enumerate(zip(self.envs, actions)):
            try:
                o, r, term, to = env.step(int(action))
            except ContractError as exc:
                raise ContractError(f"sub-environment {i}: {exc}") from exc
            next_obs.append(o)
            obs.append(env.reset() if term else o)
            rewards[i], terminals[i], timeouts[i] = r, term, to
        return VecStep(obs=obs, next_obs=next_obs, rewards=rewards,
                       terminals=terminals, timeouts=timeouts)
