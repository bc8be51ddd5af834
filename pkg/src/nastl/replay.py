"""Sharded proportional prioritized replay with importance-sampling weights.

Each shard is a ring buffer over a sum-tree of priority masses
(priority**alpha). Sampling draws uniform prefixes over the combined mass,
dispatches to a shard, and descends that shard's tree, so the per-draw
distribution equals whole-buffer proportional sampling. Slot references
carry a generation counter; priority updates for slots that were overwritten
since sampling are dropped silently.

Thread safety: one insert stream per shard plus one sample/update stream is
supported via per-shard locks. The deterministic trainer mode never contends.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SpecError


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 25_000
    shards: int = 4
    alpha: float = 0.6
    beta: float = 0.4
    priority_epsilon: float = 1e-6

    def __post_init__(self):
        if self.capacity < 1 or self.shards < 1:
            raise SpecError("capacity and shards must be positive")
        if self.capacity % self.shards != 0:
            raise SpecError(f"capacity {self.capacity} not divisible by {self.shards} shards")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise SpecError("alpha and beta must lie in [0, 1]")
        if self.priority_epsilon <= 0:
            raise SpecError("priority_epsilon must be positive")


class SumTree:
    """Array-backed binary tree; parents hold the sum of their children.

    Leaf storage is padded to the next power of two so every leaf sits at
    the same depth and prefix descent can run level-synchronously over a
    whole batch of query points. Point updates propagate deltas upward,
    which accumulates float drift; rebuild() recomputes every internal node
    exactly and is called by the owner every `capacity` updates.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.tree_capacity = 1 << (capacity - 1).bit_length()
        self.nodes = np.zeros(2 * self.tree_capacity - 1, dtype=np.float64)
        self._leaf0 = self.tree_capacity - 1
        self._updates_since_rebuild = 0

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def leaf_value(self, idx: int) -> float:
        return float(self.nodes[idx + self._leaf0])

    def leaf_values(self, idx: np.ndarray) -> np.ndarray:
        return self.nodes[np.asarray(idx) + self._leaf0]

    def set(self, idx: int, value: float) -> None:
        node = idx + self._leaf0
        delta = value - self.nodes[node]
        self.nodes[node] = value
        while node > 0:
            node = (node - 1) // 2
            self.nodes[node] += delta
        self._updates_since_rebuild += 1
        if self._updates_since_rebuild >= self.capacity:
            self.rebuild()

    def rebuild(self) -> None:
        for node in range(self._leaf0 - 1, -1, -1):
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]
        self._updates_since_rebuild = 0

    def find_prefix(self, prefixes: np.ndarray) -> np.ndarray:
        """Vectorized descent: for each prefix u in [0, total), the leaf i
        with cumsum(masses)[i-1] <= u < cumsum(masses)[i]."""
        idx = np.zeros(prefixes.shape, dtype=np.int64)
        u = prefixes.astype(np.float64).copy()
        while True:
            left = 2 * idx + 1
            if left[0] >= self.nodes.shape[0]:
                break
            left_mass = self.nodes[left]
            go_left = u <= left_mass
            idx = np.where(go_left, left, left + 1)
            u = np.where(go_left, u, u - left_mass)
        return idx - self._leaf0


class ReplayShard:
    """Ring buffer + sum tree; serializes its own mutations."""

    def __init__(self, capacity: int, alpha: float):
        self.capacity = capacity
        self.alpha = alpha
        self.tree = SumTree(capacity)
        self.samples: list = [None] * capacity
        self.generation = np.zeros(capacity, dtype=np.int64)
        self.write_ptr = 0
        self.size = 0
        self.lock = threading.Lock()

    @property
    def total_mass(self) -> float:
        return self.tree.total

    def insert(self, sample, priority: float) -> tuple[int, int]:
        """Returns (slot, generation); overwrites the oldest slot when full."""
        if not (priority > 0.0):
            raise ContractError(f"priority must be positive, got {priority}")
        with self.lock:
            slot = self.write_ptr
            self.samples[slot] = sample
            self.generation[slot] += 1
            gen = int(self.generation[slot])
            self.tree.set(slot, priority ** self.alpha)
            self.write_ptr = (self.write_ptr + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
        return slot, gen

    def mass_of(self, slots: np.ndarray) -> np.ndarray:
        return np.array([self.tree.leaf_value(int(s)) for s in slots])

    def update_mass(self, slot: int, gen: int, mass: float) -> None:
        with self.lock:
            if self.generation[slot] == gen:
                self.tree.set(slot, mass)


class ShardedReplay:
    """Shard-partitioned buffer; slots are addressed as (shard, slot, gen)."""

    def __init__(self, cfg: ReplayConfig):
        self.cfg = cfg
        per = cfg.capacity // cfg.shards
        self.shards = [ReplayShard(per, cfg.alpha) for _ in range(cfg.shards)]

    def __len__(self) -> int:
        return sum(s.size for s in self.shards)

    def insert(self, shard: int, sample, priority: float) -> tuple[int, int, int]:
        slot, gen = self.shards[shard].insert(sample, priority)
        return shard, slot, gen

    def sample(self, n: int, beta: float, rng: np.random.Generator):
        """Draw n slots proportionally to mass across all shards.

        Returns (samples, refs (n,3) int64, is_weights). Weights are
        (N * P(i)) ** -beta, normalized so the batch maximum is 1.
        """
        size = len(self)
        if size < n:
            raise ContractError(f"buffer holds {size} < requested {n} samples")
        totals = np.array([s.total_mass for s in self.shards])
        grand = totals.sum()
        if not (grand > 0.0):
            raise ContractError("replay has no sampling mass")
        u = rng.uniform(0.0, grand, size=n)
        bounds = np.cumsum(totals)
        shard_of = np.searchsorted(bounds, u, side="right")
        shard_of = np.minimum(shard_of, len(self.shards) - 1)
        u_local = u - np.concatenate(([0.0], bounds[:-1]))[shard_of]

        refs = np.empty((n, 3), dtype=np.int64)
        masses = np.empty(n, dtype=np.float64)
        samples = [None] * n
        for si, shard in enumerate(self.shards):
            pick = np.nonzero(shard_of == si)[0]
            if pick.size == 0:
                continue
            with shard.lock:
                slots = shard.tree.find_prefix(u_local[pick])
                # float drift can stray into never-written leaves; clamp to
                # the occupied ring prefix
                slots = np.minimum(slots, shard.size - 1)
                refs[pick, 0] = si
                refs[pick, 1] = slots
                refs[pick, 2] = shard.generation[slots]
                masses[pick] = shard.tree.leaf_values(slots)
                for j, slot in zip(pick, slots):
                    samples[j] = shard.samples[int(slot)]
        probs = masses / grand
        weights = np.power(size * probs, -beta, dtype=np.float64)
        weights = weights / weights.max()
        return samples, refs, weights

    def update_priorities(self, refs: np.ndarray, td_errors: np.ndarray) -> None:
        """New mass = (|td| + epsilon) ** alpha; stale refs are ignored."""
        eps = self.cfg.priority_epsilon
        for (shard, slot, gen), td in zip(np.asarray(refs), np.asarray(td_errors)):
            mass = (abs(float(td)) + eps) ** self.cfg.alpha
            self.shards[int(shard)].update_mass(int(slot), int(gen), mass)
