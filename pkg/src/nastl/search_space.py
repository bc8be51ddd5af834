"""Cell search space: fixed DAG, one operation per edge.

An architecture is a tuple of operation indices, one per edge of the cell
DAG, in the descriptor's edge order. The canonical string form is the
dash-separated index tuple ("0-3-1-2-0-3"), used as the key in benchmark
files, run logs and CLI output.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SpecError

Arch = tuple[int, ...]

DEFAULT_OPS = ("none", "skip_connect", "conv1x1", "conv3x3")


def complete_dag_edges(node_count: int) -> tuple[tuple[int, int], ...]:
    return tuple((s, d) for s in range(node_count) for d in range(s + 1, node_count))


@dataclass(frozen=True)
class SearchSpace:
    """Descriptor of one cell space: node count, edge list, op vocabulary."""

    node_count: int = 4
    edges: tuple[tuple[int, int], ...] = field(default_factory=lambda: complete_dag_edges(4))
    ops: tuple[str, ...] = DEFAULT_OPS

    def __post_init__(self):
        if self.node_count < 2:
            raise SpecError(f"node_count must be >= 2, got {self.node_count}")
        if len(self.ops) < 2:
            raise SpecError(f"need at least 2 operations, got {len(self.ops)}")
        if len(set(self.ops)) != len(self.ops):
            raise SpecError("duplicate operation names")
        seen = set()
        for s, d in self.edges:
            if not (0 <= s < d < self.node_count):
                raise SpecError(f"edge ({s},{d}) violates src<dst within {self.node_count} nodes")
            if (s, d) in seen:
                raise SpecError(f"duplicate edge ({s},{d})")
            seen.add((s, d))
        if not self.edges:
            raise SpecError("edge list is empty")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_ops(self) -> int:
        return len(self.ops)

    @property
    def size(self) -> int:
        return self.n_ops ** self.n_edges

    def validate_arch(self, arch: Arch) -> None:
        if len(arch) != self.n_edges:
            raise FormatError(f"architecture has {len(arch)} ops, space has {self.n_edges} edges")
        for i, op in enumerate(arch):
            if not (0 <= op < self.n_ops):
                raise FormatError(f"op index {op} at edge {i} outside [0, {self.n_ops})")


def enumerate_all(space: SearchSpace) -> list[Arch]:
    """All architectures in lexicographic op-tuple order."""
    return [tuple(t) for t in itertools.product(range(space.n_ops), repeat=space.n_edges)]


def arch_index(space: SearchSpace, arch: Arch) -> int:
    """Rank of `arch` in the lexicographic enumeration (mixed-radix value)."""
    idx = 0
    for op in arch:
        idx = idx * space.n_ops + op
    return idx


def neighbors(arch: Arch, space: SearchSpace) -> list[Arch]:
    """All one-edit variants: edge index major, replacement op index minor."""
    space.validate_arch(arch)
    out = []
    for e in range(space.n_edges):
        for op in range(space.n_ops):
            if op != arch[e]:
                out.append(arch[:e] + (op,) + arch[e + 1:])
    return out


def encode(arch: Arch) -> str:
    return "-".join(str(op) for op in arch)


def decode(s: str, space: SearchSpace) -> Arch:
    parts = s.split("-")
    try:
        arch = tuple(int(p) for p in parts)
    except ValueError:
        raise FormatError(f"bad architecture string {s!r}") from None
    space.validate_arch(arch)
    return arch


def random_arch(rng: np.random.Generator, space: SearchSpace) -> Arch:
    return tuple(int(v) for v in rng.integers(0, space.n_ops, size=space.n_edges))


@dataclass(frozen=True)
class ArchGraph:
    """Matrix view of one architecture: DAG adjacency + one-hot edge ops."""

    adjacency: np.ndarray  # (node_count, node_count) uint8, strictly upper-triangular
    edge_ops: np.ndarray   # (n_edges, n_ops) float32 one-hot rows


def to_graph(arch: Arch, space: SearchSpace) -> ArchGraph:
    space.validate_arch(arch)
    adj = np.zeros((space.node_count, space.node_count), dtype=np.uint8)
    for s, d in space.edges:
        adj[s, d] = 1
    ops = np.zeros((space.n_edges, space.n_ops), dtype=np.float32)
    ops[np.arange(space.n_edges), list(arch)] = 1.0
    return ArchGraph(adjacency=adj, edge_ops=ops)
