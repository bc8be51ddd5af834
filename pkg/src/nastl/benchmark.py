"""Tabular benchmark: complete per-architecture metrics for a set of tasks.

File format (format_version 1, UTF-8 JSON):

    {"format_version": 1,
     "search_space": {"node_count": N, "edges": [[s,d],...], "ops": [...]},
     "tasks": [{"name": ..., "metric_name": ..., "higher_is_better": bool}],
     "records": [{"ops": [i0,...], "metrics": {"<task>": {"train": x, "valid": y, "test": z}}}]}

Records may appear in any order; writers emit lexicographic op-tuple order.
Normalization stats are always recomputed from the records; a stored
"norm_stats" field, if present, is ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import search_space as ss
from .errors import FormatError, LookupMissError, SpecError, ValidationError

SPLITS = ("train", "valid", "test")

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Task:
    name: str
    metric_name: str
    higher_is_better: bool = True


@dataclass
class Benchmark:
    """Immutable after construction; all lookups are O(1) array reads.

    Metric values are stored as float64 arrays indexed by the architecture's
    lexicographic rank. `oriented` values have higher_is_better applied
    (negated where the flag is false) so that larger is always better.
    """

    space: ss.SearchSpace
    tasks: dict[str, Task]
    values: dict[str, dict[str, np.ndarray]]  # task -> split -> (size,) float64, raw
    norm_stats: dict[str, dict[str, tuple[float, float]]] = field(init=False)

    def __post_init__(self):
        for task in self.tasks.values():
            for split in SPLITS:
                arr = self.values[task.name][split]
                if arr.shape != (self.space.size,):
                    raise ValidationError(
                        f"task {task.name} split {split}: {arr.shape[0]} values, "
                        f"space has {self.space.size} architectures")
                if not np.isfinite(arr).all():
                    raise ValidationError(f"non-finite metric in task {task.name}, split {split}")
        stats: dict[str, dict[str, tuple[float, float]]] = {}
        for name, task in self.tasks.items():
            stats[name] = {}
            for split in SPLITS:
                o = self.oriented(name, split)
                stats[name][split] = (float(o.min()), float(o.max()))
        object.__setattr__(self, "norm_stats", stats)

    def oriented(self, task: str, split: str) -> np.ndarray:
        """Metric values with orientation applied: larger is always better."""
        t = self._task(task)
        arr = self.values[t.name][split]
        return arr if t.higher_is_better else -arr

    def _task(self, task: str) -> Task:
        try:
            return self.tasks[task]
        except KeyError:
            raise LookupMissError(
                f"unknown task {task!r}; benchmark has {sorted(self.tasks)}") from None

    def metric(self, arch: ss.Arch, task: str, split: str) -> float:
        """Raw stored metric for one architecture."""
        t = self._task(task)
        if split not in SPLITS:
            raise LookupMissError(f"unknown split {split!r}")
        self.space.validate_arch(arch)
        return float(self.values[t.name][split][ss.arch_index(self.space, arch)])

    def normalized(self, arch: ss.Arch, task: str, split: str) -> float:
        """Min-max normalized, orientation applied: 1 is always best."""
        t = self._task(task)
        if split not in SPLITS:
            raise LookupMissError(f"unknown split {split!r}")
        self.space.validate_arch(arch)
        return float(self.normalized_column(task, split)[ss.arch_index(self.space, arch)])

    def normalized_column(self, task: str, split: str) -> np.ndarray:
        """Normalized values for every architecture (lexicographic order)."""
        lo, hi = self.norm_stats[self._task(task).name][split]
        o = self.oriented(task, split)
        if hi == lo:
            return np.full_like(o, 0.5)
        return (o - lo) / (hi - lo)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Benchmark):
            return NotImplemented
        if self.space != other.space or self.tasks != other.tasks:
            return False
        return all(
            np.array_equal(self.values[t][s], other.values[t][s])
            for t in self.tasks for s in SPLITS)


def normalized_metric(bench: Benchmark, arch: ss.Arch, task: str, split: str) -> float:
    return bench.normalized(arch, task, split)


def _space_from_json(obj: dict) -> ss.SearchSpace:
    try:
        return ss.SearchSpace(
            node_count=int(obj["node_count"]),
            edges=tuple((int(s), int(d)) for s, d in obj["edges"]),
            ops=tuple(str(o) for o in obj["ops"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad search_space block: {exc}") from exc


def load_benchmark(path: str) -> Benchmark:
    """Parse, validate and index a benchmark file.

    Completeness is enforced: every architecture of the declared space must
    appear exactly once. Stored normalization stats are never trusted.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    for key in ("search_space", "tasks", "records"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    space = _space_from_json(doc["search_space"])

    tasks: dict[str, Task] = {}
    for i, tobj in enumerate(doc["tasks"]):
        try:
            task = Task(name=str(tobj["name"]), metric_name=str(tobj["metric_name"]),
                        higher_is_better=bool(tobj["higher_is_better"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad task entry #{i}: {exc}") from exc
        if task.name in tasks:
            raise FormatError(f"{path}: duplicate task {task.name!r}")
        tasks[task.name] = task

    values = {t: {s: np.full(space.size, np.nan) for s in SPLITS} for t in tasks}
    seen = np.zeros(space.size, dtype=bool)
    for i, rec in enumerate(doc["records"]):
        try:
            arch = tuple(int(v) for v in rec["ops"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"{path}: record #{i}: bad 'ops'") from None
        try:
            space.validate_arch(arch)
        except FormatError as exc:
            raise FormatError(f"{path}: record #{i}: {exc}") from exc
        idx = ss.arch_index(space, arch)
        if seen[idx]:
            raise FormatError(f"{path}: record #{i}: duplicate architecture {ss.encode(arch)}")
        seen[idx] = True
        metrics = rec.get("metrics")
        if not isinstance(metrics, dict):
            raise FormatError(f"{path}: record #{i}: missing metrics")
        for tname in tasks:
            entry = metrics.get(tname)
            if not isinstance(entry, dict):
                raise ValidationError(
                    f"{path}: record #{i} ({ss.encode(arch)}) lacks task {tname!r}")
            for split in SPLITS:
                if split not in entry:
                    raise ValidationError(
                        f"{path}: record #{i} ({ss.encode(arch)}) lacks {tname}/{split}")
                v = float(entry[split])
                if not np.isfinite(v):
                    raise ValidationError(
                        f"{path}: record #{i} ({ss.encode(arch)}): non-finite {tname}/{split}")
                values[tname][split][idx] = v

    missing = int(space.size - seen.sum())
    if missing:
        raise ValidationError(
            f"{path}: incomplete tabulation: {missing} of {space.size} architectures missing")
    return Benchmark(space=space, tasks=tasks, values=values)


def save_benchmark(bench: Benchmark, path: str) -> None:
    """Write the canonical form: records in lexicographic op-tuple order."""
    doc = {
        "format_version": FORMAT_VERSION,
        "search_space": {
            "node_count": bench.space.node_count,
            "edges": [list(e) for e in bench.space.edges],
            "ops": list(bench.space.ops),
        },
        "tasks": [
            {"name": t.name, "metric_name": t.metric_name, "higher_is_better": t.higher_is_better}
            for t in bench.tasks.values()
        ],
        "records": [
            {
                "ops": list(arch),
                "metrics": {
                    t: {s: bench.values[t][s][i] for s in SPLITS}
                    for t in bench.tasks
                },
            }
            for i, arch in enumerate(ss.enumerate_all(bench.space))
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=None, separators=(",", ":"))
        fh.write("\n")


# --- synthetic benchmarks -------------------------------------------------

FAMILIES = ("smooth", "skewed", "random")

_FAMILY_BANDS = {"smooth": (0.1, 0.9), "skewed": (0.02, 0.08), "random": (0.1, 0.9)}


@dataclass(frozen=True)
class SyntheticTask:
    """One synthetic task.

    smooth/skewed: latent quality = -hamming_distance(arch, optimum) plus
    bounded noise (3/4 shared across splits, 1/4 per split), affinely mapped
    into `band`. Total noise < 0.5 guarantees the planted optimum is the
    strict maximum on every split, and the shared part keeps the latent
    continuous so rank-based correlation targets anchor cleanly.
    random: iid normal latent. A (correlate_with, kendall_tau) pair replaces
    the latent with a Gaussian-copula blend against the named task's latent,
    hitting the tau target to sampling accuracy; the family then only shapes
    the band.
    """

    name: str
    family: str = "smooth"
    band: tuple[float, float] | None = None
    noise: float = 0.4
    split_noise: float = 0.1
    optimum: ss.Arch | None = None
    correlate_with: str | None = None
    kendall_tau: float | None = None
    metric_name: str = "synthetic_score"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown landscape family {self.family!r}")
        if not (0.0 <= self.noise < 0.5):
            raise SpecError(f"noise must be in [0, 0.5) to keep the planted optimum maximal")
        if (self.correlate_with is None) != (self.kendall_tau is None):
            raise SpecError("correlate_with and kendall_tau must be given together")
        if self.kendall_tau is not None and not (-1.0 <= self.kendall_tau <= 1.0):
            raise SpecError(f"correlation target {self.kendall_tau} outside [-1, 1]")
        lo, hi = self.effective_band
        if not (0.0 <= lo < hi <= 1.0):
            raise SpecError(f"band {self.effective_band} must satisfy 0 <= lo < hi <= 1")

    @property
    def effective_band(self) -> tuple[float, float]:
        return self.band if self.band is not None else _FAMILY_BANDS[self.family]


@dataclass(frozen=True)
class SyntheticSpec:
    tasks: tuple[SyntheticTask, ...]
    space: ss.SearchSpace = field(default_factory=ss.SearchSpace)

    def __post_init__(self):
        if not self.tasks:
            raise SpecError("at least one task required")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise SpecError("duplicate task names")
        for t in self.tasks:
            if t.correlate_with is not None and t.correlate_with not in names:
                raise SpecError(f"{t.name}: correlate_with {t.correlate_with!r} not declared")
            if t.optimum is not None:
                self.space.validate_arch(t.optimum)


def _normal_scores(latent: np.ndarray) -> np.ndarray:
    # rank -> standard normal quantile; ties broken by position (stable argsort)
    n = latent.shape[0]
    order = np.argsort(latent, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return ndtri((ranks + 0.5) / n)


def spec_from_json(doc: dict) -> SyntheticSpec:
    """Parse a synthetic-benchmark spec from its JSON form."""
    try:
        space = ss.SearchSpace(**{
            "node_count": doc["space"]["node_count"],
            "edges": tuple(tuple(e) for e in doc["space"]["edges"]),
            "ops": tuple(doc["space"]["ops"]),
        }) if "space" in doc else ss.SearchSpace()
        tasks = []
        for t in doc["tasks"]:
            tasks.append(SyntheticTask(
                name=t["name"],
                family=t.get("family", "smooth"),
                band=tuple(t["band"]) if "band" in t else None,
                noise=t.get("noise", 0.4),
                split_noise=t.get("split_noise", 0.1),
                optimum=tuple(t["optimum"]) if "optimum" in t else None,
                correlate_with=t.get("correlate_with"),
                kendall_tau=t.get("kendall_tau"),
                metric_name=t.get("metric_name", "synthetic_score"),
            ))
    except (KeyError, TypeError) as exc:
        raise SpecError(f"bad synthetic spec: {exc}") from exc
    return SyntheticSpec(tasks=tuple(tasks), space=space)


def default_synthetic_spec() -> SyntheticSpec:
    """Desk-scale stand-in with four tasks shaped like the real benchmark:
    two well-behaved landscapes, one weakly correlated task, and one with
    metrics squeezed into a narrow low band."""
    return SyntheticSpec(tasks=(
        SyntheticTask(name="class_object", family="smooth"),
        SyntheticTask(name="room_layout", family="smooth",
                      correlate_with="class_object", kendall_tau=0.55),
        SyntheticTask(name="autoencoder", family="random",
                      correlate_with="class_object", kendall_tau=0.1),
        SyntheticTask(name="segmentsemantic", family="skewed",
                      correlate_with="class_object", kendall_tau=0.4),
    ))


def generate_synthetic(seed: int, spec: SyntheticSpec) -> Benchmark:
    """Deterministic complete tabulation for the given spec and seed."""
    rng = np.random.default_rng(seed)
    space = spec.space
    all_archs = np.array(ss.enumerate_all(space), dtype=np.int64)

    latents: dict[str, np.ndarray] = {}
    values: dict[str, dict[str, np.ndarray]] = {}
    tasks: dict[str, Task] = {}
    for t in spec.tasks:
        structural = t.family in ("smooth", "skewed") and t.kendall_tau is None
        if structural:
            optimum = t.optimum if t.optimum is not None else ss.random_arch(rng, space)
            distance = -(all_archs != np.array(optimum)).sum(axis=1).astype(np.float64)
            base = distance + rng.uniform(-0.75 * t.noise, 0.75 * t.noise, size=space.size)
            split_noise = 0.25 * t.noise
        else:
            base = rng.standard_normal(space.size)
            split_noise = t.split_noise
        if t.kendall_tau is not None:
            rho = np.sin(np.pi * t.kendall_tau / 2.0)
            anchor = _normal_scores(latents[t.correlate_with])
            base = rho * anchor + np.sqrt(1.0 - rho * rho) * rng.standard_normal(space.size)
        latents[t.name] = base

        lo, hi = t.effective_band
        values[t.name] = {}
        for split in SPLITS:
            if structural:
                view = base + rng.uniform(-split_noise, split_noise, size=space.size)
            else:
                view = base + split_noise * rng.standard_normal(space.size)
            vmin, vmax = view.min(), view.max()
            if vmax == vmin:
                scaled = np.full(space.size, 0.5 * (lo + hi))
            else:
                scaled = lo + (view - vmin) / (vmax - vmin) * (hi - lo)
            values[t.name][split] = scaled
        tasks[t.name] = Task(name=t.name, metric_name=t.metric_name, higher_is_better=True)

    return Benchmark(space=space, tasks=tasks, values=values)
