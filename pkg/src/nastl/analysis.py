"""Statistical post-processing of run logs and experiment directories.

Everything here is pure and deterministic under fixed seeds: smoothing,
percentile-bootstrap confidence intervals, tie-corrected Kendall rank
correlation (merge-count, O(n log n)), first-crossing detection against a
reference level, the all-to-all time-to-equivalence aggregation, and the
source x target performance matrix. CSV is the output contract; figures are
an optional convenience on top of it.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .benchmark import Benchmark
from .errors import ContractError, FormatError, ValidationError

DEFAULT_KERNEL = 16
DEFAULT_RESAMPLES = 10_000
DEFAULT_LEVEL = 0.95


def moving_average(series, kernel: int = DEFAULT_KERNEL) -> np.ndarray:
    """Valid-mode uniform filter: output[i] = mean(series[i:i+kernel])."""
    arr = np.asarray(series, dtype=np.float64)
    if kernel < 1:
        raise ContractError("kernel must be >= 1")
    if arr.size < kernel:
        raise ContractError(f"series of length {arr.size} shorter than kernel {kernel}")
    windows = np.lib.stride_tricks.sliding_window_view(arr, kernel)
    return windows.mean(axis=1)


def bootstrap_ci(samples, level: float = DEFAULT_LEVEL,
                 resamples: int = DEFAULT_RESAMPLES, seed: int = 0):
    """Percentile bootstrap of the mean; returns (mean, ci_low, ci_high)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size < 2:
        raise ContractError(f"bootstrap needs >= 2 samples, got {arr.size}")
    if not (0.0 < level < 1.0):
        raise ContractError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(resamples, arr.size))
    means = arr[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(arr.mean()), float(lo), float(hi)


def _merge_count(values: np.ndarray) -> int:
    """Strict inversions (i < j with v[i] > v[j]) by merge sort; ties free."""
    work = list(values)
    buf = [0.0] * len(work)
    def sort(lo: int, hi: int) -> int:
        if hi - lo <= 1:
            return 0
        mid = (lo + hi) // 2
        inv = sort(lo, mid) + sort(mid, hi)
        i, j, k = lo, mid, lo
        while i < mid and j < hi:
            if work[j] < work[i]:
                inv += mid - i
                buf[k] = work[j]
                j += 1
            else:
                buf[k] = work[i]
                i += 1
            k += 1
        buf[k:hi] = work[i:mid] if i < mid else work[j:hi]
        work[lo:hi] = buf[lo:hi]
        return inv
    return sort(0, len(work))


def _tie_term(sorted_arr: np.ndarray) -> int:
    """Sum over tie groups of t*(t-1)/2 for an already-sorted array."""
    total = 0
    run = 1
    for i in range(1, len(sorted_arr)):
        if sorted_arr[i] == sorted_arr[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


def kendall_tau(x, y) -> float:
    """Tie-corrected (tau-b) Kendall rank correlation.

    NaN when either input is constant (no pair is ever discordant or
    concordant), matching the usual convention.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ContractError("inputs must be equal-length vectors")
    n = xa.size
    if n < 2:
        raise ContractError("need at least 2 observations")
    order = np.lexsort((ya, xa))
    xs, ys = xa[order], ya[order]
    n0 = n * (n - 1) // 2
    n1 = _tie_term(xs)
    n2 = _tie_term(np.sort(ya))
    n3 = _tie_term(xs + 1j * ys)  # joint ties; pairs are already (x, y)-sorted
    discordant = _merge_count(ys)
    s = n0 - n1 - n2 + n3 - 2 * discordant
    denom = np.sqrt(float(n0 - n1) * float(n0 - n2))
    if denom == 0.0:
        return float("nan")
    return float(s / denom)


def task_correlation_matrix(bench: Benchmark, tasks: list[str] | None = None,
                            split: str = "valid"):
    """Pairwise Kendall tau of per-architecture metrics; returns (names, matrix)."""
    names = list(tasks) if tasks is not None else sorted(bench.tasks)
    k = len(names)
    mat = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            tau = kendall_tau(bench.oriented(names[i], split), bench.oriented(names[j], split))
            mat[i, j] = mat[j, i] = tau
    return names, mat


# --- training curves --------------------------------------------------------


@dataclass
class TrainingCurve:
    steps: np.ndarray
    walltimes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.walltimes = np.asarray(self.walltimes, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not (self.steps.shape == self.walltimes.shape == self.values.shape):
            raise ContractError("steps/walltimes/values must align")
        if self.steps.size and (np.diff(self.steps) <= 0).any():
            raise ValidationError("curve steps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.steps.size)


def curve_from_events(events: list[dict], value_field: str = "mean") -> TrainingCurve:
    """Extract the evaluation curve from run-log events."""
    evals = [e for e in events if e["type"] == "eval"]
    return TrainingCurve(
        steps=[e["step"] for e in evals],
        walltimes=[e["walltime_s"] for e in evals],
        values=[e[value_field] for e in evals],
    )


def smoothed(curve: TrainingCurve, kernel: int = DEFAULT_KERNEL) -> TrainingCurve:
    """Moving-average curve; point i sits at the step closing its window."""
    vals = moving_average(curve.values, kernel)
    return TrainingCurve(steps=curve.steps[kernel - 1:],
                         walltimes=curve.walltimes[kernel - 1:], values=vals)


def reference_level(curve: TrainingCurve, kernel: int = DEFAULT_KERNEL,
                    use: str = "final") -> float:
    """Smoothed final (default) or smoothed best value of a reference run."""
    s = smoothed(curve, kernel)
    if use == "final":
        return float(s.values[-1])
    if use == "best":
        return float(s.values.max())
    raise ContractError(f"unknown reference mode {use!r}")


def crossover_point(transfer_curve: TrainingCurve, reference_final: float,
                    kernel: int = DEFAULT_KERNEL):
    """First smoothed point reaching the reference level, or None.

    Returns (step, walltime_s) of the point whose trailing window closes the
    crossing; absence (never reached) is a value, not an error.
    """
    s = smoothed(transfer_curve, kernel)
    hit = np.nonzero(s.values >= reference_final)[0]
    if hit.size == 0:
        return None
    i = int(hit[0])
    return int(s.steps[i]), float(s.walltimes[i])


@dataclass
class TimeToEquivalence:
    pair_count: int
    crossed_count: int
    mean_steps: float | None
    ci_steps: tuple[float, float] | None
    mean_walltime_s: float | None
    ci_walltime_s: tuple[float, float] | None
    crossings: list[tuple[int, float]] = field(default_factory=list)


def time_to_equivalence(transfer_runs: list[TrainingCurve],
                        reference_runs: list[TrainingCurve],
                        kernel: int = DEFAULT_KERNEL, use: str = "final",
                        resamples: int = DEFAULT_RESAMPLES,
                        seed: int = 0) -> TimeToEquivalence:
    """All-to-all crossing stats: every transfer run against every reference.

    Pairs that never reach the reference level are excluded from the mean
    but disclosed via pair_count - crossed_count.
    """
    if not transfer_runs or not reference_runs:
        raise ContractError("need at least one run on each side")
    crossings = []
    pairs = 0
    for ref in reference_runs:
        level = reference_level(ref, kernel, use)
        for tr in transfer_runs:
            pairs += 1
            cp = crossover_point(tr, level, kernel)
            if cp is not None:
                crossings.append(cp)
    if not crossings:
        return TimeToEquivalence(pairs, 0, None, None, None, None, [])
    steps = np.array([c[0] for c in crossings], dtype=np.float64)
    walls = np.array([c[1] for c in crossings], dtype=np.float64)
    if steps.size >= 2:
        ms, slo, shi = bootstrap_ci(steps, resamples=resamples, seed=seed)
        mw, wlo, whi = bootstrap_ci(walls, resamples=resamples, seed=seed + 1)
    else:
        ms, slo, shi = float(steps[0]), float(steps[0]), float(steps[0])
        mw, wlo, whi = float(walls[0]), float(walls[0]), float(walls[0])
    return TimeToEquivalence(pairs, len(crossings), ms, (slo, shi), mw, (wlo, whi),
                             crossings)


# --- performance matrices ---------------------------------------------------


@dataclass
class CellStats:
    mean: float
    std: float
    ci_low: float
    ci_high: float
    n: int
    values: list[float] = field(default_factory=list)


@dataclass
class MatrixReport:
    sources: list[str]
    targets: list[str]
    cells: dict[tuple[str, str], CellStats]
    missing: list[tuple[str, str]] = field(default_factory=list)


def aggregate_cell(values: list[float], resamples: int = DEFAULT_RESAMPLES,
                   seed: int = 0) -> CellStats:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 1:
        v = float(arr[0])
        return CellStats(mean=v, std=0.0, ci_low=v, ci_high=v, n=1, values=[v])
    mean, lo, hi = bootstrap_ci(arr, resamples=resamples, seed=seed)
    return CellStats(mean=mean, std=float(arr.std()), ci_low=lo, ci_high=hi,
                     n=int(arr.size), values=[float(v) for v in arr])


def load_manifest(experiment_dir: str) -> dict:
    path = os.path.join(experiment_dir, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad JSON: {exc}") from exc


def performance_matrix(experiment_dir: str, regime: str,
                       resamples: int = DEFAULT_RESAMPLES,
                       seed: int = 0) -> MatrixReport:
    """Aggregate per-seed evaluation means per (source, target) cell.

    The diagonal holds the from-scratch agents. Cells missing from the
    experiment directory are flagged, not fatal.
    """
    manifest = load_manifest(experiment_dir)
    tasks = manifest["plan"]["tasks"]
    per_cell: dict[tuple[str, str], list[float]] = {}
    for cell in manifest["cells"]:
        if cell["source"] == cell["target"]:
            # diagonal = from-scratch agents, shared by every regime's matrix
            take = cell["regime"] == "scratch"
        else:
            take = cell["regime"] == regime
        if not take or cell.get("status") != "done":
            continue
        eval_path = os.path.join(experiment_dir, cell["paths"]["eval"])
        try:
            with open(eval_path, encoding="utf-8") as fh:
                report = json.load(fh)
        except OSError:
            continue
        per_cell.setdefault((cell["source"], cell["target"]), []).append(report["mean"])
    cells = {}
    missing = []
    for source in tasks:
        for target in tasks:
            values = per_cell.get((source, target))
            if values:
                cells[(source, target)] = aggregate_cell(values, resamples, seed)
            else:
                missing.append((source, target))
    return MatrixReport(sources=tasks, targets=tasks, cells=cells, missing=missing)


MATRIX_CSV_COLUMNS = ["source", "target", "mean", "std", "ci_low", "ci_high", "n"]


def write_matrix_csv(report: MatrixReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MATRIX_CSV_COLUMNS)
        for source in report.sources:
            for target in report.targets:
                cell = report.cells.get((source, target))
                if cell is None:
                    continue
                writer.writerow([source, target, repr(cell.mean), repr(cell.std),
                                 repr(cell.ci_low), repr(cell.ci_high), cell.n])


def read_matrix_csv(path: str) -> dict[tuple[str, str], CellStats]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MATRIX_CSV_COLUMNS:
            raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            out[(row["source"], row["target"])] = CellStats(
                mean=float(row["mean"]), std=float(row["std"]),
                ci_low=float(row["ci_low"]), ci_high=float(row["ci_high"]),
                n=int(row["n"]))
    return out


def render_matrix_figure(report: MatrixReport, path: str) -> None:
    """Optional heatmap with mean/std/CI annotations; the CSV stays the
    contract, this is a viewing convenience (requires matplotlib)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ContractError(f"figure rendering needs matplotlib: {exc}") from exc
    k = len(report.sources)
    grid = np.full((k, k), np.nan)
    for i, source in enumerate(report.sources):
        for j, target in enumerate(report.targets):
            cell = report.cells.get((source, target))
            if cell is not None:
                grid[i, j] = cell.mean
    fig, ax = plt.subplots(figsize=(1.8 * k + 2, 1.4 * k + 1.5))
    im = ax.imshow(grid, cmap="viridis")
    ax.set_xticks(range(k), report.targets, rotation=30, ha="right")
    ax.set_yticks(range(k), report.sources)
    ax.set_xlabel("target task")
    ax.set_ylabel("source task")
    for i, source in enumerate(report.sources):
        for j, target in enumerate(report.targets):
            cell = report.cells.get((source, target))
            if cell is None:
                text = "missing"
            else:
                text = (f"{cell.mean:.3f}\n±{cell.std:.3f}\n"
                        f"[{cell.ci_low:.3f}, {cell.ci_high:.3f}]")
            ax.text(j, i, text, ha="center", va="center", fontsize=7,
                    color="white")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


CROSSOVER_CSV_COLUMNS = [
    "source", "target", "pair_count", "crossed_count", "mean_steps",
    "ci_steps_low", "ci_steps_high", "mean_walltime_s", "ci_walltime_low",
    "ci_walltime_high",
]


def write_crossover_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CROSSOVER_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CROSSOVER_CSV_COLUMNS})
