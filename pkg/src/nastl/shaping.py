"""Reward shaping by exponentiation, plus the exponent sweep.

Rewards live in [0, 1]; r**exponent is monotone there, so shaping changes
the spread of the reward distribution without reordering architectures.
Sweeps run on normalized values. The selected exponent maximizes the
population standard deviation of the shaped values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SpecError

# Spread-maximizing exponent for the segmentsemantic task; CLI default when
# that task is trained.
SEGMENTSEMANTIC_EXPONENT = 0.478


@dataclass(frozen=True)
class ShapingConfig:
    exponent: float

    def __post_init__(self):
        if not (self.exponent > 0.0):
            raise SpecError(f"shaping exponent must be positive, got {self.exponent}")


def gamma_transform(r, exponent: float):
    """r**exponent for r in [0, 1]; accepts scalars and arrays."""
    if exponent <= 0.0:
        raise SpecError(f"exponent must be positive, got {exponent}")
    arr = np.asarray(r, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ContractError("gamma_transform input outside [0, 1]")
    out = np.power(arr, exponent)
    return float(out) if np.isscalar(r) or arr.ndim == 0 else out


def spread(values) -> float:
    """Population standard deviation; exactly 0 for constant input."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ContractError(f"spread needs at least 2 values, got {arr.size}")
    if (arr == arr[0]).all():
        return 0.0
    return float(arr.std())


def sweep_gamma(values, grid) -> tuple[float, list[tuple[float, float]]]:
    """Evaluate spread of shaped values at each grid exponent.

    Returns (best_exponent, table); ties resolve to the smallest exponent.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ContractError("empty exponent grid")
    arr = np.asarray(values, dtype=np.float64)
    table = [(g, spread(gamma_transform(arr, g))) for g in grid]
    best_spread = max(s for _, s in table)
    best_exponent = min(g for g, s in table if s == best_spread)
    return best_exponent, table


def default_grid(points: int = 2000, stop: float = 2.0) -> np.ndarray:
    """Uniform grid on (0, stop]: stop/points, 2*stop/points, ..., stop."""
    return np.arange(1, points + 1) * (stop / points)
