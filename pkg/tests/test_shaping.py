import mpmath
import numpy as np
import pytest

from nastl.errors import ContractError, SpecError
from nastl.shaping import (ShapingConfig, default_grid, gamma_transform, spread,
                           sweep_gamma)


def test_identity_exponent():
    rng = np.random.default_rng(0)
    r = rng.uniform(0, 1, 1000)
    assert np.array_equal(gamma_transform(r, 1.0), r)


def test_fixed_points():
    for exponent in (0.1, 0.478, 1.0, 2.0, 7.5):
        assert gamma_transform(0.0, exponent) == 0.0
        assert gamma_transform(1.0, exponent) == 1.0


def test_reference_value_high_precision():
    # independent oracle: 50-digit arithmetic
    expected = float(mpmath.power(mpmath.mpf("0.04"), mpmath.mpf("0.478")))
    got = gamma_transform(0.04, 0.478)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(0.2147, abs=5e-5)


def test_domain_errors():
    with pytest.raises(ContractError):
        gamma_transform(1.2, 0.5)
    with pytest.raises(ContractError):
        gamma_transform(-0.1, 0.5)
    with pytest.raises(SpecError):
        gamma_transform(0.5, 0.0)
    with pytest.raises(SpecError):
        ShapingConfig(exponent=-1.0)


def test_spread_examples():
    assert spread([0.4, 0.4, 0.4]) == 0.0
    direct = float(np.sqrt((2 * 0.05 ** 2) / 3))  # population variance by hand
    assert spread([0.2, 0.25, 0.3]) == pytest.approx(direct, rel=1e-12)
    assert spread([0.2, 0.25, 0.3]) == pytest.approx(0.040825, abs=1e-6)


def test_spread_translation_invariant():
    rng = np.random.default_rng(1)
    v = rng.uniform(0, 1, 50)
    assert spread(v) == pytest.approx(spread(v * 0 + v + 0.3), rel=1e-9)


def test_spread_needs_two():
    with pytest.raises(ContractError):
        spread([0.5])


def test_sweep_prefers_sqrt_on_low_values():
    best, table = sweep_gamma([0.2, 0.25, 0.3], [0.5, 1.0])
    assert best == 0.5
    spreads = dict(table)
    assert spreads[0.5] == pytest.approx(0.0410500, abs=1e-6)
    assert spreads[1.0] == pytest.approx(0.0408248, abs=1e-6)


def test_sweep_singleton():
    best, table = sweep_gamma([0.1, 0.9], [1.0])
    assert best == 1.0
    assert len(table) == 1


def test_sweep_ties_take_smallest():
    best, _ = sweep_gamma([0.0, 1.0], [0.25, 0.5, 2.0])  # fixed points: all equal
    assert best == 0.25


def test_sweep_matches_bruteforce_scan():
    rng = np.random.default_rng(7)
    values = rng.uniform(0.02, 0.08, 400)  # narrow low band
    grid = default_grid(points=2000, stop=2.0)
    best, table = sweep_gamma(values, grid)
    # independent scan: recompute every grid point from scratch
    brute_best, brute_spread = None, -1.0
    for g in grid:
        s = float(np.power(values, g).std())
        if s > brute_spread:
            brute_best, brute_spread = float(g), s
    assert best == pytest.approx(brute_best, abs=1e-12)
    assert best < 1.0  # low-band values want a lifting exponent


def test_sweep_table_reproducible():
    rng = np.random.default_rng(3)
    values = rng.uniform(0, 1, 100)
    _, table = sweep_gamma(values, [0.3, 0.7, 1.3])
    for g, s in table:
        assert s == pytest.approx(spread(gamma_transform(values, g)), rel=1e-12)


def test_order_preservation_bulk():
    rng = np.random.default_rng(42)
    a = rng.uniform(0, 1, 100_000)
    b = rng.uniform(0, 1, 100_000)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keep = lo < hi
    for exponent in (0.25, 0.478, 1.7):
        ta = gamma_transform(lo[keep], exponent)
        tb = gamma_transform(hi[keep], exponent)
        assert (ta < tb).all()


def test_default_grid_contains_reported_optimum():
    grid = default_grid()
    assert grid.shape == (2000,)
    assert grid[0] > 0.0
    assert grid[-1] == 2.0
    assert np.isclose(grid, 0.478).any()
