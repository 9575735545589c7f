import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from covertflow.errors import EmptyInput, InsufficientTail, LengthMismatch, ValidationError
from covertflow.tails import (ccdf, fit_power_law, kendall_matrix, kendall_tau, loglog_slope, ratio_tail_transform,
                              upper_tail_dependence)


def pareto(rng, alpha, n, x_min=1.0):
    return x_min * (1.0 - rng.random(n)) ** (-1.0 / (alpha - 1.0))


def brute_tau_b(x, y):
    """O(n^2) tau-b straight from the pair definitions."""
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif dx == dy:
            c += 1
        else:
            d += 1
    denom = np.sqrt((c + d + tx) * (c + d + ty))
    return (c - d) / denom if denom else float("nan")


def test_ccdf_small():
    x, p = ccdf([3, 1, 2])
    assert list(x) == [1, 2, 3]
    assert p == pytest.approx([1.0, 2 / 3, 1 / 3])


def test_ccdf_all_equal():
    x, p = ccdf([5, 5, 5])
    assert list(x) == [5] and list(p) == [1.0]


def test_ccdf_empty():
    with pytest.raises(EmptyInput):
        ccdf([])


@given(st.lists(st.floats(0.01, 1e6), min_size=1, max_size=200))
def test_ccdf_monotone_from_one(xs):
    _, p = ccdf(xs)
    assert p[0] == 1.0 and np.all(np.diff(p) < 0)


def test_ccdf_loglog_slope_on_pareto():
    x, p = ccdf(pareto(np.random.default_rng(0), 2.5, 100_000))
    keep = p > 1e-3  # the extreme tail is too sparse for least squares
    assert loglog_slope(x[keep], p[keep]) == pytest.approx(-1.5, abs=0.05)


@pytest.mark.parametrize("alpha,lo,hi", [(2.23, 2.18, 2.28), (2.61, 2.56, 2.66)])
def test_alpha_recovery(alpha, lo, hi):
    fit = fit_power_law(pareto(np.random.default_rng(1), alpha, 100_000))
    assert lo <= fit.alpha <= hi
    assert fit.n_tail >= 50 and 0 <= fit.ks_stat <= 1


def test_mle_closed_form_at_fixed_xmin():
    x = np.array([1.0, 2.0, 4.0] * 20)
    fit = fit_power_law(x, x_min=1.0)
    assert fit.alpha == pytest.approx(1 + 60 / (20 * (np.log(2) + np.log(4))))
    assert fit.n_tail == 60


def test_short_sample():
    with pytest.raises(InsufficientTail):
        fit_power_law(np.arange(1, 11, dtype=float))
    with pytest.raises(ValidationError):
        fit_power_law([0.0] * 60)


def test_ratio_transform():
    assert list(ratio_tail_transform([0.0, 0.9])) == pytest.approx([1.0, 10.0])
    with pytest.raises(ValidationError):
        ratio_tail_transform([1.0])


def test_ratio_proxy_alpha():
    proxy = pareto(np.random.default_rng(2), 2.36, 100_000)
    f2 = 1.0 - 1.0 / proxy
    assert fit_power_law(ratio_tail_transform(f2)).alpha == pytest.approx(2.36, abs=0.05)


def test_alpha_scale_invariant():
    x = pareto(np.random.default_rng(3), 2.4, 20_000)
    a, b = fit_power_law(x), fit_power_law(x * 37.5)
    assert b.alpha == pytest.approx(a.alpha, rel=1e-9)
    assert b.x_min == pytest.approx(a.x_min * 37.5, rel=1e-9)


def test_standard_error_shrinks_with_n():
    rng = np.random.default_rng(4)
    sd = {n: np.std([fit_power_law(pareto(rng, 2.5, n)).alpha for _ in range(200)], ddof=1) for n in (10_000, 40_000)}
    # Four times the data: about half the spread.
    assert 1.5 <= sd[10_000] / sd[40_000] <= 2.7


def test_tau_extremes():
    x = np.arange(20.0)
    assert kendall_tau(x, x) == 1.0
    assert kendall_tau(x, -x) == -1.0
    with pytest.raises(LengthMismatch):
        kendall_tau([1, 2], [1, 2, 3])


def test_tau_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        # Small integer ranges force plenty of ties.
        x = rng.integers(0, int(rng.integers(2, 10)), n)
        y = rng.integers(0, int(rng.integers(2, 10)), n)
        got, want = kendall_tau(x, y), brute_tau_b(x, y)
        assert (np.isnan(got) and np.isnan(want)) or got == pytest.approx(want, abs=1e-12)


@given(st.lists(st.tuples(st.integers(-100, 100), st.integers(-100, 100)), min_size=2, max_size=40))
def test_tau_invariant_under_monotone_maps(pairs):
    x, y = np.array(pairs, dtype=float).T
    t = kendall_tau(x, y)
    # Integer inputs keep these maps injective in floating point.
    u = kendall_tau(np.exp(x / 50), y ** 3 + 7)
    assert (np.isnan(t) and np.isnan(u)) or u == pytest.approx(t, abs=1e-12)


def test_kendall_matrix_symmetric():
    data = np.random.default_rng(6).normal(size=(300, 4))
    m = kendall_matrix(data)
    assert np.allclose(m, m.T) and np.all(np.diag(m) == 1) and np.all(np.abs(m) <= 1)


def test_upper_tail_dependence():
    n = 1_000_000
    grid = np.arange(1, n + 1) / (n + 1)
    assert upper_tail_dependence(grid, grid, 0.95) == pytest.approx(1.0, abs=1e-4)
    u = np.random.default_rng(7).random(n)
    v = np.random.default_rng(8).random(1_000_000)
    lam = upper_tail_dependence(u, v, 0.95)
    se = np.sqrt(0.0025 * 0.9975 / 1e6) / 0.05
    assert abs(lam - 0.05) <= 3 * se
    with pytest.raises(ValidationError):
        upper_tail_dependence(u, v, 1.0)
