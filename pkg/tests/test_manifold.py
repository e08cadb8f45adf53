import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from torus_gauge.manifold import (PAIRS, Grid4, antiselfdual_project, build_distance_kernel,
                                  hodge_star_2, selfdual_coords, selfdual_from_coords,
                                  selfdual_project, site_distance, torus_distance)

from conftest import philox


def test_grid_basics():
    g = Grid4(8, 1.0)
    assert g.h * g.n == g.L and g.spacing_is_exact
    assert g.cell_volume * g.n_sites == pytest.approx(g.volume)
    assert g.metric_curvature == {"Ric": 0.0, "Wplus": 0.0, "R": 0.0}


@pytest.mark.parametrize("n", [3, 0, 2.5])
def test_grid_rejects_small_or_fractional_n(n):
    with pytest.raises(ValueError):
        Grid4(n)


def test_grid_rejects_curved_metric():
    with pytest.raises(ValueError):
        Grid4(8, 1.0, {"Ric": 1.0, "Wplus": 0.0, "R": 0.0})


def test_torus_distance_examples():
    g = Grid4(8, 1.0)
    assert torus_distance((0, 0, 0, 0), (0, 0, 0, 0), g) == 0
    assert torus_distance((0, 0, 0, 0), (0.75, 0, 0, 0), g) == pytest.approx(0.25)
    assert torus_distance((0, 0, 0, 0), (0.5, 0.5, 0.5, 0.5), g) == pytest.approx(1.0)


def test_distance_is_a_metric_on_n4():
    g = Grid4(4, 1.0)
    sites = list(itertools.product(range(4), repeat=4))
    D = np.array([[site_distance(a, b, g) for b in sites] for a in sites])
    assert np.array_equal(D, D.T)
    assert D.max() == pytest.approx(g.L)
    # triangle inequality D[i,k] <= D[i,j] + D[j,k] for every triple
    for j in range(len(sites)):
        assert np.all(D <= D[:, j:j + 1] + D[j:j + 1, :] + 1e-12)


def test_kernel_floor_and_entries():
    g = Grid4(8, 1.0)
    for e in (1, 2):
        k = build_distance_kernel(g, e)
        assert k.values[0, 0, 0, 0] == pytest.approx((g.h / 2) ** -e)
        assert k.values[1, 0, 0, 0] == pytest.approx(g.h ** -e)
        assert k.values[7, 0, 0, 0] == k.values[1, 0, 0, 0]


def test_kernel_sum_matches_brute_force():
    g = Grid4(8, 1.0)
    k = build_distance_kernel(g, 2)
    brute = 0.0
    for d in itertools.product(range(8), repeat=4):
        brute += max(site_distance((0, 0, 0, 0), d, g), g.h / 2) ** -2
    assert g.cell_volume * k.values.sum() == pytest.approx(g.cell_volume * brute, rel=1e-13)


def test_kernel_rejects_bad_exponent():
    with pytest.raises(ValueError):
        build_distance_kernel(Grid4(4), 3)


def test_kernel_scaling():
    lam = 2.0
    a = build_distance_kernel(Grid4(8, 1.0), 2)
    b = build_distance_kernel(Grid4(8, 1.0 / lam), 2)
    np.testing.assert_allclose(b.values, lam ** 2 * a.values, rtol=1e-15)


def _e(*vals):
    return np.array(vals, float)[:, None]


def test_hodge_star_table():
    w = np.zeros((6, 1))
    w[PAIRS.index((0, 1))] = 3.0
    s = hodge_star_2(w)
    assert s[PAIRS.index((2, 3)), 0] == 3.0 and np.count_nonzero(s) == 1
    w = np.zeros((6, 1))
    w[PAIRS.index((0, 2))] = 1.0
    assert hodge_star_2(w)[PAIRS.index((1, 3)), 0] == -1.0
    w = np.zeros((6, 1))
    w[PAIRS.index((0, 3))] = 1.0
    assert hodge_star_2(w)[PAIRS.index((1, 2)), 0] == 1.0


def test_selfdual_examples():
    sd = _e(1, 0, 0, 0, 0, 1)
    asd = _e(1, 0, 0, 0, 0, -1)
    np.testing.assert_array_equal(hodge_star_2(sd), sd)
    np.testing.assert_array_equal(selfdual_project(sd), sd)
    np.testing.assert_array_equal(selfdual_project(asd), 0 * asd)
    e12 = _e(2, 0, 0, 0, 0, 0)
    np.testing.assert_array_equal(selfdual_project(e12), sd)


@given(st.integers(0, 2 ** 31 - 1))
def test_star_projection_properties(seed):
    w = philox(seed).standard_normal((5, 6, 3))
    w = np.moveaxis(w, 1, -2)
    np.testing.assert_array_equal(hodge_star_2(hodge_star_2(w)), w)
    p = selfdual_project(w)
    np.testing.assert_allclose(hodge_star_2(p), p, atol=1e-15)
    np.testing.assert_allclose(selfdual_project(p), p, atol=1e-15)
    assert abs(np.sum(p * (w - p))) < 1e-12
    np.testing.assert_allclose(p + antiselfdual_project(w), w, atol=1e-15)
    np.testing.assert_allclose(selfdual_from_coords(selfdual_coords(p)), p, atol=1e-14)
