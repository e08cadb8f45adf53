import numpy as np
import pytest
from hypothesis import given, strategies as st

from torus_gauge.fields import (GaugeTransform, GroupElement, constant_field, exp_array,
                                random_bandlimited, zeros)
from torus_gauge.manifold import PAIRS, Grid4, hodge_star_2, selfdual_project
from torus_gauge.norms import lp_norm
from torus_gauge.operators import (Connection, SectionLaplacian, bw_defect_one, bw_defect_plus, conjugate,
                                   cov_grad, cov_grad_adjoint, curvature, d_A_adjoint_on_twoform,
                                   d_A_on_oneform, d_A_plus, gauge_apply, laplacian0, rough_laplacian)

from conftest import philox


def _random_connection(grid, group, seed, amp=1.0):
    return Connection(random_bandlimited(grid, group, 1, 1, amp, seed))


def _noise(grid, group, degree, seed):
    from torus_gauge.fields import field_shape, Field
    return Field(grid, group, degree, philox(seed).standard_normal(field_shape(grid, group, degree)))


def test_cov_grad_examples():
    g = Grid4(8)
    A0 = Connection.product(g, "su2")
    s = constant_field(g, "su2", 0, [0.3, 1.0, -2.0])
    assert not cov_grad(A0, s).data.any()
    alpha = 0.7
    a = zeros(g, "su2", 1)
    a.data[..., 0, 2] = alpha
    s = constant_field(g, "su2", 0, [1.0, 0, 0])
    out = cov_grad(Connection(a), s).data
    np.testing.assert_allclose(out[..., 0, :], np.broadcast_to([0, alpha, 0], g.shape + (3,)), atol=1e-15)
    assert not out[..., 1:, :].any()


def test_cov_grad_fourier_symbol():
    g = Grid4(16)
    x = g.coordinates()[..., 0]
    s = zeros(g, "su2", 0)
    s.data[..., 2] = np.sin(2 * np.pi * x)
    out = cov_grad(Connection.product(g, "su2"), s).data[..., 0, 2]
    sym = (np.exp(2j * np.pi * g.h) - 1) / g.h
    expect = np.imag(sym * np.exp(2j * np.pi * x))
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_cov_grad_adjoint_examples():
    g = Grid4(4)
    A0 = Connection.product(g, "u1")
    assert not cov_grad_adjoint(A0, zeros(g, "u1", 1)).data.any()
    t = constant_field(g, "u1", 1, [[1.0], [2.0], [-1.0], [0.5]])
    np.testing.assert_allclose(cov_grad_adjoint(A0, t).data, 0, atol=1e-13)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["u1", "su2"]), st.sampled_from([4, 8]))
def test_exact_adjointness(seed, group, n):
    g = Grid4(n)
    A = Connection(_noise(g, group, 1, seed))
    s, t = _noise(g, group, 0, seed + 1), _noise(g, group, 1, seed + 2)
    lhs, rhs = cov_grad(A, s).inner(t), s.inner(cov_grad_adjoint(A, t))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
    w = _noise(g, group, 2, seed + 3)
    lhs, rhs = d_A_on_oneform(A, t).inner(w), t.inner(d_A_adjoint_on_twoform(A, w))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["u1", "su2"]))
def test_laplacian_psd_and_fast_path(seed, group):
    g = Grid4(4)
    A = Connection(_noise(g, group, 1, seed))
    s = _noise(g, group, 0, seed + 1)
    lap = laplacian0(A, s)
    assert s.inner(lap) >= -1e-12
    fast = SectionLaplacian(A).apply_field(s)
    np.testing.assert_allclose(fast.data, lap.data, atol=1e-10)


def test_d_flat_examples():
    g = Grid4(8)
    A0 = Connection.product(g, "u1")
    s = random_bandlimited(g, "u1", 0, 2, 1.0, 1)
    np.testing.assert_allclose(d_A_on_oneform(A0, cov_grad(A0, s)).data, 0, atol=1e-11)
    A0 = Connection.product(g, "su2")
    a = zeros(g, "su2", 1)
    a.data[..., 0, 2], a.data[..., 1, 1] = 0.5, -0.3
    assert not d_A_on_oneform(A0, a).data.any()


def test_d_fourier_symbol():
    # a = f dx1 with f = sin(2 pi x2): (da)_{12} = -D_2 f
    g = Grid4(16)
    y = g.coordinates()[..., 1]
    a = zeros(g, "u1", 1)
    a.data[..., 0, 0] = np.sin(2 * np.pi * y)
    out = d_A_on_oneform(Connection.product(g, "u1"), a).data[..., PAIRS.index((0, 1)), 0]
    sym = (np.exp(2j * np.pi * g.h) - 1) / g.h
    np.testing.assert_allclose(out, -np.imag(sym * np.exp(2j * np.pi * y)), atol=1e-12)
    plus = d_A_plus(Connection.product(g, "u1"), a).data
    full = d_A_on_oneform(Connection.product(g, "u1"), a).data
    np.testing.assert_allclose(plus, selfdual_project(full), atol=1e-15)


def test_d_plus_is_selfdual():
    g = Grid4(4)
    A = _random_connection(g, "su2", 3)
    assert not d_A_plus(A, zeros(g, "su2", 1)).data.any()
    w = d_A_plus(A, _noise(g, "su2", 1, 4)).data
    np.testing.assert_allclose(hodge_star_2(w), w, atol=1e-12)


def test_curvature_examples():
    g = Grid4(4)
    assert not Connection.product(g, "su2").curvature.data.any()
    al, be = 0.6, -1.3
    a = zeros(g, "su2", 1)
    a.data[..., 0, 2], a.data[..., 1, 1] = al, be
    F = curvature(Connection(a)).data
    np.testing.assert_allclose(F[..., 0, :], np.broadcast_to([-al * be, 0, 0], g.shape + (3,)), atol=1e-15)
    assert not F[..., 1:, :].any()


def test_curvature_fourier_oracle():
    g = Grid4(16)
    y = g.coordinates()[..., 1]
    a = zeros(g, "u1", 1)
    a.data[..., 0, 0] = np.sin(2 * np.pi * y)
    F = Connection(a).curvature.data[..., 0, 0]
    sym = (np.exp(2j * np.pi * g.h) - 1) / g.h
    np.testing.assert_allclose(F, -np.imag(sym * np.exp(2j * np.pi * y)), atol=1e-12)


def test_curvature_cache_consistent():
    A = _random_connection(Grid4(4), "su2", 1)
    np.testing.assert_array_equal(A.curvature.data, curvature(A).data)


def test_gauge_apply_identity_and_constant():
    g = Grid4(8)
    A = _random_connection(g, "su2", 2)
    B = gauge_apply(GaugeTransform.identity(g, "su2"), A)
    np.testing.assert_allclose(B.a.data, A.a.data, atol=1e-13)
    q = exp_array(np.array([0.3, -0.8, 1.1]), "su2")
    u = GaugeTransform.constant(g, GroupElement("su2", q))
    B = gauge_apply(u, A)
    assert lp_norm(B.curvature) == pytest.approx(lp_norm(A.curvature), rel=1e-12)
    for method in ("additive",):
        B2 = gauge_apply(u, A, method=method)
        np.testing.assert_allclose(B2.a.data, B.a.data, atol=1e-12)


@pytest.mark.parametrize("group", ["u1", "su2"])
def test_gauge_action_composes(group):
    g = Grid4(8)
    A = _random_connection(g, group, 5)
    u = GaugeTransform.from_generator(random_bandlimited(g, group, 0, 1, 0.8, 6))
    v = GaugeTransform.from_generator(random_bandlimited(g, group, 0, 1, 0.8, 7))
    lhs = gauge_apply(u @ v, A).a.data
    rhs = gauge_apply(u, gauge_apply(v, A)).a.data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    back = gauge_apply(u.inverse(), gauge_apply(u, A)).a.data
    np.testing.assert_allclose(back, A.a.data, atol=1e-12)


def test_curvature_gauge_covariance():
    for n in (8, 16):
        g = Grid4(n)
        A = _random_connection(g, "su2", 8)
        u = GaugeTransform.from_generator(random_bandlimited(g, "su2", 0, 1, 0.5, 9))
        lhs = gauge_apply(u, A).curvature
        rhs = conjugate(u, A.curvature)
        if n == 8:
            d8 = lp_norm(lhs - rhs)
        else:
            d16 = lp_norm(lhs - rhs)
    assert d16 < 0.6 * d8


def test_pure_gauge_curvature_order():
    vals = []
    for n in (8, 16):
        g = Grid4(n)
        u = GaugeTransform.from_generator(random_bandlimited(g, "su2", 0, 1, 1.0, 3))
        vals.append(lp_norm(gauge_apply(u, Connection.product(g, "su2")).curvature))
    assert np.log2(vals[0] / vals[1]) >= 0.9


def test_bw_plus_trivial_cases():
    g = Grid4(4)
    A0 = Connection.product(g, "su2")
    assert not bw_defect_plus(A0, zeros(g, "su2", 2)).data.any()
    v = constant_field(g, "su2", 2, np.ones((6, 3)))
    v = v.like(selfdual_project(v.data))
    np.testing.assert_allclose(bw_defect_plus(A0, v).data, 0, atol=1e-13)
    with pytest.raises(ValueError):
        bw_defect_plus(A0, constant_field(g, "su2", 2, np.eye(6)[:, :3]))


@pytest.mark.parametrize("seed", [0, 1])
def test_weitzenboeck_exact_for_constant_coefficients(seed):
    g = Grid4(4)
    rng = philox(seed)
    A = Connection(constant_field(g, "su2", 1, rng.standard_normal((4, 3))))
    v = constant_field(g, "su2", 2, rng.standard_normal((6, 3)))
    v = v.like(selfdual_project(v.data))
    a = constant_field(g, "su2", 1, rng.standard_normal((4, 3)))
    assert lp_norm(bw_defect_plus(A, v)) < 1e-12 * (1 + lp_norm(v))
    assert lp_norm(bw_defect_one(A, a)) < 1e-12 * (1 + lp_norm(a))


def test_bw_plus_plane_wave_refinement():
    vals = []
    for n in (8, 16):
        g = Grid4(n)
        v = random_bandlimited(g, "u1", 2, 2, 1.0, 4)
        v = v.like(selfdual_project(v.data))
        vals.append(lp_norm(bw_defect_plus(Connection.product(g, "u1"), v)) / lp_norm(v))
    assert 0 < vals[1] < 0.7 * vals[0]


def test_rough_laplacian_matches_laplacian0_on_sections():
    g = Grid4(4)
    A = _random_connection(g, "su2", 1)
    s = _noise(g, "su2", 0, 2)
    np.testing.assert_allclose(rough_laplacian(A, s).data, laplacian0(A, s).data, atol=1e-12)
