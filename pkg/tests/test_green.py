import numpy as np
import pytest

from torus_gauge.fields import (Field, GaugeTransform, GroupElement, exp_array, random_bandlimited,
                                zeros)
from torus_gauge.green import (K0, SolverError, cg_solve, dplus_laplacian_coords_map,
                               flat_dplus_project, flat_dplus_spectrum, green_apply,
                               green_asymptote_deviation, k0_from_parts, kernel_basis,
                               laplacian0_map, laplacian_symbol, nu0, nu2, project_off_kernel,
                               scalar_green_kernel, section_shape, spectrum_report)
from torus_gauge.manifold import Grid4
from torus_gauge.norms import lp_norm
from torus_gauge.operators import Connection, gauge_apply, laplacian0

from conftest import philox


def _plane_wave(g, k, group="u1"):
    x = g.coordinates() / g.L
    f = zeros(g, group, 0)
    f.data[..., 0] = np.cos(2 * np.pi * (x @ np.asarray(k, float)))
    return f


def _symbol_at(g, k):
    return laplacian_symbol(g)[tuple(np.mod(k, g.n))]


def test_cg_trivial_operators():
    rng = philox(1)
    b = rng.standard_normal((4, 4, 4, 4, 1))
    np.testing.assert_allclose(cg_solve(lambda x: x, b), b)
    np.testing.assert_allclose(cg_solve(lambda x: 2 * x, b), b / 2, rtol=1e-12)


def test_cg_plane_wave_oracle():
    g = Grid4(8)
    A0 = Connection.product(g, "u1")
    e = _plane_wave(g, (1, 2, 0, 1))
    w = cg_solve(lambda f: laplacian0(A0, f), e, tol=1e-12)
    np.testing.assert_allclose(w.data, e.data / _symbol_at(g, (1, 2, 0, 1)), atol=1e-12)


def test_cg_errors():
    b = philox(2).standard_normal((4, 4, 4, 4, 1))
    with pytest.raises(SolverError):
        cg_solve(lambda x: x[::-1] * np.arange(4)[:, None, None, None, None], b)
    g = Grid4(8)
    A = Connection(random_bandlimited(g, "su2", 1, 1, 1.0, 0))
    b = random_bandlimited(g, "su2", 0, 2, 1.0, 1)
    with pytest.raises(SolverError) as info:
        cg_solve(laplacian0_map(A), b.data, tol=1e-14, max_iter=3)
    assert len(info.value.history) == 4


def test_kernel_dimensions():
    g = Grid4(8)
    assert len(kernel_basis(Connection.product(g, "u1"))) == 1
    assert len(kernel_basis(Connection.product(g, "su2"))) == 3
    A = Connection(random_bandlimited(g, "su2", 1, 1, 1.0, 0))
    assert len(kernel_basis(A)) == 0
    basis = kernel_basis(Connection.product(g, "su2"))
    gram = np.array([[a.inner(b) for b in basis] for a in basis])
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-10)


def test_nu0_product_connection_oracle():
    g = Grid4(8)
    exact = (4 / g.h ** 2) * np.sin(np.pi / 8) ** 2
    assert exact == pytest.approx(37.490332008121925, rel=1e-15)
    for group in ("u1", "su2"):
        assert nu0(Connection.product(g, group)) == pytest.approx(exact, rel=1e-8)


def test_nu0_constant_conjugation_invariance():
    g = Grid4(4)
    A = Connection(random_bandlimited(g, "su2", 1, 1, 1.0, 3))
    u = GaugeTransform.constant(g, GroupElement("su2", exp_array(np.array([0.4, 1.0, -0.3]), "su2")))
    assert nu0(gauge_apply(u, A)) == pytest.approx(nu0(A), rel=1e-10)


def test_nu0_small_amplitude_matches_dense_eigensolve():
    g = Grid4(4)
    A = Connection(random_bandlimited(g, "su2", 1, 1, 0.3, 4))
    op = laplacian0_map(A)
    shape = section_shape(A)
    size = int(np.prod(shape))
    M = np.stack([op(e.reshape(shape)).ravel() for e in np.eye(size)], axis=1)
    ev = np.linalg.eigvalsh(M)
    pos = ev[ev > 1e-8 * (2 * np.pi) ** 2]
    assert nu0(A) == pytest.approx(pos[0], rel=1e-8)
    # the flat kernel of dimension 3 is lifted, so the gap starts near zero
    assert 0 < nu0(A) < nu0(Connection.product(g, "su2"))


def test_green_apply_examples():
    g = Grid4(8)
    A0 = Connection.product(g, "u1")
    const = Field(g, "u1", 0, np.ones(g.shape + (1,)))
    assert lp_norm(green_apply(A0, const)) < 1e-12
    e = _plane_wave(g, (0, 1, 1, 3))
    np.testing.assert_allclose(green_apply(A0, e, tol=1e-12).data,
                               e.data / _symbol_at(g, (0, 1, 1, 3)), atol=1e-11)


@pytest.mark.parametrize("group", ["u1", "su2"])
def test_green_round_trip(group):
    g = Grid4(8)
    A = Connection(random_bandlimited(g, group, 1, 1, 1.0, 5))
    s = random_bandlimited(g, group, 0, 2, 1.0, 6)
    back = green_apply(A, laplacian0(A, s), tol=1e-12)
    s_perp = project_off_kernel(A, s)
    assert lp_norm(back - s_perp) <= 1e-9 * lp_norm(s_perp)
    for k in kernel_basis(A):
        assert abs(back.inner(k)) < 1e-10


def test_scalar_green_kernel_properties():
    g = Grid4(8)
    G = scalar_green_kernel(g)
    assert g.cell_volume * G.sum() == pytest.approx(1.0, rel=1e-12)
    neg = G[tuple(np.mod(-np.indices(g.shape), g.n))]
    np.testing.assert_allclose(G, neg, rtol=1e-12)
    assert np.all(G > 0)


def test_green_asymptote_report():
    d = green_asymptote_deviation(Grid4(16), 2 / 16, 0.25)
    assert d["sites"] > 0 and np.isfinite(d["mean_deviation"])


def test_k0_formula():
    g = Grid4(8)
    assert K0(Connection.product(g, "u1")) == pytest.approx(1 + 1 / 37.490332008121925, rel=1e-8)
    assert k0_from_parts(2.0, 1.0) > k0_from_parts(3.0, 1.0)
    assert k0_from_parts(2.0, 2.0) > k0_from_parts(2.0, 1.0)
    A = Connection(random_bandlimited(g, "u1", 1, 1, 1.0, 0))
    rep = spectrum_report(A)
    assert rep.recomputed_K0() == pytest.approx(rep.K0, rel=1e-12)
    assert rep.nu0 > rep.kernel_tolerance


def test_flat_dplus_spectrum():
    # frozen symbol values; the discrete d+ d+* on site-collocated forms has a
    # 21-dimensional kernel and its least positive eigenvalue shrinks with h
    g = Grid4(8)
    ev = flat_dplus_spectrum(g)
    assert ev.min() > -1e-9
    assert int(np.sum(ev < 1e-8 * (2 * np.pi) ** 2)) == 21
    assert nu2(Connection.product(g, "u1")) == pytest.approx(1.2021740840113608, rel=1e-12)
    assert nu2(Connection.product(Grid4(4), "u1")) == pytest.approx(2.7451660040609447, rel=1e-12)


@pytest.mark.parametrize("group", ["u1", "su2"])
def test_nu2_matches_dense_eigensolve(group):
    g = Grid4(4)
    A = Connection.product(g, group) if group == "u1" else Connection(
        random_bandlimited(g, "su2", 1, 1, 0.3, 2))
    c = 1 if group == "u1" else 3
    op = dplus_laplacian_coords_map(A)
    shape = g.shape + (3, c)
    size = int(np.prod(shape))
    M = np.stack([op(e.reshape(shape)).ravel() for e in np.eye(size)], axis=1)
    ev = np.linalg.eigvalsh((M + M.T) / 2)
    assert ev.min() > -1e-10
    pos = ev[ev >= 1e-8 * (2 * np.pi) ** 2]
    assert nu2(A) == pytest.approx(pos[0], rel=1e-8)


def test_nu2_constant_conjugation_invariance():
    g = Grid4(4)
    A = Connection(random_bandlimited(g, "su2", 1, 1, 0.3, 2))
    u = GaugeTransform.constant(g, GroupElement("su2", exp_array(np.array([1.0, 0.2, 0.0]), "su2")))
    assert nu2(gauge_apply(u, A)) == pytest.approx(nu2(A), rel=1e-8)


def test_flat_dplus_project():
    g = Grid4(8)
    c = philox(3).standard_normal(g.shape + (3, 1))
    p = flat_dplus_project(g, c)
    np.testing.assert_allclose(flat_dplus_project(g, p), p, atol=1e-13)
    A0 = Connection.product(g, "u1")
    op = dplus_laplacian_coords_map(A0)
    rq = np.sum(p * op(p)) / np.sum(p * p)
    assert rq >= nu2(A0)
