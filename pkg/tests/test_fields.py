import numpy as np
import pytest
from hypothesis import given, strategies as st

from torus_gauge.fields import (AlgebraElement, Field, GaugeTransform, GroupElement, adjoint_array,
                                basis_element, bracket, bracket_array, bump_connection, exp_array,
                                group_exp, group_log, inv_array, mul_array, normalize_array,
                                random_bandlimited, read_snapshot, thooft_eta, write_snapshot, zeros)
from torus_gauge.manifold import Grid4, hodge_star_2
from torus_gauge.norms import lp_norm
from torus_gauge.operators import Connection

from conftest import philox

T = [basis_element("su2", k) for k in range(3)]


def test_su2_structure_constants():
    assert np.allclose(bracket(T[0], T[1]).coefficients, T[2].coefficients)
    assert np.allclose(bracket(T[1], T[2]).coefficients, T[0].coefficients)
    assert np.allclose(bracket(T[2], T[0]).coefficients, T[1].coefficients)
    a = AlgebraElement("su2", [0.3, -1.0, 2.0])
    assert np.all(bracket(a, a).coefficients == 0)
    u = AlgebraElement("u1", [1.5])
    assert bracket(u, AlgebraElement("u1", [2.0])).coefficients[0] == 0
    with pytest.raises(ValueError):
        bracket(a, u)


def test_basis_orthonormal_under_trace_form():
    for i in range(3):
        for j in range(3):
            ip = -2 * np.trace(T[i].matrix() @ T[j].matrix()).real
            assert ip == pytest.approx(float(i == j))


def test_bracket_matches_matrix_commutator():
    rng = philox(3)
    a, b = (AlgebraElement("su2", rng.standard_normal(3)) for _ in range(2))
    comm = a.matrix() @ b.matrix() - b.matrix() @ a.matrix()
    np.testing.assert_allclose(bracket(a, b).matrix(), comm, atol=1e-14)


def test_group_exp_examples():
    e = group_exp(AlgebraElement("su2", [0, 0, 0]))
    np.testing.assert_allclose(e.matrix(), np.eye(2))
    m = group_exp(2 * np.pi * T[2]).matrix()
    np.testing.assert_allclose(m, -np.eye(2), atol=1e-15)
    chi = AlgebraElement("su2", [0.4, -0.2, 1.1])
    prod = (group_exp(chi) @ group_exp(-chi)).matrix()
    np.testing.assert_allclose(prod, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(group_log(group_exp(chi)).coefficients, chi.coefficients, atol=1e-14)


def test_group_exp_matches_matrix_exponential():
    from scipy.linalg import expm
    chi = AlgebraElement("su2", [0.7, 0.1, -1.3])
    np.testing.assert_allclose(group_exp(chi).matrix(), expm(chi.matrix()), atol=1e-14)
    chi = AlgebraElement("u1", [0.9])
    np.testing.assert_allclose(group_exp(chi).matrix(), expm(chi.matrix()), atol=1e-14)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["u1", "su2"]))
def test_fiber_invariants(seed, group):
    rng = philox(seed)
    c = 3 if group == "su2" else 1
    a, b, d = (rng.standard_normal((6, c)) for _ in range(3))
    # ad-invariance of the inner product
    lhs = np.sum(bracket_array(a, b, group) * d, -1) + np.sum(b * bracket_array(a, d, group), -1)
    assert np.max(np.abs(lhs)) < 1e-12
    u = exp_array(rng.standard_normal((6, c)), group)
    ad = adjoint_array(u, a, group)
    np.testing.assert_allclose(np.linalg.norm(ad, axis=-1), np.linalg.norm(a, axis=-1), rtol=1e-12)
    # exp(chi)^2 = exp(2 chi)
    e = exp_array(a, group)
    np.testing.assert_allclose(mul_array(e, e, group), exp_array(2 * a, group), atol=1e-12)
    # unitarity after a long product chain, restored exactly by renormalization
    p = e
    for _ in range(200):
        p = mul_array(p, u, group)
    q = normalize_array(p, group)
    if group == "su2":
        assert np.max(np.abs(np.sum(p ** 2, -1) - 1)) < 1e-12
        assert np.max(np.abs(np.sum(q ** 2, -1) - 1)) <= 1e-15
    else:
        assert np.max(np.abs(np.abs(p) - 1)) < 1e-12
    np.testing.assert_allclose(mul_array(p, inv_array(p, group), group),
                               exp_array(0 * a, group), atol=1e-12)


def test_group_element_matrix_is_special_unitary():
    g = group_exp(AlgebraElement("su2", [1.0, 2.0, 3.0]))
    m = g.matrix()
    np.testing.assert_allclose(m @ m.conj().T, np.eye(2), atol=1e-14)
    assert np.linalg.det(m) == pytest.approx(1.0)
    a = AlgebraElement("su2", [0.2, 0.5, -0.4])
    conj = m @ a.matrix() @ np.linalg.inv(m)
    np.testing.assert_allclose(g.adjoint(a).matrix(), conj, atol=1e-14)


def test_field_shapes_and_mismatch():
    g = Grid4(4)
    assert zeros(g, "su2", 1).data.shape == (4, 4, 4, 4, 4, 3)
    assert zeros(g, "u1", 2).data.shape == (4, 4, 4, 4, 6, 1)
    assert zeros(g, "su2", 0).data.shape == (4, 4, 4, 4, 3)
    with pytest.raises(ValueError):
        Field(g, "su2", 1, np.zeros((4, 4, 4, 4, 3)))
    with pytest.raises(ValueError):
        zeros(g, "su2", 1) + zeros(g, "u1", 1)
    with pytest.raises(ValueError):
        zeros(g, "so3", 0)


def test_random_bandlimited_contract(grid8):
    assert not random_bandlimited(grid8, "su2", 1, 2, 0.0, 3).data.any()
    a = random_bandlimited(grid8, "su2", 1, 2, 1.0, 3)
    b = random_bandlimited(grid8, "su2", 1, 2, 1.0, 3)
    assert a.data.tobytes() == b.data.tobytes()
    assert not np.array_equal(a.data, random_bandlimited(grid8, "su2", 1, 2, 1.0, 4).data)
    with pytest.raises(ValueError):
        random_bandlimited(grid8, "u1", 0, 5, 1.0, 0)


def test_random_bandlimited_regression(grid8):
    # frozen after the first evaluation
    assert lp_norm(random_bandlimited(grid8, "su2", 0, 2, 1.0, 7)) == pytest.approx(1.2018993721325, rel=1e-12)
    assert lp_norm(random_bandlimited(grid8, "u1", 1, 2, 1.0, 7)) == pytest.approx(1.4102261798300055, rel=1e-12)


def test_random_bandlimited_is_grid_consistent():
    # the same continuum function is sampled on nested grids
    f8 = random_bandlimited(Grid4(8), "u1", 0, 2, 1.0, 11).data
    f16 = random_bandlimited(Grid4(16), "u1", 0, 2, 1.0, 11).data
    np.testing.assert_allclose(f16[::2, ::2, ::2, ::2], f8, atol=1e-13)


def test_gauge_transform_generator_consistency(grid8):
    chi = random_bandlimited(grid8, "su2", 0, 1, 1.0, 5)
    u = GaugeTransform.from_generator(chi)
    assert u.unitarity_defect() < 1e-14
    np.testing.assert_allclose(u.log().data, chi.data, atol=1e-12)
    ident = u @ u.inverse()
    np.testing.assert_allclose(ident.data, GaugeTransform.identity(grid8, "su2").data, atol=1e-14)


def test_thooft_symbols_selfdual():
    eta = thooft_eta()
    from torus_gauge.manifold import PAIRS
    w = np.array([[eta[k, m, n] for (m, n) in PAIRS] for k in range(3)]).T
    np.testing.assert_array_equal(hodge_star_2(w), w)


def test_bump_connection_examples():
    g = Grid4(16)
    c = (0.5, 0.5, 0.5, 0.5)
    assert not bump_connection(g, c, 0.125, amplitude=0.0).data.any()
    a = bump_connection(g, c, 0.125)
    assert np.all(a.data[8, 8, 8, 8] == 0)
    assert a.group == "su2" and a.degree == 1
    # vanishes outside the support ball r >= 2 * scale
    r = np.sqrt(np.sum((g.coordinates() - 0.5) ** 2, -1))
    assert np.all(a.data[r >= 0.25] == 0)
    for bad in (0.01, 0.3):
        with pytest.raises(ValueError):
            bump_connection(g, c, bad)


def test_bump_family_norm_ratios():
    g = Grid4(16)
    c = (0.5,) * 4
    F8 = Connection(bump_connection(g, c, 1 / 8)).curvature
    F16 = Connection(bump_connection(g, c, 1 / 16)).curvature
    r2 = lp_norm(F8, 2) / lp_norm(F16, 2)
    r4 = lp_norm(F16, 4) / lp_norm(F8, 4)
    assert 0.8 <= r2 <= 1.25
    assert r4 >= 1.5


@pytest.mark.parametrize("group,degree", [("u1", 0), ("su2", 1), ("su2", 2)])
def test_snapshot_round_trip(tmp_path, group, degree):
    g = Grid4(4, 1.0)
    f = random_bandlimited(g, group, degree, 2, 1.0, 9)
    write_snapshot(tmp_path / "f.bin", f)
    back = read_snapshot(tmp_path / "f.bin")
    assert back.data.tobytes() == f.data.tobytes()
    assert (back.group, back.degree, back.grid) == (group, degree, g)


@pytest.mark.parametrize("group", ["u1", "su2"])
def test_gauge_snapshot_round_trip(tmp_path, group):
    g = Grid4(4, 1.0)
    u = GaugeTransform.from_generator(random_bandlimited(g, group, 0, 2, 1.0, 9))
    write_snapshot(tmp_path / "u.bin", u)
    back = read_snapshot(tmp_path / "u.bin")
    assert back.data.tobytes() == u.data.tobytes()


def test_snapshot_storage_order(tmp_path):
    g = Grid4(4, 1.0)
    f = random_bandlimited(g, "su2", 1, 1, 1.0, 2)
    path, header = write_snapshot(tmp_path / "f.bin", f)
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    # site-major, component-minor
    np.testing.assert_array_equal(raw[:12], f.data[0, 0, 0, 0].ravel())
    np.testing.assert_array_equal(raw[12:24], f.data[0, 0, 0, 1].ravel())
