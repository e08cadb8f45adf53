"""Discrete covariant calculus on the lattice torus.

Covariant derivatives use forward differences plus the bracket with the
connection coefficient at the same site,

    (nabla_A s)_mu(x) = (s(x + h e_mu) - s(x)) / h + [A_mu(x), s(x)],

and every adjoint is the exact transpose under ``h^4 sum_x <., .>``, so the
Laplacians built from them are symmetric positive semidefinite to rounding.
The gauge action is carried by link variables ``exp(-h A_mu(x))`` so that it
is an exact group action (see :func:`gauge_apply`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import (GaugeTransform, Field, adjoint_array, bracket_array, exp_array,
                     inv_array, log_array, mul_array, zeros)
from .manifold import (DIM, PAIRS, Grid4, antiselfdual_project, hodge_star_2,
                       selfdual_coords, selfdual_from_coords, selfdual_project)

_ALL = (slice(None),) * DIM


def fwd(f: np.ndarray, mu: int) -> np.ndarray:
    """f(x + h e_mu)."""
    return np.roll(f, -1, axis=mu)


def bwd(f: np.ndarray, mu: int) -> np.ndarray:
    """f(x - h e_mu)."""
    return np.roll(f, 1, axis=mu)


@dataclass
class Connection:
    """``A = Gamma + a`` with ``Gamma`` the product connection; ``a`` is a 1-form."""

    a: Field
    _curvature: Field | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.a.degree != 1:
            raise ValueError("connection coefficient must be a 1-form")

    @classmethod
    def product(cls, grid: Grid4, group: str) -> "Connection":
        return cls(zeros(grid, group, 1))

    @property
    def grid(self) -> Grid4:
        return self.a.grid

    @property
    def group(self) -> str:
        return self.a.group

    @property
    def curvature(self) -> Field:
        if self._curvature is None:
            self._curvature = curvature(self)
        return self._curvature

    @property
    def curvature_plus(self) -> Field:
        F = self.curvature
        return F.like(selfdual_project(F.data))

    @property
    def curvature_minus(self) -> Field:
        F = self.curvature
        return F.like(antiselfdual_project(F.data))

    def __add__(self, b: Field) -> "Connection":
        return Connection(self.a + b)

    def __sub__(self, other: "Connection") -> Field:
        return self.a - other.a


def _check(A: Connection, f: Field, degree=None):
    if f.grid != A.grid or f.group != A.group:
        raise ValueError(f"grid/group mismatch: connection ({A.grid.n}, {A.group}) vs "
                         f"field ({f.grid.n}, {f.group})")
    if degree is not None and f.degree != degree:
        raise ValueError(f"expected a {degree}-form, got degree {f.degree}")


# ------------------------------------------------------------------ raw array kernels

def _expand(Amu: np.ndarray, target_ndim: int) -> np.ndarray:
    """Insert singleton axes so a (grid + (c,)) connection slice broadcasts over extra slots."""
    extra = target_ndim - Amu.ndim
    return Amu.reshape(Amu.shape[:DIM] + (1,) * extra + Amu.shape[DIM:])


def grad_array(A: np.ndarray, s: np.ndarray, group: str, h: float) -> np.ndarray:
    """Covariant gradient of sections with any number of slot axes; new axis 4 is the direction."""
    out = np.empty(s.shape[:DIM] + (DIM,) + s.shape[DIM:])
    for mu in range(DIM):
        out[_ALL + (mu,)] = (fwd(s, mu) - s) / h + bracket_array(_expand(A[..., mu, :], s.ndim), s, group)
    return out


def grad_adjoint_array(A: np.ndarray, t: np.ndarray, group: str, h: float) -> np.ndarray:
    """Exact transpose of :func:`grad_array` (direction axis 4 is contracted)."""
    out = np.zeros(t.shape[:DIM] + t.shape[DIM + 1:])
    for mu in range(DIM):
        tm = t[_ALL + (mu,)]
        out -= (tm - bwd(tm, mu)) / h + bracket_array(_expand(A[..., mu, :], tm.ndim), tm, group)
    return out


def d1_array(A: np.ndarray, a: np.ndarray, group: str, h: float) -> np.ndarray:
    out = np.empty(a.shape[:DIM] + (6,) + a.shape[DIM + 1:])
    for p, (mu, nu) in enumerate(PAIRS):
        out[..., p, :] = ((fwd(a[..., nu, :], mu) - a[..., nu, :]) / h
                          - (fwd(a[..., mu, :], nu) - a[..., mu, :]) / h
                          + bracket_array(A[..., mu, :], a[..., nu, :], group)
                          - bracket_array(A[..., nu, :], a[..., mu, :], group))
    return out


def d1_adjoint_array(A: np.ndarray, w: np.ndarray, group: str, h: float) -> np.ndarray:
    out = np.zeros(w.shape[:DIM] + (DIM,) + w.shape[DIM + 1:])
    for p, (mu, nu) in enumerate(PAIRS):
        wp = w[..., p, :]
        # transpose of D_mu a_nu + [A_mu, a_nu]
        out[..., nu, :] += (bwd(wp, mu) - wp) / h - bracket_array(A[..., mu, :], wp, group)
        # transpose of -(D_nu a_mu + [A_nu, a_mu])
        out[..., mu, :] -= (bwd(wp, nu) - wp) / h - bracket_array(A[..., nu, :], wp, group)
    return out


# ------------------------------------------------------------------ field-level operators

def cov_grad(A: Connection, s: Field) -> Field:
    """``nabla_A`` on sections; a 0-form becomes a 1-form, higher forms gain a direction axis."""
    _check(A, s, 0)
    return Field(A.grid, A.group, 1, grad_array(A.a.data, s.data, A.group, A.grid.h))


def cov_grad_adjoint(A: Connection, t: Field) -> Field:
    _check(A, t, 1)
    return Field(A.grid, A.group, 0, grad_adjoint_array(A.a.data, t.data, A.group, A.grid.h))


def laplacian0(A: Connection, s: Field) -> Field:
    """Covariant Laplacian ``nabla_A^* nabla_A`` on 0-forms."""
    _check(A, s, 0)
    g = grad_array(A.a.data, s.data, A.group, A.grid.h)
    return s.like(grad_adjoint_array(A.a.data, g, A.group, A.grid.h))


def rough_laplacian(A: Connection, f: Field) -> Field:
    """``nabla_A^* nabla_A`` acting slotwise on a form of any degree (flat Levi-Civita part)."""
    _check(A, f)
    g = grad_array(A.a.data, f.data, A.group, A.grid.h)
    return f.like(grad_adjoint_array(A.a.data, g, A.group, A.grid.h))


def second_cov_derivative(A: Connection, f: Field) -> np.ndarray:
    """``nabla_A^2 f`` as an array with two direction axes (outer, inner)."""
    _check(A, f)
    g = grad_array(A.a.data, f.data, A.group, A.grid.h)
    return grad_array(A.a.data, g, A.group, A.grid.h)


def cov_grad_norm_field(A: Connection, f: Field) -> np.ndarray:
    """Pointwise ``|nabla_A f|`` for a form of any degree."""
    _check(A, f)
    g = grad_array(A.a.data, f.data, A.group, A.grid.h)
    return np.sqrt((g ** 2).reshape(A.grid.shape + (-1,)).sum(axis=-1))


def d_A_on_oneform(A: Connection, a: Field) -> Field:
    _check(A, a, 1)
    return Field(A.grid, A.group, 2, d1_array(A.a.data, a.data, A.group, A.grid.h))


def d_A_adjoint_on_twoform(A: Connection, w: Field) -> Field:
    _check(A, w, 2)
    return Field(A.grid, A.group, 1, d1_adjoint_array(A.a.data, w.data, A.group, A.grid.h))


def d_A_plus(A: Connection, a: Field) -> Field:
    w = d_A_on_oneform(A, a)
    return w.like(selfdual_project(w.data))


def d_A_plus_adjoint(A: Connection, w: Field) -> Field:
    """Transpose of :func:`d_A_plus` (the self-dual projection is orthogonal)."""
    return d_A_adjoint_on_twoform(A, w.like(selfdual_project(w.data)))


def dplus_laplacian(A: Connection, v: Field) -> Field:
    """``d_A^+ (d_A^+)^*`` on 2-forms (maps into self-dual forms)."""
    return d_A_plus(A, d_A_plus_adjoint(A, v))


def curvature(A: Connection) -> Field:
    a = A.a.data
    h = A.grid.h
    out = np.empty(A.grid.shape + (6, a.shape[-1]))
    for p, (mu, nu) in enumerate(PAIRS):
        out[..., p, :] = ((fwd(a[..., nu, :], mu) - a[..., nu, :]) / h
                          - (fwd(a[..., mu, :], nu) - a[..., mu, :]) / h
                          + bracket_array(a[..., mu, :], a[..., nu, :], A.group))
    return Field(A.grid, A.group, 2, out)


def gauge_apply(u: GaugeTransform, A: Connection, method: str = "link") -> Connection:
    """Gauge action ``u(A)``.

    ``method="link"`` (default) transports link variables
    ``U_mu(x) = exp(-h A_mu(x))`` to ``u(x + h e_mu) U_mu(x) u(x)^{-1}`` and
    returns ``-log(link) / h``.  To first order in ``h`` this is
    ``u A u^{-1} - (D_mu u) u^{-1}``, but it composes exactly,
    ``(uv)(A) = u(v(A))``, and is affine in the generator for ``u1``.

    ``method="additive"`` evaluates ``u A u^{-1} - (D_mu u) u^{-1}`` with a
    forward difference and projects the result back onto the Lie algebra;
    it is a group action only up to ``O(h)``.
    """
    if u.grid != A.grid or u.group != A.group:
        raise ValueError("gauge transform and connection live on different grids/groups")
    g, h = A.group, A.grid.h
    uinv = inv_array(u.data, g)
    out = np.empty_like(A.a.data)
    if method == "link":
        for mu in range(DIM):
            link = exp_array(-h * A.a.data[..., mu, :], g)
            link = mul_array(mul_array(fwd(u.data, mu), link, g), uinv, g)
            out[..., mu, :] = -log_array(link, g) / h
    elif method == "additive":
        for mu in range(DIM):
            du = mul_array((fwd(u.data, mu) - u.data) / h, uinv, g)
            out[..., mu, :] = adjoint_array(u.data, A.a.data[..., mu, :], g) - _algebra_part(du, g)
    else:
        raise ValueError(f"unknown gauge action method {method!r}")
    return Connection(A.a.like(out))


def _algebra_part(q: np.ndarray, group: str) -> np.ndarray:
    """Skew-Hermitian traceless projection of a quaternion / complex number, as coefficients."""
    if group == "u1":
        # exp(i chi) convention: the algebra coefficient is the imaginary part
        return np.imag(q)[..., None]
    # wI - i v.sigma = w + 2 sum v_k T_k
    return 2.0 * q[..., 1:]


def conjugate(u: GaugeTransform, f: Field) -> Field:
    """Pointwise ``u f u^{-1}`` for a form of any degree."""
    ud = u.data if f.degree == 0 or u.group == "u1" else u.data[..., None, :]
    return f.like(adjoint_array(ud, f.data, f.group))


# ------------------------------------------------------------------ Weitzenbock curvature terms

def curvature_action_plus(Fplus: Field, v: Field) -> Field:
    """The bilinear term ``{F^+, v}`` on self-dual 2-forms.

    In the orthonormal self-dual basis ``w_i`` it is
    ``sqrt(2) sum_ijk eps_ijk [f_i, v_j] w_k``; the normalization is the one that
    makes ``2 d_A^+ d_A^* = nabla_A^* nabla_A + {F_A^+, .}`` exact for
    constant coefficients, where every difference vanishes and only brackets
    remain.
    """
    f = selfdual_coords(Fplus.data)
    c = selfdual_coords(v.data)
    g = v.group
    out = np.zeros_like(c)
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        out[..., k, :] += bracket_array(f[..., i, :], c[..., j, :], g)
        out[..., k, :] -= bracket_array(f[..., j, :], c[..., i, :], g)
    return v.like(np.sqrt(2.0) * selfdual_from_coords(out))


def curvature_action_minus(Fminus: Field, a: Field) -> Field:
    """The bilinear term ``{F^-, a}`` on 1-forms, ``({F^-, a})_nu = -sum_mu [F^-_{mu nu}, a_mu]``.

    Normalized so that ``d_A d_A^* + 2 d_A^* d_A^+ = nabla_A^* nabla_A - 2 {F_A^-, .}``
    is exact for constant coefficients.
    """
    F = Fminus.data
    g = a.group
    out = np.zeros_like(a.data)
    for p, (mu, nu) in enumerate(PAIRS):
        out[..., nu, :] -= bracket_array(F[..., p, :], a.data[..., mu, :], g)
        out[..., mu, :] += bracket_array(F[..., p, :], a.data[..., nu, :], g)
    return a.like(out)


def bw_defect_plus(A: Connection, v: Field, check: bool = True) -> Field:
    """``2 d_A^+ d_A^* v - nabla_A^* nabla_A v - {F_A^+, v}`` for self-dual ``v`` (flat metric)."""
    _check(A, v, 2)
    if check and np.max(np.abs(hodge_star_2(v.data) - v.data), initial=0.0) > 1e-12 * max(
            1.0, float(np.max(np.abs(v.data), initial=0.0))):
        raise ValueError("bw_defect_plus needs a self-dual 2-form")
    lhs = 2.0 * d_A_plus(A, d_A_adjoint_on_twoform(A, v))
    return lhs - rough_laplacian(A, v) - curvature_action_plus(A.curvature_plus, v)


def bw_defect_one(A: Connection, a: Field) -> Field:
    """``d_A d_A^* a + 2 d_A^* d_A^+ a - nabla_A^* nabla_A a + 2 {F_A^-, a}`` on 1-forms."""
    _check(A, a, 1)
    lhs = cov_grad(A, cov_grad_adjoint(A, a)) + 2.0 * d_A_plus_adjoint(A, d_A_plus(A, a))
    return lhs - rough_laplacian(A, a) + 2.0 * curvature_action_minus(A.curvature_minus, a)


class SectionLaplacian:
    """Fast ``nabla_A^* nabla_A`` on sections for iterative solvers.

    Works on component-first arrays of shape ``(c, n, n, n, n)`` so every
    bracket is a handful of contiguous elementwise products.  It agrees with
    :func:`laplacian0` to rounding; use :meth:`to_internal` and
    :meth:`from_internal` to convert layouts.
    """

    def __init__(self, A: Connection):
        self.grid = A.grid
        self.group = A.group
        self.h = A.grid.h
        self.ncomp = A.a.data.shape[-1]
        # links[mu] has shape (c, n, n, n, n)
        self.conn = [np.ascontiguousarray(np.moveaxis(A.a.data[..., mu, :], -1, 0))
                     for mu in range(DIM)]
        self.abelian = A.group == "u1"

    @property
    def internal_shape(self) -> tuple:
        return (self.ncomp,) + self.grid.shape

    @staticmethod
    def to_internal(data: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.moveaxis(data, -1, 0))

    @staticmethod
    def from_internal(x: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.moveaxis(x, 0, -1))

    @staticmethod
    def _cross(a, b):
        return np.stack((a[1] * b[2] - a[2] * b[1],
                         a[2] * b[0] - a[0] * b[2],
                         a[0] * b[1] - a[1] * b[0]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = self.h
        out = np.zeros_like(x)
        for mu in range(DIM):
            ax = mu + 1
            t = (np.roll(x, -1, axis=ax) - x) / h
            if not self.abelian:
                t += self._cross(self.conn[mu], x)
            out -= (t - np.roll(t, 1, axis=ax)) / h
            if not self.abelian:
                out -= self._cross(self.conn[mu], t)
        return out

    def apply_field(self, s: Field) -> Field:
        return s.like(self.from_internal(self(self.to_internal(s.data))))
