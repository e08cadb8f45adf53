"""Lie algebra / group arithmetic for u(1) and su(2) and lattice field containers.

Algebra elements are stored by their coefficients in an orthonormal basis.  For
su(2) the basis is ``T_k = -(i/2) sigma_k`` with inner product
``<a, b> = -2 tr(ab)``, so ``[T_1, T_2] = T_3`` and the bracket of coefficient
vectors is the cross product.  For u(1) the single coefficient ``a`` stands for
``i a`` and the bracket vanishes.

Group elements: su(2) values are unit quaternions ``(w, x, y, z)`` standing for
the matrix ``w I - i (x sigma_1 + y sigma_2 + z sigma_3)``; u(1) values are unit
complex numbers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifold import DIM, Grid4

GROUP_DIM = {"u1": 1, "su2": 3}
SLOTS = {0: 1, 1: DIM, 2: 6}

PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)
SU2_BASIS = -0.5j * PAULI


def check_group(group: str) -> str:
    if group not in GROUP_DIM:
        raise ValueError(f"unsupported group {group!r}; expected one of {sorted(GROUP_DIM)}")
    return group


# ---------------------------------------------------------------- fiber arithmetic on arrays
# Every function below acts on the trailing axis (algebra coefficients or group data).

def bracket_array(a: np.ndarray, b: np.ndarray, group: str) -> np.ndarray:
    if group == "su2":
        a, b = np.broadcast_arrays(a, b)
        out = np.empty(a.shape, dtype=float)
        out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
        out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
        out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        return out
    check_group(group)
    return np.zeros(np.broadcast_shapes(a.shape, b.shape))


def exp_array(chi: np.ndarray, group: str) -> np.ndarray:
    """Pointwise group exponential (closed form)."""
    if group == "u1":
        return np.exp(1j * chi[..., 0])
    check_group(group)
    theta = np.sqrt(np.sum(chi ** 2, axis=-1))
    half = 0.5 * theta
    # sin(theta/2)/theta, with its series near 0
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    s = np.where(small, 0.5 - theta ** 2 / 48.0, np.sin(half) / safe)
    q = np.empty(chi.shape[:-1] + (4,))
    q[..., 0] = np.cos(half)
    q[..., 1:] = s[..., None] * chi
    return q


def log_array(u: np.ndarray, group: str) -> np.ndarray:
    """Principal logarithm, the inverse of :func:`exp_array` away from the cut locus."""
    if group == "u1":
        return np.angle(u)[..., None]
    check_group(group)
    v = u[..., 1:]
    vn = np.sqrt(np.sum(v ** 2, axis=-1))
    theta = 2.0 * np.arctan2(vn, u[..., 0])
    small = vn < 1e-12
    scale = np.where(small, 2.0 / np.where(u[..., 0] == 0, 1.0, u[..., 0]),
                     theta / np.where(small, 1.0, vn))
    return scale[..., None] * v


def mul_array(p: np.ndarray, q: np.ndarray, group: str) -> np.ndarray:
    """Pointwise group product ``p q``."""
    if group == "u1":
        return p * q
    check_group(group)
    p, q = np.broadcast_arrays(p, q)
    w1, x1, y1, z1 = np.moveaxis(p, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q, -1, 0)
    out = np.empty(p.shape)
    out[..., 0] = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    out[..., 1] = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2
    out[..., 2] = w1 * y2 + y1 * w2 + z1 * x2 - x1 * z2
    out[..., 3] = w1 * z2 + z1 * w2 + x1 * y2 - y1 * x2
    return out


def inv_array(u: np.ndarray, group: str) -> np.ndarray:
    if group == "u1":
        return np.conj(u)
    check_group(group)
    out = -u
    out[..., 0] = u[..., 0]
    return out


def identity_array(shape, group: str) -> np.ndarray:
    if group == "u1":
        return np.ones(shape, dtype=complex)
    check_group(group)
    out = np.zeros(tuple(shape) + (4,))
    out[..., 0] = 1.0
    return out


def normalize_array(u: np.ndarray, group: str) -> np.ndarray:
    if group == "u1":
        return u / np.abs(u)
    return u / np.sqrt(np.sum(u ** 2, axis=-1, keepdims=True))


def adjoint_array(u: np.ndarray, a: np.ndarray, group: str) -> np.ndarray:
    """Conjugation ``u a u^{-1}``; ``u`` must broadcast against ``a`` minus its last axis."""
    if group == "u1":
        return np.array(a, dtype=float, copy=True)
    check_group(group)
    w = u[..., :1]
    v = u[..., 1:]
    t = 2.0 * bracket_array(v, a, "su2")
    return a + w * t + bracket_array(v, t, "su2")


def su2_matrix(q: np.ndarray) -> np.ndarray:
    """2x2 complex matrices from quaternion data (trailing axis 4)."""
    return q[..., 0, None, None] * np.eye(2) - 1j * np.einsum("...k,kij->...ij", q[..., 1:], PAULI)


def algebra_matrix(c: np.ndarray) -> np.ndarray:
    """su(2) matrices from coefficient data (trailing axis 3)."""
    return np.einsum("...k,kij->...ij", c, SU2_BASIS)


def matrix_to_algebra(m: np.ndarray) -> np.ndarray:
    """Coefficients of the skew-Hermitian traceless part of ``m``: ``c_k = -2 Re tr(m T_k)``."""
    return -2.0 * np.real(np.einsum("...ij,kji->...k", m, SU2_BASIS))


# ---------------------------------------------------------------- single elements

@dataclass(frozen=True)
class AlgebraElement:
    group: str
    coefficients: np.ndarray

    def __post_init__(self):
        check_group(self.group)
        c = np.asarray(self.coefficients, dtype=float).reshape(GROUP_DIM[self.group])
        object.__setattr__(self, "coefficients", c)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.coefficients ** 2)))

    def inner(self, other: "AlgebraElement") -> float:
        _same_group(self, other)
        return float(np.dot(self.coefficients, other.coefficients))

    def __add__(self, other):
        _same_group(self, other)
        return AlgebraElement(self.group, self.coefficients + other.coefficients)

    def __neg__(self):
        return AlgebraElement(self.group, -self.coefficients)

    def __mul__(self, s):
        return AlgebraElement(self.group, float(s) * self.coefficients)

    __rmul__ = __mul__

    def matrix(self) -> np.ndarray:
        if self.group == "u1":
            return np.array([[1j * self.coefficients[0]]])
        return algebra_matrix(self.coefficients)


@dataclass(frozen=True)
class GroupElement:
    group: str
    value: np.ndarray  # quaternion (su2) or complex scalar (u1)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        _same_group(self, other)
        return GroupElement(self.group, mul_array(self.value, other.value, self.group))

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, inv_array(self.value, self.group))

    def renormalized(self) -> "GroupElement":
        return GroupElement(self.group, normalize_array(np.asarray(self.value), self.group))

    def matrix(self) -> np.ndarray:
        if self.group == "u1":
            return np.array([[complex(self.value)]])
        return su2_matrix(np.asarray(self.value))

    def adjoint(self, a: AlgebraElement) -> AlgebraElement:
        _same_group(self, a)
        return AlgebraElement(self.group, adjoint_array(np.asarray(self.value), a.coefficients, self.group))


def _same_group(a, b):
    if a.group != b.group:
        raise ValueError(f"group mismatch: {a.group} vs {b.group}")


def basis_element(group: str, k: int) -> AlgebraElement:
    c = np.zeros(GROUP_DIM[check_group(group)])
    c[k] = 1.0
    return AlgebraElement(group, c)


def bracket(a: AlgebraElement, b: AlgebraElement) -> AlgebraElement:
    _same_group(a, b)
    return AlgebraElement(a.group, bracket_array(a.coefficients, b.coefficients, a.group))


def group_exp(chi: AlgebraElement) -> GroupElement:
    return GroupElement(chi.group, exp_array(chi.coefficients, chi.group))


def group_log(u: GroupElement) -> AlgebraElement:
    return AlgebraElement(u.group, log_array(np.asarray(u.value), u.group))


# ---------------------------------------------------------------- lattice fields

@dataclass
class Field:
    """Lie-algebra valued 0-, 1- or 2-form on the lattice.

    ``data`` has shape ``grid.shape + (slots, group_dim)`` for forms of degree
    1 and 2 (4 direction slots or 6 pair slots) and ``grid.shape + (group_dim,)``
    for degree 0.
    """

    grid: Grid4
    group: str
    degree: int
    data: np.ndarray

    def __post_init__(self):
        check_group(self.group)
        if self.degree not in SLOTS:
            raise ValueError(f"form degree must be 0, 1 or 2, got {self.degree}")
        expected = field_shape(self.grid, self.group, self.degree)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != expected {expected}")

    # arithmetic ------------------------------------------------------
    def _compatible(self, other: "Field"):
        if not isinstance(other, Field):
            raise TypeError(f"expected a Field, got {type(other).__name__}")
        if other.grid != self.grid or other.group != self.group or other.degree != self.degree:
            raise ValueError(
                f"field mismatch: ({self.grid.n}, {self.group}, deg {self.degree}) vs "
                f"({other.grid.n}, {other.group}, deg {other.degree})")

    def like(self, data: np.ndarray) -> "Field":
        return Field(self.grid, self.group, self.degree, data)

    def __add__(self, other):
        self._compatible(other)
        return self.like(self.data + other.data)

    def __sub__(self, other):
        self._compatible(other)
        return self.like(self.data - other.data)

    def __neg__(self):
        return self.like(-self.data)

    def __mul__(self, s):
        return self.like(float(s) * self.data)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self.like(self.data / float(s))

    def copy(self) -> "Field":
        return self.like(self.data.copy())

    # fiberwise quantities ------------------------------------------
    def pointwise_norm(self) -> np.ndarray:
        """``|f|(x)``: Euclidean norm over all slots and algebra components."""
        sq = self.data ** 2
        return np.sqrt(sq.reshape(self.grid.shape + (-1,)).sum(axis=-1))

    def inner(self, other: "Field") -> float:
        """Discrete L2 inner product ``h^4 sum_x <f(x), g(x)>``."""
        self._compatible(other)
        return float(self.grid.cell_volume * np.sum(self.data * other.data))

    @property
    def component_count(self) -> int:
        return SLOTS[self.degree] * GROUP_DIM[self.group]


def field_shape(grid: Grid4, group: str, degree: int) -> tuple:
    g = GROUP_DIM[check_group(group)]
    if degree == 0:
        return grid.shape + (g,)
    return grid.shape + (SLOTS[degree], g)


def zeros(grid: Grid4, group: str, degree: int) -> Field:
    return Field(grid, group, degree, np.zeros(field_shape(grid, group, degree)))


def constant_field(grid: Grid4, group: str, degree: int, value) -> Field:
    shape = field_shape(grid, group, degree)
    return Field(grid, group, degree, np.broadcast_to(np.asarray(value, float), shape).copy())


AlgebraField = OneForm = TwoForm = Field


@dataclass
class GaugeTransform:
    """Group-valued lattice field, optionally remembering a generator ``chi`` with ``u = exp(chi)``."""

    grid: Grid4
    group: str
    data: np.ndarray
    chi: Field | None = None

    def __post_init__(self):
        check_group(self.group)
        expected = self.grid.shape if self.group == "u1" else self.grid.shape + (4,)
        if self.data.shape != expected:
            raise ValueError(f"gauge data shape {self.data.shape} != expected {expected}")
        if self.chi is not None and (self.chi.degree != 0 or self.chi.grid != self.grid
                                     or self.chi.group != self.group):
            raise ValueError("generator must be a 0-form on the same grid and group")

    @classmethod
    def identity(cls, grid: Grid4, group: str) -> "GaugeTransform":
        return cls(grid, group, identity_array(grid.shape, group), chi=zeros(grid, group, 0))

    @classmethod
    def from_generator(cls, chi: Field) -> "GaugeTransform":
        if chi.degree != 0:
            raise ValueError("gauge generator must be a 0-form")
        return cls(chi.grid, chi.group, exp_array(chi.data, chi.group), chi=chi)

    @classmethod
    def constant(cls, grid: Grid4, element: GroupElement) -> "GaugeTransform":
        g = element.group
        if g == "u1":
            data = np.full(grid.shape, complex(element.value))
        else:
            data = np.broadcast_to(np.asarray(element.value, float), grid.shape + (4,)).copy()
        return cls(grid, g, data)

    def __matmul__(self, other: "GaugeTransform") -> "GaugeTransform":
        if other.grid != self.grid or other.group != self.group:
            raise ValueError("gauge transform mismatch")
        return GaugeTransform(self.grid, self.group, mul_array(self.data, other.data, self.group))

    def inverse(self) -> "GaugeTransform":
        chi = -self.chi if self.chi is not None else None
        return GaugeTransform(self.grid, self.group, inv_array(self.data, self.group), chi=chi)

    def renormalized(self) -> "GaugeTransform":
        return GaugeTransform(self.grid, self.group, normalize_array(self.data, self.group), chi=self.chi)

    def log(self) -> Field:
        return Field(self.grid, self.group, 0, log_array(self.data, self.group))

    def matrices(self) -> np.ndarray:
        if self.group == "u1":
            return self.data[..., None, None]
        return su2_matrix(self.data)

    def unitarity_defect(self) -> float:
        if self.group == "u1":
            return float(np.max(np.abs(np.abs(self.data) - 1.0)))
        return float(np.max(np.abs(np.sum(self.data ** 2, axis=-1) - 1.0)))

    def as_real(self) -> np.ndarray:
        """Real array view used by the snapshot format (re/im pairs for u1)."""
        if self.group == "u1":
            return np.stack([self.data.real, self.data.imag], axis=-1)
        return self.data


# ---------------------------------------------------------------- generators

def fourier_modes(cutoff: int) -> np.ndarray:
    """Integer wave vectors with Euclidean length <= cutoff, in lexicographic order."""
    r = np.arange(-cutoff, cutoff + 1)
    k = np.stack(np.meshgrid(r, r, r, r, indexing="ij"), axis=-1).reshape(-1, DIM)
    return k[np.sum(k ** 2, axis=1) <= cutoff ** 2]


def random_bandlimited(grid: Grid4, group: str, degree: int, cutoff: int,
                       amplitude: float, seed: int) -> Field:
    """Smooth random field built from Fourier modes with ``|k| <= cutoff``.

    The coefficients depend only on ``(seed, cutoff, group, degree)``, so the
    same continuum function is sampled on every grid with ``n >= 2 * cutoff``.
    They come from a Philox counter-based stream, one draw per (mode,
    component) in a fixed order.
    """
    if not 0 <= cutoff <= grid.n // 2:
        raise ValueError(f"cutoff must lie in [0, n/2] = [0, {grid.n // 2}], got {cutoff}")
    shape = field_shape(grid, group, degree)
    comps = shape[DIM:]
    if amplitude == 0:
        return Field(grid, group, degree, np.zeros(shape))
    modes = fourier_modes(cutoff)
    rng = np.random.Generator(np.random.Philox(key=seed))
    coef = rng.standard_normal((len(modes),) + comps + (2,))
    coef = (coef[..., 0] + 1j * coef[..., 1]) / np.sqrt(2.0 * len(modes))
    spec = np.zeros(grid.shape + comps, dtype=complex)
    idx = tuple(np.mod(modes, grid.n).T)
    np.add.at(spec, idx, coef)
    data = np.fft.ifftn(spec, axes=range(DIM)).real * grid.n_sites
    return Field(grid, group, degree, amplitude * data)


def thooft_eta() -> np.ndarray:
    """'t Hooft symbols ``eta[k, mu, nu]`` (self-dual in ``mu, nu``)."""
    eta = np.zeros((3, DIM, DIM))
    for a in range(3):
        for b in range(3):
            for c in range(3):
                eta[a, b, c] = _levi_civita3(a, b, c)
        eta[a, a, 3] = 1.0
        eta[a, 3, a] = -1.0
    return eta


def _levi_civita3(i, j, k) -> float:
    return float((i - j) * (j - k) * (k - i) / 2)


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def bump_connection(grid: Grid4, center, scale: float, amplitude: float = 2.0,
                    support: float = 2.0) -> Field:
    """Concentrated su(2) 1-form with the regular-gauge instanton profile.

    ``a_mu(x) = amplitude * eta[k, mu, nu] y_nu / (r^2 + scale^2) * T_k * cutoff(r / scale)``
    with ``y`` the periodic displacement from ``center``.  The smooth radial
    cutoff is 1 for ``r <= scale`` and vanishes for ``r >= support * scale``,
    so the family is self-similar: changing ``scale`` only rescales the
    continuum field, and the curvature L^2 norm is scale independent.
    ``amplitude = 2`` is the self-dual instanton normalization.
    """
    if not grid.h <= scale <= grid.L / 4:
        raise ValueError(f"bump scale must lie in [h, L/4] = [{grid.h}, {grid.L / 4}], got {scale}")
    if not 1.0 < support <= 2.0:
        raise ValueError(f"support factor must lie in (1, 2], got {support}")
    y = grid.coordinates() - np.asarray(center, float)
    y = y - grid.L * np.round(y / grid.L)
    r2 = np.sum(y ** 2, axis=-1)
    cut = 1.0 - smooth_step((np.sqrt(r2) / scale - 1.0) / (support - 1.0))
    prof = amplitude * cut / (r2 + scale ** 2)
    data = np.einsum("kmn,...n->...mk", thooft_eta(), y) * prof[..., None, None]
    return Field(grid, "su2", 1, data)


# ---------------------------------------------------------------- snapshots

def write_snapshot(path, obj) -> tuple[Path, Path]:
    """Write a field or gauge transform as raw little-endian float64 plus a JSON header."""
    path = Path(path)
    if isinstance(obj, Field):
        arr, degree, count = obj.data, obj.degree, obj.component_count
    elif isinstance(obj, GaugeTransform):
        arr = obj.as_real()
        degree, count = "gauge", arr.shape[-1] if arr.ndim > DIM else 1
    else:
        raise TypeError(f"cannot snapshot {type(obj).__name__}")
    header = {"group": obj.group, "degree": degree, "n": obj.grid.n, "L": obj.grid.L,
              "component_count": int(count)}
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    hpath = path.with_name(path.name + ".json")
    hpath.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    return path, hpath


def read_snapshot(path):
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    grid = Grid4(header["n"], header["L"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f8").astype(float)
    group = header["group"]
    if header["degree"] == "gauge":
        if group == "u1":
            pair = raw.reshape(grid.shape + (2,))
            return GaugeTransform(grid, group, pair[..., 0] + 1j * pair[..., 1])
        return GaugeTransform(grid, group, raw.reshape(grid.shape + (4,)))
    degree = int(header["degree"])
    data = raw.reshape(field_shape(grid, group, degree))
    if data.size // grid.n_sites != header["component_count"]:
        raise ValueError("snapshot component_count does not match header")
    return Field(grid, group, degree, data)
