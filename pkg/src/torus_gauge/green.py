"""Linear solves and low spectrum of the covariant Laplacians.

Everything here is matrix free.  Linear systems use conjugate gradients with
plain ``np.sum`` reductions, so results are reproducible bit for bit.  The
low eigenvalues come from ARPACK Lanczos (``scipy.sparse.linalg.eigsh``)
with a seeded start vector; the numerical kernel is split off by a
tolerance and deflated out of every later solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from threadpoolctl import threadpool_limits

from .fields import Field
from .manifold import DIM, PAIRS, SELFDUAL_BASIS, Grid4, selfdual_coords, selfdual_from_coords
from .operators import (Connection, SectionLaplacian, d1_adjoint_array, d1_array, grad_adjoint_array,
                        grad_array)


class SolverError(RuntimeError):
    """Raised when an iterative solve or eigen-iteration fails to converge."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


def _dot(a, b) -> float:
    return float(np.sum(a * b))


def _orthogonalize(x: np.ndarray, basis) -> np.ndarray:
    for b in basis:
        x = x - _dot(b, x) * b
    return x


def check_symmetric(op, shape, seed: int = 0, tol: float = 1e-10, trials: int = 2):
    """Probabilistic symmetry test ``<Ax, y> = <x, Ay>`` on seeded random vectors."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    for _ in range(trials):
        x = rng.standard_normal(shape)
        y = rng.standard_normal(shape)
        ax, ay = op(x), op(y)
        lhs, rhs = _dot(ax, y), _dot(x, ay)
        scale = np.sqrt(_dot(ax, ax) * _dot(y, y)) + 1e-300
        if abs(lhs - rhs) > tol * scale:
            raise SolverError(f"operator is not symmetric: <Ax,y>={lhs:.17g}, <x,Ay>={rhs:.17g}")


def cg_solve(op, rhs, tol: float = 1e-10, max_iter: int = 5000, kernel=(), x0=None,
             check_symmetry: bool = True, diagonal=None):
    """Conjugate gradients for a symmetric positive semidefinite ``op``.

    ``rhs`` and the result may be Fields or plain arrays; ``op`` must act on
    the same kind.  ``kernel`` is an orthonormal list (in the plain
    ``sum(a*b)`` pairing) that is projected out of the right-hand side and
    iterates.  Stops once ``|op(x) - rhs| <= tol |rhs|``.
    """
    is_field = isinstance(rhs, Field)
    wrap = (lambda d: rhs.like(d)) if is_field else (lambda d: d)
    raw = (lambda f: f.data) if is_field else (lambda f: f)
    A = lambda x: raw(op(wrap(x)))
    basis = [raw(k) for k in kernel]

    b = _orthogonalize(np.array(raw(rhs), dtype=float), basis)
    if check_symmetry:
        check_symmetric(A, b.shape)
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0:
        return wrap(np.zeros_like(b))
    x = np.zeros_like(b) if x0 is None else _orthogonalize(np.array(raw(x0), dtype=float), basis)
    r = b - A(x) if x0 is not None else b.copy()
    minv = None if diagonal is None else 1.0 / raw(diagonal)
    z = r if minv is None else minv * r
    p = z.copy()
    rz = _dot(r, z)
    history = [np.sqrt(_dot(r, r)) / bnorm]
    for _ in range(max_iter):
        if history[-1] <= tol:
            return wrap(x)
        ap = A(p)
        pap = _dot(p, ap)
        if pap <= 0:
            raise SolverError(f"CG breakdown: <p, Ap> = {pap:.3e}", history)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if basis:
            r = _orthogonalize(r, basis)
        history.append(np.sqrt(_dot(r, r)) / bnorm)
        z = r if minv is None else minv * r
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if history[-1] <= tol:
        return wrap(x)
    raise SolverError(f"CG did not reach tol={tol:.1e} in {max_iter} iterations "
                      f"(relative residual {history[-1]:.3e})", history)


# ------------------------------------------------------------------ operators as array maps

def laplacian0_map(A: Connection):
    Ad, g, h = A.a.data, A.group, A.grid.h
    return lambda s: grad_adjoint_array(Ad, grad_array(Ad, s, g, h), g, h)


def section_shape(A: Connection) -> tuple:
    return A.grid.shape + (A.a.data.shape[-1],)


def dplus_laplacian_coords_map(A: Connection):
    """``d_A^+ (d_A^+)^*`` written in orthonormal self-dual coordinates (3 slots)."""
    Ad, g, h = A.a.data, A.group, A.grid.h

    def apply(c):
        v = selfdual_from_coords(c)
        w = d1_array(Ad, d1_adjoint_array(Ad, v, g, h), g, h)
        return selfdual_coords(w)
    return apply


# ------------------------------------------------------------------ eigen-solves

def kernel_tolerance(grid: Grid4, tol: float | None = None) -> float:
    """Default threshold: ``1e-8`` times the scale ``(2 pi / L)^2`` of the first nonzero mode."""
    return tol if tol is not None else 1e-8 * (2 * np.pi / grid.L) ** 2


def _start_vector(shape, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.standard_normal(int(np.prod(shape)))


@dataclass
class LowSpectrum:
    kernel: list
    kernel_values: list
    first_positive: float
    first_vector: np.ndarray
    residual: float
    tolerance: float


def low_spectrum(apply, shape, tol: float, max_kernel: int, seed: int = 0,
                 arpack_tol: float = 1e-10, probe: bool = True) -> LowSpectrum:
    """Numerical kernel (eigenvalues below ``tol``) and the least eigenvalue above it.

    The least eigenpair is computed first by implicitly restarted Lanczos.
    Only when it lies below ``tol`` is a block of ``max_kernel + 1`` lowest
    eigenpairs computed; asking for the whole block at once is what makes
    exactly degenerate kernels (constant sections) come out with their full
    multiplicity.  Skipping the block when there is no kernel matters for
    concentrated connections, whose second eigenvalue sits in a dense
    cluster that Lanczos resolves slowly.  ``probe=False`` goes straight to
    the block, which is faster when a kernel is expected.
    """
    size = int(np.prod(shape))
    op = LinearOperator((size, size), matvec=lambda x: apply(x.reshape(shape)).ravel(), dtype=float)
    v0 = _start_vector(shape, seed)
    # ARPACK's relative stopping test never accepts an exactly zero Ritz value,
    # so the single-pair solve runs on the shifted operator
    shift = 1.0
    shifted = LinearOperator((size, size), dtype=float,
                             matvec=lambda x: apply(x.reshape(shape)).ravel() + shift * x)
    with threadpool_limits(1):
        try:
            if probe:
                vals, vecs = eigsh(shifted, k=1, which="SA", v0=v0, tol=arpack_tol, maxiter=50 * size)
                vals = vals - shift
            if not probe or vals[0] < tol:
                vals, vecs = eigsh(op, k=max_kernel + 1, which="SA", v0=v0, tol=arpack_tol,
                                   maxiter=50 * size)
        except ArpackNoConvergence as exc:
            raise SolverError(f"Lanczos iteration did not converge: {exc}") from exc
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    above = np.nonzero(vals >= tol)[0]
    if above.size == 0:
        raise SolverError(f"numerical kernel exceeds the expected dimension {max_kernel}")
    j = int(above[0])
    kernel = []
    for i in range(j):
        v = _orthogonalize(vecs[:, i], kernel)
        kernel.append(v / np.sqrt(_dot(v, v)))
    kernel = [v.reshape(shape) for v in kernel]
    vec = vecs[:, j].reshape(shape)
    av = apply(vec)
    lam = _dot(vec, av) / _dot(vec, vec)
    res = np.sqrt(_dot(av - lam * vec, av - lam * vec) / _dot(vec, vec)) / abs(lam)
    return LowSpectrum(kernel, [float(v) for v in vals[:j]], float(lam), vec, float(res), tol)


def _spectrum0(A: Connection, tol, seed=0) -> LowSpectrum:
    """Low spectrum of the section Laplacian; vectors are kept in the solver layout."""
    key = ("spec0", tol, seed)
    cache = A.__dict__.setdefault("_green_cache", {})
    if key not in cache:
        lap = section_laplacian(A)
        cache[key] = low_spectrum(lap, lap.internal_shape, kernel_tolerance(A.grid, tol),
                                  max_kernel=lap.ncomp, seed=seed)
    return cache[key]


def section_laplacian(A: Connection) -> SectionLaplacian:
    cache = A.__dict__.setdefault("_green_cache", {})
    if "lap" not in cache:
        cache["lap"] = SectionLaplacian(A)
    return cache["lap"]


def kernel_basis(A: Connection, tol: float | None = None) -> list:
    """Orthonormal (in the ``h^4``-weighted pairing) basis of the numerical kernel of the Laplacian."""
    spec = _spectrum0(A, tol)
    w = A.grid.cell_volume ** -0.5
    return [Field(A.grid, A.group, 0, w * SectionLaplacian.from_internal(k)) for k in spec.kernel]


def nu0(A: Connection, tol: float | None = None) -> float:
    """Least eigenvalue of ``nabla_A^* nabla_A`` above the kernel tolerance."""
    return _spectrum0(A, tol).first_positive


def flat_dplus_symbols(grid: Grid4) -> np.ndarray:
    """3x3 Fourier symbols of ``d^+ (d^+)^*`` for the product connection, one per wave vector.

    Indexed like ``np.fft.fftn`` output, flattened in C order.  Forms are
    collocated at sites, so the forward and backward differences in
    ``d^+ d^*`` do not combine into a Laplacian; the symbol has extra zero and
    near-zero modes away from ``k = 0``.
    """
    n, h = grid.n, grid.h
    k = np.stack(np.meshgrid(*(np.arange(n),) * DIM, indexing="ij"), axis=-1).reshape(-1, DIM)
    delta = (np.exp(2j * np.pi * k / n) - 1.0) / h
    D = np.zeros((len(k), 6, DIM), dtype=complex)
    for p, (mu, nu) in enumerate(PAIRS):
        D[:, p, nu] += delta[:, mu]
        D[:, p, mu] -= delta[:, nu]
    S = SELFDUAL_BASIS @ D
    return S @ np.conj(np.swapaxes(S, 1, 2))


def flat_dplus_spectrum(grid: Grid4) -> np.ndarray:
    """All eigenvalues of the product-connection ``d^+ (d^+)^*``, sorted."""
    return np.sort(np.linalg.eigvalsh(flat_dplus_symbols(grid)).ravel())


def flat_dplus_project(grid: Grid4, coords: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Remove the kernel of the product-connection ``d^+ (d^+)^*`` from self-dual coordinates.

    ``coords`` has shape ``grid.shape + (3, c)``.
    """
    ktol = kernel_tolerance(grid, tol)
    w, V = np.linalg.eigh(flat_dplus_symbols(grid))
    spec = np.fft.fftn(coords, axes=range(DIM)).reshape((-1, 3, coords.shape[-1]))
    Vk = V * (w < ktol)[:, None, :]
    spec = spec - Vk @ (np.conj(np.swapaxes(Vk, 1, 2)) @ spec)
    return np.fft.ifftn(spec.reshape(coords.shape), axes=range(DIM)).real


def nu2(A: Connection, tol: float | None = None) -> float:
    """Least eigenvalue of ``d_A^+ (d_A^+)^*`` on self-dual 2-forms above the kernel tolerance.

    For ``u1`` the operator does not see ``A`` and the Fourier symbol is
    exact.  For ``su2`` a Lanczos block as large as the flat kernel is used,
    which is slow beyond ``n = 4``.
    """
    cache = A.__dict__.setdefault("_green_cache", {})
    key = ("spec2", tol)
    if key not in cache:
        ktol = kernel_tolerance(A.grid, tol)
        flat = flat_dplus_spectrum(A.grid)
        if A.group == "u1":
            cache[key] = float(flat[flat >= ktol][0])
        else:
            kdim = int(np.sum(flat < ktol))
            c = A.a.data.shape[-1]
            cache[key] = low_spectrum(dplus_laplacian_coords_map(A), A.grid.shape + (3, c), ktol,
                                      max_kernel=kdim * c, probe=False).first_positive
    return cache[key]


def green_apply(A: Connection, f: Field, tol: float = 1e-10, kernel_tol: float | None = None,
                max_iter: int = 20000, x0: Field | None = None) -> Field:
    """``G_A f``: solve ``nabla_A^* nabla_A w = f`` with ``f`` and ``w`` orthogonal to the kernel."""
    if f.grid != A.grid or f.group != A.group or f.degree != 0:
        raise ValueError("green_apply needs a section on the connection's grid/group")
    lap = section_laplacian(A)
    kern = _spectrum0(A, kernel_tol).kernel
    rhs = _orthogonalize(lap.to_internal(f.data), kern)
    guess = None if x0 is None else lap.to_internal(x0.data)
    w = cg_solve(lap, rhs, tol=tol, max_iter=max_iter, kernel=kern, x0=guess, check_symmetry=False)
    return f.like(lap.from_internal(_orthogonalize(w, kern)))


def project_off_kernel(A: Connection, f: Field, kernel_tol: float | None = None) -> Field:
    lap = section_laplacian(A)
    kern = _spectrum0(A, kernel_tol).kernel
    return f.like(lap.from_internal(_orthogonalize(lap.to_internal(f.data), kern)))


# ------------------------------------------------------------------ scalar kernel

def laplacian_symbol(grid: Grid4) -> np.ndarray:
    """Discrete symbol ``(4/h^2) sum_mu sin^2(pi k_mu / n)`` of the scalar Laplacian."""
    s = (4.0 / grid.h ** 2) * np.sin(np.pi * np.arange(grid.n) / grid.n) ** 2
    return (s[:, None, None, None] + s[None, :, None, None]
            + s[None, None, :, None] + s[None, None, None, :])


def scalar_green_kernel(grid: Grid4) -> np.ndarray:
    """Green's function of ``d^*d + 1`` indexed by displacement, by Fourier synthesis."""
    return np.fft.ifftn(1.0 / (laplacian_symbol(grid) + 1.0)).real / grid.cell_volume


def green_asymptote_deviation(grid: Grid4, r_min: float | None = None,
                              r_max: float | None = None) -> dict:
    """Mean of ``|G(r) 4 pi^2 r^2 - 1|`` over sites with ``r_min <= r <= r_max``."""
    r_min = 4 * grid.h if r_min is None else r_min
    r_max = grid.L / 8 if r_max is None else r_max
    G = scalar_green_kernel(grid)
    r = grid.displacement_lengths()
    mask = (r >= r_min - 1e-12 * grid.L) & (r <= r_max + 1e-12 * grid.L)
    dev = np.abs(G[mask] * 4 * np.pi ** 2 * r[mask] ** 2 - 1.0)
    return {"mean_deviation": float(dev.mean()) if dev.size else float("nan"),
            "max_deviation": float(dev.max()) if dev.size else float("nan"),
            "sites": int(mask.sum()), "r_min": r_min, "r_max": r_max}


# ------------------------------------------------------------------ K0 and reports

def k0_from_parts(nu0_value: float, curvature_l2: float) -> float:
    return (1.0 + 1.0 / nu0_value) * (1.0 + curvature_l2)


def K0(A: Connection, tol: float | None = None) -> float:
    F = A.curvature
    return k0_from_parts(nu0(A, tol), float(np.sqrt(F.inner(F))))


@dataclass
class SpectrumReport:
    kernel_dimension: int
    kernel_tolerance: float
    nu0: float
    curvature_l2: float
    K0: float
    nu2: float | None = None
    eigen_residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def recomputed_K0(self) -> float:
        return k0_from_parts(self.nu0, self.curvature_l2)

    def as_dict(self) -> dict:
        return {"kernel_dimension": self.kernel_dimension, "kernel_tolerance": self.kernel_tolerance,
                "nu0": self.nu0, "nu2": self.nu2, "curvature_l2": self.curvature_l2, "K0": self.K0,
                "eigen_residual": self.eigen_residual}


def spectrum_report(A: Connection, tol: float | None = None, with_nu2: bool = False) -> SpectrumReport:
    spec = _spectrum0(A, tol)
    F = A.curvature
    fl2 = float(np.sqrt(F.inner(F)))
    return SpectrumReport(len(spec.kernel), spec.tolerance, spec.first_positive, fl2,
                          k0_from_parts(spec.first_positive, fl2),
                          nu2(A, tol) if with_nu2 else None, spec.residual)
