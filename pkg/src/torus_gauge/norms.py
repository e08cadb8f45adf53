"""Lebesgue, Sobolev and critical-exponent norms of lattice fields.

The critical-exponent norms are distance-weighted sups

    |f|_sharp   = max_x h^4 sum_y  K2[x - y] |f(y)|
    |f|_2sharp  = max_x (h^4 sum_y K1[x - y]^2 |f(y)|^2)^(1/2)

with ``K_p[d] = max(dist(0, d), h/2)^(-p)``.  Both are periodic
convolutions, evaluated by FFT; a direct summation path is kept as an
oracle for small grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fields import Field
from .manifold import DIM, DistanceKernel, Grid4, build_distance_kernel
from .operators import (Connection, cov_grad_adjoint, grad_adjoint_array, grad_array)

DIRECT_MAX_N = 8


@lru_cache(maxsize=16)
def cached_kernel(grid: Grid4, exponent: int) -> DistanceKernel:
    return build_distance_kernel(grid, exponent)


def pointwise(f) -> np.ndarray:
    """``|f(x)|`` for a Field or a raw array whose first four axes are sites."""
    data = f.data if isinstance(f, Field) else np.asarray(f, dtype=float)
    if data.ndim == DIM:
        return np.abs(data)
    return np.sqrt(np.sum(data.reshape(data.shape[:DIM] + (-1,)) ** 2, axis=-1))


def _grid_of(f, grid):
    if isinstance(f, Field):
        return f.grid
    if grid is None:
        raise ValueError("raw arrays need an explicit grid")
    return grid


def lp_norm(f, p=2.0, grid: Grid4 | None = None) -> float:
    """``(h^4 sum_x |f(x)|^p)^(1/p)``; ``p = inf`` gives the max over sites."""
    if not p >= 1:
        raise ValueError(f"Lp norms need p >= 1, got {p}")
    g = _grid_of(f, grid)
    m = pointwise(f)
    if np.isinf(p):
        return float(m.max())
    if p == 2:
        return float(np.sqrt(g.cell_volume * np.sum(m * m)))
    return float((g.cell_volume * np.sum(m ** p)) ** (1.0 / p))


def convolve_periodic(kernel: DistanceKernel, values: np.ndarray, power: int = 1) -> np.ndarray:
    """``h^4 sum_y kernel[x - y]^power values(y)`` at every site, via FFT."""
    spec = kernel.spectrum if power == 1 else np.fft.fftn(kernel.values ** power)
    out = np.fft.ifftn(spec * np.fft.fftn(values)).real
    return kernel.grid.cell_volume * out


def convolve_direct(kernel: DistanceKernel, values: np.ndarray, power: int = 1) -> np.ndarray:
    """Same as :func:`convolve_periodic` by explicit summation over displacements."""
    n = kernel.grid.n
    if n > DIRECT_MAX_N:
        raise ValueError(f"direct summation is only offered for n <= {DIRECT_MAX_N}")
    kv = kernel.values ** power
    out = np.zeros_like(values, dtype=float)
    for d in np.ndindex(*kernel.grid.shape):
        # out(x) += K[d] f(x - d)
        out += kv[d] * np.roll(values, d, axis=tuple(range(DIM)))
    return kernel.grid.cell_volume * out


def _kernel_for(f, kernel, exponent, grid):
    g = _grid_of(f, grid)
    if kernel is None:
        return cached_kernel(g, exponent)
    kernel.check_grid(g)
    if kernel.exponent != exponent:
        raise ValueError(f"expected a distance kernel with exponent {exponent}, got {kernel.exponent}")
    return kernel


def lsharp_profile(f, kernel: DistanceKernel | None = None, method: str = "fft",
                   grid: Grid4 | None = None) -> np.ndarray:
    """The site function whose max is the L-sharp norm."""
    kernel = _kernel_for(f, kernel, 2, grid)
    conv = convolve_periodic if method == "fft" else convolve_direct
    return conv(kernel, pointwise(f))


def lsharp_norm(f, kernel: DistanceKernel | None = None, method: str = "fft",
                grid: Grid4 | None = None) -> float:
    return float(lsharp_profile(f, kernel, method, grid).max())


def l2sharp_norm(f, kernel: DistanceKernel | None = None, method: str = "fft",
                 grid: Grid4 | None = None) -> float:
    kernel = _kernel_for(f, kernel, 1, grid)
    conv = convolve_periodic if method == "fft" else convolve_direct
    prof = conv(kernel, pointwise(f) ** 2, power=2)
    return float(np.sqrt(max(prof.max(), 0.0)))


@dataclass
class NormReport:
    values: dict
    grid: dict
    field: dict
    kernel_floor: float
    parts: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        return {"values": dict(self.values), "grid": dict(self.grid), "field": dict(self.field),
                "kernel_floor": self.kernel_floor}


def basic_parts(f, grid: Grid4 | None = None) -> dict:
    return {
        "L2": lp_norm(f, 2, grid),
        "L4": lp_norm(f, 4, grid),
        "C0": lp_norm(f, np.inf, grid),
        "Lsharp": lsharp_norm(f, grid=grid),
        "L2sharp": l2sharp_norm(f, grid=grid),
    }


def composite_norms(f: Field, A: Connection) -> NormReport:
    """Every norm family for a section (degree 0), 1-form (degree 1) or 2-form (degree 2).

    2-forms are treated as sections of the form bundle, so their first-order
    sharp term uses the full covariant gradient like degree 0.
    """
    if f.degree not in (0, 1, 2):
        raise ValueError(f"composite norms are defined for degrees 0, 1 and 2, got {f.degree}")
    if f.grid != A.grid or f.group != A.group:
        raise ValueError("field and connection live on different grids/groups")
    g, grp, h = f.grid, f.group, f.grid.h
    Ad = A.a.data
    grad = grad_array(Ad, f.data, grp, h)
    hess = grad_array(Ad, grad, grp, h)
    lap = grad_adjoint_array(Ad, grad, grp, h)

    parts = basic_parts(f)
    parts["grad_L2"] = lp_norm(grad, 2, g)
    parts["hess_L2"] = lp_norm(hess, 2, g)
    parts["lap_Lsharp"] = lsharp_norm(lap, grid=g)
    if f.degree == 1:
        parts["first_Lsharp"] = lsharp_norm(cov_grad_adjoint(A, f))
    else:
        parts["first_Lsharp"] = lsharp_norm(grad, grid=g)

    v = {}
    v["L2"], v["L4"], v["C0"] = parts["L2"], parts["L4"], parts["C0"]
    v["Lsharp"], v["L2sharp"] = parts["Lsharp"], parts["L2sharp"]
    v["Lsharp2"] = parts["Lsharp"] + parts["L2"]
    v["L2sharp4"] = parts["L2sharp"] + parts["L4"]
    v["L2_1A"] = float(np.hypot(parts["L2"], parts["grad_L2"]))
    v["L2_2A"] = parts["hess_L2"] + parts["grad_L2"] + parts["L2"]
    v["Lsharp_1A"] = parts["first_Lsharp"] + parts["L2sharp"] + parts["Lsharp"]
    v["Lsharp_2A"] = parts["lap_Lsharp"] + parts["Lsharp"]
    # intersections use the additive form of the 1-derivative Sobolev norm
    v["Lsharp2_1A"] = v["Lsharp_1A"] + parts["grad_L2"] + parts["L2"]
    v["Lsharp2_2A"] = v["Lsharp_2A"] + v["L2_2A"]
    v["C0_L2_2A"] = parts["C0"] + v["L2_2A"]
    return NormReport(v, g.describe(), {"group": grp, "degree": f.degree}, g.h / 2, parts)


def slice_distance_norms(A: Connection, A0: Connection) -> dict:
    """Identity-gauge values of the slice distance integrands (upper bounds for the quotient distances)."""
    if A.grid != A0.grid or A.group != A0.group:
        raise ValueError("connections live on different grids/groups")
    diff = A.a - A0.a
    dstar = cov_grad_adjoint(A0, diff)
    ds = lsharp_norm(dstar) + lp_norm(dstar, 2)
    grad = grad_array(A0.a.data, diff.data, A.group, A.grid.h)
    return {
        "L4": lp_norm(diff, 4),
        "L2sharp4": l2sharp_norm(diff) + lp_norm(diff, 4),
        "L2_1A0": float(np.hypot(lp_norm(diff, 2), lp_norm(grad, 2, A.grid))),
        "dstar_Lsharp2": ds,
        "scaled_distance": l2sharp_norm(diff) + lp_norm(diff, 4) + ds,
        "distance": float(np.hypot(lp_norm(diff, 2), lp_norm(grad, 2, A.grid))) + ds,
    }
