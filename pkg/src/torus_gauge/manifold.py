"""Geometry of the discretized flat 4-torus.

Sites are indexed by integer tuples ``(x1, x2, x3, x4)`` with ``0 <= x_mu < n``;
the physical position of a site is ``h * x``.  Fields are stored as numpy
arrays whose first four axes are the site axes, so the flattened site index
is ``((x1*n + x2)*n + x3)*n + x4``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

DIM = 4

# ordered pairs mu < nu, in the storage order of 2-form slots
PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
PAIR_INDEX = {p: i for i, p in enumerate(PAIRS)}

# flat-metric Hodge star on 2-forms: *e_pairs[i] = STAR_SIGN[i] * e_pairs[STAR_PERM[i]]
#   *e12 = e34, *e13 = -e24, *e14 = e23, *e23 = e14, *e24 = -e13, *e34 = e12
STAR_PERM = np.array([5, 4, 3, 2, 1, 0])
STAR_SIGN = np.array([1.0, -1.0, 1.0, 1.0, -1.0, 1.0])

# orthonormal basis of self-dual 2-forms (rows are 6-component coefficient vectors)
SELFDUAL_BASIS = np.array([
    [1.0, 0.0, 0.0, 0.0, 0.0, 1.0],    # e12 + e34
    [0.0, 1.0, 0.0, 0.0, -1.0, 0.0],   # e13 - e24
    [0.0, 0.0, 1.0, 1.0, 0.0, 0.0],    # e14 + e23
]) / np.sqrt(2.0)


@dataclass(frozen=True)
class Grid4:
    """Uniform periodic lattice with ``n`` sites per axis on a torus of side ``L``."""

    n: int
    L: float = 1.0
    metric_curvature: dict = field(
        default_factory=lambda: {"Ric": 0.0, "Wplus": 0.0, "R": 0.0}, compare=False, repr=False
    )

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"Grid4 needs an integer n >= 4, got n={self.n}")
        if not self.L > 0:
            raise ValueError(f"side length must be positive, got L={self.L}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))
        if any(v != 0 for v in self.metric_curvature.values()):
            raise ValueError("the flat torus has identically zero metric curvature")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n,) * DIM

    @property
    def n_sites(self) -> int:
        return self.n ** DIM

    @property
    def volume(self) -> float:
        return self.L ** DIM

    @property
    def cell_volume(self) -> float:
        return self.h ** DIM

    @property
    def spacing_is_exact(self) -> bool:
        """True when ``h * n == L`` holds exactly in floating point."""
        return Fraction(self.h) * self.n == Fraction(self.L)

    def coordinates(self) -> np.ndarray:
        """Site positions, shape ``(n, n, n, n, 4)``."""
        ax = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(ax, ax, ax, ax, indexing="ij"), axis=-1)

    def displacement_lengths(self) -> np.ndarray:
        """Periodic length of every lattice displacement, shape ``(n, n, n, n)``."""
        k = np.arange(self.n)
        m = np.minimum(k, self.n - k) * self.h
        m2 = m ** 2
        return np.sqrt(m2[:, None, None, None] + m2[None, :, None, None]
                       + m2[None, None, :, None] + m2[None, None, None, :])

    def rescaled(self, L: float) -> "Grid4":
        return Grid4(self.n, L)

    def describe(self) -> dict:
        return {"n": self.n, "L": self.L, "h": self.h}


def torus_distance(x, y, grid: Grid4) -> float:
    """Geodesic distance between two points (physical coordinates) on the torus."""
    d = np.abs(np.mod(np.asarray(x, float), grid.L) - np.mod(np.asarray(y, float), grid.L))
    d = np.minimum(d, grid.L - d)
    return float(np.sqrt(np.sum(d ** 2)))


def site_distance(i, j, grid: Grid4) -> float:
    """Distance between integer lattice sites."""
    return torus_distance(np.asarray(i) * grid.h, np.asarray(j) * grid.h, grid)


@dataclass(frozen=True)
class DistanceKernel:
    """Floored inverse-power distance weights indexed by lattice displacement.

    ``values[d] = max(dist(0, d), h/2) ** (-exponent)``.
    """

    grid: Grid4
    exponent: int
    values: np.ndarray

    @property
    def floor(self) -> float:
        return self.grid.h / 2

    def check_grid(self, grid: Grid4):
        if grid != self.grid:
            raise ValueError(f"kernel built for {self.grid} used on {grid}")

    @property
    def spectrum(self) -> np.ndarray:
        # cached FFT of the kernel; kernels are immutable so this is safe to memoize
        cached = self.__dict__.get("_spectrum")
        if cached is None:
            cached = np.fft.fftn(self.values)
            object.__setattr__(self, "_spectrum", cached)
        return cached


def build_distance_kernel(grid: Grid4, exponent: int) -> DistanceKernel:
    if exponent not in (1, 2):
        raise ValueError(f"kernel exponent must be 1 or 2, got {exponent}")
    if grid.n < 4:
        raise ValueError("distance kernels need n >= 4")
    r = np.maximum(grid.displacement_lengths(), grid.h / 2)
    return DistanceKernel(grid, exponent, r ** (-float(exponent)))


def hodge_star_2(w: np.ndarray) -> np.ndarray:
    """Flat Hodge star on 2-form data with the 6 pair slots on axis -2."""
    return STAR_SIGN[:, None] * w[..., STAR_PERM, :]


def selfdual_project(w: np.ndarray) -> np.ndarray:
    return 0.5 * (w + hodge_star_2(w))


def antiselfdual_project(w: np.ndarray) -> np.ndarray:
    return 0.5 * (w - hodge_star_2(w))


def selfdual_coords(w: np.ndarray) -> np.ndarray:
    """Coefficients of the self-dual part of ``w`` in ``SELFDUAL_BASIS`` (axis -2 has length 3)."""
    return np.einsum("ip,...pc->...ic", SELFDUAL_BASIS, w)


def selfdual_from_coords(c: np.ndarray) -> np.ndarray:
    return np.einsum("ip,...ic->...pc", SELFDUAL_BASIS, c)
