"""Coulomb gauge fixing relative to a reference connection.

Given ``A0`` and ``A`` we look for a gauge transformation ``u`` with
``d_{A0}^*(u(A) - A0) = 0``.  The Newton iteration linearizes the gauge
action at the identity, ``u(B) ~ B - nabla_B zeta``, and inverts the
linearization with the Green operator of ``A0`` only:

    rho_k  = d_{A0}^*(u_k(A) - A0)
    zeta_k = G_{A0} rho_k
    u_{k+1} = exp(damping * zeta_k) u_k

Because the gauge action composes exactly, ``u_{k+1}(A)`` is recomputed
from ``u_{k+1}`` and ``A`` without drift.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fields import Field, GaugeTransform, algebra_matrix, bracket_array, exp_array
from .green import (SolverError, green_apply, laplacian_symbol, project_off_kernel,
                    spectrum_report)
from .manifold import DIM
from .norms import composite_norms, l2sharp_norm, lp_norm, lsharp_norm, slice_distance_norms
from .operators import (Connection, bwd, cov_grad, cov_grad_adjoint, fwd, gauge_apply,
                        grad_adjoint_array, grad_array)

log = logging.getLogger(__name__)


class GaugeFixError(SolverError):
    """Newton or continuation failure; ``history`` holds the residual sequence."""


@dataclass
class GaugeFixResult:
    u: GaugeTransform
    chi: Field
    B: Connection
    residual: float
    iterations: int
    norms: dict
    spectrum: object
    bound_ratios: dict
    history: list = field(default_factory=list)
    converged: bool = True
    in_regime: bool = True
    method: str = "newton"
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"method": self.method, "residual": self.residual, "iterations": self.iterations,
                "converged": self.converged, "in_regime": self.in_regime,
                "bound_ratios": dict(self.bound_ratios), "norms": dict(self.norms),
                "spectrum": self.spectrum.as_dict() if self.spectrum is not None else None,
                "history": list(self.history)}


def coulomb_residual(A0: Connection, B: Connection) -> Field:
    """``d_{A0}^*(B - A0)``."""
    if A0.grid != B.grid or A0.group != B.group:
        raise ValueError("connections live on different grids/groups")
    return cov_grad_adjoint(A0, B.a - A0.a)


def _l2(f: Field) -> float:
    return float(np.sqrt(max(f.inner(f), 0.0)))


def _finish(A0, A, u, iterations, history, method, spectrum=None, converged=True,
            in_regime=True, extra=None, kernel_tol=None) -> GaugeFixResult:
    B = gauge_apply(u, A)
    res = _l2(coulomb_residual(A0, B))
    spec = spectrum if spectrum is not None else spectrum_report(A0, kernel_tol)
    chi = project_off_kernel(A0, u.log(), kernel_tol) if spec.kernel_dimension else u.log()
    diff = B.a - A0.a
    norms = composite_norms(diff, A0).values
    dist = slice_distance_norms(A, A0)
    ratios = {}
    if dist["scaled_distance"] > 0:
        ratios["scaled"] = norms["L2sharp4"] / (spec.K0 * dist["scaled_distance"])
    if dist["distance"] > 0:
        ratios["sobolev"] = norms["L2_1A"] / (spec.K0 * dist["distance"])
    return GaugeFixResult(u, chi, B, res, iterations, norms, spec, ratios, list(history),
                          converged, in_regime, method, dict(extra or {}))


def regime_check(A0: Connection, A: Connection, K0: float, factor: float = 400.0) -> tuple[bool, float]:
    """Is ``|A - A0|_{L^{2#,4}} <= factor / K0``?  Returns the flag and the measured distance."""
    d = A.a - A0.a
    dist = l2sharp_norm(d) + lp_norm(d, 4)
    return dist <= factor / K0, dist


def abelian_gaugefix_oracle(A0: Connection, A: Connection) -> GaugeFixResult:
    """Closed-form Coulomb gauge for ``u1`` by a Fourier Poisson solve."""
    if A0.group != "u1" or A.group != "u1":
        raise ValueError("the Fourier oracle only handles the abelian group u1")
    rho = cov_grad_adjoint(A0, A.a - A0.a).data[..., 0]
    sym = laplacian_symbol(A0.grid)
    rhat = np.fft.fftn(rho)
    sym[(0,) * DIM] = 1.0
    chat = rhat / sym
    chat[(0,) * DIM] = 0.0
    chi = np.fft.ifftn(chat).real
    u = GaugeTransform(A0.grid, "u1", exp_array(chi[..., None], "u1"))
    res = _finish(A0, A, u, 1, [], "fourier")
    res.chi = Field(A0.grid, "u1", 0, chi[..., None])
    return res


def newton_gauge_fix(A0: Connection, A: Connection, tol: float = 1e-10, max_iter: int = 50,
                     damping: float = 1.0, u0: GaugeTransform | None = None,
                     regime_factor: float = 400.0, patience: int = 2, min_damping: float = 1.0 / 64,
                     forcing: float = 1e-4, kernel_tol: float | None = None,
                     spectrum=None, callback=None) -> GaugeFixResult:
    """Newton iteration for ``d_{A0}^*(u(A) - A0) = 0``.

    Converged once ``|rho|_{L^2} <= tol * |A - A0|_{L^2_{1,A0}}``.  Each
    Green solve is run to relative accuracy ``forcing`` times the current
    residual drop; the residual itself is always recomputed exactly.  On a
    residual increase lasting ``patience`` steps the damping is halved and the
    iteration restarts from the best iterate.  ``callback(it, u, r)`` sees
    every iterate, including the starting one.
    """
    if A0.grid != A.grid or A0.group != A.group:
        raise ValueError("connections live on different grids/groups")
    spec = spectrum if spectrum is not None else spectrum_report(A0, kernel_tol)
    in_regime, _ = regime_check(A0, A, spec.K0, regime_factor)
    if not in_regime:
        log.info("gauge fixing outside the smallness regime (factor %s)", regime_factor)
    scale = composite_norms(A.a - A0.a, A0).values["L2_1A"]
    target = tol * scale
    u = GaugeTransform.identity(A0.grid, A0.group) if u0 is None else u0
    if scale == 0 and u0 is None:
        # A already equals A0; the link action's round-off would otherwise be chased forever
        return _finish(A0, A, u, 0, [0.0], "newton", spec, True, in_regime,
                       {"damping": damping, "target": 0.0}, kernel_tol)
    B = gauge_apply(u, A)
    rho = coulomb_residual(A0, B)
    r = _l2(rho)
    history = [r]
    best = (r, u)
    worse = 0
    it = 0
    if callback is not None:
        callback(0, u, r)
    while r > target:
        if it >= max_iter:
            raise GaugeFixError(f"Newton gauge fixing did not converge in {max_iter} iterations "
                                f"(residual {r:.3e}, target {target:.3e})", history)
        cg_tol = min(1e-2, max(1e-12, forcing * r / history[0]))
        zeta = green_apply(A0, rho, tol=cg_tol, kernel_tol=kernel_tol)
        u = GaugeTransform.from_generator(zeta * damping) @ u
        B = gauge_apply(u, A)
        rho = coulomb_residual(A0, B)
        r = _l2(rho)
        history.append(r)
        it += 1
        if callback is not None:
            callback(it, u, r)
        if not np.isfinite(r):
            raise GaugeFixError("Newton gauge fixing produced a non-finite residual", history)
        if r < best[0]:
            best, worse = (r, u), 0
        else:
            worse += 1
            if worse >= patience:
                damping *= 0.5
                if damping < min_damping:
                    raise GaugeFixError(f"Newton gauge fixing diverged (residual {r:.3e}, "
                                        f"damping below {min_damping})", history)
                log.info("residual increased; damping reduced to %s", damping)
                r, u = best
                B = gauge_apply(u, A)
                rho = coulomb_residual(A0, B)
                worse = 0
    return _finish(A0, A, u, it, history, "newton", spec, True, in_regime,
                   {"damping": damping, "target": target}, kernel_tol)


def continuation_gauge_fix(A0: Connection, A: Connection, steps: int = 4, tol: float = 1e-10,
                           max_iter: int = 50, kernel_tol: float | None = None,
                           **kwargs) -> GaugeFixResult:
    """Gauge-fix ``A_t = A0 + t (A - A0)`` along ``t = 1/steps, ..., 1``, warm-starting each Newton solve."""
    if steps < 1:
        raise ValueError("continuation needs at least one step")
    spec = spectrum_report(A0, kernel_tol)
    u = None
    total = 0
    history = []
    res = None
    for i in range(1, steps + 1):
        t = i / steps
        At = A0 + (A.a - A0.a) * t if i < steps else A
        try:
            res = newton_gauge_fix(A0, At, tol=tol, max_iter=max_iter, u0=u, kernel_tol=kernel_tol,
                                   spectrum=spec, **kwargs)
        except GaugeFixError as exc:
            raise GaugeFixError(f"continuation failed at t={t:.6g}: {exc}", exc.history) from exc
        u = res.u
        total += res.iterations
        history.extend(res.history)
    res.method = "continuation"
    res.iterations = total
    res.history = history
    res.extra["steps"] = steps
    return res


def coulomb_representative(A0: Connection, b: Field, tol: float = 1e-12,
                           kernel_tol: float | None = None) -> Connection:
    """``A0 + b`` with ``b`` projected onto ``ker d_{A0}^*`` (the Coulomb slice through ``A0``)."""
    rho = cov_grad_adjoint(A0, b)
    s = green_apply(A0, rho, tol=tol, kernel_tol=kernel_tol)
    return Connection(A0.a + b - cov_grad(A0, s))


# ------------------------------------------------------------------ quotient distance upper bounds

def _distance_objective(A, A0, selector):
    d = slice_distance_norms(A, A0)
    return {"L4": d["L4"], "scaled": d["scaled_distance"], "sobolev": d["distance"]}[selector]


def gauge_distance_upper(A: Connection, A0: Connection, norm_selector: str = "L4",
                         iterations: int = 20, kernel_tol: float | None = None) -> dict:
    """Best value of a distance integrand over gauge transformations found by descent.

    Candidate directions are the Coulomb Newton step and the Green-smoothed
    gradient of ``|u(A) - A0|_{L^4}^4``; each is line-searched by halving and
    only improvements are accepted, so the returned sequence never increases.
    """
    if norm_selector not in ("L4", "scaled", "sobolev"):
        raise ValueError(f"unknown distance selector {norm_selector!r}")
    u = GaugeTransform.identity(A.grid, A.group)
    best = _distance_objective(A, A0, norm_selector)
    history = [best]
    if best == 0:
        return {"value": 0.0, "history": history, "u": u}
    for _ in range(iterations):
        B = gauge_apply(u, A)
        diff = B.a - A0.a
        dirs = []
        try:
            dirs.append(green_apply(A0, coulomb_residual(A0, B), tol=1e-6, kernel_tol=kernel_tol))
            w = diff.pointwise_norm() ** 2
            grad = cov_grad_adjoint(B, diff.like(w[..., None, None] * diff.data))
            dirs.append(green_apply(A0, grad, tol=1e-6, kernel_tol=kernel_tol))
        except SolverError:
            break
        improved = False
        for z in dirs:
            zn = np.sqrt(max(z.inner(z), 0.0))
            if zn == 0:
                continue
            step = 1.0
            for _ in range(10):
                cand = GaugeTransform.from_generator(z * step) @ u
                val = _distance_objective(gauge_apply(cand, A), A0, norm_selector)
                if val < best:
                    best, u, improved = val, cand, True
                    break
                step *= 0.5
        history.append(best)
        if not improved:
            break
    return {"value": best, "history": history, "u": u}


# ------------------------------------------------------------------ exponential map estimates

def _endo(u: GaugeTransform) -> np.ndarray:
    """Gauge transformation as an endomorphism field, coordinates orthonormal for ``2 Re tr(M N^*)``."""
    if u.group == "u1":
        return np.stack([u.data.real, u.data.imag], axis=-1)
    return 2.0 * u.data


def _endo_grad(A: Connection, e: np.ndarray, group: str) -> np.ndarray:
    """Covariant derivative of an endomorphism field; the connection acts by commutator."""
    h = A.grid.h
    out = np.empty(e.shape[:DIM] + (DIM,) + e.shape[DIM:])
    for mu in range(DIM):
        d = (fwd(e, mu) - e) / h
        if group == "su2":
            a = A.a.data[..., mu, :].reshape(A.grid.shape + (1,) * (e.ndim - DIM - 1) + (3,))
            d[..., 1:] += np.cross(a, e[..., 1:])
        out[(slice(None),) * DIM + (mu,)] = d
    return out


def _endo_grad_adjoint(A: Connection, t: np.ndarray, group: str) -> np.ndarray:
    h = A.grid.h
    out = np.zeros(t.shape[:DIM] + t.shape[DIM + 1:])
    for mu in range(DIM):
        tm = t[(slice(None),) * DIM + (mu,)]
        out -= (tm - bwd(tm, mu)) / h
        if group == "su2":
            a = A.a.data[..., mu, :].reshape(A.grid.shape + (1,) * (tm.ndim - DIM - 1) + (3,))
            out[..., 1:] -= np.cross(a, tm[..., 1:])
    return out


def _pt(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == DIM:
        return np.abs(x)
    return np.sqrt(np.sum(x.reshape(x.shape[:DIM] + (-1,)) ** 2, axis=-1))


def _fit(lhs, fixed, coeff):
    """Least ``c >= 0`` with ``lhs <= fixed + c * coeff`` everywhere (arrays or scalars)."""
    lhs, fixed, coeff = (np.asarray(v, dtype=float) for v in (lhs, fixed, coeff))
    excess = lhs - fixed
    need = excess > 1e-14 * (1.0 + np.abs(lhs))
    if not np.any(need):
        return 0.0
    if np.any(coeff[need] <= 0):
        return float("inf")
    return float(np.max(excess[need] / coeff[need]))


def exp_estimate_check(A: Connection, chi: Field) -> dict:
    """Evaluate the pointwise and integrated bounds for ``e^chi`` and fit their free constant."""
    g = A.group
    u = GaugeTransform.from_generator(chi)
    e = _endo(u)
    h = A.grid.h
    Ad = A.a.data
    dchi = grad_array(Ad, chi.data, g, h)
    d2chi = grad_array(Ad, dchi, g, h)
    lchi = grad_adjoint_array(Ad, dchi, g, h)
    de = _endo_grad(A, e, g)
    d2e = _endo_grad(A, de, g)
    le = _endo_grad_adjoint(A, de, g)

    c, dc, d2c, lc = _pt(chi.data), _pt(dchi), _pt(d2chi), _pt(lchi)
    out = {}
    lhs = _pt(de)
    out["pointwise_1"] = {"lhs": float(lhs.max()), "c": _fit(lhs, dc, c * dc)}
    lhs = _pt(d2e)
    out["pointwise_2"] = {"lhs": float(lhs.max()), "c": _fit(lhs, 0.0, (c + dc) * dc + (1 + c) * d2c)}
    lhs = _pt(le)
    out["pointwise_3"] = {"lhs": float(lhs.max()), "c": _fit(lhs, 0.0, (c + dc) * dc + (1 + c) * lc)}

    grid = A.grid
    c0 = float(c.max())
    n_d2 = lp_norm(dchi, 2, grid)
    n_ds = lsharp_norm(dchi, grid=grid)
    lhs = lp_norm(de, 2, grid)
    out["sobolev_1"] = {"lhs": lhs, "c": _fit(lhs, n_d2, c0 * n_d2)}
    lhs = lsharp_norm(de, grid=grid)
    out["sobolev_2"] = {"lhs": lhs, "c": _fit(lhs, n_ds, c0 * n_ds)}
    lhs = lp_norm(d2e, 2, grid)
    out["sobolev_3"] = {"lhs": lhs, "c": _fit(lhs, lp_norm(dchi, 4, grid) ** 2,
                                              c0 * n_d2 + (1 + c0) * lp_norm(d2chi, 2, grid))}
    lhs = lsharp_norm(le, grid=grid)
    out["sobolev_4"] = {"lhs": lhs, "c": _fit(lhs, l2sharp_norm(dchi, grid=grid) ** 2,
                                              c0 * n_ds + (1 + c0) * lsharp_norm(lchi, grid=grid))}
    return out


def gauge_sobolev_norm(A0: Connection, u: GaugeTransform) -> float:
    """``|u - id|`` in the ``L^{#,2}_{2,A0}`` norm of endomorphism fields."""
    g, grid = u.group, u.grid
    e = _endo(u) - _endo(GaugeTransform.identity(grid, g))
    de = _endo_grad(A0, e, g)
    d2e = _endo_grad(A0, de, g)
    le = _endo_grad_adjoint(A0, de, g)
    return (lsharp_norm(le, grid=grid) + lsharp_norm(e, grid=grid)
            + lp_norm(d2e, 2, grid) + lp_norm(de, 2, grid) + lp_norm(e, 2, grid))


def _as_matrices(f: Field) -> np.ndarray:
    """Lie algebra values as matrices: ``i a`` for u1, ``a_k T_k`` for su2."""
    if f.group == "u1":
        return 1j * f.data[..., None]
    return algebra_matrix(f.data)


def gauge_equation_defect(A0: Connection, A: Connection, u: GaugeTransform) -> dict:
    """Defects of the first- and second-order gauge equations for matrix-valued ``u``.

    With ``a = A - A0`` and ``b = u(A) - A0``::

        d_{A0} u        = u a - b u
        d*_{A0} d_{A0} u = -sum (nabla_mu u) a_mu + u d*a - (d*b) u + sum b_mu nabla_mu u

    Returns the L^2 norms of both defects and of their left-hand sides; on the
    lattice the defects are O(h) relative to the terms.
    """
    h = A0.grid.h
    U = u.matrices()
    a = _as_matrices(A.a - A0.a)
    b = _as_matrices(gauge_apply(u, A).a - A0.a)
    a0 = _as_matrices(A0.a)
    dU = np.empty(a.shape, dtype=complex)
    rhs = np.empty(a.shape, dtype=complex)
    for mu in range(DIM):
        A0m = a0[..., mu, :, :]
        dU[..., mu, :, :] = (fwd(U, mu) - U) / h + A0m @ U - U @ A0m
        rhs[..., mu, :, :] = U @ a[..., mu, :, :] - b[..., mu, :, :] @ U

    def dstar(t):
        # transpose of the forward covariant difference, adjoint action of A0
        out = np.zeros(t.shape[:DIM] + t.shape[DIM + 1:], dtype=complex)
        for mu in range(DIM):
            tm, A0m = t[..., mu, :, :], a0[..., mu, :, :]
            out -= (tm - bwd(tm, mu)) / h + A0m @ tm - tm @ A0m
        return out

    lhs2 = dstar(dU)
    rhs2 = U @ dstar(a) - dstar(b) @ U
    for mu in range(DIM):
        rhs2 += b[..., mu, :, :] @ dU[..., mu, :, :] - dU[..., mu, :, :] @ a[..., mu, :, :]
    cv = A0.grid.cell_volume
    nrm = lambda x: float(np.sqrt(cv * np.sum(np.abs(x) ** 2)))
    return {"defect": nrm(dU - rhs), "scale": nrm(dU),
            "defect2": nrm(lhs2 - rhs2), "scale2": nrm(lhs2)}


def psi_map(A0: Connection, chi: Field, a: Field) -> Field:
    """``(chi, a) -> u(A0 + a) - A0`` with ``u = exp(chi)``."""
    return gauge_apply(GaugeTransform.from_generator(chi), A0 + a).a - A0.a


def psi_derivative_defects(A0: Connection, a: Field, zeta: Field, b: Field,
                           t: float = 1e-3) -> dict:
    """Central differences of ``psi_map`` along ``(t zeta, a + t b)`` against the closed forms

        first  = b - d_A zeta
        second = [zeta, b - d_A zeta] + [zeta, b]

    with ``A = A0 + a``.  Returns the relative L^2 defects; they are O(h)
    from the lattice gauge action plus O(t^2) from the differencing.
    """
    A = A0 + a
    p = psi_map(A0, zeta * t, a + b * t)
    m = psi_map(A0, zeta * (-t), a - b * t)
    c = psi_map(A0, zeta * 0.0, a)
    d1 = (p - m) / (2 * t)
    d2 = (p - c * 2.0 + m) / (t * t)
    first = b - cov_grad(A, zeta)
    z = np.broadcast_to(zeta.data[..., None, :], b.data.shape)
    second = first.like(bracket_array(z, first.data, A.group) + bracket_array(z, b.data, A.group))
    return {"first": _l2(d1 - first) / max(_l2(first), 1e-300),
            "second": _l2(d2 - second) / max(_l2(second), 1e-300),
            "second_scale": _l2(second)}
