"""Seeded verification batteries with fitted constants and refinement drift.

Each inequality ``lhs <= fixed + c * coeff`` is measured on a family of
samples.  A record stores the three numbers; the fitted constant of a
(lemma, item) pair on a grid is the max over its samples of
``(lhs - fixed) / coeff``, so it can be recomputed from the stored records.
The drift of a constant is its value on the finest grid over its value on
the coarsest.

Record kinds:

``bound``     fitted constant must be finite, below ``constant_ceiling`` and
              drift by at most ``drift_ceiling``
``identity``  ``lhs`` is the lattice defect of an identity, ``coeff`` its
              scale; the relative defect must not grow by more than
              ``drift_ceiling`` under refinement
``check_le``  pass iff ``lhs <= coeff``
``check_ge``  pass iff ``lhs >= coeff``
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import (Field, GaugeTransform, bump_connection, random_bandlimited, zeros)
from .gaugefix import (abelian_gaugefix_oracle, continuation_gauge_fix, coulomb_representative,
                       exp_estimate_check, gauge_distance_upper, gauge_equation_defect,
                       gauge_sobolev_norm, newton_gauge_fix, psi_derivative_defects)
from .green import (SolverError, flat_dplus_project, green_apply, nu2, project_off_kernel,
                    scalar_green_kernel, spectrum_report)
from .manifold import DIM, Grid4, selfdual_coords, selfdual_from_coords, selfdual_project
from .norms import (cached_kernel, composite_norms, convolve_periodic, l2sharp_norm, lp_norm,
                    lsharp_norm, pointwise, slice_distance_norms)
from .operators import (Connection, bw_defect_one, bw_defect_plus, cov_grad, cov_grad_adjoint,
                        d_A_adjoint_on_twoform, d_A_plus, dplus_laplacian, gauge_apply, grad_adjoint_array,
                        grad_array)

log = logging.getLogger(__name__)

# Every in-scope tag maps to exactly one suite, with a short quote anchor.
REGISTRY = {
    "embedding": {
        "lem:EmbeddingSobolevInto*": "The following are continuous embeddings",
        "lem:Embedding*IntoSobolev": "L♯₂(E) ⊂ C⁰ ∩ L²₁(E)",
        "lem:Lp*Est": "sup_x ‖dist⁻¹(x,·)f‖_{L^p} ≤ C‖f‖_{L^p_1}",
        "lem:*Multiplication": "are L♯₂(E)-modules",
        "eq:SecondCovDerivLeibnitz": "∇²_{A⊗B}(u⊗v)",
        "eq:AdjointCovLeibnitz": "∇*_{A⊗B}(u⊗v)",
        "Kato": "|d|v|| ≤ |∇_A v|",
    },
    "green": {
        "lem:Green": "1/(4π²dist²(x,y))",
        "eq:GreenKerEst": "c⁻¹dist⁻²(x,y) ≤ G(x,y)",
        "eq:LinftyGreenEst": "c⁻¹‖u‖_{L♯} ≤ ‖G|u|‖_{C⁰}",
        "lem:LinftyEstu": "there is the following pointwise identity",
        "lem:L22Estu": "‖∇²_A u‖_{L²} ≤ ‖∇*_A∇_A u‖_{L²}",
        "lem:L22InfinityEstu": "‖u‖_{L²_{2,A}} + ‖u‖_{C⁰}",
        "lem:L2*2GreenEst": "c(1+ν₀[A]⁻¹)‖u‖_{L^{♯,2}}",
    },
    "dplus": {
        "eq:BW1": "d_A d_A* + 2d_A*d_A⁺",
        "eq:BW+": "2d_A⁺d_A*",
        "lem:L21AEsta": "√2‖(d_A* + d_A⁺)a‖",
        "lem:LinftyL22CovLapEstv": "‖∇*_A∇_A v‖_{L^{♯,2}} + ‖v‖_{L²}",
        "lem:LinftyL22Estv": "‖d_A⁺d_A*v‖_{L^{♯,2}} + ‖v‖_{L²}",
        "cor:L21AEstdA*v": "‖d_A*v‖_{L²_{1,A}}",
        "eq:UniformFirstOrderEllipticEst": "ν₂[A]^{-1/2}‖a‖_{L²}",
    },
    "gaugefix": {
        "thm:GaugeFixing": "‖u(A)−A₀‖_{L^{2♯,4}} ≤ cK₀",
        "thm:Slice": "is a homeomorphism onto an open neighborhood",
        "lem:injective": "unique up to an element of the stabilizer",
        "eq:Coulomb": "d*_{A₀}(A − A₀) = 0",
        "lem:ConnectedBall": "are connected",
        "lem:CoulombToDistance": "bound the L^{2♯,4} and L²_{1,A₀} norms in the slice",
        "eq:SeqSecondOrder": "d*_{A₀}d_{A₀}u",
        "lem:PtExpEstimates": "pointwise estimates for e^χ",
        "lem:SobolevExpEstimates": "Sobolev estimates for e^χ",
        "eq:Psi": "(χ,a) ↦ uau⁻¹ − (d_{A₀}u)u⁻¹",
        "eq:DPsi": "u(−d_Aζ + b)u⁻¹",
        "eq:D2Psi": "u[η,−d_Aζ+b]u⁻¹",
        "thm:InverseFT": "‖x₁−x₂‖ ≤ 2K‖Φ(x₁)−Φ(x₂)‖",
        "thm:CoulombConn": "‖u − id_E‖_{L^{♯,2}_{2,A₀}}",
        "thm:CoulombConnWeak": "‖u(A) − A₀‖_{L^{2♯,4}}",
        "lem:OneSidedInverse": "covered by implication",
        "claim:GaugeGroupSlice": "covered by implication",
    },
    "bubbling": {
        "bubbling": "tends to infinity as the curvature",
        "chern-weil": "−(1/4π²)∫tr(F∧F)",
    },
}

KINDS = ("bound", "identity", "check_le", "check_ge")


def suite_of(tag: str) -> str:
    hits = [s for s, tags in REGISTRY.items() if tag in tags]
    if len(hits) != 1:
        raise KeyError(f"tag {tag!r} is registered in {len(hits)} suites")
    return hits[0]


@dataclass
class SuiteConfig:
    grids: tuple = (8, 16)
    L: float = 1.0
    seeds: tuple = (0, 1)
    groups: tuple = ("u1", "su2")
    families: tuple = ("random", "pure_gauge", "bump")
    amplitude: float = 0.5
    cutoff: int = 1
    section_cutoff: int = 2
    solver_tol: float = 1e-10
    drift_ceiling: float = 2.0
    constant_ceiling: float = 1e6
    agreement_tol: float = 1e-8
    # gauge fixing
    reference_amplitude: float = 1.0
    perturbation: float = 0.1
    gauge_amplitude: float = 0.3
    continuation_steps: int = 2
    distance_iterations: int = 2
    # bubbling
    bubbling_n: int = 16
    bubbling_scales: tuple = (0.25, 0.125, 0.0625)
    bubbling_amplitude: float = 2.0
    energy_band: float = 1.25
    l4_growth: float = 4.0
    k0_band: float = 2.0
    regime_factor: float = 400.0

    def __post_init__(self):
        for name in ("grids", "seeds", "groups", "families", "bubbling_scales"):
            setattr(self, name, tuple(getattr(self, name)))

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class SuiteReport:
    suite: str
    grids: list
    seeds: list
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    drift_ceiling: float = 2.0
    constant_ceiling: float = 1e6
    constants: dict = field(default_factory=dict)

    def add(self, lemma, item, kind, n, seed, lhs, coeff, fixed=0.0, group="", family="",
            extra=None):
        if kind not in KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        if suite_of(lemma) != self.suite:
            raise ValueError(f"{lemma} belongs to suite {suite_of(lemma)}, not {self.suite}")
        rec = {"lemma": lemma, "item": item, "anchor": REGISTRY[self.suite][lemma], "kind": kind,
               "grid": int(n), "seed": int(seed), "group": group, "family": family,
               "lhs": float(lhs), "fixed": float(fixed), "coeff": float(coeff)}
        rec["c"] = sample_constant(rec)
        if extra:
            rec["extra"] = {k: float(v) for k, v in extra.items()}
        self.records.append(rec)
        return rec

    def annotate(self, where: dict, exc: Exception):
        self.errors.append({**where, "error": type(exc).__name__, "message": str(exc)})
        log.warning("solver failure in %s %s: %s", self.suite, where, exc)

    def refit(self) -> dict:
        """Recompute every fitted constant, drift and verdict from the stored records."""
        groups = {}
        for r in self.records:
            groups.setdefault((r["lemma"], r["item"]), []).append(r)
        out = {}
        for (lemma, item), recs in sorted(groups.items()):
            kind = recs[0]["kind"]
            per_grid = {}
            for r in recs:
                per_grid[r["grid"]] = max(per_grid.get(r["grid"], -math.inf), r["c"])
            grids = sorted(per_grid)
            entry = {"lemma": lemma, "item": item, "kind": kind, "samples": len(recs),
                     "c": {str(n): per_grid[n] for n in grids}}
            entry["drift"] = drift(per_grid[grids[0]], per_grid[grids[-1]]) if len(grids) > 1 else None
            entry["pass"] = self._verdict(kind, per_grid, entry["drift"])
            if kind == "identity" and entry["drift"] not in (None, 0.0) and math.isfinite(entry["drift"]):
                steps = math.log2(grids[-1] / grids[0])
                entry["order"] = -math.log2(entry["drift"]) / steps if entry["drift"] > 0 else math.inf
            out[f"{lemma}|{item}"] = entry
        self.constants = out
        return out

    def _verdict(self, kind, per_grid, d) -> bool:
        vals = list(per_grid.values())
        if kind in ("check_le", "check_ge"):
            return all(v <= 1.0 for v in vals)
        if not all(math.isfinite(v) for v in vals):
            return False
        if kind == "bound" and max(vals) > self.constant_ceiling:
            return False
        return d is None or d <= self.drift_ceiling

    @property
    def passed(self) -> bool:
        if not self.constants and self.records:
            self.refit()
        return all(e["pass"] for e in self.constants.values())

    @property
    def failed_constants(self) -> list:
        return [k for k, e in self.constants.items() if not e["pass"]]

    def as_dict(self) -> dict:
        if not self.constants and self.records:
            self.refit()
        return {"suite": self.suite, "grids": list(self.grids), "seeds": list(self.seeds),
                "drift_ceiling": self.drift_ceiling, "constant_ceiling": self.constant_ceiling,
                "records": list(self.records), "constants": dict(self.constants),
                "errors": list(self.errors), "passed": self.passed}

    def csv_rows(self) -> list:
        """``(suite, lemma, grid, seed, metric, value)`` rows, samples first, then constants."""
        if not self.constants and self.records:
            self.refit()
        rows = []
        for r in self.records:
            tag = f"{r['item']}|{r['group']}|{r['family']}"
            for m in ("lhs", "fixed", "coeff", "c"):
                rows.append((self.suite, r["lemma"], r["grid"], r["seed"], f"{tag}|{m}", r[m]))
        for e in self.constants.values():
            for n, c in e["c"].items():
                rows.append((self.suite, e["lemma"], int(n), "", f"{e['item']}|fitted_c", c))
            if e["drift"] is not None:
                rows.append((self.suite, e["lemma"], "", "", f"{e['item']}|drift", e["drift"]))
            rows.append((self.suite, e["lemma"], "", "", f"{e['item']}|pass", float(e["pass"])))
        return rows


def sample_constant(rec: dict) -> float:
    lhs, fixed, coeff, kind = rec["lhs"], rec["fixed"], rec["coeff"], rec["kind"]
    if kind == "check_le":
        return lhs / coeff if coeff > 0 else (0.0 if lhs <= 0 else math.inf)
    if kind == "check_ge":
        return coeff / lhs if lhs > 0 else math.inf
    excess = lhs - fixed
    if excess <= 1e-12 * (abs(lhs) + abs(fixed)):
        return 0.0
    if coeff <= 0:
        return math.inf
    return excess / coeff


def drift(c_coarse: float, c_fine: float) -> float:
    if c_coarse == 0:
        return 1.0 if c_fine == 0 else math.inf
    return c_fine / c_coarse


# ------------------------------------------------------------------ sample families

def _seed(seed: int, *tags) -> int:
    """Deterministic sub-seed from a base seed and string/int tags."""
    h = seed * 1_000_003
    for t in tags:
        for ch in str(t):
            h = (h * 131 + ord(ch)) % (2 ** 31)
    return h


def sample_connection(grid: Grid4, group: str, family: str, seed: int, cfg: SuiteConfig):
    """Reference connection of a family, or None when the family does not exist for the group."""
    if family == "random":
        return Connection(random_bandlimited(grid, group, 1, cfg.cutoff, cfg.amplitude,
                                             _seed(seed, "A", group)))
    if family == "pure_gauge":
        chi = random_bandlimited(grid, group, 0, cfg.cutoff, 2 * cfg.amplitude, _seed(seed, "u", group))
        return gauge_apply(GaugeTransform.from_generator(chi), Connection.product(grid, group))
    if family == "bump":
        if group != "su2":
            return None
        center = (grid.L / 2 + (seed % 4) * grid.h / 4,) * DIM
        return Connection(bump_connection(grid, center, grid.L / 8))
    raise ValueError(f"unknown sample family {family!r}")


def _samples(cfg: SuiteConfig):
    for n in cfg.grids:
        grid = Grid4(n, cfg.L)
        for group in cfg.groups:
            for family in cfg.families:
                for seed in cfg.seeds:
                    A = sample_connection(grid, group, family, seed, cfg)
                    if A is not None:
                        yield grid, group, family, seed, A


def _section(grid, group, degree, seed, tag, cfg, amplitude=1.0):
    return random_bandlimited(grid, group, degree, cfg.section_cutoff, amplitude, _seed(seed, tag, group))


def _grad(A: Connection, data: np.ndarray) -> np.ndarray:
    return grad_array(A.a.data, data, A.group, A.grid.h)


def _lap(A: Connection, data: np.ndarray) -> np.ndarray:
    return grad_adjoint_array(A.a.data, _grad(A, data), A.group, A.grid.h)


def _flat_grad(phi: np.ndarray, h: float) -> np.ndarray:
    return np.stack([(np.roll(phi, -1, axis=mu) - phi) / h for mu in range(DIM)], axis=-1)


def _lp(x, p, grid):
    return lp_norm(x, p, grid)


def _scale_by(phi: np.ndarray, f: Field) -> Field:
    return f.like(phi.reshape(phi.shape + (1,) * (f.data.ndim - DIM)) * f.data)


# ------------------------------------------------------------------ embedding battery

def run_embedding_suite(cfg: SuiteConfig) -> SuiteReport:
    rep = SuiteReport("embedding", list(cfg.grids), list(cfg.seeds), drift_ceiling=cfg.drift_ceiling,
                      constant_ceiling=cfg.constant_ceiling)
    for grid, group, family, seed, A in _samples(cfg):
        n, h = grid.n, grid.h
        key = dict(n=n, seed=seed, group=group, family=family)
        u = _section(grid, group, 0, seed, "s", cfg)
        w = _section(grid, group, 1, seed, "w", cfg)
        phi = random_bandlimited(grid, "u1", 0, cfg.section_cutoff, 1.0, _seed(seed, "phi")).data[..., 0] + 1.5
        phif = Field(grid, "u1", 0, phi[..., None])
        flat = Connection.product(grid, "u1")

        nu = composite_norms(u, A)
        nw = composite_norms(w, A)
        nphi = composite_norms(phif, flat)
        g1 = _grad(A, u.data)
        g2 = _grad(A, g1)

        def add(lemma, item, lhs, coeff, fixed=0.0):
            rep.add(lemma, item, "bound", n, seed, lhs, coeff, fixed, group, family)

        E = "lem:EmbeddingSobolevInto*"
        add(E, "1:k=0:p=3", nu["Lsharp"], _lp(u, 3, grid))
        add(E, "1:k=1:p=3", nu["Lsharp_1A"], _lp(g1, 3, grid) + _lp(u, 3, grid))
        add(E, "1:k=2:p=3", nu["Lsharp_2A"], _lp(g2, 3, grid) + _lp(g1, 3, grid) + _lp(u, 3, grid))
        add(E, "2:q=6", nu["L2sharp"], _lp(u, 6, grid))
        add(E, "3:section", nu["L2sharp"], nu.parts["grad_L2"] + nu["L2"])
        add(E, "3:one-form", nw["L2sharp"], nw.parts["grad_L2"] + nw["L2"])

        S = "lem:Embedding*IntoSobolev"
        add(S, "1:L1", _lp(u, 1, grid), nu["Lsharp"])
        add(S, "1:L2", nu["L2"], nu["L2sharp"])
        add(S, "2", nu["C0"] + nu.parts["grad_L2"] + nu["L2"], nu["Lsharp_2A"])

        dphi = _flat_grad(phi, h)
        for p in (2, 3):
            prof = convolve_periodic(cached_kernel(grid, 1), np.abs(phi) ** p, power=p)
            add("lem:Lp*Est", f"p={p}", float(prof.max()) ** (1.0 / p),
                _lp(dphi, p, grid) + _lp(np.abs(phi), p, grid))

        M = "lem:*Multiplication"
        pu = _scale_by(phi, u)
        pw = _scale_by(phi, w)
        npu = composite_norms(pu, A)
        npw = composite_norms(pw, A)
        add(M, "1", npu["Lsharp"], nphi["C0"] * nu["Lsharp"])
        add(M, "2", npu["Lsharp"], nphi["L2sharp"] * nu["L2sharp"])
        add(M, "3:Lsharp_1", npu["Lsharp_1A"], nphi["Lsharp_2A"] * nu["Lsharp_1A"])
        add(M, "3:L2_1", npu.parts["grad_L2"] + npu["L2"],
            nphi["Lsharp_2A"] * (nu.parts["grad_L2"] + nu["L2"]))
        add(M, "3:Lsharp_2", npu["Lsharp_2A"], nphi["Lsharp_2A"] * nu["Lsharp_2A"])
        add(M, "3:Lsharp_1:one-form", npw["Lsharp_1A"], nphi["Lsharp_2A"] * nw["Lsharp_1A"])
        add(M, "4:L2_1", npu.parts["grad_L2"] + npu["L2"],
            nphi["Lsharp2_2A"] * (nu.parts["grad_L2"] + nu["L2"]))
        add(M, "4:Lsharp2_1", npu["Lsharp2_1A"], nphi["Lsharp2_2A"] * nu["Lsharp2_1A"])
        add(M, "4:Lsharp2_2", npu["Lsharp2_2A"], nphi["Lsharp2_2A"] * nu["Lsharp2_2A"])

        # product rules: defects are O(h) from the shifted forward differences
        d2phi = np.stack([_flat_grad(dphi[..., nu_], h) for nu_ in range(DIM)], axis=-1)
        hp = _grad(A, _grad(A, pu.data))
        expect = (d2phi[..., None] * u.data[..., None, None, :]
                  + dphi[..., None, :, None] * g1[..., :, None, :]
                  + dphi[..., :, None, None] * g1[..., None, :, :]
                  + phi[..., None, None, None] * g2)
        rep.add("eq:SecondCovDerivLeibnitz", "hessian", "identity", n, seed,
                _lp(hp - expect, 2, grid), _lp(hp, 2, grid), 0.0, group, family)
        lap_pu = _lap(A, pu.data)
        lap_phi = -sum((dphi[..., m] - np.roll(dphi[..., m], 1, axis=m)) / h for m in range(DIM))
        expect = (lap_phi[..., None] * u.data - 2.0 * np.einsum("...m,...mc->...c", dphi, g1)
                  + phi[..., None] * _lap(A, u.data))
        rep.add("eq:SecondCovDerivLeibnitz", "laplacian", "identity", n, seed,
                _lp(lap_pu - expect, 2, grid), _lp(lap_pu, 2, grid), 0.0, group, family)
        adj = cov_grad_adjoint(A, pw).data
        expect = phi[..., None] * cov_grad_adjoint(A, w).data - np.einsum("...m,...mc->...c", dphi, w.data)
        rep.add("eq:AdjointCovLeibnitz", "one-form", "identity", n, seed,
                _lp(adj - expect, 2, grid), _lp(adj, 2, grid), 0.0, group, family)

        # Kato: pointwise ratio |d|u|| / |nabla_A u|, worst site
        dabs = pointwise(_flat_grad(pointwise(u), h))
        g = pointwise(g1)
        ratio = np.where(g > 0, dabs / np.where(g > 0, g, 1.0), 0.0)
        i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        rep.add("Kato", "pointwise", "bound", n, seed, dabs[i], g[i], 0.0, group, family)
    rep.refit()
    return rep


# ------------------------------------------------------------------ Green battery

def _green_kernel_records(rep: SuiteReport, grid: Grid4):
    n = grid.n
    G = scalar_green_kernel(grid)
    r = grid.displacement_lengths()
    off = r > 0
    rep.add("eq:GreenKerEst", "upper", "bound", n, 0, float(np.max(G[off] * r[off] ** 2)), 1.0)
    rep.add("eq:GreenKerEst", "lower", "bound", n, 0, float(np.max(1.0 / (G[off] * r[off] ** 2))), 1.0)
    mask = (r >= 2 * grid.h - 1e-12) & (r <= grid.L / 4 + 1e-12)
    dev = np.abs(G[mask] * 4 * np.pi ** 2 * r[mask] ** 2 - 1.0)
    rep.add("lem:Green", "asymptote:2h..L/4", "bound", n, 0, float(dev.mean()), 1.0)
    return G


def run_green_suite(cfg: SuiteConfig) -> SuiteReport:
    rep = SuiteReport("green", list(cfg.grids), list(cfg.seeds), drift_ceiling=cfg.drift_ceiling,
                      constant_ceiling=cfg.constant_ceiling)
    kernels = {}
    for grid, group, family, seed, A in _samples(cfg):
        n = grid.n
        if n not in kernels:
            kernels[n] = _green_kernel_records(rep, grid)
        G = kernels[n]
        u = _section(grid, group, 0, seed, "s", cfg)

        def add(lemma, item, lhs, coeff, fixed=0.0, kind="bound"):
            rep.add(lemma, item, kind, n, seed, lhs, coeff, fixed, group, family)

        nu = composite_norms(u, A)
        gu = convolve_periodic_kernel(grid, G, pointwise(u))
        add("eq:LinftyGreenEst", "upper", float(gu.max()), nu["Lsharp"])
        add("eq:LinftyGreenEst", "lower", nu["Lsharp"], float(gu.max()))

        g1 = _grad(A, u.data)
        g2 = _grad(A, g1)
        lap = _lap(A, u.data)
        lap_sharp, lap_l2 = lsharp_norm(lap, grid=grid), _lp(lap, 2, grid)
        F = A.curvature
        fl2 = _lp(F, 2, grid)
        L = "lem:LinftyEstu"
        add(L, "1", l2sharp_norm(g1, grid=grid) + nu["C0"], lap_sharp, nu["Lsharp"])
        add(L, "2", l2sharp_norm(g1, grid=grid) + nu["C0"], lap_sharp, nu["L2"])
        add(L, "3", _lp(u, 1, grid), nu["Lsharp"])
        add(L, "4", nu["L2"], nu["L2sharp"])
        add(L, "5", nu.parts["grad_L2"], l2sharp_norm(g1, grid=grid))
        # |nabla u|^2 + (1/2) d^*d |u|^2 = <nabla^*nabla u, u>
        sq = pointwise(u) ** 2
        dsq = -sum((np.roll(sq, -1, axis=m) - 2 * sq + np.roll(sq, 1, axis=m)) for m in range(DIM)) / grid.h ** 2
        lhs_id = pointwise(g1) ** 2 + 0.5 * dsq
        rhs_id = np.sum(lap * u.data, axis=-1)
        add(L, "pointwise identity", _lp(lhs_id - rhs_id, 1, grid), _lp(pointwise(g1) ** 2, 1, grid),
            kind="identity")

        K = "lem:L22Estu"
        c0, g4, h2 = nu["C0"], _lp(g1, 4, grid), _lp(g2, 2, grid)
        add(K, "1", h2, np.sqrt(fl2) * g4, lap_l2 + fl2 * c0)
        add(K, "2", g4, np.sqrt(c0 * (lap_l2 + 2 * h2)))
        add(K, "3", h2, fl2 * c0, 2 * lap_l2)
        add("lem:L22InfinityEstu", "", nu["L2_2A"] + c0, (1 + fl2) * (lap_sharp + lap_l2 + nu["L2"]))

        try:
            spec = spectrum_report(A)
            f = project_off_kernel(A, u)
            wg = green_apply(A, f, tol=cfg.solver_tol)
        except SolverError as exc:
            rep.annotate(dict(key="lem:L2*2GreenEst", grid=n, seed=seed, group=group, family=family), exc)
            continue
        nf = composite_norms(f, A)
        nwg = composite_norms(wg, A)
        f_s2 = nf["Lsharp2"]
        lw = _lap(A, wg.data)
        slw = lsharp_norm(lw, grid=grid) + _lp(lw, 2, grid) + nwg["Lsharp2"]
        inv = 1.0 + 1.0 / spec.nu0
        Gt = "lem:L2*2GreenEst"
        add(Gt, "1", nwg["Lsharp_2A"], inv * f_s2)
        add(Gt, "2", slw, inv * f_s2)
        add(Gt, "3", nwg["Lsharp2_2A"], inv * (1 + fl2) * f_s2)
    rep.refit()
    return rep


def convolve_periodic_kernel(grid: Grid4, kernel: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``h^4 sum_y kernel[x - y] values(y)`` for a kernel given by displacement."""
    return grid.cell_volume * np.fft.ifftn(np.fft.fftn(kernel) * np.fft.fftn(values)).real


# ------------------------------------------------------------------ d^+ battery

def _selfdual_sample(grid, group, seed, tag, cfg, amplitude=1.0) -> Field:
    v = _section(grid, group, 2, seed, tag, cfg, amplitude)
    return v.like(selfdual_project(v.data))


def constant_selfdual(grid: Grid4, group: str, seed: int) -> Field:
    """Constant self-dual 2-form with seeded coefficients (the smooth Weitzenboeck test family)."""
    c = 3 if group == "su2" else 1
    rng = np.random.Generator(np.random.Philox(key=_seed(seed, "vconst", group)))
    coords = np.broadcast_to(rng.standard_normal((3, c)), grid.shape + (3, c))
    return Field(grid, group, 2, selfdual_from_coords(np.array(coords)))


def run_dplus_suite(cfg: SuiteConfig) -> SuiteReport:
    rep = SuiteReport("dplus", list(cfg.grids), list(cfg.seeds), drift_ceiling=cfg.drift_ceiling,
                      constant_ceiling=cfg.constant_ceiling)
    for grid, group, family, seed, A in _samples(cfg):
        n = grid.n

        def add(lemma, item, lhs, coeff, fixed=0.0, kind="bound", extra=None):
            rep.add(lemma, item, kind, n, seed, lhs, coeff, fixed, group, family, extra)

        # Weitzenboeck defects on the smooth family
        vc = constant_selfdual(grid, group, seed)
        add("eq:BW+", "defect", _lp(bw_defect_plus(A, vc), 2, grid), _lp(vc, 2, grid), kind="identity")
        a1 = random_bandlimited(grid, group, 1, cfg.cutoff, 1.0, _seed(seed, "bw1", group))
        add("eq:BW1", "defect", _lp(bw_defect_one(A, a1), 2, grid), _lp(a1, 2, grid), kind="identity")

        F = A.curvature
        fl2 = _lp(F, 2, grid)
        fminus_c0 = lp_norm(A.curvature_minus, np.inf)
        fplus_c0 = lp_norm(A.curvature_plus, np.inf)
        fs2 = lsharp_norm(F) + fl2
        a = _section(grid, group, 1, seed, "a", cfg)
        na = composite_norms(a, A)
        da = cov_grad_adjoint(A, a)
        dpa = d_A_plus(A, a)
        first = np.hypot(_lp(da, 2, grid), _lp(dpa, 2, grid))
        add("lem:L21AEsta", "a", na["L2_1A"], np.sqrt(1 + fminus_c0) * na["L2"], np.sqrt(2) * first)

        v = _selfdual_sample(grid, group, seed, "v", cfg)
        dsv = d_A_adjoint_on_twoform(A, v)
        nds = composite_norms(dsv, A)
        ddv = dplus_laplacian(A, v)
        v_l2 = _lp(v, 2, grid)
        add("lem:L21AEsta", "d*v", nds["L2_1A"], np.sqrt(1 + fminus_c0) * v_l2,
            np.sqrt(2) * _lp(ddv, 2, grid) + fplus_c0 * v_l2)

        nv = composite_norms(v, A)
        rough = _lap(A, v.data)
        rough_s2 = lsharp_norm(rough, grid=grid) + _lp(rough, 2, grid)
        ddv_s2 = lsharp_norm(ddv) + _lp(ddv, 2, grid)
        lhs_v = nv["L2_2A"] + nv["C0"]
        add("lem:LinftyL22CovLapEstv", "", lhs_v, (1 + fl2) * (rough_s2 + v_l2))
        add("lem:LinftyL22Estv", "", lhs_v, (1 + fl2) * (ddv_s2 + v_l2), extra={"F_sharp2": fs2})
        add("cor:L21AEstdA*v", "", nds["L2_1A"], (1 + fl2) * (ddv_s2 + v_l2))

        if group != "u1":
            continue
        # abelian only: nu_2 is exact from the Fourier symbol (see green.nu2)
        coords = flat_dplus_project(grid, selfdual_coords(v.data))
        vp = v.like(selfdual_from_coords(coords))
        ap = d_A_adjoint_on_twoform(A, vp)
        nap = composite_norms(ap, A)
        dpap = d_A_plus(A, ap)
        add("eq:UniformFirstOrderEllipticEst", "", nap["L2_1A"],
            (1 + fl2) * (lsharp_norm(dpap) + _lp(dpap, 2, grid) + nu2(A) ** -0.5 * nap["L2"]),
            extra={"nu2": nu2(A)})
    rep.refit()
    return rep


# ------------------------------------------------------------------ gauge fixing battery

def reference_connection(grid: Grid4, group: str, seed: int, cfg: SuiteConfig) -> Connection:
    return Connection(random_bandlimited(grid, group, 1, cfg.cutoff, cfg.reference_amplitude,
                                        _seed(seed, "A0", group)))


def gaugefix_case(grid: Grid4, group: str, seed: int, cfg: SuiteConfig, gauged: bool = True):
    """``(A0, Bstar, A)``: reference, a Coulomb representative near it, and a gauge transform of it."""
    A0 = reference_connection(grid, group, seed, cfg)
    b = random_bandlimited(grid, group, 1, cfg.cutoff, cfg.perturbation, _seed(seed, "b", group))
    Bstar = coulomb_representative(A0, b, tol=1e-12)
    if not gauged:
        return A0, Bstar, Bstar
    chi = random_bandlimited(grid, group, 0, cfg.cutoff, cfg.gauge_amplitude, _seed(seed, "w", group))
    return A0, Bstar, gauge_apply(GaugeTransform.from_generator(chi), Bstar)


def _l2field(f: Field) -> float:
    return float(np.sqrt(max(f.inner(f), 0.0)))


def run_gaugefix_suite(cfg: SuiteConfig) -> SuiteReport:
    rep = SuiteReport("gaugefix", list(cfg.grids), list(cfg.seeds), drift_ceiling=cfg.drift_ceiling,
                      constant_ceiling=cfg.constant_ceiling)
    if not cfg.families:
        return rep
    for n in cfg.grids:
        grid = Grid4(n, cfg.L)
        for group in cfg.groups:
            for seed in cfg.seeds:
                where = dict(grid=n, seed=seed, group=group)
                try:
                    _gaugefix_sample(rep, grid, group, seed, cfg)
                except SolverError as exc:
                    rep.annotate(where, exc)
    rep.refit()
    return rep


def _gaugefix_sample(rep: SuiteReport, grid: Grid4, group: str, seed: int, cfg: SuiteConfig):
    n = grid.n
    fam = "perturbed"

    def add(lemma, item, lhs, coeff, fixed=0.0, kind="bound", extra=None):
        rep.add(lemma, item, kind, n, seed, lhs, coeff, fixed, group, fam, extra)

    A0, Bstar, A = gaugefix_case(grid, group, seed, cfg)
    spec = spectrum_report(A0)
    K0 = spec.K0
    iterates = []
    res = newton_gauge_fix(A0, A, tol=cfg.solver_tol, spectrum=spec, regime_factor=cfg.regime_factor,
                           callback=lambda it, u, r: iterates.append((u, r)))
    B = res.B
    diff = B.a - A0.a

    # uniqueness modulo the stabilizer, slice condition and agreement between solvers
    add("lem:injective", "round trip L2", _l2field(B.a - Bstar.a), 1e-6, kind="check_le")
    add("eq:Coulomb", "residual", res.residual, 1e-8, kind="check_le")
    cont = continuation_gauge_fix(A0, A, steps=cfg.continuation_steps, tol=cfg.solver_tol,
                                  regime_factor=cfg.regime_factor)
    add("thm:GaugeFixing", "newton vs continuation",
        float(np.max(np.abs(cont.B.a.data - B.a.data))), cfg.agreement_tol, kind="check_le")
    if group == "u1":
        orc = abelian_gaugefix_oracle(A0, A)
        add("thm:GaugeFixing", "newton vs oracle", float(np.max(np.abs(orc.B.a.data - B.a.data))),
            cfg.agreement_tol, kind="check_le")

    # the quotient distance is bounded above by identity-gauge values on any orbit point
    dA = slice_distance_norms(A, A0)
    dB = slice_distance_norms(Bstar, A0)
    sdist = min(dA["scaled_distance"], dB["scaled_distance"])
    dist = min(dA["distance"], dB["distance"])
    nd = composite_norms(diff, A0).values
    add("thm:GaugeFixing", "1b", nd["L2sharp4"], K0 * sdist, extra={"K0": K0})
    add("thm:GaugeFixing", "2c", nd["L2_1A"], K0 * dist)
    add("thm:Slice", "L4 radius", nd["L4"] * (1 + spec.nu0 ** -0.5), 1.0)

    nA = composite_norms(A.a - A0.a, A0).values
    ugap = gauge_sobolev_norm(A0, res.u)
    add("thm:CoulombConn", "u(A)-A0", nd["L2_1A"], K0 * nA["Lsharp2_1A"])
    add("thm:CoulombConn", "u-id", ugap, K0 * nA["Lsharp2_1A"])
    add("thm:CoulombConnWeak", "u(A)-A0", nd["L2sharp4"], K0 * dA["scaled_distance"])
    add("thm:CoulombConnWeak", "u-id", ugap, K0 * dA["scaled_distance"])

    up_s = gauge_distance_upper(Bstar, A0, "scaled", iterations=cfg.distance_iterations)["value"]
    up_d = gauge_distance_upper(Bstar, A0, "sobolev", iterations=cfg.distance_iterations)["value"]
    nb = composite_norms(Bstar.a - A0.a, A0).values
    add("lem:CoulombToDistance", "L2sharp4", nb["L2sharp4"], K0 * up_s)
    add("lem:CoulombToDistance", "L2_1A0", nb["L2_1A"], K0 * up_d)

    # straight path from A0 to B stays in the ball of radius t * |B - A0|
    full = nd["Lsharp2_1A"]
    dev = max(abs(composite_norms(diff * t, A0).values["Lsharp2_1A"] - t * full) / full
              for t in (0.25, 0.5, 0.75))
    add("lem:ConnectedBall", "path homogeneity", dev, 1e-12, kind="check_le")

    eq = gauge_equation_defect(A0, A, res.u)
    add("eq:SeqSecondOrder", "first order", eq["defect"], eq["scale"], kind="identity")
    add("eq:SeqSecondOrder", "second order", eq["defect2"], eq["scale2"], kind="identity")

    z = random_bandlimited(grid, group, 0, cfg.cutoff, 0.5, _seed(seed, "zeta", group))
    a = random_bandlimited(grid, group, 1, cfg.cutoff, 0.3, _seed(seed, "a", group))
    bb = random_bandlimited(grid, group, 1, cfg.cutoff, 0.3, _seed(seed, "bdir", group))
    psi = gauge_equation_defect(A0, A0 + a, GaugeTransform.from_generator(z))
    add("eq:Psi", "formula vs lattice action", psi["defect"], psi["scale"], kind="identity")
    pd = psi_derivative_defects(A0, a, z, bb)
    add("eq:DPsi", "at (0,a)", pd["first"], 1.0, kind="identity")
    if group == "su2":
        add("eq:D2Psi", "at (0,a)", pd["second"], 1.0, kind="identity")

    est = exp_estimate_check(A0, res.chi)
    for k, v in est.items():
        lemma = "lem:PtExpEstimates" if k.startswith("pointwise") else "lem:SobolevExpEstimates"
        add(lemma, k, v["c"], 1.0)

    # quantitative inverse function bound along the Newton iterates, with K = 1 / nu0
    u_inf_inv = res.u.inverse()
    worst = (0.0, 1.0)
    for u_k, r_k in iterates[:-1]:
        gap = _l2field((u_k @ u_inf_inv).log())
        if r_k > 0 and gap / r_k > worst[0] / worst[1]:
            worst = (gap, r_k / spec.nu0)
    add("thm:InverseFT", "(3) iterates", worst[0], worst[1], extra={"iterations": res.iterations})


# ------------------------------------------------------------------ bubbling and Chern-Weil

def chern_weil(A: Connection) -> float:
    """``-(1/4 pi^2) h^4 sum_x tr(F ^ F)`` with the trace pairing of the group.

    ``tr(XY) = -<X, Y>`` on u(1) = iR and ``-<X, Y>/2`` on su(2); the 4-form
    coefficient of ``F ^ F`` is ``2 (F12 F34 - F13 F24 + F14 F23)`` under the trace.
    """
    F = A.curvature.data
    kappa = 1.0 if A.group == "u1" else 0.5
    dot = lambda p, q: np.sum(F[..., p, :] * F[..., q, :], axis=-1)
    # pair indices in PAIRS order: 01 02 03 12 13 23
    wedge = dot(0, 5) - dot(1, 4) + dot(2, 3)
    return float(2.0 * kappa * A.grid.cell_volume * np.sum(wedge) / (4 * np.pi ** 2))


def bubbling_sweep(cfg: SuiteConfig) -> SuiteReport:
    n = cfg.bubbling_n
    rep = SuiteReport("bubbling", [n], [0], drift_ceiling=cfg.drift_ceiling,
                      constant_ceiling=cfg.constant_ceiling)
    if not cfg.bubbling_scales:
        return rep
    grid = Grid4(n, cfg.L)
    center = (grid.L / 2,) * DIM
    rows = []
    for frac in cfg.bubbling_scales:
        lam = frac * grid.L
        A = Connection(bump_connection(grid, center, lam, cfg.bubbling_amplitude))
        F = A.curvature
        row = {"scale": lam, "F_L2": lp_norm(F, 2), "F_L4": lp_norm(F, 4),
               "F_Lsharp2": lsharp_norm(F) + lp_norm(F, 2), "chern_weil": chern_weil(A)}
        try:
            spec = spectrum_report(A)
            row.update(nu0=spec.nu0, K0=spec.K0)
            row["eps1"] = spec.K0 ** -2 / (1 + spec.nu0 ** -0.5)
            row["regime_radius"] = cfg.regime_factor / spec.K0
        except SolverError as exc:
            rep.annotate(dict(grid=n, scale=lam), exc)
        rows.append(row)
        rep.add("bubbling", f"sweep:{frac:g}L", "check_le", n, 0, row["F_L2"], math.inf,
                extra={k: v for k, v in row.items() if isinstance(v, float)})
        rep.add("chern-weil", f"sweep:{frac:g}L", "check_le", n, 0, abs(row["chern_weil"]), math.inf)
    if len(rows) > 1:
        l2 = [r["F_L2"] for r in rows]
        rep.add("bubbling", "F_L2 band", "check_le", n, 0, max(l2) / min(l2), cfg.energy_band)
        rep.add("bubbling", "F_L4 growth", "check_ge", n, 0, rows[-1]["F_L4"] / rows[0]["F_L4"],
                cfg.l4_growth)
        if all("K0" in r for r in rows):
            k0 = [r["K0"] for r in rows]
            rep.add("bubbling", "K0 band", "check_le", n, 0, max(k0) / min(k0), cfg.k0_band)
    rep.refit()
    return rep


SUITES = {
    "embedding": run_embedding_suite,
    "green": run_green_suite,
    "dplus": run_dplus_suite,
    "gaugefix": run_gaugefix_suite,
    "bubbling": bubbling_sweep,
}
