"""Command-line entry point: config parsing, dispatch, report and snapshot output.

Exit status: 0 when every check passes, 1 when a check or fitted-constant
ceiling fails, 2 on solver failure or an invalid config.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import time
import typing
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .fields import GaugeTransform, random_bandlimited, write_snapshot
from .gaugefix import (GaugeFixError, abelian_gaugefix_oracle, continuation_gauge_fix,
                       coulomb_representative, newton_gauge_fix)
from .green import SolverError, green_asymptote_deviation, spectrum_report
from .manifold import Grid4
from .norms import lp_norm, lsharp_norm
from .operators import Connection, bw_defect_one, bw_defect_plus, gauge_apply
from .verify import SUITES, SuiteConfig, SuiteReport, constant_selfdual, sample_connection

log = logging.getLogger(__name__)

THREADS_ENV = "TORUS_GAUGE_THREADS"
SUBCOMMANDS = ("verify-embeddings", "verify-green", "verify-dplus", "verify-gaugefix",
               "bubbling-sweep", "bw-check", "spectrum", "gauge-fix", "green-kernel")
CSV_HEADER = ("suite", "lemma", "grid", "seed", "metric", "value")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config schema

@dataclass
class GridTable:
    n: int = 8
    L: float = 1.0


@dataclass
class FlagTable:
    use_fft: bool = True
    emit_snapshots: bool = False


@dataclass
class SolverTable:
    tol: float = 1e-10
    kernel_tol: typing.Optional[float] = None
    max_iter: int = 50
    regime_factor: float = 400.0


@dataclass
class ConnectionTable:
    family: str = "product"
    amplitude: float = 0.5
    cutoff: int = 1
    scale: float = 0.125


@dataclass
class GaugeFixTable:
    method: str = "newton"
    perturbation: float = 0.1
    gauge_amplitude: float = 0.3
    continuation_steps: int = 2


@dataclass
class GreenKernelTable:
    r_min: typing.Optional[float] = None
    r_max: typing.Optional[float] = None
    max_mean_deviation: float = 0.15


@dataclass
class BWTable:
    grids: typing.Tuple[int, ...] = (8, 16)
    amplitude: float = 0.5
    cutoff: int = 1
    min_order: float = 0.9


@dataclass
class SuiteTable:
    grids: typing.Tuple[int, ...] = (8, 16)
    groups: typing.Tuple[str, ...] = ("u1", "su2")
    families: typing.Tuple[str, ...] = ("random", "pure_gauge", "bump")
    amplitude: float = 0.5
    cutoff: int = 1
    section_cutoff: int = 2
    drift_ceiling: float = 2.0
    constant_ceiling: float = 1e6
    agreement_tol: float = 1e-8
    reference_amplitude: float = 1.0
    perturbation: float = 0.1
    gauge_amplitude: float = 0.3
    continuation_steps: int = 2
    distance_iterations: int = 2
    bubbling_n: int = 16
    bubbling_scales: typing.Tuple[float, ...] = (0.25, 0.125, 0.0625)
    bubbling_amplitude: float = 2.0
    energy_band: float = 1.25
    l4_growth: float = 4.0
    k0_band: float = 2.0


@dataclass
class RunConfig:
    grid: GridTable = field(default_factory=GridTable)
    group: str = "u1"
    seeds: typing.Tuple[int, ...] = (0,)
    output: str = "out"
    flags: FlagTable = field(default_factory=FlagTable)
    solver: SolverTable = field(default_factory=SolverTable)
    connection: ConnectionTable = field(default_factory=ConnectionTable)
    gauge_fix: GaugeFixTable = field(default_factory=GaugeFixTable)
    green_kernel: GreenKernelTable = field(default_factory=GreenKernelTable)
    bw_check: BWTable = field(default_factory=BWTable)
    suite: SuiteTable = field(default_factory=SuiteTable)

    def as_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def suite_config(self) -> SuiteConfig:
        s = self.suite
        return SuiteConfig(L=self.grid.L, seeds=self.seeds, solver_tol=self.solver.tol,
                           regime_factor=self.solver.regime_factor,
                           **dataclasses.asdict(s))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


CHOICES = {
    ("group",): ("u1", "su2"),
    ("connection", "family"): ("product", "random", "pure_gauge", "bump"),
    ("gauge_fix", "method"): ("newton", "continuation", "oracle"),
}


def _where(node) -> str:
    m = node.start_mark
    return f"line {m.line + 1}, column {m.column + 1}"


def _scalar(node, typ, path):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{'.'.join(path)}: expected a scalar ({_where(node)})")
    value = yaml.safe_load(io.StringIO(node.value)) if node.style is None else node.value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{'.'.join(path)}: expected true/false, got {node.value!r} ({_where(node)})")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{'.'.join(path)}: expected an integer, got {node.value!r} ({_where(node)})")
        return value
    if typ is float:
        if isinstance(value, str):
            # yaml 1.1 reads "1e-10" as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{'.'.join(path)}: expected a number, got {node.value!r} ({_where(node)})")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{'.'.join(path)}: expected a string, got {node.value!r} ({_where(node)})")
        return value
    raise TypeError(typ)


def _convert(node, typ, path):
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        inner = [t for t in typing.get_args(typ) if t is not type(None)][0]
        if isinstance(node, yaml.ScalarNode) and node.tag.endswith(":null"):
            return None
        return _convert(node, inner, path)
    if origin is tuple:
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{'.'.join(path)}: expected a list ({_where(node)})")
        inner = typing.get_args(typ)[0]
        return tuple(_convert(v, inner, path + (f"[{i}]",)) for i, v in enumerate(node.value))
    if dataclasses.is_dataclass(typ):
        return _table(node, typ, path)
    return _scalar(node, typ, path)


def _table(node, cls, path):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{'.'.join(path) or 'config'}: expected a mapping ({_where(node)})")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for knode, vnode in node.value:
        key = knode.value
        if key not in hints:
            where = ".".join(path + (key,))
            raise ConfigError(f"unknown key {where!r} ({_where(knode)}); allowed: {sorted(hints)}")
        if key in kwargs:
            raise ConfigError(f"duplicate key {'.'.join(path + (key,))!r} ({_where(knode)})")
        value = _convert(vnode, hints[key], path + (key,))
        choices = CHOICES.get(path + (key,))
        if choices and value not in choices:
            raise ConfigError(f"{'.'.join(path + (key,))}: {value!r} not in {choices} ({_where(vnode)})")
        kwargs[key] = (value, vnode)
    obj = cls(**{k: v for k, (v, _) in kwargs.items()})
    _constraints(obj, path, {k: n for k, (_, n) in kwargs.items()})
    return obj


def _constraints(obj, path, nodes):
    def fail(key, msg):
        where = f" ({_where(nodes[key])})" if key in nodes else " (default)"
        raise ConfigError(f"{'.'.join(path + (key,))}: {msg}{where}")

    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if f.name in ("tol", "kernel_tol", "agreement_tol", "r_min", "r_max") and v is not None and not v > 0:
            fail(f.name, f"tolerances must be > 0, got {v}")
    if isinstance(obj, GridTable):
        if obj.n < 4:
            fail("n", f"grid needs n >= 4, got n = {obj.n}")
        if not obj.L > 0:
            fail("L", f"side length must be > 0, got {obj.L}")
    if isinstance(obj, (SuiteTable, BWTable)):
        if any(n < 4 for n in obj.grids) or not obj.grids:
            fail("grids", f"every grid needs n >= 4, got {list(obj.grids)}")
        if list(obj.grids) != sorted(set(obj.grids)):
            fail("grids", "grids must be strictly increasing")
    if isinstance(obj, SuiteTable):
        bad = [g for g in obj.groups if g not in ("u1", "su2")]
        if bad:
            fail("groups", f"unknown groups {bad}")
        bad = [f for f in obj.families if f not in ("random", "pure_gauge", "bump")]
        if bad:
            fail("families", f"unknown families {bad}")
        if obj.bubbling_n < 4:
            fail("bubbling_n", f"grid needs n >= 4, got {obj.bubbling_n}")
        for key in ("drift_ceiling", "constant_ceiling"):
            if not getattr(obj, key) > 0:
                fail(key, "ceilings must be > 0")
    if isinstance(obj, SolverTable) and obj.max_iter < 1:
        fail("max_iter", "need at least one iteration")
    if isinstance(obj, RunConfig) and any(s < 0 for s in obj.seeds):
        fail("seeds", "seeds must be non-negative")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed config: {exc}") from exc
    if node is None:
        return RunConfig()
    try:
        return _table(node, RunConfig, ())
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.as_dict(), sort_keys=False)


# ------------------------------------------------------------------ reports

def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


@dataclass
class RunReport:
    """Records and constants of one subcommand run, plus its exit status."""

    name: str
    records: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    failed: bool = False
    rows: list = field(default_factory=list)

    def metric(self, lemma, grid, seed, metric, value):
        self.records.append({"lemma": lemma, "grid": grid, "seed": seed, "metric": metric,
                             "value": float(value)})
        self.rows.append((self.name, lemma, grid, seed, metric, float(value)))

    @classmethod
    def from_suite(cls, rep: SuiteReport) -> "RunReport":
        d = rep.as_dict()
        out = cls(rep.suite, d["records"], d["constants"], d["errors"], not rep.passed,
                  rep.csv_rows())
        return out

    @property
    def status(self) -> int:
        if self.errors:
            return 2
        return 1 if self.failed else 0


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def write_reports(out_dir, subcommand: str, cfg: RunConfig, rep: RunReport) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = {"subcommand": subcommand, "config_hash": cfg.hash(), "seeds": list(cfg.seeds),
           "versions": versions(), "exit_status": rep.status, "errors": rep.errors,
           "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    doc = {"run": run, "params": cfg.as_dict(), "records": rep.records, "constants": rep.constants}
    (out / "report.json").write_text(json.dumps(_json_safe(doc), indent=1, sort_keys=True) + "\n")
    (out / "report.csv").write_text(csv_text(rep.rows))
    return doc


# ------------------------------------------------------------------ subcommands

def _connection(cfg: RunConfig, seed: int, grid: Grid4 | None = None) -> Connection:
    grid = grid or Grid4(cfg.grid.n, cfg.grid.L)
    c = cfg.connection
    if c.family == "product":
        return Connection.product(grid, cfg.group)
    sc = SuiteConfig(L=grid.L, amplitude=c.amplitude, cutoff=c.cutoff)
    if c.family == "bump":
        from .fields import bump_connection
        return Connection(bump_connection(grid, (grid.L / 2,) * 4, c.scale * grid.L))
    return sample_connection(grid, cfg.group, c.family, seed, sc)


def _snapshot(cfg: RunConfig, name: str, obj):
    if cfg.flags.emit_snapshots:
        d = Path(cfg.output) / "snapshots"
        d.mkdir(parents=True, exist_ok=True)
        write_snapshot(d / f"{name}.f64", obj)


def run_suite(subcommand: str, cfg: RunConfig) -> RunReport:
    name = {"verify-embeddings": "embedding", "verify-green": "green", "verify-dplus": "dplus",
            "verify-gaugefix": "gaugefix", "bubbling-sweep": "bubbling"}[subcommand]
    return RunReport.from_suite(SUITES[name](cfg.suite_config()))


def run_spectrum(cfg: RunConfig) -> RunReport:
    rep = RunReport("spectrum")
    n = cfg.grid.n
    method = "fft" if cfg.flags.use_fft else "direct"
    for seed in cfg.seeds:
        A = _connection(cfg, seed)
        _snapshot(cfg, f"connection_seed{seed}", A.a)
        s = spectrum_report(A, cfg.solver.kernel_tol)
        rep.metric("nu0", n, seed, "nu0", s.nu0)
        rep.metric("nu0", n, seed, "kernel_dimension", s.kernel_dimension)
        rep.metric("nu0", n, seed, "eigen_residual", s.eigen_residual)
        rep.metric("K0", n, seed, "K0", s.K0)
        rep.metric("K0", n, seed, "F_L2", s.curvature_l2)
        F = A.curvature
        rep.metric("K0", n, seed, "F_Lsharp", lsharp_norm(F, method=method))
        rep.constants[f"seed{seed}"] = s.as_dict()
    return rep


def run_gauge_fix(cfg: RunConfig) -> RunReport:
    rep = RunReport("gauge-fix")
    grid = Grid4(cfg.grid.n, cfg.grid.L)
    g, gf, sv = cfg.group, cfg.gauge_fix, cfg.solver
    for seed in cfg.seeds:
        A0 = _connection(cfg, seed, grid)
        b = random_bandlimited(grid, g, 1, cfg.connection.cutoff, gf.perturbation, 7919 * seed + 1)
        A = coulomb_representative(A0, b, kernel_tol=sv.kernel_tol) if gf.perturbation > 0 else A0
        if gf.gauge_amplitude > 0:
            chi = random_bandlimited(grid, g, 0, cfg.connection.cutoff, gf.gauge_amplitude, 7919 * seed + 2)
            A = gauge_apply(GaugeTransform.from_generator(chi), A)
        kw = dict(tol=sv.tol, max_iter=sv.max_iter, kernel_tol=sv.kernel_tol)
        if gf.method == "oracle":
            if g != "u1":
                raise ConfigError("the Fourier gauge-fixing oracle is abelian only")
            res = abelian_gaugefix_oracle(A0, A)
        elif gf.method == "continuation":
            res = continuation_gauge_fix(A0, A, steps=gf.continuation_steps,
                                         regime_factor=sv.regime_factor, **kw)
        else:
            res = newton_gauge_fix(A0, A, regime_factor=sv.regime_factor, **kw)
        _snapshot(cfg, f"gauge_seed{seed}", res.u)
        _snapshot(cfg, f"fixed_seed{seed}", res.B.a)
        n = grid.n
        rep.metric("thm:GaugeFixing", n, seed, "residual", res.residual)
        rep.metric("thm:GaugeFixing", n, seed, "iterations", res.iterations)
        rep.metric("thm:GaugeFixing", n, seed, "converged", float(res.converged))
        rep.metric("thm:GaugeFixing", n, seed, "in_regime", float(res.in_regime))
        for k, v in sorted(res.bound_ratios.items()):
            rep.metric("thm:GaugeFixing", n, seed, f"ratio:{k}", v)
        rep.constants[f"seed{seed}"] = res.summary()
        if not (res.converged and res.in_regime):
            rep.failed = True
    return rep


def run_green_kernel(cfg: RunConfig) -> RunReport:
    rep = RunReport("green-kernel")
    grid = Grid4(cfg.grid.n, cfg.grid.L)
    gk = cfg.green_kernel
    d = green_asymptote_deviation(grid, gk.r_min, gk.r_max)
    for k in ("mean_deviation", "max_deviation", "sites", "r_min", "r_max"):
        rep.metric("lem:Green", grid.n, "", k, d[k])
    rep.constants["asymptote"] = d
    if not (d["sites"] > 0 and d["mean_deviation"] <= gk.max_mean_deviation):
        rep.failed = True
    return rep


def run_bw_check(cfg: RunConfig) -> RunReport:
    rep = RunReport("bw-check")
    bw = cfg.bw_check
    sc = SuiteConfig(L=cfg.grid.L, amplitude=bw.amplitude, cutoff=bw.cutoff)
    orders = {}
    for seed in cfg.seeds:
        plus, one = [], []
        for n in bw.grids:
            grid = Grid4(n, cfg.grid.L)
            A = sample_connection(grid, cfg.group, "random", seed, sc)
            v = constant_selfdual(grid, cfg.group, seed)
            a = random_bandlimited(grid, cfg.group, 1, bw.cutoff, 1.0, 104729 * seed + 5)
            plus.append(lp_norm(bw_defect_plus(A, v)) / lp_norm(v))
            one.append(lp_norm(bw_defect_one(A, a)) / lp_norm(a))
            rep.metric("eq:BW+", n, seed, "relative_defect", plus[-1])
            rep.metric("eq:BW1", n, seed, "relative_defect", one[-1])
        for name, vals in (("eq:BW+", plus), ("eq:BW1", one)):
            for (n0, v0), (n1, v1) in zip(zip(bw.grids, vals), zip(bw.grids[1:], vals[1:])):
                order = math.log(v0 / v1) / math.log(n1 / n0) if v0 > 0 and v1 > 0 else math.inf
                rep.metric(name, n1, seed, f"order_from_{n0}", order)
                orders.setdefault(name, []).append(order)
    rep.constants = {k: {"min_order": min(v), "required": bw.min_order} for k, v in orders.items()}
    if orders.get("eq:BW+") and min(orders["eq:BW+"]) < bw.min_order:
        rep.failed = True
    return rep


def dispatch(subcommand: str, cfg: RunConfig) -> int:
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}; choose from {SUBCOMMANDS}")
    threads = os.environ.get(THREADS_ENV)
    limit = int(threads) if threads else None
    try:
        with threadpool_limits(limit):
            if subcommand == "spectrum":
                rep = run_spectrum(cfg)
            elif subcommand == "gauge-fix":
                rep = run_gauge_fix(cfg)
            elif subcommand == "green-kernel":
                rep = run_green_kernel(cfg)
            elif subcommand == "bw-check":
                rep = run_bw_check(cfg)
            else:
                rep = run_suite(subcommand, cfg)
    except (SolverError, GaugeFixError) as exc:
        rep = RunReport(subcommand, errors=[{"error": type(exc).__name__, "message": str(exc)}])
    write_reports(cfg.output, subcommand, cfg, rep)
    return rep.status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torus-gauge", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("-c", "--config", help="YAML run config (defaults are used when omitted)")
    p.add_argument("-o", "--output", help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.output:
        cfg.output = args.output
    if args.print_config:
        sys.stdout.write(serialize_config(cfg))
        return 0
    try:
        status = dispatch(args.subcommand, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.subcommand}: exit {status}; reports in {cfg.output}")
    return status


if __name__ == "__main__":
    sys.exit(main())
