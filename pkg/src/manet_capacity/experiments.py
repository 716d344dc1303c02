"""
Sweeps that combine the analytic model with replicated simulations: service
rate curves, capacity versus buffer size and versus network size, and
simulated throughput versus load.

Replications at a grid point share nothing mutable and may run in parallel
(joblib). Every grid point reuses the same replication streams (common
random numbers), so differences between loads are not masked by stream noise.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .analytic import (INFINITE_BUFFER_CAPACITY, NetworkConfig, contact_probabilities,
                       local_queue_delay, solve_fixed_point, throughput_capacity)
from .errors import ConfigError, SpecFileError
from .simulator import MOBILITY_KINDS, MobilityModel, SimConfig, SimStats, run

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "N", "C", "B", "mobility", "lambda", "rho", "tc_analytic", "mu_s_analytic", "pb_analytic",
    "delay_analytic", "throughput_sim_mean", "throughput_sim_std", "pb_sim", "replications",
    "horizon", "seed",
)

DEFAULT_RHOS = tuple(round(0.1 * k, 1) for k in range(1, 15))
DEFAULT_HORIZON = 10_000_000
DEFAULT_REPLICATIONS = 10

# Relative tolerances: below capacity vs rho*T_c, above capacity vs T_c, and
# the random-walk/iid gap as a fraction of T_c.
DEFAULT_TOLERANCES = {"linear": 0.02, "saturated": 0.03, "mobility_gap": 0.05}


@dataclass(frozen=True)
class SweepSpec:
    grid: tuple[NetworkConfig, ...]
    loads: tuple[float, ...]
    load_kind: str = "rho"
    mobility: tuple[str, ...] = ("iid",)
    replications: int = DEFAULT_REPLICATIONS
    horizon: int = DEFAULT_HORIZON
    warmup: Optional[int] = None
    base_seed: int = 0
    simulate: bool = True
    name: str = "sweep"
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def __post_init__(self):
        if not self.grid:
            raise SpecFileError("grid", "must contain at least one network configuration")
        if not self.loads:
            raise SpecFileError("loads", "must contain at least one load value")
        if self.load_kind not in ("rho", "lambda"):
            raise SpecFileError("loads", f"unknown load kind {self.load_kind!r}")
        if self.replications < 1:
            raise SpecFileError("replications", "must be >= 1")
        if self.horizon < 1:
            raise SpecFileError("horizon", "must be >= 1")
        if not self.mobility:
            raise SpecFileError("mobility", "must name at least one model")
        for m in self.mobility:
            if m not in MOBILITY_KINDS:
                raise SpecFileError("mobility", f"unknown model {m!r}")
        for v in self.loads:
            if v < 0 or (self.load_kind == "lambda" and v > 1):
                raise SpecFileError("loads", f"load {v} out of range")

    def to_dict(self) -> dict:
        """Fully resolved spec in the spec-file schema (re-loadable by ``parse_spec``)."""
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "grid": [{"nodes": c.n_nodes, "cells": c.n_cells, "buffer": c.buffer_size} for c in self.grid],
            "loads": {self.load_kind: list(self.loads)},
            "mobility": list(self.mobility),
            "replications": self.replications,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "base_seed": self.base_seed,
            "simulate": self.simulate,
            "tolerances": dict(self.tolerances),
        }


@dataclass(frozen=True)
class SweepResult:
    config: NetworkConfig
    mobility: str
    lam: float
    rho: float
    tc: float
    mu_s: float
    p_full: float
    delay: float
    sim_mean: float = math.nan
    sim_std: float = math.nan
    pb_sim: float = math.nan
    pb_sim_se: float = math.nan
    delay_sim: float = math.nan
    replications: int = 0
    horizon: int = 0
    seed: int = 0

    @property
    def simulated(self) -> bool:
        return self.replications > 0

    def service_bound_holds(self) -> bool:
        """Delivered throughput cannot beat the service rate beyond noise.

        Above capacity the local queue saturates and only passes T_c packets
        per slot on to the relays, so the bound there is mu_S(T_c) = T_c rather
        than mu_S at the offered load.
        """
        if not self.simulated:
            return True
        bound = self.mu_s if self.lam <= self.tc else self.tc
        return self.sim_mean <= bound + 3 * (self.sim_std if self.replications > 1 else 0.0) + 1e-12

    def csv_row(self) -> dict:
        def fmt(x):
            if isinstance(x, float):
                return "" if math.isnan(x) else ("inf" if math.isinf(x) else f"{x:.6g}")
            return x
        c = self.config
        row = (c.n_nodes, c.n_cells, c.buffer_size, self.mobility, self.lam, self.rho, self.tc,
               self.mu_s, self.p_full, self.delay, self.sim_mean, self.sim_std, self.pb_sim,
               self.replications, self.horizon, self.seed)
        return {k: fmt(v) for k, v in zip(CSV_COLUMNS, row)}


# --------------------------------------------------------------------------
# analytic studies

def curve_mu_s(config: NetworkConfig, lambda_grid: Sequence[float]) -> list[tuple[float, float]]:
    """(lambda, mu_S(lambda)) pairs; crosses the identity at the capacity."""
    return [(float(lam), solve_fixed_point(config, lam).mu_s) for lam in lambda_grid]


def default_lambda_grid(config: NetworkConfig, points: int = 101) -> np.ndarray:
    cp = contact_probabilities(config)
    return np.linspace(0.0, cp.p_sd + cp.p_sr, points)


@dataclass(frozen=True)
class CapacityPoint:
    n_nodes: int
    n_cells: int
    buffer_size: int
    tc: float
    p_sd: float
    p_sr: float
    infinite_buffer_reference: float = INFINITE_BUFFER_CAPACITY


def _capacity_point(config):
    r = throughput_capacity(config)
    return CapacityPoint(config.n_nodes, config.n_cells, config.buffer_size,
                         r.throughput_capacity, r.contacts.p_sd, r.contacts.p_sr)


def _cells_for(n, ratio):
    c = n / ratio
    if c != int(c):
        raise ConfigError(f"N={n} is not divisible by the node/cell ratio {ratio}")
    return int(c)


def sweep_capacity_vs_buffer(n_list: Sequence[int], b_range: Sequence[int], ratio: float = 2) -> list[CapacityPoint]:
    return [_capacity_point(NetworkConfig(n, _cells_for(n, ratio), b)) for n in n_list for b in b_range]


def sweep_capacity_vs_n(n_list: Sequence[int], buffer_size: int, ratio: float = 2) -> list[CapacityPoint]:
    return [_capacity_point(NetworkConfig(n, _cells_for(n, ratio), buffer_size)) for n in n_list]


def marginal_gains(points: Sequence[CapacityPoint]) -> list[float]:
    """T_c(B) - T_c(B-1) along consecutive points of one N."""
    return [b.tc - a.tc for a, b in zip(points, points[1:])]


def diminishing_returns_knee(points: Sequence[CapacityPoint]) -> int:
    """Buffer size where the T_c(B) table bends most.

    Both axes are rescaled to [0, 1] and the knee is the point lying furthest
    above the chord joining the first and last entries (the "Kneedle" rule).
    """
    b = np.array([p.buffer_size for p in points], dtype=float)
    tc = np.array([p.tc for p in points])
    if len(points) < 3 or tc[-1] == tc[0]:
        return int(b[0])
    x = (b - b[0]) / (b[-1] - b[0])
    y = (tc - tc[0]) / (tc[-1] - tc[0])
    return int(b[int(np.argmax(y - x))])


# --------------------------------------------------------------------------
# simulation studies

def simulate_replications(config: SimConfig, replications: int, n_jobs: int = 1) -> list[SimStats]:
    """Replications 0..R-1 of ``config`` (replication index overrides the field)."""
    configs = [SimConfig(config.network, config.lam, config.mobility, config.n_slots,
                         config.warmup_slots, config.seed, r) for r in range(replications)]
    if n_jobs == 1 or replications == 1:
        return [run(c) for c in configs]
    return Parallel(n_jobs=n_jobs)(delayed(run)(c) for c in configs)


def _analytic_at(config, lam):
    sol = solve_fixed_point(config, min(lam, 1.0))
    try:
        delay = local_queue_delay(config, lam)
    except ValueError:
        delay = math.inf
    return sol, delay


def _lam_for(spec_load, kind, tc):
    return spec_load * tc if kind == "rho" else spec_load


def sweep_points(spec: SweepSpec):
    """Grid index order: config, then load, then mobility."""
    for config in spec.grid:
        tc = throughput_capacity(config).throughput_capacity
        for load in spec.loads:
            lam = _lam_for(load, spec.load_kind, tc)
            if lam > 1.0:
                raise SpecFileError("loads", f"load {load} gives lambda={lam} > 1 for {config}")
            for mob in spec.mobility:
                yield config, tc, lam, mob


def run_point(config: NetworkConfig, tc: float, lam: float, mobility: str, spec: SweepSpec,
              n_jobs: int = 1) -> SweepResult:
    sol, delay = _analytic_at(config, lam)
    base = dict(config=config, mobility=mobility, lam=lam, rho=lam / tc, tc=tc,
                mu_s=sol.mu_s, p_full=sol.p_full, delay=delay)
    if not spec.simulate:
        return SweepResult(**base)
    sc = SimConfig(config, lam, mobility, spec.horizon, spec.warmup, spec.base_seed)
    stats = simulate_replications(sc, spec.replications, n_jobs)
    thr = np.array([s.throughput for s in stats])
    pb = np.array([s.p_full for s in stats])
    dl = np.array([s.mean_local_delay for s in stats])
    r = len(stats)
    return SweepResult(
        **base,
        sim_mean=float(thr.mean()),
        sim_std=float(thr.std(ddof=1)) if r > 1 else 0.0,
        pb_sim=float(pb.mean()),
        pb_sim_se=float(pb.std(ddof=1) / math.sqrt(r)) if r > 1 else math.nan,
        delay_sim=float(dl.mean()),
        replications=r, horizon=spec.horizon, seed=spec.base_seed,
    )


def run_sweep(spec: SweepSpec, n_jobs: int = 1, progress=None) -> list[SweepResult]:
    points = list(sweep_points(spec))
    out = []
    for k, (config, tc, lam, mob) in enumerate(points):
        if progress:
            progress(f"[{k + 1}/{len(points)}] N={config.n_nodes} C={config.n_cells} "
                     f"B={config.buffer_size} lambda={lam:.6g} {mob}")
        out.append(run_point(config, tc, lam, mob, spec, n_jobs))
    return out


# --------------------------------------------------------------------------
# validation against the analytic capacity

@dataclass(frozen=True)
class CheckResult:
    name: str
    expected: float
    observed: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    results: list[SweepResult]
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}: observed={c.observed:.6g} "
                f"expected={c.expected:.6g} tol={c.tolerance:.6g} {c.detail}".rstrip()
                for c in self.checks]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}


def throughput_checks(results: Sequence[SweepResult], tolerances: dict) -> list[CheckResult]:
    """Load-following below capacity, flat at T_c above it, mobility models alike."""
    checks = []
    for r in results:
        if not r.simulated:
            continue
        label = f"N={r.config.n_nodes} B={r.config.buffer_size} rho={r.rho:.3g} {r.mobility}"
        if r.rho <= 1.0 + 1e-9:
            target, tol = r.lam, tolerances["linear"]
            kind = "linear"
        else:
            target, tol = r.tc, tolerances["saturated"]
            kind = "saturated"
        err = abs(r.sim_mean - target) / target if target > 0 else abs(r.sim_mean)
        checks.append(CheckResult(f"{kind} {label}", target, r.sim_mean, tol, err <= tol,
                                  f"rel_err={err:.4g}"))
    by_key = {}
    for r in results:
        if r.simulated:
            by_key.setdefault((r.config, round(r.rho, 9)), {})[r.mobility] = r
    for (config, rho), group in by_key.items():
        if "iid" in group and "random_walk" in group:
            gap = abs(group["random_walk"].sim_mean - group["iid"].sim_mean) / group["iid"].tc
            tol = tolerances["mobility_gap"]
            checks.append(CheckResult(
                f"mobility gap N={config.n_nodes} B={config.buffer_size} rho={rho:.3g}",
                0.0, gap, tol, gap < tol, "fraction of T_c"))
    return checks


def validate(config: NetworkConfig, rho_list: Sequence[float] = DEFAULT_RHOS,
             mobility: Sequence[str] = MOBILITY_KINDS, replications: int = DEFAULT_REPLICATIONS,
             horizon: int = DEFAULT_HORIZON, base_seed: int = 0, tolerances: Optional[dict] = None,
             n_jobs: int = 1, progress=None) -> ValidationReport:
    tolerances = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    spec = SweepSpec(grid=(config,), loads=tuple(rho_list), load_kind="rho",
                     mobility=tuple(mobility), replications=replications, horizon=horizon,
                     base_seed=base_seed, name="validate", tolerances=tolerances)
    results = run_sweep(spec, n_jobs=n_jobs, progress=progress)
    return ValidationReport(results, throughput_checks(results, tolerances))


# --------------------------------------------------------------------------
# spec files and persistence

def _require(d, key, kind, where=""):
    if key not in d:
        raise SpecFileError(where + key, "missing required field")
    v = d[key]
    if not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
        raise SpecFileError(where + key, f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _int_list(d, key, where):
    vals = _require(d, key, list, where)
    if not vals:
        raise SpecFileError(where + key, "must not be empty")
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, int):
            raise SpecFileError(where + key, f"expected integers, got {v!r}")
    return vals


def _parse_grid(raw):
    if isinstance(raw, list):
        if not raw:
            raise SpecFileError("grid", "must contain at least one network configuration")
        out = []
        for k, pt in enumerate(raw):
            if not isinstance(pt, dict):
                raise SpecFileError(f"grid[{k}]", "expected an object with nodes, cells, buffer")
            where = f"grid[{k}]."
            try:
                out.append(NetworkConfig(_require(pt, "nodes", int, where), _require(pt, "cells", int, where),
                                         _require(pt, "buffer", int, where)))
            except ConfigError as exc:
                raise SpecFileError(f"grid[{k}]", str(exc)) from exc
        return tuple(out)
    if not isinstance(raw, dict):
        raise SpecFileError("grid", "expected a list of points or an object of value lists")
    nodes = _int_list(raw, "nodes", "grid.")
    buffers = _int_list(raw, "buffers", "grid.")
    if "cells" in raw:
        cells = _int_list(raw, "cells", "grid.")
        combos = [(n, c, b) for n in nodes for c in cells for b in buffers]
    elif "node_cell_ratio" in raw:
        ratio = raw["node_cell_ratio"]
        if isinstance(ratio, bool) or not isinstance(ratio, (int, float)) or ratio <= 0:
            raise SpecFileError("grid.node_cell_ratio", "expected a positive number")
        try:
            combos = [(n, _cells_for(n, ratio), b) for n in nodes for b in buffers]
        except ConfigError as exc:
            raise SpecFileError("grid.node_cell_ratio", str(exc)) from exc
    else:
        raise SpecFileError("grid", "needs either 'cells' or 'node_cell_ratio'")
    try:
        return tuple(NetworkConfig(n, c, b) for n, c, b in combos)
    except ConfigError as exc:
        raise SpecFileError("grid", str(exc)) from exc


def parse_spec(data: dict, overrides: Optional[dict] = None) -> SweepSpec:
    """Build a SweepSpec from the JSON document; ``overrides`` win over file fields."""
    if not isinstance(data, dict):
        raise SpecFileError("<root>", "expected a JSON object")
    data = {**data, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SpecFileError("schema_version", f"unsupported version {version!r}")
    known = {"schema_version", "name", "grid", "loads", "mobility", "replications", "horizon",
             "warmup", "base_seed", "simulate", "tolerances", "description"}
    for key in data:
        if key not in known:
            raise SpecFileError(key, "unknown field")
    grid = _parse_grid(_require(data, "grid", (list, dict)))
    loads = _require(data, "loads", dict)
    if len(loads) != 1 or next(iter(loads)) not in ("rho", "lambda"):
        raise SpecFileError("loads", "expected exactly one of {'rho': [...]} or {'lambda': [...]}")
    load_kind, values = next(iter(loads.items()))
    if not isinstance(values, list) or not values:
        raise SpecFileError(f"loads.{load_kind}", "must be a non-empty list")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SpecFileError(f"loads.{load_kind}", f"expected numbers, got {v!r}")
    mobility = data.get("mobility", ["iid"])
    if not isinstance(mobility, list):
        raise SpecFileError("mobility", "expected a list")
    try:
        mobility = [MobilityModel(m, 1).kind for m in mobility]
    except ConfigError as exc:
        raise SpecFileError("mobility", str(exc)) from exc
    tolerances = data.get("tolerances", {})
    if not isinstance(tolerances, dict) or set(tolerances) - set(DEFAULT_TOLERANCES):
        raise SpecFileError("tolerances", f"allowed keys are {sorted(DEFAULT_TOLERANCES)}")
    ints = {}
    for key, default in (("replications", DEFAULT_REPLICATIONS), ("horizon", DEFAULT_HORIZON),
                         ("base_seed", 0)):
        v = data.get(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise SpecFileError(key, f"expected an integer, got {v!r}")
        ints[key] = v
    warmup = data.get("warmup")
    if warmup is not None and (isinstance(warmup, bool) or not isinstance(warmup, int)):
        raise SpecFileError("warmup", f"expected an integer or null, got {warmup!r}")
    simulate = data.get("simulate", True)
    if not isinstance(simulate, bool):
        raise SpecFileError("simulate", "expected true or false")
    return SweepSpec(grid=grid, loads=tuple(float(v) for v in values), load_kind=load_kind,
                     mobility=tuple(mobility), warmup=warmup, simulate=simulate,
                     name=str(data.get("name", "sweep")),
                     tolerances={**DEFAULT_TOLERANCES, **tolerances}, **ints)


def load_spec(path, overrides: Optional[dict] = None) -> SweepSpec:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecFileError("<file>", f"not valid JSON: {exc}") from exc
    return parse_spec(data, overrides)


def write_csv(results: Sequence[SweepResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow(r.csv_row())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, spec: Optional[SweepSpec], command: str, status: str,
                   outputs: Sequence[str] = (), extra: Optional[dict] = None) -> None:
    """Timestamp-free so identical invocations produce identical files."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "package": "manet_capacity",
        "version": __version__,
        "command": command,
        "status": status,
        "spec": spec.to_dict() if spec is not None else None,
        "outputs": list(outputs),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def stderr_progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)
