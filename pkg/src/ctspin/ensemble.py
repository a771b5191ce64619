"""Monte Carlo ensembles of spin configurations and the scans built on them.

Every configuration index ``k`` owns independent random streams derived from
``(seed, k, purpose)``, and per-configuration results are reduced in index
order, so an ensemble is a pure function of its :class:`EnsembleSpec`
whatever the number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cce import CCEConfig, cce_coherence
from .echo import CoherenceSeries, EchoProtocol, echo_signal
from .errors import AcceptanceUnreachableError, NoDecayError
from .fitting import BETA_BOUNDS, FitResult, fit_stretched_exponential
from .hamiltonian import GapAssignment, QubitParams, build_projected_n_spin
from .lattice import (
    N_REGIONS,
    SiteLattice,
    build_dissected_cube,
    build_unit_cell,
    extend_configuration,
    generate_sphere_sites,
    radius_for_density,
    sample_configuration,
    sample_uniform_configuration,
)

GEOMETRIES = ("sphere", "dissected-cube")
ENGINES = ("exact", "cce")

# purpose tags of the per-configuration random streams
_TAG_SITES = 0
_TAG_GAPS = 1


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything that determines an ensemble run.

    Attributes:
        density: fraction x of host sites occupied; sets the lattice size
            through ``n_spins / x`` sites.
        n_spins: spins per configuration including the central one.
        n_configs: number of accepted configurations to average.
        geometry: ``"sphere"`` (random sites) or ``"dissected-cube"`` (one
            spin per outer section, requires 7 spins).
        gap_std_fraction: standard deviation of the bath gaps as a fraction of E.
        engine: ``"exact"`` diagonalisation or ``"cce"``.
        cce: expansion settings, used by the CCE engine.
        seed: master seed.
        n_tau, two_tau_max: echo-time grid, 2 tau in [0, two_tau_max] us.
        params: single-spin parameters.
        fit_max_two_tau: optional truncation of the fit window (us).
        keep_series: retain every accepted configuration's signal.
        max_attempt_factor: abort after this many attempts per requested configuration.
    """

    density: float = 0.001
    n_spins: int = 6
    n_configs: int = 200
    geometry: str = "sphere"
    gap_std_fraction: float = 0.0
    engine: str = "exact"
    cce: CCEConfig = field(default_factory=CCEConfig)
    seed: int = 0
    n_tau: int = 501
    two_tau_max: float = 10.0
    params: QubitParams = field(default_factory=QubitParams)
    fit_max_two_tau: Optional[float] = None
    keep_series: bool = False
    max_attempt_factor: int = 1000

    def __post_init__(self):
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        if self.n_configs < 1:
            raise ValueError("n_configs must be >= 1")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        if self.geometry == "dissected-cube" and self.n_spins != N_REGIONS:
            raise ValueError(f"the dissected cube holds exactly {N_REGIONS} spins")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.gap_std_fraction < 0:
            raise ValueError("gap_std_fraction must be >= 0")
        if self.n_tau < 10 or self.two_tau_max <= 0:
            raise ValueError("need at least 10 delays and a positive window")
        if self.max_attempt_factor < 1:
            raise ValueError("max_attempt_factor must be >= 1")

    @property
    def protocol(self) -> EchoProtocol:
        return EchoProtocol.default(self.n_tau, self.two_tau_max)

    @property
    def n_sites(self) -> int:
        """Host sites required for the requested density."""
        return math.ceil(self.n_spins / self.density - 1e-9)

    def replace(self, **changes) -> "EnsembleSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


@dataclass(eq=False)
class EnsembleResult:
    """Averaged coherence of an ensemble and its fit.

    ``fit`` is None when the mean never decays below the no-decay level; in
    that case ``t2_lower_bound`` holds the bound reported by the fitter.
    """

    spec: EnsembleSpec
    mean: CoherenceSeries
    accepted: int
    attempted: int
    fit: Optional[FitResult]
    t2_lower_bound: Optional[float] = None
    series: Optional[np.ndarray] = None
    lattice_sites: int = 0
    wall_time: float = 0.0

    @property
    def T2(self) -> float:
        return self.fit.T2 if self.fit is not None else math.nan

    @property
    def beta(self) -> float:
        return self.fit.beta if self.fit is not None else math.nan

    def summary(self) -> dict:
        return {
            "T2_us": self.T2,
            "beta": self.beta,
            "sse": self.fit.sse if self.fit is not None else None,
            "t2_lower_bound_us": self.t2_lower_bound,
            "accepted": self.accepted,
            "attempted": self.attempted,
            "lattice_sites": self.lattice_sites,
            "wall_time_s": self.wall_time,
        }


def child_rng(seed: int, index: int, tag: int) -> np.random.Generator:
    """Independent stream for configuration ``index`` and purpose ``tag``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(tag)]))


def sample_gaps(E: float, sigma_fraction: float, n_spins: int, rng: np.random.Generator, central: int = 0) -> GapAssignment:
    """Qubit gaps with the central value pinned at ``E``.

    Bath gaps are normal with mean E and standard deviation sigma * E;
    non-positive draws are redrawn. ``E`` may be in any unit, the result
    shares it.
    """
    if sigma_fraction < 0:
        raise ValueError("sigma_fraction must be >= 0")
    gaps = np.full(n_spins, float(E))
    if sigma_fraction == 0:
        return GapAssignment(gaps, central)
    for i in range(n_spins):
        if i == central:
            continue
        g = rng.normal(E, sigma_fraction * E)
        while g <= 0:
            g = rng.normal(E, sigma_fraction * E)
        gaps[i] = g
    return GapAssignment(gaps, central)


@functools.lru_cache(maxsize=32)
def _lattice(geometry: str, n_spins: int, density: float) -> SiteLattice:
    cell = build_unit_cell()
    n_sites = math.ceil(n_spins / density - 1e-9)
    if geometry == "dissected-cube":
        return build_dissected_cube(cell, n_sites)
    size = radius_for_density(cell, density, n_spins)
    return generate_sphere_sites(cell, size.radius)


def lattice_for(spec: EnsembleSpec) -> SiteLattice:
    """Host lattice of a spec: a sphere of about n/x sites or the dissected cube."""
    return _lattice(spec.geometry, spec.n_spins, spec.density)


def _sample(spec: EnsembleSpec, lattice: SiteLattice, index: int):
    rng = child_rng(spec.seed, index, _TAG_SITES)
    if spec.geometry == "dissected-cube":
        config = sample_uniform_configuration(lattice, rng)
    else:
        config = sample_configuration(lattice, spec.n_spins, rng)
    gaps = sample_gaps(spec.params.E, spec.gap_std_fraction, spec.n_spins, child_rng(spec.seed, index, _TAG_GAPS))
    return config, gaps


def configuration_signal(spec: EnsembleSpec, index: int):
    """Echo of configuration ``index``; None when the CCE result is invalid."""
    lattice = lattice_for(spec)
    config, gaps = _sample(spec, lattice, index)
    protocol = spec.protocol
    if spec.engine == "cce":
        result = cce_coherence(config, spec.params, spec.cce, gaps, protocol)
        return result.series.values if result.valid else None
    H = build_projected_n_spin(config, spec.params, gaps)
    w, v = H.eigh
    return echo_signal(w, v, spec.n_spins, protocol.tau)


def _batch(args):
    spec, indices = args
    return [configuration_signal(spec, k) for k in indices]


def _map_indices(fn, spec, indices: Sequence[int], workers: int):
    """Per-index results of ``fn(spec, chunk)`` in index order."""
    indices = list(indices)
    if workers <= 1 or len(indices) < 2:
        return fn((spec, indices))
    n_chunks = min(len(indices), 4 * workers)
    chunks = [indices[i::n_chunks] for i in range(n_chunks)]
    out = [None] * len(indices)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for c, res in enumerate(pool.map(fn, [(spec, ch) for ch in chunks])):
            for j, r in enumerate(res):
                out[c + j * n_chunks] = r
    return out


def _fit(series: CoherenceSeries, spec: EnsembleSpec):
    try:
        return fit_stretched_exponential(series, spec.fit_max_two_tau, BETA_BOUNDS), None
    except NoDecayError as exc:
        return None, exc.t2_lower_bound


def _finish(spec, stack, attempted, started, lattice_sites):
    # fixed reduction order: sequential sum over configurations
    total = np.zeros(spec.n_tau)
    for row in stack:
        total += row
    mean = CoherenceSeries(spec.protocol.two_tau, total / len(stack), {"n_configs": len(stack)})
    fit, bound = _fit(mean, spec)
    return EnsembleResult(
        spec,
        mean,
        accepted=len(stack),
        attempted=attempted,
        fit=fit,
        t2_lower_bound=bound,
        series=np.array(stack) if spec.keep_series else None,
        lattice_sites=lattice_sites,
        wall_time=time.perf_counter() - started,
    )


def run_ensemble(spec: EnsembleSpec, workers: int = 1) -> EnsembleResult:
    """Average the echo over ``spec.n_configs`` accepted configurations.

    Configurations are tried in index order; with the CCE engine invalid
    results are discarded and the next index is tried. The first
    ``n_configs`` accepted indices are averaged.

    Raises:
        AcceptanceUnreachableError: more than ``max_attempt_factor *
            n_configs`` attempts were needed.
    """
    started = time.perf_counter()
    lattice = lattice_for(spec)
    limit = spec.max_attempt_factor * spec.n_configs
    accepted: List[np.ndarray] = []
    next_index = 0
    attempted = 0
    while len(accepted) < spec.n_configs:
        if next_index >= limit:
            raise AcceptanceUnreachableError(
                f"only {len(accepted)} of {spec.n_configs} configurations accepted after {next_index} attempts",
                len(accepted),
                next_index,
            )
        need = spec.n_configs - len(accepted)
        block = range(next_index, min(limit, next_index + max(need, workers)))
        for k, values in zip(block, _map_indices(_batch, spec, block, workers)):
            if values is None or len(accepted) == spec.n_configs:
                continue
            accepted.append(values)
            attempted = k + 1
        next_index = block.stop
    return _finish(spec, accepted, attempted, started, lattice.n_sites)


@dataclass(eq=False)
class ScanTable:
    """One row per scan point, written as CSV with a header row."""

    columns: List[str]
    rows: List[list]
    results: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rows": [[_plain(v) for v in r] for r in self.rows]}


def _plain(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _row(key, result: EnsembleResult):
    return [key, result.T2, result.beta, result.fit.sse if result.fit else math.nan, result.accepted, result.attempted]


_FIT_COLUMNS = ["T2_us", "beta", "sse", "accepted", "attempted"]


def _growing_signals(args):
    spec, n_values, indices = args
    n_values = sorted(n_values)
    first = _lattice("sphere", n_values[0], spec.density)
    protocol = spec.protocol
    out = []
    for k in indices:
        rng = child_rng(spec.seed, k, _TAG_SITES)
        config = sample_configuration(first, n_values[0], rng)
        gaps = sample_gaps(spec.params.E, spec.gap_std_fraction, n_values[-1], child_rng(spec.seed, k, _TAG_GAPS)).gaps
        per_n = {}
        for n in n_values:
            # grow one spin at a time through the consecutive spheres
            while config.n_spins < n:
                config = extend_configuration(config, _lattice("sphere", config.n_spins + 1, spec.density), rng)
            H = build_projected_n_spin(config, spec.params, gaps[:n])
            w, v = H.eigh
            per_n[n] = echo_signal(w, v, n, protocol.tau)
        out.append(per_n)
    return out


def convergence_scan_nspins(n_values: Sequence[int], spec: EnsembleSpec, workers: int = 1) -> ScanTable:
    """T2 of the exact engine as the number of spins grows at fixed density.

    Each configuration starts with ``min(n_values)`` spins and gains one spin
    at a time from the shell added by the next larger sphere, so the smaller
    systems are always subsets of the larger ones.
    """
    if spec.engine != "exact" or spec.geometry != "sphere":
        raise ValueError("the spin-count scan uses the exact engine on spheres")
    n_values = sorted(set(int(n) for n in n_values))
    if n_values[0] < 2:
        raise ValueError("need at least 2 spins")
    started = time.perf_counter()
    indices = list(range(spec.n_configs))
    if workers <= 1:
        per_config = _growing_signals((spec, n_values, indices))
    else:
        n_chunks = min(len(indices), 4 * workers)
        chunks = [indices[i::n_chunks] for i in range(n_chunks)]
        per_config = [None] * len(indices)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for c, res in enumerate(pool.map(_growing_signals, [(spec, n_values, ch) for ch in chunks])):
                for j, r in enumerate(res):
                    per_config[c + j * n_chunks] = r
    table = ScanTable(["n_spins", *_FIT_COLUMNS], [])
    for n in n_values:
        sub = spec.replace(n_spins=n)
        result = _finish(sub, [pc[n] for pc in per_config], spec.n_configs, started, _lattice("sphere", n, spec.density).n_sites)
        table.rows.append(_row(n, result))
        table.results.append(result)
    return table


def density_scan(densities: Sequence[float], spec: EnsembleSpec, workers: int = 1) -> ScanTable:
    """T2 versus density x, realised by shrinking the lattice at fixed spin count."""
    table = ScanTable(["density", "n_sites", *_FIT_COLUMNS], [])
    for x in densities:
        result = run_ensemble(spec.replace(density=float(x)), workers)
        row = _row(float(x), result)
        table.rows.append([row[0], result.lattice_sites, *row[1:]])
        table.results.append(result)
    return table


def disorder_scan(sigmas: Sequence[float], spec: EnsembleSpec, workers: int = 1) -> ScanTable:
    """T2 versus the bath gap spread sigma (fraction of E)."""
    table = ScanTable(["sigma", *_FIT_COLUMNS], [])
    for s in sigmas:
        result = run_ensemble(spec.replace(gap_std_fraction=float(s)), workers)
        table.rows.append(_row(float(s), result))
        table.results.append(result)
    return table


def uniformity_experiment(spec: EnsembleSpec, workers: int = 1) -> ScanTable:
    """Random sphere sampling against one spin per section of the dissected cube.

    Both arms use the density and seed of ``spec`` with 7 spins.
    """
    base = spec.replace(n_spins=N_REGIONS)
    table = ScanTable(["geometry", *_FIT_COLUMNS], [])
    for geometry in GEOMETRIES:
        result = run_ensemble(base.replace(geometry=geometry), workers)
        table.rows.append(_row(geometry, result))
        table.results.append(result)
    return table


def loglog_regression(x, y):
    """Slope and R^2 of log y against log x."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def write_manifest(path, payload: Dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, default=_plain)
