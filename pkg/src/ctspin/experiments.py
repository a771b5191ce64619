"""Runners for each experiment kind and the artifacts they write.

Every run produces CSV files (coherence series and scan tables), a
``plot_data.json`` holding the curves and tables behind the reproduced
figure, and a ``manifest.json`` with the resolved config, seed, version,
wall time and status.
"""

from __future__ import annotations

import json
import math
import platform
import time
from pathlib import Path
from typing import Callable, Dict

import numpy as np

from . import __version__
from . import constants as C
from .config import ExperimentConfig
from .echo import CoherenceSeries, EchoProtocol, hahn_echo, modulation_depth
from .ensemble import (
    EnsembleResult,
    ScanTable,
    convergence_scan_nspins,
    density_scan,
    disorder_scan,
    loglog_regression,
    uniformity_experiment,
)
from .errors import CTSpinError, FlatSignalError
from .fitting import fit_cosine_offset
from .hamiltonian import build_electron_proton, two_spin_hamiltonian, zeeman_levels
from .oracle import amplitude_frequency

#: What each experiment reproduces; shown in ``--help`` and in manifests.
DESCRIPTIONS = {
    "two-spin": "two electron spins with a gap mismatch: echo curves and the amplitude/frequency laws",
    "field-sweep": "Zeeman diagram of the S=1 model against its projected qubit, and two-electron echoes near the clock transition",
    "electron-proton": "electron-proton echo modulation as the field approaches the clock transition",
    "nspin-convergence": "ensemble-averaged echo and T2 versus total spin count",
    "density-scan": "ensemble-averaged echo and T2 versus bath density (exact diagonalisation)",
    "disorder-scan": "ensemble-averaged echo and T2 versus the spread of bath qubit gaps",
    "uniformity": "T2 of random sphere sampling against one spin per section of a dissected cube",
    "cce-density": "T2 versus bath density from the cluster correlation expansion",
    "cce-disorder": "T2 versus gap spread from the cluster correlation expansion",
}


class Artifacts:
    """Writes run outputs into one directory and remembers what was written."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.files = []
        self.plot = {"curves": [], "tables": {}}

    def _path(self, name):
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(str(path.relative_to(self.directory)))
        return path

    def series(self, name: str, series: CoherenceSeries, label: str, **extra):
        series.to_csv(self._path(f"series/{name}.csv"))
        curve = {"label": label, "file": f"series/{name}.csv", **extra}
        curve.update(two_tau_us=series.times.tolist(), L=series.values.tolist())
        self.plot["curves"].append(curve)

    def table(self, name: str, table: ScanTable):
        table.to_csv(self._path(f"{name}.csv"))
        self.plot["tables"][name] = table.to_dict()

    def json(self, name: str, payload) -> None:
        with open(self._path(name), "w") as fh:
            json.dump(_finite(payload), fh, indent=1, default=_jsonable, allow_nan=False)


def _jsonable(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _finite(obj):
    """Recursively replace NaN/inf floats by None."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _clean(value):
    """NaN/inf -> None so JSON stays standard."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _protocol(cfg: ExperimentConfig) -> EchoProtocol:
    return EchoProtocol.default(cfg.echo.n_tau, cfg.echo.two_tau_max_us)


def _run_two_spin(cfg: ExperimentConfig, out: Artifacts, workers: int) -> dict:
    p = cfg.qubit_params()
    J = C.mhz(cfg.two_spin.J_MHz)
    protocol = _protocol(cfg)
    table = ScanTable(["delta_MHz", "A", "omega_MHz", "B", "A_law", "omega_law_MHz", "min_L"], [])
    for d in cfg.two_spin.delta_MHz:
        delta = C.mhz(d)
        series = hahn_echo(two_spin_hamiltonian(p.E, J, delta, p.detuning), protocol)
        out.series(f"two_spin_delta_{d:g}MHz", series, f"delta = {d:g} MHz", delta_MHz=d)
        a_law, w_law = amplitude_frequency(J, delta)
        try:
            fit = fit_cosine_offset(series)
            row = [d, fit.A, C.to_mhz(fit.omega), fit.B]
        except FlatSignalError:
            row = [d, 0.0, math.nan, float(np.mean(series.values))]
        table.rows.append(row + [a_law, C.to_mhz(w_law), float(series.values.min())])
    out.table("two_spin_fits", table)
    return {"rows": len(table.rows)}


def _run_field_sweep(cfg: ExperimentConfig, out: Artifacts, workers: int) -> dict:
    p = cfg.qubit_params()
    ts = cfg.two_spin
    fields = np.linspace(p.Bmin - ts.zeeman_half_width_mT, p.Bmin + ts.zeeman_half_width_mT, ts.zeeman_points)
    exact, projected = zeeman_levels(p, fields)
    shift = abs(p.D) / 3.0
    table = ScanTable(["B0_mT", "exact_down_MHz", "exact_up_MHz", "projected_down_MHz", "projected_up_MHz"], [])
    for b, e, q in zip(fields, exact + shift, projected):
        table.rows.append([float(b), *C.to_mhz(e).tolist(), *C.to_mhz(q).tolist()])
    out.table("zeeman_diagram", table)
    mismatch = float(np.max(np.abs(exact + shift - projected) / np.abs(projected)))

    J = C.mhz(ts.J_MHz)
    protocol = _protocol(cfg)
    depth = ScanTable(["B0_minus_Bmin_mT", "modulation_depth"], [])
    for off in ts.field_offsets_mT:
        q = p.with_field(p.Bmin + off)
        series = hahn_echo(two_spin_hamiltonian(q.E, J, 0.0, q.detuning), protocol)
        out.series(f"two_electron_dB_{off:g}mT", series, f"B0 - Bmin = {off:g} mT", offset_mT=off)
        depth.rows.append([off, modulation_depth(series)])
    out.table("two_electron_modulation", depth)
    return {"max_relative_level_mismatch": mismatch}


def _run_electron_proton(cfg: ExperimentConfig, out: Artifacts, workers: int) -> dict:
    p = cfg.qubit_params()
    pr = cfg.proton
    protocol = _protocol(cfg)
    table = ScanTable(["B0_minus_Bmin_mT", "modulation_depth"], [])
    for off in pr.field_offsets_mT:
        H = build_electron_proton(p, np.array(pr.position_A), B0=p.Bmin + off, coupling=pr.coupling)
        series = hahn_echo(H, protocol)
        out.series(f"electron_proton_dB_{off:g}mT", series, f"B0 - Bmin = {off:g} mT", offset_mT=off)
        table.rows.append([off, modulation_depth(series)])
    out.table("electron_proton_modulation", table)
    return {"rows": len(table.rows)}


def _emit_results(out: Artifacts, prefix: str, table: ScanTable, label: Callable) -> list:
    """Write each scan point's mean curve; returns the per-ensemble reports."""
    reports = []
    for row, result in zip(table.rows, table.results):
        fit = result.fit
        extra = {"T2_us": _clean(result.T2), "beta": _clean(result.beta)}
        out.series(f"{prefix}_{row[0]}", result.mean, label(row[0]), **extra)
        if fit is not None:
            out.plot["curves"][-1]["fit_L"] = np.exp(-((result.mean.times / fit.T2) ** fit.beta)).tolist()
        reports.append({"point": row[0], **ensemble_report(result)})
    return reports


def _run_nspin(cfg, out, workers):
    values = [int(v) for v in cfg.scan_values()]
    table = convergence_scan_nspins(values, cfg.ensemble_spec(), workers)
    reports = _emit_results(out, "mean_n", table, lambda n: f"N = {n}")
    out.table("nspin_convergence", table)
    return {"ensembles": reports}


def _density(cfg, out, workers, name):
    table = density_scan(cfg.scan_values(), cfg.ensemble_spec(), workers)
    reports = _emit_results(out, "mean_x", table, lambda x: f"x = {x:g}")
    out.table(name, table)
    t2 = table.column("T2_us")
    ok = np.isfinite(t2) & (t2 > 0)
    summary = {"ensembles": reports}
    if ok.sum() >= 2:
        slope, r2 = loglog_regression(table.column("density")[ok], t2[ok])
        summary.update(loglog_slope=slope, loglog_r2=r2)
    return summary


def _disorder(cfg, out, workers, name):
    table = disorder_scan(cfg.scan_values(), cfg.ensemble_spec(), workers)
    reports = _emit_results(out, "mean_sigma", table, lambda s: f"sigma = {s:g}")
    out.table(name, table)
    return {"ensembles": reports}


def _run_uniformity(cfg, out, workers):
    table = uniformity_experiment(cfg.ensemble_spec(), workers)
    reports = _emit_results(out, "mean", table, lambda g: g)
    out.table("uniformity", table)
    t_random, t_uniform = table.column("T2_us")
    return {"ensembles": reports, "T2_ratio_uniform_over_random": t_uniform / t_random}


RUNNERS: Dict[str, Callable] = {
    "two-spin": _run_two_spin,
    "field-sweep": _run_field_sweep,
    "electron-proton": _run_electron_proton,
    "nspin-convergence": _run_nspin,
    "density-scan": lambda c, o, w: _density(c, o, w, "density_scan"),
    "disorder-scan": lambda c, o, w: _disorder(c, o, w, "disorder_scan"),
    "uniformity": _run_uniformity,
    "cce-density": lambda c, o, w: _density(c, o, w, "cce_density_scan"),
    "cce-disorder": lambda c, o, w: _disorder(c, o, w, "cce_disorder_scan"),
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> dict:
    """Run ``cfg`` and write its artifacts; returns the manifest.

    On a runtime failure the manifest (status ``"failed"``) and every
    artifact finished so far are still written before the error propagates.
    """
    out = Artifacts(cfg.output.directory if out_dir is None else out_dir)
    manifest = {
        "ctspin_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kind": cfg.kind,
        "description": DESCRIPTIONS[cfg.kind],
        "seed": cfg.seed,
        "workers": workers,
        "config": cfg.resolved(),
    }
    started = time.perf_counter()
    try:
        manifest["summary"] = RUNNERS[cfg.kind](cfg, out, workers)
        manifest["status"] = "ok"
    except CTSpinError as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        for attr in ("accepted", "attempted"):
            if hasattr(exc, attr):
                manifest[attr] = getattr(exc, attr)
        raise
    finally:
        manifest["wall_time_s"] = time.perf_counter() - started
        out.plot["kind"] = cfg.kind
        out.plot["description"] = DESCRIPTIONS[cfg.kind]
        out.json("plot_data.json", out.plot)
        manifest["artifacts"] = sorted(set(out.files)) + ["manifest.json"]
        out.json("manifest.json", manifest)
    return manifest


def ensemble_report(result: EnsembleResult) -> dict:
    """Accepted/attempted counts and fit of one ensemble, for JSON reports."""
    report = {k: _clean(v) if isinstance(v, float) else v for k, v in result.summary().items()}
    report["discarded"] = result.attempted - result.accepted
    return report
