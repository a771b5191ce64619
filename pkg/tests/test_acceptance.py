"""Acceptance gate: twelve criteria at their stated tolerances.

Each test prints one ``[PASS|FAIL] criterion N: ...`` line; the lines are
repeated in the terminal summary. Criteria 7-10 run the full 200-configuration
ensembles through :func:`ctspin.experiments.run_experiment`.
"""

import csv
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ACCEPTANCE_LINES
from ctspin import constants as C
from ctspin.cce import CCEConfig, cce_coherence
from ctspin.cli import default_threads
from ctspin.config import load_config, parse_config
from ctspin.echo import EchoProtocol, evolve, hahn_echo, modulation_depth, partial_trace, pulse
from ctspin.experiments import run_experiment
from ctspin.fitting import fit_cosine_offset
from ctspin.hamiltonian import GapAssignment, QubitParams, build_electron_proton, build_projected_n_spin, two_spin_hamiltonian, zeeman_levels
from ctspin.lattice import build_unit_cell, generate_sphere_sites
from ctspin.oracle import amplitude_frequency, resonant_coherence

E = C.mhz(4500.0)
J = C.mhz(1.0)
WORKERS = min(default_threads(), 8)

SPHERE_TABLE = [
    (0.001, 132.66, 6002),
    (0.002, 105.30, 3000),
    (0.003, 92.20, 2001),
    (0.004, 83.30, 1499),
    (0.005, 77.70, 1201),
    (0.006, 72.78, 1000),
    (0.007, 69.63, 858),
    (0.008, 66.12, 750),
    (0.009, 63.91, 668),
    (0.010, 61.64, 601),
    (0.100, 29.00, 61),
]


def record(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def read_table(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def run_kind(out_dir, workers=WORKERS, **doc):
    cfg = parse_config(doc)
    run_experiment(cfg, out_dir, workers=workers)
    return Path(out_dir)


def test_criterion_01_two_spin_oracle():
    start = time.perf_counter()
    protocol = EchoProtocol.default(501, 10.0)
    L = hahn_echo(two_spin_hamiltonian(E, J), protocol).values
    dev = float(np.abs(L - resonant_coherence(E, J, protocol.tau)).max())
    elapsed = time.perf_counter() - start
    ok = dev < 1e-10 and elapsed < 1.0
    record(1, ok, f"two-spin echo vs closed form max|dev| = {dev:.2e} (< 1e-10), {elapsed:.2f} s (< 1 s)")
    assert ok


def test_criterion_02_offresonance_laws():
    start = time.perf_counter()
    protocol = EchoProtocol.default()
    worst_a = worst_w = 0.0
    positive = True
    for ratio in (0.0, 0.5, 1.0, 2.0, 5.0):
        delta = ratio * J
        series = hahn_echo(two_spin_hamiltonian(E, J, delta), protocol)
        fit = fit_cosine_offset(series)
        A, omega = amplitude_frequency(J, delta)
        worst_a = max(worst_a, abs(fit.A - A) / A)
        worst_w = max(worst_w, abs(fit.omega - omega) / omega)
        if delta > J:
            positive &= bool(series.values.min() > 0)
    elapsed = time.perf_counter() - start
    ok = worst_a < 1e-4 and worst_w < 1e-4 and positive and elapsed < 10.0
    record(2, ok, f"cosine fits rel err A {worst_a:.1e}, omega {worst_w:.1e} (< 1e-4); min L > 0 for delta > J: {positive}; {elapsed:.2f} s")
    assert ok


def test_criterion_03_projection_fidelity():
    start = time.perf_counter()
    p = QubitParams()
    fields = np.linspace(p.Bmin - 15.0, p.Bmin + 15.0, 301)
    exact, projected = zeeman_levels(p, fields)
    dev = float((np.abs(exact + abs(p.D) / 3 - projected) / np.abs(projected)).max())
    elapsed = time.perf_counter() - start
    ok = dev < 1e-9 and elapsed < 1.0
    record(3, ok, f"projected vs lowest S=1 levels + |D|/3 over Bmin +- 15 mT: max rel dev {dev:.1e} (< 1e-9), {elapsed:.2f} s")
    assert ok


def test_criterion_04_sphere_table():
    start = time.perf_counter()
    cell = build_unit_cell()
    errors = []
    for x, radius, count in SPHERE_TABLE:
        n = generate_sphere_sites(cell, radius).n_sites
        errors.append(abs(n - count) / count)
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = worst <= 0.01 and elapsed < 30.0
    record(4, ok, f"11 sphere rows, worst site-count deviation {100 * worst:.2f}% (<= 1%), {elapsed:.2f} s")
    assert ok


def _bath_geometry(n_bath, seed, scale=25.0):
    rng = np.random.default_rng(seed)
    while True:
        pos = np.vstack([np.zeros(3), rng.normal(scale=scale, size=(n_bath, 3))])
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + 1e9 * np.eye(len(pos))
        if d.min() > 8.0:
            return pos


def test_criterion_05_cce_exact_small():
    start = time.perf_counter()
    params = QubitParams()
    protocol = EchoProtocol.default()
    worst = 0.0
    all_valid = True
    for n_bath, seed in [(2, 0), (2, 3), (3, 2), (3, 5)]:
        pos = _bath_geometry(n_bath, seed)
        gaps = GapAssignment(params.E * (1 + 0.003 * np.random.default_rng(seed).normal(size=n_bath + 1)))
        result = cce_coherence(pos, params, CCEConfig.exact(n_bath), gaps, protocol)
        all_valid &= result.valid
        exact = hahn_echo(build_projected_n_spin(pos, params, gaps), protocol).values
        worst = max(worst, float(np.abs(result.series.values - exact).max()))
    elapsed = time.perf_counter() - start
    ok = all_valid and worst < 1e-8 and elapsed < 10.0
    record(5, ok, f"CCE (order = bath size, infinite cutoffs) vs exact for 2 and 3 bath spins: max|dev| {worst:.1e} (< 1e-8), {elapsed:.2f} s")
    assert ok


def test_criterion_06_clock_transition_protection():
    start = time.perf_counter()
    p = QubitParams()
    protocol = EchoProtocol.default()
    offsets = (0.0, 0.5, 1.0, 2.0)
    depths = [modulation_depth(hahn_echo(build_electron_proton(p, [2.0, 0.0, 2.0], B0=p.Bmin + o), protocol)) for o in offsets]
    ratio = depths[0] / depths[-1]
    monotone = all(a < b for a, b in zip(depths, depths[1:]))
    elapsed = time.perf_counter() - start
    ok = ratio < 1e-3 and monotone and elapsed < 5.0
    record(6, ok, f"electron-proton modulation at CT / at +2 mT = {ratio:.1e} (< 1e-3), monotone {monotone}, depths {['%.2e' % d for d in depths]}, {elapsed:.2f} s")
    assert ok


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    timings = {}
    runs = {
        "nspin": dict(kind="nspin-convergence", scan={"values": [3, 4, 5, 6, 7, 8]}),
        "density": dict(kind="density-scan", scan={"values": [0.001, 0.003, 0.01]}),
        "disorder": dict(kind="disorder-scan", ensemble={"density": 0.1}, scan={"values": [0.0, 0.003, 0.016]}),
        "uniformity": dict(kind="uniformity"),
    }
    out = {}
    for name, doc in runs.items():
        start = time.perf_counter()
        out[name] = run_kind(root / name, seed=0, **doc)
        timings[name] = time.perf_counter() - start
    return out, timings


def test_criterion_07_nspin_convergence(full_runs):
    dirs, timings = full_runs
    rows = read_table(dirs["nspin"] / "nspin_convergence.csv")
    t2 = {int(float(r["n_spins"])): float(r["T2_us"]) for r in rows}
    band = [t2[n] for n in (6, 7, 8)]
    lo, hi = min(band), max(band)
    within = (hi - lo) / lo <= 0.10
    outside = not (lo <= t2[3] <= hi)
    ok = within and outside
    text = ", ".join(f"N={n}: {v:.3f}" for n, v in sorted(t2.items()))
    record(7, ok, f"T2(N) us {text}; N=6..8 spread {100 * (hi - lo) / lo:.1f}% (<= 10%), N=3 outside band {outside}; {timings['nspin']:.0f} s")
    assert ok


def test_criterion_08_density_trend(full_runs):
    from ctspin.ensemble import loglog_regression

    dirs, timings = full_runs
    rows = read_table(dirs["density"] / "density_scan.csv")
    x = np.array([float(r["density"]) for r in rows])
    t2 = np.array([float(r["T2_us"]) for r in rows])
    decreasing = bool(np.all(np.diff(t2) < 0))
    slope, r2 = loglog_regression(x, t2)
    ok = decreasing and slope < 0 and r2 > 0.9
    record(8, ok, f"T2 at x = {x.tolist()}: {np.round(t2, 4).tolist()} us; strictly decreasing {decreasing}; log-log slope {slope:.3f}, R^2 {r2:.4f} (> 0.9); {timings['density']:.0f} s")
    assert ok


def test_criterion_09_disorder_trend(full_runs):
    dirs, timings = full_runs
    rows = read_table(dirs["disorder"] / "disorder_scan.csv")
    sigma = [float(r["sigma"]) for r in rows]
    t2 = np.array([float(r["T2_us"]) for r in rows])
    increasing = bool(np.all(np.diff(t2) > 0))
    bracket = 0.3 <= t2[-1] <= 0.9
    ok = increasing and bracket
    record(9, ok, f"x = 0.1, T2 at sigma = {sigma}: {np.round(t2, 4).tolist()} us; strictly increasing {increasing}; T2(0.016) = {t2[-1]:.3f} in [0.3, 0.9] {bracket}; {timings['disorder']:.0f} s")
    assert ok


def test_criterion_10_uniformity(full_runs):
    dirs, timings = full_runs
    rows = {r["geometry"]: float(r["T2_us"]) for r in read_table(dirs["uniformity"] / "uniformity.csv")}
    ratio = rows["dissected-cube"] / rows["sphere"]
    ok = 1.2 <= ratio <= 1.9
    record(10, ok, f"7 spins / 7000 sites: T2 cube {rows['dissected-cube']:.3f} us, sphere {rows['sphere']:.3f} us, ratio {ratio:.3f} in [1.2, 1.9]; {timings['uniformity']:.0f} s")
    assert ok


def _same_csvs(a: Path, b: Path):
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    mismatched = [str(f) for f in files if not filecmp.cmp(a / f, b / f, shallow=False)]
    return files, mismatched


def test_criterion_11_determinism(tmp_path):
    subsets = {
        "nspin": dict(kind="nspin-convergence", ensemble={"n_configs": 24}, scan={"values": [3, 5, 6]}),
        "density": dict(kind="density-scan", ensemble={"n_configs": 24}, scan={"values": [0.003, 0.01]}),
        "disorder": dict(kind="disorder-scan", ensemble={"density": 0.1, "n_configs": 24}, scan={"values": [0.0, 0.016]}),
        "uniformity": dict(kind="uniformity", ensemble={"n_configs": 12}),
        "cce": dict(kind="cce-density", ensemble={"n_spins": 5, "n_configs": 8}, cce={"max_order": 2}, echo={"n_tau": 101}, scan={"values": [0.1]}),
    }
    start = time.perf_counter()
    n_files = 0
    bad = []
    for name, doc in subsets.items():
        ref = run_kind(tmp_path / f"{name}-w1", workers=1, seed=7, **doc)
        for workers in (1, 2, 3):
            other = run_kind(tmp_path / f"{name}-w{workers}-again", workers=workers, seed=7, **doc)
            files, mismatched = _same_csvs(ref, other)
            n_files += len(files)
            bad += [f"{name}/{m} (workers={workers})" for m in mismatched]
        # rerun from the written manifest
        again = tmp_path / f"{name}-manifest"
        run_experiment(load_config(ref / "manifest.json"), again, workers=2)
        files, mismatched = _same_csvs(ref, again)
        n_files += len(files)
        bad += [f"{name}/{m} (manifest)" for m in mismatched]
    elapsed = time.perf_counter() - start
    ok = not bad and n_files > 0
    record(11, ok, f"{n_files} CSV comparisons across workers 1/2/3 and manifest reruns, {len(bad)} mismatches; {elapsed:.0f} s")
    assert ok, bad


# physics invariants over random systems of at most four spins

_CASES = {}
_N_EXAMPLES = 150
_systems = st.tuples(st.integers(1, 4), st.integers(0, 2**32 - 1))


def _random_hamiltonian(n, seed):
    rng = np.random.default_rng(seed)
    grid = np.array([(i, j, k) for i in range(-3, 4) for j in range(-3, 4) for k in range(-3, 4)], dtype=float) * 4.5
    pos = grid[rng.choice(len(grid), n, replace=False)]
    params = QubitParams(B0=QubitParams().Bmin + rng.uniform(-2, 2))
    gaps = GapAssignment(params.E * (1 + 0.01 * rng.normal(size=n)))
    return build_projected_n_spin(pos, params, gaps), rng


def _random_density(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def _count(name):
    _CASES[name] = _CASES.get(name, 0) + 1


@settings(max_examples=_N_EXAMPLES)
@given(_systems)
def prop_hermitian(system):
    H, _ = _random_hamiltonian(*system)
    assert H.hermiticity_error() <= 1e-12 * max(1.0, np.abs(H.matrix).max())
    w, v = H.eigh
    assert np.abs(v @ np.diag(w) @ v.conj().T - H.matrix).max() <= 1e-9 * np.abs(H.matrix).max()
    _count("hermiticity")


@settings(max_examples=_N_EXAMPLES)
@given(st.integers(1, 4), st.sampled_from("xy"), st.floats(0, 2 * np.pi), st.integers(0, 2**32 - 1))
def prop_pulse_unitary(n, axis, angle, seed):
    rng = np.random.default_rng(seed)
    targets = sorted(rng.choice(n, rng.integers(1, n + 1), replace=False).tolist())
    P = pulse(axis, angle, targets, n)
    assert np.abs(P.conj().T @ P - np.eye(1 << n)).max() < 1e-12
    _count("pulse unitarity")


@settings(max_examples=_N_EXAMPLES)
@given(_systems, st.floats(0, 5))
def prop_trace_preserved(system, tau):
    H, rng = _random_hamiltonian(*system)
    rho = _random_density(H.dim, rng)
    P = pulse("x", np.pi, range(system[0]), system[0])
    out = P @ evolve(H, rho, tau) @ P.conj().T
    assert abs(np.trace(out) - 1) < 1e-12
    _count("trace preservation")


@settings(max_examples=_N_EXAMPLES)
@given(_systems)
def prop_starts_at_one(system):
    H, _ = _random_hamiltonian(*system)
    L = hahn_echo(H, EchoProtocol(np.linspace(0, 2, 21))).values
    assert abs(L[0] - 1) < 1e-12
    _count("L(0) = 1")


@settings(max_examples=_N_EXAMPLES)
@given(_systems, st.sampled_from(["state", "density"]))
def prop_bounded(system, method):
    H, _ = _random_hamiltonian(*system)
    L = hahn_echo(H, EchoProtocol(np.linspace(0, 5, 51)), method=method).values
    assert np.all(np.abs(L) <= 1 + 1e-9)
    _count("|L| <= 1 + 1e-9")


@settings(max_examples=_N_EXAMPLES)
@given(_systems, st.floats(0, 3), st.floats(0, 3))
def prop_semigroup(system, t1, t2):
    H, rng = _random_hamiltonian(*system)
    rho = _random_density(H.dim, rng)
    lhs = evolve(H, evolve(H, rho, t1), t2)
    rhs = evolve(H, rho, t1 + t2)
    assert np.abs(lhs - rhs).max() < 1e-9
    _count("semigroup")


@settings(max_examples=_N_EXAMPLES)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def prop_partial_trace(qa, qb, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_density(1 << qa, rng), _random_density(1 << qb, rng)
    joint = np.kron(a, b)
    assert np.abs(partial_trace(joint, 0, (1 << qa, 1 << qb)) - a).max() < 1e-12
    assert np.abs(partial_trace(joint, 1, (1 << qa, 1 << qb)) - b).max() < 1e-12
    mixed = _random_density(1 << (qa + qb), rng)
    for keep in range(qa + qb):
        reduced = partial_trace(mixed, keep)
        assert abs(np.trace(reduced) - 1) < 1e-12
        assert np.abs(reduced - reduced.conj().T).max() < 1e-12
    _count("partial trace")


PROPERTIES = [prop_hermitian, prop_pulse_unitary, prop_trace_preserved, prop_starts_at_one, prop_bounded, prop_semigroup, prop_partial_trace]


def test_criterion_12_invariants():
    start = time.perf_counter()
    _CASES.clear()
    failures = []
    for prop in PROPERTIES:
        try:
            prop()
        except Exception as exc:  # report every failing property, not just the first
            failures.append(f"{prop.__name__}: {type(exc).__name__}")
    elapsed = time.perf_counter() - start
    total = sum(_CASES.values())
    ok = not failures and total >= 1000 and elapsed < 120.0
    record(12, ok, f"{len(PROPERTIES)} properties, {total} passing cases (>= 1000), failures {failures or 'none'}, {elapsed:.1f} s (< 2 min)")
    assert ok, failures
