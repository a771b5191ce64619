"""Hahn-echo decoherence of S=1 clock-transition qubits in an electron spin bath."""

__version__ = "0.1.0"

from .cce import CCEConfig, cce_coherence, enumerate_clusters
from .echo import CoherenceSeries, EchoProtocol, hahn_echo
from .ensemble import EnsembleSpec, run_ensemble, sample_gaps
from .fitting import fit_cosine_offset, fit_stretched_exponential
from .hamiltonian import QubitParams, build_electron_proton, build_projected_n_spin, two_spin_hamiltonian
from .lattice import build_dissected_cube, build_unit_cell, generate_sphere_sites, radius_for_density

__all__ = [
    "CCEConfig",
    "CoherenceSeries",
    "EchoProtocol",
    "EnsembleSpec",
    "QubitParams",
    "build_dissected_cube",
    "build_electron_proton",
    "build_projected_n_spin",
    "build_unit_cell",
    "cce_coherence",
    "enumerate_clusters",
    "fit_cosine_offset",
    "fit_stretched_exponential",
    "generate_sphere_sites",
    "hahn_echo",
    "radius_for_density",
    "run_ensemble",
    "sample_gaps",
    "two_spin_hamiltonian",
]
