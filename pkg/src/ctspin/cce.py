"""Cluster correlation expansion (CCE) of the central-spin echo."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .echo import CoherenceSeries, EchoProtocol, echo_signal
from .hamiltonian import MAX_QUBITS, QubitParams, coupling_matrix, projected_matrix

Cluster = Tuple[int, ...]

R_BATH = 136.63
R_DIPOLE = 40.0


@dataclass(frozen=True)
class CCEConfig:
    """Truncation and divergence settings of the expansion.

    Attributes:
        max_order: largest cluster size (bath spins only).
        r_bath: bath spins farther than this from the central spin (A) are ignored.
        r_dipole: two bath spins are neighbours if closer than this (A).
        divergence_threshold: a contribution whose magnitude exceeds this is invalid.
        zero_crossing_epsilon: dividing by a smaller magnitude invalidates the result.
    """

    max_order: int = 3
    r_bath: float = R_BATH
    r_dipole: float = R_DIPOLE
    divergence_threshold: float = 1e3
    zero_crossing_epsilon: float = 1e-6

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.max_order + 1 > MAX_QUBITS:
            raise ValueError(f"max_order must be <= {MAX_QUBITS - 1}")
        if not self.r_dipole > 0:
            raise ValueError("r_dipole must be positive")
        if self.r_bath < self.r_dipole:
            raise ValueError("r_bath must be >= r_dipole")
        if not self.divergence_threshold > 1:
            raise ValueError("divergence_threshold must exceed 1")
        if not self.zero_crossing_epsilon > 0:
            raise ValueError("zero_crossing_epsilon must be positive")

    @classmethod
    def exact(cls, max_order: int) -> "CCEConfig":
        """Infinite cutoffs: every subset of the bath is a cluster."""
        return cls(max_order=max_order, r_bath=math.inf, r_dipole=math.inf)


@dataclass(frozen=True, eq=False)
class ClusterContribution:
    """Irreducible contribution of one cluster on the shared delay grid."""

    cluster: Cluster
    values: np.ndarray
    valid: bool = True


@dataclass(frozen=True, eq=False)
class CCEResult:
    series: CoherenceSeries
    valid: bool
    n_clusters: int
    n_invalid: int


def _positions(config):
    return np.atleast_2d(np.asarray(getattr(config, "positions", config), dtype=float))


def bath_indices(config, cce: CCEConfig, central: int = 0) -> np.ndarray:
    """Bath spins within ``r_bath`` of the central spin, ascending."""
    pos = _positions(config)
    d = np.linalg.norm(pos - pos[central], axis=1)
    idx = np.flatnonzero(d <= cce.r_bath)
    return idx[idx != central]


def enumerate_clusters(config, cce: CCEConfig, central: int = 0) -> List[Cluster]:
    """Connected bath clusters of size 1..max_order.

    Spins are adjacent when at most ``r_dipole`` apart. Clusters are sorted
    index tuples ordered by size, then lexicographically.
    """
    pos = _positions(config)
    bath = bath_indices(pos, cce, central)
    if len(bath) == 0:
        return []
    neighbours: Dict[int, set] = {int(i): set() for i in bath}
    if math.isinf(cce.r_dipole):
        for i in bath:
            neighbours[int(i)] = {int(j) for j in bath if j != i}
    else:
        tree = cKDTree(pos[bath])
        for a, b in tree.query_pairs(cce.r_dipole * (1 + 1e-12)):
            i, j = int(bath[a]), int(bath[b])
            neighbours[i].add(j)
            neighbours[j].add(i)

    layer = {(int(i),) for i in bath}
    found = [sorted(layer)]
    for _ in range(1, min(cce.max_order, len(bath))):
        grown = set()
        for c in layer:
            members = set(c)
            for i in c:
                for j in neighbours[i] - members:
                    grown.add(tuple(sorted(members | {j})))
        if not grown:
            break
        layer = grown
        found.append(sorted(layer))
    return [c for level in found for c in level]


def _subsystem(cluster: Cluster, central: int):
    return [central, *cluster]


def cluster_coherence(cluster: Sequence[int], config, params: QubitParams, gaps=None, protocol: EchoProtocol | None = None, central: int = 0) -> CoherenceSeries:
    """Echo of the central spin coupled only to ``cluster``.

    All couplings among the included spins are kept and every included spin
    receives the pulses.
    """
    protocol = EchoProtocol.default() if protocol is None else protocol
    values = cluster_signals([tuple(cluster)], config, params, gaps, protocol, central)[tuple(cluster)]
    return CoherenceSeries(protocol.two_tau, values, {"cluster": list(cluster)})


def cluster_signals(clusters: Iterable[Cluster], config, params: QubitParams, gaps=None, protocol: EchoProtocol | None = None, central: int = 0) -> Dict[Cluster, np.ndarray]:
    """L_C(2 tau) for each cluster, diagonalising same-size clusters as a stack."""
    protocol = EchoProtocol.default() if protocol is None else protocol
    if protocol.targets != "all":
        raise ValueError("CCE assumes every spin is pulsed")
    pos = _positions(config)
    gap_values = np.full(len(pos), params.E) if gaps is None else np.asarray(getattr(gaps, "gaps", gaps), dtype=float)
    J = coupling_matrix(pos, params.dipolar_k)
    by_order: Dict[int, List[Cluster]] = {}
    for c in clusters:
        by_order.setdefault(len(c), []).append(tuple(c))

    out: Dict[Cluster, np.ndarray] = {}
    for order, group in sorted(by_order.items()):
        if order == 0:
            for c in group:
                out[c] = np.ones(len(protocol.tau))
            continue
        n = order + 1
        mats = np.empty((len(group), 1 << n, 1 << n))
        for b, c in enumerate(group):
            sub = _subsystem(c, central)
            mats[b] = projected_matrix(gap_values[sub], J[np.ix_(sub, sub)], params.detuning)
        w, v = np.linalg.eigh(mats)
        values = echo_signal(w, v, n, protocol.tau, central=0)
        for b, c in enumerate(group):
            out[c] = values[b]
    return out


def _proper_subclusters(c: Cluster, known: Mapping[Cluster, object]):
    for k in range(1, len(c)):
        for sub in itertools.combinations(c, k):
            if sub in known:
                yield sub


def irreducible_contributions(signals: Mapping[Cluster, np.ndarray], cce: CCEConfig) -> List[ClusterContribution]:
    """Recursive irreducible factors L~_C = L_C / prod_{C' < C} L~_C'.

    Subclusters are those proper subsets present in ``signals`` (connected
    ones, for enumerated clusters). A contribution is invalid when it is
    non-finite, exceeds ``divergence_threshold`` in magnitude, or required a
    division by a magnitude below ``zero_crossing_epsilon``. Invalidity of a
    subcluster propagates to every cluster containing it.
    """
    ordered = sorted(signals, key=lambda c: (len(c), c))
    tilde: Dict[Cluster, ClusterContribution] = {}
    for c in ordered:
        lc = np.asarray(signals[c], dtype=float)
        denom = np.ones_like(lc)
        valid = True
        for sub in _proper_subclusters(c, signals):
            denom = denom * tilde[sub].values
            valid &= tilde[sub].valid
        if np.any(np.abs(denom) < cce.zero_crossing_epsilon):
            valid = False
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            value = lc / denom
        if not np.all(np.isfinite(value)) or np.any(np.abs(value) > cce.divergence_threshold):
            valid = False
        tilde[c] = ClusterContribution(c, value, bool(valid))
    return [tilde[c] for c in ordered]


def assemble(contributions: Iterable[ClusterContribution], two_tau) -> CCEResult:
    """Grand product of irreducible contributions on the echo-time grid ``two_tau``.

    The result is flagged invalid when any contribution is invalid.
    """
    contributions = list(contributions)
    if not contributions:
        ones = np.ones(len(two_tau))
        return CCEResult(CoherenceSeries(np.asarray(two_tau), ones, {"engine": "cce"}), True, 0, 0)
    # fixed multiplication order makes the product independent of input order
    ordered = sorted(contributions, key=lambda x: (len(x.cluster), x.cluster))
    total = np.ones_like(ordered[0].values)
    n_invalid = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for con in ordered:
            total = total * con.values
            n_invalid += not con.valid
    meta = {"engine": "cce", "n_clusters": len(ordered), "n_invalid": n_invalid}
    series = CoherenceSeries(np.asarray(two_tau, dtype=float), total, meta)
    return CCEResult(series, n_invalid == 0, len(ordered), n_invalid)


def cce_coherence(config, params: QubitParams, cce: CCEConfig, gaps=None, protocol: EchoProtocol | None = None, central: int = 0) -> CCEResult:
    """Full CCE estimate of the central-spin echo for one configuration."""
    protocol = EchoProtocol.default() if protocol is None else protocol
    clusters = enumerate_clusters(config, cce, central)
    signals = cluster_signals(clusters, config, params, gaps, protocol, central)
    return assemble(irreducible_contributions(signals, cce), protocol.two_tau)
