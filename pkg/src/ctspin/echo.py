"""Ideal-pulse Hahn echo and the coherence function L(2 tau).

Sequence: pi/2 about y -> free evolution tau -> pi about x -> free evolution
tau -> <S_x> of the central spin, normalised by its value right after the
pi/2 pulse.

Two evaluation routes are provided. ``method="state"`` propagates pure states
in the eigenbasis of H and handles whole stacks of Hamiltonians at once; it is
what the ensemble and CCE code use. ``method="density"`` follows the
density-matrix sequence literally (pulse, U rho U^dagger, partial trace) and
serves as the reference.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .hamiltonian import ID2, SIGMA_X, SIGMA_Y, SIGMA_Z, SystemHamiltonian

DEFAULT_N_TAU = 501
DEFAULT_TWO_TAU_MAX = 10.0
# bound on the complex work array of the batched kernel, in elements
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class EchoProtocol:
    """Delay grid and pulse targets.

    Attributes:
        tau: ascending free-evolution delays in us (the echo time is 2 tau).
        targets: ``"all"`` or a tuple of spin indices receiving the pulses.
            For electron-proton systems only the electron is ever pulsed.
    """

    tau: np.ndarray
    targets: object = "all"

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float)
        if tau.ndim != 1 or len(tau) == 0:
            raise ValueError("tau grid must be a non-empty 1-d array")
        if np.any(tau < 0) or np.any(np.diff(tau) <= 0):
            raise ValueError("tau grid must be non-negative and strictly ascending")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        if self.targets != "all":
            object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
            if not self.targets:
                raise ValueError("pulse targets must be non-empty")

    @classmethod
    def default(cls, n_points=DEFAULT_N_TAU, two_tau_max=DEFAULT_TWO_TAU_MAX, targets="all"):
        return cls(np.linspace(0.0, two_tau_max, n_points) / 2.0, targets)

    @property
    def two_tau(self) -> np.ndarray:
        return 2.0 * self.tau

    def target_list(self, n_spins):
        return list(range(n_spins)) if self.targets == "all" else list(self.targets)


@dataclass(eq=False)
class CoherenceSeries:
    """L(2 tau) sampled on a grid of echo times 2 tau (us)."""

    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same shape")

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["two_tau_us", "L"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "CoherenceSeries":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "two_tau_us": self.times.tolist(),
            "L": self.values.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def rotation(axis: str, angle: float) -> np.ndarray:
    """exp(-i angle sigma_axis / 2)."""
    paulis = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}
    if axis not in paulis:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    sig = paulis[axis]
    return np.cos(angle / 2) * ID2 - 1j * np.sin(angle / 2) * sig


def initial_state(n_spins: int) -> np.ndarray:
    """Density matrix of prod_i |+><+|, the state right after the pi/2 pulse."""
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    d = 1 << n_spins
    return np.full((d, d), 1.0 / d, dtype=complex)


def pulse(axis: str, angle: float, targets, n_spins: int) -> np.ndarray:
    """Dense unitary exp(-i angle sum_{t in targets} S_axis^t) with S = sigma/2."""
    targets = set(range(n_spins)) if targets == "all" else set(targets)
    if not targets:
        raise ValueError("pulse targets must be non-empty")
    if min(targets) < 0 or max(targets) >= n_spins:
        raise ValueError("pulse target out of range")
    r = rotation(axis, angle)
    out = np.ones((1, 1), dtype=complex)
    for i in range(n_spins):
        out = np.kron(out, r if i in targets else ID2)
    return out


def propagator(H: SystemHamiltonian, tau: float) -> np.ndarray:
    w, v = H.eigh
    return (v * np.exp(-1j * w * tau)) @ v.conj().T


def evolve(H: SystemHamiltonian, rho, tau: float) -> np.ndarray:
    """U(tau) rho U(tau)^dagger from the cached eigendecomposition."""
    rho = np.asarray(rho)
    if rho.shape != (H.dim, H.dim):
        raise DimensionError(f"state of shape {rho.shape} does not match dimension {H.dim}")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    U = propagator(H, tau)
    return U @ rho @ U.conj().T


def partial_trace(rho, keep: int, dims=None) -> np.ndarray:
    """Reduced density matrix of subsystem ``keep``.

    Args:
        dims: local dimensions; defaults to qubits.
    """
    rho = np.asarray(rho)
    if dims is None:
        n = int(round(np.log2(rho.shape[0])))
        dims = (2,) * n
    dims = tuple(dims)
    if int(np.prod(dims)) != rho.shape[0]:
        raise DimensionError("dims do not match the state")
    if not 0 <= keep < len(dims):
        raise ValueError("subsystem index out of range")
    n = len(dims)
    t = rho.reshape(dims + dims)
    # move kept axes to the front, trace the rest pairwise
    others = [i for i in range(n) if i != keep]
    t = np.moveaxis(t, (keep, n + keep), (0, 1))
    rest = int(np.prod([dims[i] for i in others])) if others else 1
    t = t.reshape(dims[keep], dims[keep], rest, rest)
    return np.trace(t, axis1=2, axis2=3)


def _product_plus(n_spins, targets):
    """State after the pi/2-y pulse on ``targets`` starting from all-up."""
    psi = np.ones(1)
    up = np.array([1.0, 0.0])
    plus = np.array([1.0, 1.0]) / np.sqrt(2.0)
    tset = set(targets)
    for i in range(n_spins):
        psi = np.kron(psi, plus if i in tset else up)
    return psi


def _mask(indices, n_spins):
    m = 0
    for i in indices:
        m |= 1 << (n_spins - 1 - i)
    return m


def echo_signal(eigenvalues, eigenvectors, n_spins: int, tau, central: int = 0, targets="all") -> np.ndarray:
    """Batched pure-state Hahn echo on qubit registers.

    Args:
        eigenvalues: (d,) or (b, d) eigenvalues of the register Hamiltonians.
        eigenvectors: (d, d) or (b, d, d) matching eigenvectors.
        n_spins: register size, d = 2**n_spins.
        tau: delays in us.
        central: measured spin.
        targets: ``"all"`` or indices of pulsed spins; must include ``central``.

    Returns:
        (T,) or (b, T) array of L(2 tau).
    """
    lam = np.asarray(eigenvalues)
    V = np.asarray(eigenvectors)
    single = lam.ndim == 1
    if single:
        lam, V = lam[None], V[None]
    d = 1 << n_spins
    if lam.shape[-1] != d or V.shape[-2:] != (d, d):
        raise DimensionError("eigensystem does not match the register size")
    tau = np.asarray(tau, dtype=float)
    targets = list(range(n_spins)) if targets == "all" else list(targets)
    if central not in targets:
        raise ValueError("the central spin must receive the pulses")
    k = np.arange(d)
    perm_pi = k ^ _mask(targets, n_spins)
    perm_c = k ^ _mask([central], n_spins)
    psi0 = _product_plus(n_spins, targets)
    # <psi0|X_c|psi0> = 1 once the central spin is pulsed
    c0 = np.einsum("bkd,k->bd", V.conj(), psi0)
    W = np.einsum("bkd,bke->bde", V.conj(), V[:, perm_pi, :])

    b = lam.shape[0]
    out = np.empty((b, len(tau)))
    step = max(1, _CHUNK_ELEMENTS // max(1, b * d))
    for s in range(0, len(tau), step):
        t = tau[s : s + step]
        phase = np.exp(-1j * lam[:, :, None] * t[None, None, :])
        a = np.matmul(W, phase * c0[:, :, None])
        psi = np.matmul(V, phase * a)
        out[:, s : s + step] = np.einsum("bkt,bkt->bt", psi.conj(), psi[:, perm_c, :]).real
    return out[0] if single else out


def _electron_proton_operators(H: SystemHamiltonian):
    """Pulses, observable and initial ensemble for the electron-proton system."""
    Q = H.qubit_basis
    rest = np.eye(3) - Q @ Q.conj().T

    def lift(u2):
        return np.kron(Q @ u2 @ Q.conj().T + rest, ID2)

    half = lift(rotation("y", np.pi / 2))
    pi = lift(rotation("x", np.pi))
    x_e = Q @ SIGMA_X @ Q.conj().T
    # electron in |up>, proton unpolarised
    up = Q[:, 0]
    states = [np.kron(up, np.array([1.0, 0.0])), np.kron(up, np.array([0.0, 1.0]))]
    weights = [0.5, 0.5]
    return half, pi, x_e, states, weights


def _echo_dense(H, tau, half, pi, observable, states, weights):
    w, v = H.eigh
    W = v.conj().T @ pi @ v
    X = v.conj().T @ observable @ v
    out = np.zeros(len(tau))
    norm = 0.0
    for psi, p in zip(states, weights):
        psi0 = half @ psi
        norm += p * np.real(psi0.conj() @ observable @ psi0)
        c0 = v.conj().T @ psi0
        phase = np.exp(-1j * np.outer(w, tau))
        a = W @ (phase * c0[:, None])
        c = phase * a
        out += p * np.einsum("kt,kl,lt->t", c.conj(), X, c).real
    return out / norm


def _echo_density(H: SystemHamiltonian, protocol: EchoProtocol, central: int):
    if H.basis == "electron-proton":
        half, pi, x_e, states, weights = _electron_proton_operators(H)
        rho_pre = sum(p * np.outer(s, s.conj()) for s, p in zip(states, weights))
        keep, dims, obs = 0, H.dims, x_e
    else:
        n = H.n_spins
        targets = protocol.target_list(n)
        if central not in targets:
            raise ValueError("the central spin must receive the pulses")
        half = pulse("y", np.pi / 2, targets, n)
        pi = pulse("x", np.pi, targets, n)
        rho_pre = np.zeros((H.dim, H.dim), dtype=complex)
        rho_pre[0, 0] = 1.0
        keep, dims, obs = central, H.dims, SIGMA_X
    rho0 = half @ rho_pre @ half.conj().T
    ref = np.real(np.trace(partial_trace(rho0, keep, dims) @ obs))
    out = np.empty(len(protocol.tau))
    for i, t in enumerate(protocol.tau):
        rho = evolve(H, rho0, t)
        rho = pi @ rho @ pi.conj().T
        rho = evolve(H, rho, t)
        out[i] = np.real(np.trace(partial_trace(rho, keep, dims) @ obs)) / ref
    return out


def hahn_echo(H: SystemHamiltonian, protocol: EchoProtocol | None = None, central: int = 0, method: str = "state") -> CoherenceSeries:
    """Hahn-echo coherence L(2 tau) of the central spin.

    Args:
        H: qubit-register or electron-proton Hamiltonian.
        protocol: delay grid and pulse targets; default 501 points up to
            2 tau = 10 us, all spins pulsed.
        central: index of the measured spin (qubit registers only).
        method: ``"state"`` (fast) or ``"density"`` (literal reference).
    """
    protocol = EchoProtocol.default() if protocol is None else protocol
    if H.basis == "qubits":
        if not 0 <= central < H.n_spins:
            raise ValueError("central index out of range")
        if method == "state":
            w, v = H.eigh
            values = echo_signal(w, v, H.n_spins, protocol.tau, central, protocol.targets)
        else:
            values = _echo_density(H, protocol, central)
    elif H.basis == "electron-proton":
        if method == "state":
            half, pi, x_e, states, weights = _electron_proton_operators(H)
            values = _echo_dense(H, protocol.tau, half, pi, np.kron(x_e, ID2), states, weights)
        else:
            values = _echo_density(H, protocol, 0)
    else:
        raise ValueError(f"no echo protocol for basis {H.basis!r}")
    return CoherenceSeries(protocol.two_tau, values, {"n_spins": H.n_spins, "basis": H.basis})


def modulation_depth(values) -> float:
    """Largest excursion max |1 - L| of an echo signal."""
    values = getattr(values, "values", values)
    return float(np.max(np.abs(1.0 - np.asarray(values))))
