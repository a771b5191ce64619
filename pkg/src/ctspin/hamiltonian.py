"""Spin Hamiltonians for the S=1 clock-transition qubit and its electron bath.

All matrices are H/hbar in angular MHz. Qubit registers use the product basis
with spin 0 as the most significant bit and bit value 0 meaning the
sigma_z = +1 state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import constants as C
from .errors import CoincidentSpinsError, DimensionError

MAX_QUBITS = 14

SQRT2 = np.sqrt(2.0)

# S=1 operators in the |+1>, |0>, |-1> basis
SX1 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / SQRT2
SY1 = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / SQRT2
SZ1 = np.diag([1.0, 0.0, -1.0]).astype(complex)
ID3 = np.eye(3, dtype=complex)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

#: Clock-transition qubit states |up>, |down> in the S=1 |m_z> basis.
CT_UP = np.array([1, 0, 1], dtype=complex) / SQRT2
CT_DOWN = np.array([1, 0, -1], dtype=complex) / SQRT2


@dataclass(frozen=True)
class QubitParams:
    """Single-spin parameters, internal units.

    Attributes:
        D: longitudinal anisotropy (rad/us).
        E: transverse anisotropy (rad/us); the qubit gap at the CT is 2E.
        B0: applied field (mT).
        Bmin: clock-transition field (mT).
        gamma_e: electron gyromagnetic ratio (rad/us/mT).
        gamma_p: proton gyromagnetic ratio (rad/us/mT).
        coupling_scale: dimensionless multiplier on every dipolar coupling.
    """

    D: float = C.ghz(C.D_GHZ)
    E: float = C.ghz(C.E_GHZ)
    B0: float = C.BMIN_MT
    Bmin: float = C.BMIN_MT
    gamma_e: float = C.GAMMA_E
    gamma_p: float = C.GAMMA_E / C.ELECTRON_PROTON_GAMMA_RATIO
    coupling_scale: float = 1.0

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("E must be positive")
        if abs(self.D) <= self.E:
            raise ValueError("|D| must exceed E")
        if self.Bmin <= 0:
            raise ValueError("Bmin must be positive")

    @classmethod
    def from_lab_units(
        cls,
        D_GHz=C.D_GHZ,
        E_GHz=C.E_GHZ,
        B0_mT=None,
        Bmin_mT=C.BMIN_MT,
        gamma_e_MHz_per_mT=C.GAMMA_E_MHZ_PER_MT,
        gamma_ratio=C.ELECTRON_PROTON_GAMMA_RATIO,
        coupling_scale=1.0,
    ):
        gamma_e = C.mhz(gamma_e_MHz_per_mT)
        return cls(
            D=C.ghz(D_GHz),
            E=C.ghz(E_GHz),
            B0=Bmin_mT if B0_mT is None else B0_mT,
            Bmin=Bmin_mT,
            gamma_e=gamma_e,
            gamma_p=gamma_e / gamma_ratio,
            coupling_scale=coupling_scale,
        )

    @property
    def detuning(self) -> float:
        """Zeeman term gamma_e (B0 - Bmin) in rad/us."""
        return self.gamma_e * (self.B0 - self.Bmin)

    @property
    def dipolar_k(self) -> float:
        """Electron-electron point-dipole prefactor in rad/us * A^3."""
        return C.dipolar_prefactor(self.gamma_e, self.gamma_e) * self.coupling_scale

    def with_field(self, B0):
        return QubitParams(self.D, self.E, B0, self.Bmin, self.gamma_e, self.gamma_p, self.coupling_scale)


@dataclass(frozen=True, eq=False)
class SystemHamiltonian:
    """Dense Hermitian matrix with a lazily cached eigendecomposition.

    Attributes:
        matrix: (d, d) array; real symmetric for qubit registers.
        basis: ``"qubits"``, ``"s1"`` or ``"electron-proton"``.
        dims: local dimensions of the tensor factors.
        qubit_basis: for ``"electron-proton"``, the (3, 2) electron qubit
            states used to define pulses and the measured observable.
    """

    matrix: np.ndarray
    basis: str = "qubits"
    dims: tuple = ()
    qubit_basis: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("Hamiltonian must be square")
        if np.iscomplexobj(m) and not np.any(m.imag):
            m = m.real.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        dims = tuple(self.dims) or (m.shape[0],)
        if int(np.prod(dims)) != m.shape[0]:
            raise DimensionError(f"dims {dims} do not match matrix size {m.shape[0]}")
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_spins(self) -> int:
        return len(self.dims)

    @cached_property
    def eigh(self):
        """(eigenvalues, eigenvectors) with H = V diag(w) V^dagger."""
        w, v = np.linalg.eigh(self.matrix)
        w.setflags(write=False)
        v.setflags(write=False)
        return w, v

    @property
    def eigenvalues(self):
        return self.eigh[0]

    @property
    def eigenvectors(self):
        return self.eigh[1]

    def hermiticity_error(self) -> float:
        m = self.matrix
        return float(np.linalg.norm(m - m.conj().T) / max(np.linalg.norm(m), 1e-300))


@dataclass(frozen=True, eq=False)
class GapAssignment:
    """Per-spin transverse anisotropies E_i (rad/us); the central value is fixed."""

    gaps: np.ndarray
    central: int = 0

    def __post_init__(self):
        g = np.array(self.gaps, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "gaps", g)
        if np.any(g <= 0):
            raise ValueError("all gaps must be positive")
        if not 0 <= self.central < len(g):
            raise ValueError("central index out of range")

    @classmethod
    def uniform(cls, E, n_spins, central=0):
        return cls(np.full(n_spins, float(E)), central)

    def __len__(self):
        return len(self.gaps)


def dipolar_tensor(r_i, r_j, prefactor=None) -> np.ndarray:
    """Point-dipole coupling tensor -K (3 r^ r^ - I) / r^3 in rad/us.

    Args:
        r_i, r_j: positions in Angstrom.
        prefactor: K in rad/us * A^3; defaults to the electron-electron value.
    """
    k = C.DIPOLAR_K if prefactor is None else prefactor
    r = np.asarray(r_j, dtype=float) - np.asarray(r_i, dtype=float)
    dist = np.linalg.norm(r)
    if dist < 1e-9:
        raise CoincidentSpinsError("coincident spin positions")
    u = r / dist
    return -k * (3.0 * np.outer(u, u) - np.eye(3)) / dist**3


def coupling_zz(r_i, r_j, prefactor=None) -> float:
    """The zz element of :func:`dipolar_tensor`, K (1 - 3 cos^2 theta) / r^3."""
    k = C.DIPOLAR_K if prefactor is None else prefactor
    r = np.asarray(r_j, dtype=float) - np.asarray(r_i, dtype=float)
    dist = np.linalg.norm(r)
    if dist < 1e-9:
        raise CoincidentSpinsError("coincident spin positions")
    cos_t = r[2] / dist
    return float(k * (1.0 - 3.0 * cos_t * cos_t) / dist**3)


def coupling_matrix(positions, prefactor=None) -> np.ndarray:
    """Symmetric matrix of J_zz for every pair (zero diagonal)."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    k = C.DIPOLAR_K if prefactor is None else prefactor
    diff = pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(diff, axis=-1)
    n = len(pos)
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] < 1e-9):
        raise CoincidentSpinsError("coincident spin positions")
    J = np.zeros((n, n))
    cos2 = diff[..., 2][off] ** 2 / dist[off] ** 2
    J[off] = k * (1.0 - 3.0 * cos2) / dist[off] ** 3
    return J


def single_s1_matrix(params: QubitParams, detuning=None) -> np.ndarray:
    det = params.detuning if detuning is None else detuning
    s = 1.0
    return (
        params.D * (SZ1 @ SZ1 - s * (s + 1) / 3.0 * ID3)
        + params.E * (SX1 @ SX1 - SY1 @ SY1)
        + det * SZ1
    )


def build_single_s1(params: QubitParams) -> SystemHamiltonian:
    """3x3 spin-1 Hamiltonian D[Sz^2 - 2/3] + E(Sx^2 - Sy^2) + gamma_e(B0 - Bmin) Sz."""
    return SystemHamiltonian(single_s1_matrix(params), basis="s1", dims=(3,))


def project(op, alpha=CT_UP, beta=CT_DOWN) -> np.ndarray:
    """2x2 matrix of ``op`` restricted to span{alpha, beta}."""
    basis = np.stack([alpha, beta], axis=1)
    return basis.conj().T @ np.asarray(op) @ basis


def projection_rules() -> dict:
    """Projections of the S=1 operators onto the clock-transition qubit."""
    return {
        "Sz2": project(SZ1 @ SZ1),
        "Sx2-Sy2": project(SX1 @ SX1 - SY1 @ SY1),
        "Sx": project(SX1),
        "Sy": project(SY1),
        "Sz": project(SZ1),
    }


def project_qubit(params: QubitParams) -> SystemHamiltonian:
    """Projected single-qubit Hamiltonian E sigma_z + gamma_e (B0 - Bmin) sigma_x.

    Each term of the S=1 Hamiltonian is projected separately; the constant
    D/3 coming from the Sz^2 term is dropped.
    """
    rules = projection_rules()
    h = params.E * rules["Sx2-Sy2"] + params.detuning * rules["Sz"]
    return SystemHamiltonian(h, basis="qubits", dims=(2,))


def _check_qubits(n):
    if n < 1:
        raise DimensionError("need at least one spin")
    if n > MAX_QUBITS:
        raise DimensionError(f"{n} spins exceed the dense limit of {MAX_QUBITS}")


def projected_matrix(gaps, couplings=None, detuning=0.0) -> np.ndarray:
    """Real symmetric matrix of sum_i [E_i sz_i + h sx_i] + sum_{i<j} J_ij sx_i sx_j.

    Args:
        gaps: per-spin E_i, rad/us.
        couplings: (n, n) symmetric J_zz matrix; only i < j is read.
        detuning: single-spin sigma_x field gamma_e (B0 - Bmin).
    """
    gaps = np.asarray(gaps, dtype=float)
    n = len(gaps)
    _check_qubits(n)
    d = 1 << n
    k = np.arange(d)
    bits = (k[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    H = np.zeros((d, d))
    H[k, k] = (1 - 2 * bits) @ gaps
    if detuning:
        for i in range(n):
            H[k, k ^ (1 << (n - 1 - i))] += detuning
    if couplings is not None:
        J = np.asarray(couplings, dtype=float)
        for i in range(n):
            for j in range(i + 1, n):
                if J[i, j]:
                    mask = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
                    H[k, k ^ mask] += J[i, j]
    return H


def build_projected_n_spin(config, params: QubitParams, gaps=None) -> SystemHamiltonian:
    """2^N projected Hamiltonian of a spin configuration.

    Args:
        config: a :class:`~ctspin.lattice.SpinConfiguration` or an (N, 3)
            array of positions in Angstrom.
        params: single-spin parameters (field, coupling scale).
        gaps: :class:`GapAssignment` or array of E_i; defaults to E for all.
    """
    positions = getattr(config, "positions", config)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = len(positions)
    _check_qubits(n)
    if gaps is None:
        gap_values = np.full(n, params.E)
    else:
        gap_values = np.asarray(getattr(gaps, "gaps", gaps), dtype=float)
    if len(gap_values) != n:
        raise DimensionError("one gap per spin is required")
    J = coupling_matrix(positions, params.dipolar_k) if n > 1 else None
    H = projected_matrix(gap_values, J, params.detuning)
    return SystemHamiltonian(H, basis="qubits", dims=(2,) * n)


def two_spin_hamiltonian(E, J, delta=0.0, detuning=0.0) -> SystemHamiltonian:
    """(E + delta/2) sz_1 + (E - delta/2) sz_2 + J sx_1 sx_2 (+ detuning sx on both)."""
    couplings = np.array([[0.0, J], [J, 0.0]])
    H = projected_matrix([E + delta / 2, E - delta / 2], couplings, detuning)
    return SystemHamiltonian(H, basis="qubits", dims=(2, 2))


def electron_qubit_basis(params: QubitParams, B0=None) -> np.ndarray:
    """The two lowest eigenstates of the S=1 Hamiltonian as columns (up, down).

    Phases are fixed by overlap with the clock-transition states so that the
    basis varies continuously with field.
    """
    p = params if B0 is None else params.with_field(B0)
    _, v = np.linalg.eigh(single_s1_matrix(p))
    down, up = v[:, 0], v[:, 1]
    up = up * np.exp(-1j * np.angle(CT_UP.conj() @ up))
    down = down * np.exp(-1j * np.angle(CT_DOWN.conj() @ down))
    return np.stack([up, down], axis=1)


PROTON_COUPLINGS = ("electron-secular", "zz", "full")


def build_electron_proton(params: QubitParams, r, B0=None, coupling="electron-secular") -> SystemHamiltonian:
    """6x6 Hamiltonian of one S=1 electron and one proton.

    H = H_e (x) 1 + gamma_p B0 1 (x) Iz + dipolar coupling with prefactor
    (mu0/4pi) gamma_e gamma_p hbar. ``coupling`` selects which tensor terms
    are kept:

    - ``"electron-secular"``: Sz (x) (J_zx Ix + J_zy Iy + J_zz Iz), the terms
      that survive projection onto the electron qubit;
    - ``"zz"``: Sz (x) Iz only;
    - ``"full"``: every S_a (x) I_b term.

    Args:
        r: electron-to-proton vector in Angstrom.
        B0: applied field in mT; moves both the electron detuning and the
            proton Zeeman term. Defaults to ``params.B0``.
    """
    if coupling not in PROTON_COUPLINGS:
        raise ValueError(f"coupling must be one of {PROTON_COUPLINGS}")
    p = params if B0 is None else params.with_field(B0)
    k = C.dipolar_prefactor(p.gamma_e, p.gamma_p) * p.coupling_scale
    T = dipolar_tensor(np.zeros(3), r, k)
    S = (SX1, SY1, SZ1)
    I = (SIGMA_X / 2, SIGMA_Y / 2, SIGMA_Z / 2)
    H = np.kron(single_s1_matrix(p), ID2) + p.gamma_p * p.B0 * np.kron(ID3, I[2])
    for a in range(3):
        if coupling != "full" and a != 2:
            continue
        for b in range(3):
            if coupling == "zz" and b != 2:
                continue
            H = H + T[a, b] * np.kron(S[a], I[b])
    return SystemHamiltonian(H, basis="electron-proton", dims=(3, 2), qubit_basis=electron_qubit_basis(p))


def zeeman_levels(params: QubitParams, fields) -> tuple[np.ndarray, np.ndarray]:
    """Qubit levels against field, from the S=1 model and from the projection.

    Returns:
        ``(exact, projected)``, each of shape (len(fields), 2) in rad/us and
        sorted ascending. ``exact`` holds the two lowest S=1 eigenvalues;
        ``projected`` those of the projected qubit, which omit the constant
        D/3 of the zero-field term.
    """
    fields = np.atleast_1d(np.asarray(fields, dtype=float))
    exact = np.empty((len(fields), 2))
    projected = np.empty((len(fields), 2))
    for i, b in enumerate(fields):
        p = params.with_field(b)
        exact[i] = np.linalg.eigvalsh(single_s1_matrix(p))[:2]
        projected[i] = np.linalg.eigvalsh(project_qubit(p).matrix)
    return exact, projected
