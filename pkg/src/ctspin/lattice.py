"""Host-site lattices and random spin configurations.

The host crystal is reduced to its two magnetic host sites per unit cell.
Supercells are carved out of the periodic site set either as spheres around a
fixed point or as a cube dissected into seven regions of nearly equal site
count. Every lattice keeps its sites ordered by distance from its center
(Euclidean for spheres, Chebyshev for cubes), so a smaller sphere built around
the same point is a prefix of a larger one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyLatticeError, SamplingError

CELL_VECTORS = np.array(
    [
        [12.74, 0.00, 0.00],
        [0.27, 13.07, 0.00],
        [5.46, 2.42, 19.58],
    ]
)
DEFAULT_BASIS = np.array([[0.25, 0.25, 0.25], [0.75, 0.75, 0.75]])
#: Fractional coordinates of the default sphere center. Chosen off-site so the
#: sphere site counts track the tabulated HoW10 supercells.
DEFAULT_CENTER_FRACTION = np.array([0.1, 0.0, 0.7])

DUPLICATE_TOL = 1e-6
N_REGIONS = 7
CENTRAL_REGION = 0
LATTICE_FORMAT = "ctspin-lattice"
LATTICE_VERSION = 1


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UnitCell:
    """Triclinic cell with fractional host-site positions.

    Attributes:
        vectors: (3, 3) array, one lattice vector per row, in Angstrom.
        basis: (n, 3) fractional coordinates in [0, 1).
    """

    vectors: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        vectors = _frozen(self.vectors)
        basis = _frozen(np.atleast_2d(self.basis))
        if vectors.shape != (3, 3):
            raise ValueError("cell vectors must be a 3x3 array")
        if basis.ndim != 2 or basis.shape[1] != 3 or len(basis) == 0:
            raise ValueError("basis must be an (n, 3) array of fractional positions")
        if np.any(basis < 0) or np.any(basis >= 1):
            raise ValueError("basis fractional coordinates must lie in [0, 1)")
        if abs(np.linalg.det(vectors)) < 1e-9:
            raise ValueError("cell vectors are linearly dependent")
        cart = basis @ vectors
        for i in range(len(cart)):
            for j in range(i + 1, len(cart)):
                if np.linalg.norm(cart[i] - cart[j]) < DUPLICATE_TOL:
                    raise ValueError("basis sites coincide")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "basis", basis)

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.vectors)))

    def fractional(self, points):
        return np.asarray(points, dtype=float) @ np.linalg.inv(self.vectors)

    def cartesian(self, fractional):
        return np.asarray(fractional, dtype=float) @ self.vectors

    def default_center(self) -> np.ndarray:
        return self.cartesian(DEFAULT_CENTER_FRACTION)


def build_unit_cell(basis=None) -> UnitCell:
    """Return the HoW10 cell with its two host sites.

    Args:
        basis: optional (2, 3) fractional coordinates overriding
            :data:`DEFAULT_BASIS`.
    """
    return UnitCell(CELL_VECTORS, DEFAULT_BASIS if basis is None else basis)


@dataclass(frozen=True, eq=False)
class SiteLattice:
    """A finite set of host sites.

    Attributes:
        cell: parent unit cell.
        sites: (n, 3) Cartesian positions in Angstrom, sorted by distance from
            ``center`` (Chebyshev distance from the center site for cubes).
        geometry: ``"sphere"`` or ``"cube"``.
        center: geometric center of the region.
        center_index: index of the site hosting the central spin.
        radius: sphere radius, ``None`` for cubes.
        regions: per-site region label (cubes only). Label 0 is the central
            block, 1..6 are the +x, -x, +y, -y, +z, -z sections.
    """

    cell: UnitCell
    sites: np.ndarray
    geometry: str
    center: np.ndarray
    center_index: int
    radius: Optional[float] = None
    regions: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "sites", _frozen(self.sites))
        object.__setattr__(self, "center", _frozen(self.center))
        if self.regions is not None:
            object.__setattr__(self, "regions", _frozen(self.regions, dtype=np.int64))
        if self.geometry not in ("sphere", "cube"):
            raise ValueError(f"unknown geometry {self.geometry!r}")

    def __len__(self):
        return len(self.sites)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def center_site(self) -> np.ndarray:
        return self.sites[self.center_index]

    def region_indices(self, label: int) -> np.ndarray:
        if self.regions is None:
            raise ValueError("lattice has no region labels")
        return np.flatnonzero(self.regions == label)


@dataclass(frozen=True, eq=False)
class SpinConfiguration:
    """Occupied sites of a lattice; ``positions[central_index]`` is the central spin."""

    positions: np.ndarray
    site_indices: np.ndarray
    lattice: Optional[SiteLattice] = None
    central_index: int = 0

    def __post_init__(self):
        positions = _frozen(np.atleast_2d(self.positions))
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "site_indices", _frozen(self.site_indices, dtype=np.int64))
        if len(positions) < 1:
            raise ValueError("a configuration needs at least the central spin")
        if not 0 <= self.central_index < len(positions):
            raise ValueError("central index out of range")

    @property
    def n_spins(self) -> int:
        return len(self.positions)

    @property
    def central_position(self) -> np.ndarray:
        return self.positions[self.central_index]


def _periodic_sites(cell: UnitCell, center, radius):
    """All periodic images of the basis within ``radius`` of ``center``, unsorted."""
    inv = np.linalg.inv(cell.vectors)
    fc = np.asarray(center, dtype=float) @ inv
    reach = radius * np.linalg.norm(inv, axis=0)
    lo = np.floor(fc - reach).astype(int) - 1
    hi = np.ceil(fc + reach).astype(int) + 1
    grids = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij")
    ijk = np.stack(grids, axis=-1).reshape(-1, 3).astype(float)
    frac = (ijk[:, None, :] + cell.basis[None, :, :]).reshape(-1, 3)
    pts = frac @ cell.vectors
    d = np.linalg.norm(pts - center, axis=1)
    keep = d <= radius
    return pts[keep], d[keep]


def _sort_sites(pts, key):
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], key))
    return pts[order], key[order]


def generate_sphere_sites(cell: UnitCell, radius: float, center=None) -> SiteLattice:
    """Sites within ``radius`` (inclusive) of ``center``.

    The central spin goes on the site nearest ``center``; with the default
    center that site is index 0 of the sorted lattice.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = cell.default_center() if center is None else np.asarray(center, dtype=float)
    pts, d = _periodic_sites(cell, center, radius)
    if len(pts) == 0:
        raise EmptyLatticeError(f"no host site within {radius} A of the center")
    pts, d = _sort_sites(pts, d)
    return SiteLattice(cell, pts, "sphere", center, 0, radius=float(radius))


class SphereSize(NamedTuple):
    radius: float
    n_sites: int


def radius_for_density(cell: UnitCell, density: float, n_spins: int, center=None) -> SphereSize:
    """Smallest sphere radius holding at least ``ceil(n_spins / density)`` sites.

    Returns the radius together with the site count actually achieved (ties in
    distance can push it slightly above the target).
    """
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    target = math.ceil(n_spins / density - 1e-9)
    center = cell.default_center() if center is None else np.asarray(center, dtype=float)
    per_site = cell.volume / len(cell.basis)
    radius = (3 * target * per_site / (4 * math.pi)) ** (1 / 3)
    radius += np.linalg.norm(cell.vectors, axis=1).max()
    while True:
        _, d = _periodic_sites(cell, center, radius)
        if len(d) >= target:
            break
        radius *= 1.5
    d.sort()
    r = float(d[target - 1])
    return SphereSize(r, int(np.count_nonzero(d <= r)))


def sample_configuration(lattice: SiteLattice, n_spins: int, rng: np.random.Generator) -> SpinConfiguration:
    """Central spin on the center site plus ``n_spins - 1`` distinct random sites."""
    if n_spins < 1:
        raise SamplingError("n_spins must be >= 1")
    if n_spins > lattice.n_sites:
        raise SamplingError(f"cannot place {n_spins} spins on {lattice.n_sites} sites")
    others = np.delete(np.arange(lattice.n_sites), lattice.center_index)
    chosen = rng.choice(others, size=n_spins - 1, replace=False)
    idx = np.concatenate(([lattice.center_index], chosen)).astype(np.int64)
    return SpinConfiguration(lattice.sites[idx], idx, lattice)


def _match_sites(reference: np.ndarray, query: np.ndarray):
    """Index of each query point in ``reference`` (-1 where absent)."""
    dist, idx = cKDTree(reference).query(query, distance_upper_bound=DUPLICATE_TOL)
    return np.where(np.isfinite(dist), idx, -1)


def extend_configuration(config: SpinConfiguration, enlarged: SiteLattice, rng: np.random.Generator) -> SpinConfiguration:
    """Keep every spin of ``config`` and add one in the shell ``enlarged - parent``."""
    parent = config.lattice
    if parent is None:
        raise SamplingError("configuration carries no parent lattice")
    in_enlarged = _match_sites(enlarged.sites, parent.sites)
    if np.any(in_enlarged < 0):
        raise SamplingError("enlarged lattice does not contain the parent lattice")
    shell = np.setdiff1d(np.arange(enlarged.n_sites), in_enlarged)
    if len(shell) == 0:
        raise SamplingError("enlarged lattice adds no new sites")
    new = rng.choice(shell)
    idx = np.concatenate((in_enlarged[config.site_indices], [new])).astype(np.int64)
    return SpinConfiguration(enlarged.sites[idx], idx, enlarged, config.central_index)


def _split_counts(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def build_dissected_cube(cell: UnitCell, n_sites_total: int, center=None) -> SiteLattice:
    """Cube of ``n_sites_total`` sites cut into a central block and six sections.

    Sites are ranked by Chebyshev distance from the center site; the first
    ``n/7`` form the central block and the rest go to the section of their
    dominant displacement axis and sign. Section sizes are balanced exactly:
    when a section is full, a site falls back to its next-best direction.
    """
    if n_sites_total < N_REGIONS:
        raise ValueError(f"need at least {N_REGIONS} sites")
    center = cell.default_center() if center is None else np.asarray(center, dtype=float)
    side = (n_sites_total * cell.volume / len(cell.basis)) ** (1 / 3)
    margin = np.linalg.norm(cell.vectors, axis=1).max()
    radius = math.sqrt(3) * side / 2 * 1.2 + margin
    while True:
        pts, d = _periodic_sites(cell, center, radius)
        origin = pts[np.argmin(d)]
        disp = pts - origin
        cheb = np.abs(disp).max(axis=1)
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], np.linalg.norm(disp, axis=1), cheb))
        # every site within the Chebyshev cutoff must be inside the sphere
        if len(pts) > n_sites_total and cheb[order[n_sites_total - 1]] * math.sqrt(3) < radius - np.linalg.norm(origin - center):
            break
        radius *= 1.3
    order = order[:n_sites_total]
    pts, disp = pts[order], disp[order]

    n_central = max(1, round(n_sites_total / N_REGIONS))
    labels = np.full(n_sites_total, CENTRAL_REGION, dtype=np.int64)
    capacity = _split_counts(n_sites_total - n_central, N_REGIONS - 1)

    outer = np.arange(n_central, n_sites_total)
    # score of each outer site for the six directions +x,-x,+y,-y,+z,-z
    norm = np.abs(disp[outer]).max(axis=1, keepdims=True)
    unit = disp[outer] / norm
    scores = np.empty((len(outer), 6))
    scores[:, 0::2] = unit
    scores[:, 1::2] = -unit
    pref = np.argsort(-scores, axis=1, kind="stable")
    ranked = np.sort(scores, axis=1)
    margin_ = ranked[:, -1] - ranked[:, -2]
    for k in np.argsort(-margin_, kind="stable"):
        for region in pref[k]:
            if capacity[region] > 0:
                capacity[region] -= 1
                labels[outer[k]] = region + 1
                break
    return SiteLattice(cell, pts, "cube", center, 0, regions=labels)


def sample_uniform_configuration(cube: SiteLattice, rng: np.random.Generator) -> SpinConfiguration:
    """Central spin on the center site plus exactly one spin in each outer section."""
    if cube.regions is None:
        raise SamplingError("lattice has no region labels")
    idx = [cube.center_index]
    for label in range(1, N_REGIONS):
        members = cube.region_indices(label)
        members = members[members != cube.center_index]
        if len(members) == 0:
            raise SamplingError(f"region {label} is empty")
        idx.append(rng.choice(members))
    idx = np.asarray(idx, dtype=np.int64)
    return SpinConfiguration(cube.sites[idx], idx, cube)


def lattice_to_dict(lattice: SiteLattice) -> dict:
    return {
        "format": LATTICE_FORMAT,
        "version": LATTICE_VERSION,
        "cell": {
            "vectors": lattice.cell.vectors.tolist(),
            "basis": lattice.cell.basis.tolist(),
        },
        "geometry": lattice.geometry,
        "center": [round(float(v), 6) for v in lattice.center],
        "center_index": int(lattice.center_index),
        "radius": lattice.radius,
        "sites": np.round(lattice.sites, 3).tolist(),
        "regions": None if lattice.regions is None else lattice.regions.tolist(),
    }


def lattice_from_dict(doc: dict) -> SiteLattice:
    if doc.get("format") != LATTICE_FORMAT:
        raise ValueError("not a lattice document")
    if doc.get("version") != LATTICE_VERSION:
        raise ValueError(f"unsupported lattice document version {doc.get('version')!r}")
    cell = UnitCell(np.array(doc["cell"]["vectors"]), np.array(doc["cell"]["basis"]))
    regions = doc.get("regions")
    return SiteLattice(
        cell,
        np.array(doc["sites"], dtype=float),
        doc["geometry"],
        np.array(doc["center"], dtype=float),
        int(doc["center_index"]),
        radius=doc.get("radius"),
        regions=None if regions is None else np.array(regions),
    )


def save_lattice(lattice: SiteLattice, path) -> None:
    with open(path, "w") as fh:
        json.dump(lattice_to_dict(lattice), fh)


def load_lattice(path) -> SiteLattice:
    with open(path) as fh:
        return lattice_from_dict(json.load(fh))
