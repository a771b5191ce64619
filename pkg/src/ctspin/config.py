"""Experiment configuration files (TOML) and their validation.

Lab units are used at this boundary: GHz for D and E, MHz for couplings and
gyromagnetic ratios, mT for fields, us for times, Angstrom for lengths.
Everything is converted once, in :meth:`ExperimentConfig.qubit_params` and
:meth:`ExperimentConfig.ensemble_spec`.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import constants as C
from .cce import CCEConfig, R_BATH, R_DIPOLE
from .ensemble import EnsembleSpec
from .hamiltonian import QubitParams
from .lattice import N_REGIONS

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXPERIMENT_KINDS = (
    "two-spin",
    "field-sweep",
    "electron-proton",
    "nspin-convergence",
    "density-scan",
    "disorder-scan",
    "uniformity",
    "cce-density",
    "cce-disorder",
)

ExperimentKind = Literal[
    "two-spin",
    "field-sweep",
    "electron-proton",
    "nspin-convergence",
    "density-scan",
    "disorder-scan",
    "uniformity",
    "cce-density",
    "cce-disorder",
]

# scan values used when a config gives none
DEFAULT_SCAN_VALUES = {
    "nspin-convergence": [3, 4, 5, 6, 7, 8],
    "density-scan": [0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007, 0.008, 0.009, 0.01, 0.1],
    "disorder-scan": [0.0, 0.00007, 0.003, 0.016],
    "cce-density": [0.001, 0.003, 0.01],
    "cce-disorder": [0.0, 0.003, 0.016],
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class PhysicsConfig(_Strict):
    D_GHz: float = C.D_GHZ
    E_GHz: float = Field(C.E_GHZ, gt=0)
    Bmin_mT: float = Field(C.BMIN_MT, gt=0)
    B0_mT: Optional[float] = None
    gamma_e_MHz_per_mT: float = Field(C.GAMMA_E_MHZ_PER_MT, gt=0)
    gamma_ratio: float = Field(C.ELECTRON_PROTON_GAMMA_RATIO, gt=0)
    coupling_scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _anisotropy(self):
        if abs(self.D_GHz) <= self.E_GHz:
            raise ValueError("|D_GHz| must exceed E_GHz")
        return self


class EchoConfig(_Strict):
    n_tau: int = Field(501, ge=10)
    two_tau_max_us: float = Field(10.0, gt=0)


class EnsembleConfig(_Strict):
    density: float = Field(0.001, gt=0, le=1)
    n_spins: int = Field(6, ge=1, le=14)
    n_configs: int = Field(200, ge=1)
    geometry: Literal["sphere", "dissected-cube"] = "sphere"
    gap_std_fraction: float = Field(0.0, ge=0)
    fit_max_two_tau_us: Optional[float] = Field(None, gt=0)
    keep_series: bool = False
    max_attempt_factor: int = Field(1000, ge=1)


class CCESettings(_Strict):
    max_order: int = Field(3, ge=1, le=13)
    r_bath: float = Field(R_BATH, gt=0)
    r_dipole: float = Field(R_DIPOLE, gt=0)
    divergence_threshold: float = Field(1e3, gt=1)
    zero_crossing_epsilon: float = Field(1e-6, gt=0)

    @model_validator(mode="after")
    def _radii(self):
        if self.r_bath < self.r_dipole:
            raise ValueError("r_bath must be >= r_dipole")
        return self


class TwoSpinConfig(_Strict):
    J_MHz: float = Field(1.0, ge=0)
    delta_MHz: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 5.0])
    field_offsets_mT: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    zeeman_half_width_mT: float = Field(15.0, gt=0)
    zeeman_points: int = Field(121, ge=2)

    @field_validator("delta_MHz")
    @classmethod
    def _non_negative(cls, v):
        if any(d < 0 for d in v):
            raise ValueError("gap differences must be >= 0")
        return v


class ProtonConfig(_Strict):
    position_A: List[float] = Field(default_factory=lambda: [2.0, 0.0, 2.0], min_length=3, max_length=3)
    coupling: Literal["electron-secular", "zz", "full"] = "electron-secular"
    field_offsets_mT: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])

    @field_validator("position_A")
    @classmethod
    def _nonzero(cls, v):
        if math.hypot(*v) == 0:
            raise ValueError("the proton cannot sit on the electron")
        return v


class ScanConfig(_Strict):
    values: Optional[List[float]] = None


class OutputConfig(_Strict):
    directory: str = "ctspin-out"


class ExperimentConfig(_Strict):
    """One experiment: its kind plus every parameter it depends on."""

    kind: ExperimentKind
    seed: int = Field(0, ge=0)
    physics: PhysicsConfig = Field(default_factory=PhysicsConfig)
    echo: EchoConfig = Field(default_factory=EchoConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    cce: CCESettings = Field(default_factory=CCESettings)
    two_spin: TwoSpinConfig = Field(default_factory=TwoSpinConfig)
    proton: ProtonConfig = Field(default_factory=ProtonConfig)
    scan: ScanConfig = Field(default_factory=ScanConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _scan_values(self):
        if self.ensemble.geometry == "dissected-cube" and self.kind != "uniformity":
            if self.kind == "nspin-convergence":
                raise ValueError("ensemble.geometry: the spin-count scan needs the sphere")
            if self.ensemble.n_spins != N_REGIONS:
                raise ValueError(f"ensemble.n_spins: the dissected cube holds exactly {N_REGIONS} spins")
        vals = self.scan.values
        if vals is None:
            return self
        if not vals:
            raise ValueError("scan.values must not be empty")
        if self.kind in ("density-scan", "cce-density") and any(not 0 < v <= 1 for v in vals):
            raise ValueError("scan.values: densities must lie in (0, 1]")
        if self.kind in ("disorder-scan", "cce-disorder") and any(v < 0 for v in vals):
            raise ValueError("scan.values: sigma must be >= 0")
        if self.kind == "nspin-convergence" and any(v != int(v) or not 2 <= v <= 14 for v in vals):
            raise ValueError("scan.values: spin counts must be integers in [2, 14]")
        return self

    def scan_values(self) -> list:
        if self.scan.values is not None:
            return list(self.scan.values)
        return list(DEFAULT_SCAN_VALUES.get(self.kind, []))

    def qubit_params(self) -> QubitParams:
        p = self.physics
        return QubitParams.from_lab_units(
            D_GHz=p.D_GHz,
            E_GHz=p.E_GHz,
            B0_mT=p.B0_mT,
            Bmin_mT=p.Bmin_mT,
            gamma_e_MHz_per_mT=p.gamma_e_MHz_per_mT,
            gamma_ratio=p.gamma_ratio,
            coupling_scale=p.coupling_scale,
        )

    def cce_config(self) -> CCEConfig:
        return CCEConfig(**self.cce.model_dump())

    def ensemble_spec(self) -> EnsembleSpec:
        e = self.ensemble
        engine = "cce" if self.kind.startswith("cce-") else "exact"
        # the uniformity experiment runs both geometries itself
        geometry = "sphere" if self.kind == "uniformity" else e.geometry
        return EnsembleSpec(
            density=e.density,
            n_spins=e.n_spins,
            n_configs=e.n_configs,
            geometry=geometry,
            gap_std_fraction=e.gap_std_fraction,
            engine=engine,
            cce=self.cce_config(),
            seed=self.seed,
            n_tau=self.echo.n_tau,
            two_tau_max=self.echo.two_tau_max_us,
            params=self.qubit_params(),
            fit_max_two_tau=e.fit_max_two_tau_us,
            keep_series=e.keep_series,
            max_attempt_factor=e.max_attempt_factor,
        )

    def resolved(self) -> dict:
        """Fully resolved config, defaults included, as plain data."""
        doc = self.model_dump(mode="json")
        doc["scan"]["values"] = self.scan_values() or None
        return doc


class ConfigError(Exception):
    """A config file cannot be read or fails validation."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


def _problems(exc: ValidationError):
    out = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            out.append(f"{loc}: unknown key")
        else:
            out.append(f"{loc}: {err['msg']}")
    return out


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config mapping.

    A run manifest is accepted too: its ``config`` entry is used.
    """
    if isinstance(doc, dict) and isinstance(doc.get("config"), dict):
        doc = doc["config"]
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError("invalid configuration", _problems(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read a TOML config, or a JSON run manifest, and validate it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
        else:
            doc = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(doc)

