"""Physical constants and unit conventions.

Internal units
--------------
- energies / frequencies: angular MHz (rad/us), i.e. H/hbar
- time: microseconds
- length: Angstrom
- magnetic field: mT

Values given in ordinary MHz or GHz are multiplied by 2*pi once on ingestion
(see :func:`mhz` and :func:`ghz`).
"""

import math

from scipy import constants as _sc

TWO_PI = 2.0 * math.pi

#: Free-electron gyromagnetic ratio, ordinary MHz per mT.
GAMMA_E_MHZ_PER_MT = 28.02495
#: Ratio gamma_e / gamma_p used to derive the proton gyromagnetic ratio.
ELECTRON_PROTON_GAMMA_RATIO = 658.21

D_GHZ = -45.0
E_GHZ = 4.5
BMIN_MT = 23.6


def mhz(value):
    """Ordinary MHz -> angular MHz (rad/us)."""
    return TWO_PI * value


def ghz(value):
    """Ordinary GHz -> angular MHz (rad/us)."""
    return TWO_PI * 1e3 * value


def to_mhz(value):
    """Angular MHz -> ordinary MHz."""
    return value / TWO_PI


GAMMA_E = mhz(GAMMA_E_MHZ_PER_MT)


def dipolar_prefactor(gamma_a=GAMMA_E, gamma_b=GAMMA_E):
    """Point-dipole prefactor (mu0/4pi) gamma_a gamma_b hbar in rad/us * A^3.

    Args:
        gamma_a, gamma_b: gyromagnetic ratios in rad/us/mT.
    """
    # rad/us/mT -> rad/s/T
    ga = gamma_a * 1e9
    gb = gamma_b * 1e9
    k_si = _sc.mu_0 / (4.0 * math.pi) * ga * gb * _sc.hbar  # rad/s * m^3
    return k_si * 1e-6 * 1e30


DIPOLAR_K = dipolar_prefactor()
