"""Closed-form two-spin echo signals.

For two qubits with H = (E + delta/2) sz_1 + (E - delta/2) sz_2 + J sx_1 sx_2,
both pulsed, all quantities in rad/us and us.
"""

import numpy as np


def resonant_coherence(E, J, tau):
    """Exact L(2 tau) for equal gaps (delta = 0)."""
    tau = np.asarray(tau, dtype=float)
    xi = 4.0 * E**2 + J**2
    rx = np.sqrt(xi)
    return (
        4.0 * E**2 * np.cos(2.0 * J * tau) / xi
        + J * np.sin(2.0 * J * tau) * np.sin(2.0 * tau * rx) / rx
        + J**2 * np.cos(2.0 * J * tau) * np.cos(2.0 * tau * rx) / xi
    )


def offresonant_coherence(E, J, delta, tau):
    """Weak-coupling (E >> J) L(2 tau) for a gap mismatch ``delta``.

    delta^2/(delta^2 + J^2) + J^2/(delta^2 + J^2) cos(2 tau sqrt(delta^2 + J^2))
    """
    tau = np.asarray(tau, dtype=float)
    amp, omega = amplitude_frequency(J, delta)
    return (1.0 - amp) + amp * np.cos(2.0 * omega * tau)


def offresonant_leading_terms(E, J, delta, tau):
    """The two dominant exact terms of the off-resonant signal.

    Omits the fast terms oscillating at the single-spin gap frequency, which
    are suppressed by J / E.
    """
    tau = np.asarray(tau, dtype=float)
    den = 4 * delta**2 * E**2 + delta**2 * J**2 + 4 * E**2 * J**2 + J**4
    return (4 * delta**2 * E**2 + 4 * E**2 * J**2 * np.cos(2 * tau * np.sqrt(delta**2 + J**2))) / den


def amplitude_frequency(J, delta):
    """(A, omega) of the off-resonant signal A cos(2 omega tau) + (1 - A)."""
    s = delta**2 + J**2
    if s == 0:
        return 0.0, 0.0
    return J**2 / s, float(np.sqrt(s))
