"""Least-squares fits of echo decays and two-spin oscillations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FlatSignalError, NoDecayError

BETA_BOUNDS = (0.3, 3.0)
NO_DECAY_LEVEL = 0.95
_GRID = 5


@dataclass(frozen=True)
class FitResult:
    """Stretched-exponential fit exp(-(t / T2)^beta), t = 2 tau in us."""

    T2: float
    beta: float
    sse: float
    converged: bool
    iterations: int
    n_points: int


@dataclass(frozen=True)
class CosineFit:
    """Fit of A cos(omega t) + B with t = 2 tau (so omega multiplies 2 tau)."""

    A: float
    omega: float
    B: float
    sse: float


def _xy(series, t_max=None):
    t = np.asarray(getattr(series, "times", None) if hasattr(series, "times") else series[0], dtype=float)
    y = np.asarray(getattr(series, "values", None) if hasattr(series, "values") else series[1], dtype=float)
    if t_max is not None:
        keep = t <= t_max
        t, y = t[keep], y[keep]
    return t, y


def stretched_exponential(t, T2, beta):
    return np.exp(-((np.asarray(t, dtype=float) / T2) ** beta))


def fit_stretched_exponential(series, t_max=None, beta_bounds=BETA_BOUNDS) -> FitResult:
    """Fit exp(-(t/T2)^beta) to a coherence decay.

    A 5x5 grid of starts (log-spaced T2, linear beta) is refined with a
    bounded trust-region solver using the analytic Jacobian; the lowest
    residual wins. T2 is optimised in log space so it stays positive.

    Args:
        series: :class:`~ctspin.echo.CoherenceSeries` or ``(times, values)``.
        t_max: optional upper limit of the fit window (us).

    Raises:
        NoDecayError: the signal stays above 0.95 over the whole window.
    """
    t, y = _xy(series, t_max)
    if len(t) < 10:
        raise ValueError("need at least 10 points to fit")
    lo, hi = beta_bounds
    if np.all(y > NO_DECAY_LEVEL):
        bound = t.max() * (-np.log(NO_DECAY_LEVEL)) ** (-1.0 / hi)
        raise NoDecayError(f"signal never decays below {NO_DECAY_LEVEL}; T2 >= {bound:.4g} us", bound)

    pos = t[t > 0]
    t_lo, t_hi = pos.min(), t.max()
    # finite log T2 box keeps exp and powers representable on pathological data
    log_lo, log_hi = np.log(t_lo) - 3 * np.log(10), np.log(t_hi) + 6 * np.log(10)

    def residual(p):
        return stretched_exponential(t, np.exp(p[0]), p[1]) - y

    def jac(p):
        T2, beta = np.exp(p[0]), p[1]
        x = np.where(t > 0, t / T2, 1.0)
        u = np.where(t > 0, x**beta, 0.0)
        f = np.exp(-u)
        d_logT2 = f * u * beta
        d_beta = np.where(t > 0, -f * u * np.log(x), 0.0)
        return np.stack([d_logT2, d_beta], axis=1)

    best = None
    starts = [(lt, b) for lt in np.linspace(np.log(t_lo), np.log(10 * t_hi), _GRID) for b in np.linspace(lo, hi, _GRID)]
    for start in starts:
        r = least_squares(
            residual,
            start,
            jac=jac,
            bounds=([log_lo, lo], [log_hi, hi]),
            method="trf",
            xtol=1e-14,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=2000,
        )
        if best is None or r.cost < best.cost:
            best = r
    sse = float(2 * best.cost)
    return FitResult(float(np.exp(best.x[0])), float(best.x[1]), sse, bool(best.status > 0), int(best.nfev), len(t))


def _dominant_frequency(t, y):
    """Angular frequency of the strongest spectral line of ``y - mean``."""
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6):
        raise ValueError("cosine fit needs a uniform time grid")
    z = y - y.mean()
    n = 16 * len(z)
    spec = np.abs(np.fft.rfft(z, n))
    freqs = np.fft.rfftfreq(n, dt[0])
    spec[0] = 0.0
    k = int(np.argmax(spec))
    noise = np.median(spec[1:]) if len(spec) > 2 else 0.0
    return 2 * np.pi * freqs[k], spec[k], noise


def fit_cosine_offset(series) -> CosineFit:
    """Fit A cos(omega t) + B, t = 2 tau, seeding omega from the spectrum.

    Raises:
        FlatSignalError: no spectral peak stands out from the noise floor.
    """
    t, y = _xy(series)
    if len(t) < 8:
        raise ValueError("need at least 8 points")
    if np.ptp(y) < 1e-9:
        raise FlatSignalError("signal is constant")
    omega0, peak, noise = _dominant_frequency(t, y)
    if peak <= 10 * noise or omega0 == 0:
        raise FlatSignalError("no oscillation above the noise floor")
    # coarse amplitude/offset from linear least squares at the seed frequency
    M = np.stack([np.cos(omega0 * t), np.ones_like(t)], axis=1)
    (a0, b0), *_ = np.linalg.lstsq(M, y, rcond=None)

    def residual(p):
        return p[0] * np.cos(p[1] * t) + p[2] - y

    def jac(p):
        c = np.cos(p[1] * t)
        return np.stack([c, -p[0] * t * np.sin(p[1] * t), np.ones_like(t)], axis=1)

    r = least_squares(
        residual,
        [abs(a0), omega0, b0],
        jac=jac,
        bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
    )
    A, omega, B = r.x
    return CosineFit(float(A), float(omega), float(B), float(2 * r.cost))
