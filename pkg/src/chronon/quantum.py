"""Energy, uncertainty and path-spread results for a free particle.

Energies are natural units (c = 1) with the rest mass ``m`` a plain real.
The series functions evaluate the truncated closed forms as written; they
are checked against exact Poisson summation in :mod:`chronon.ensemble`.

The expansion variable throughout is ``u = n / (k^2 n_e)``, the relative
deviation of the echo count from its mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    C_LIGHT,
    HBAR,
    MEV_IN_JOULE,
    ChrononError,
    DegenerateSampleError,
    KFactor,
    ParticleSpecies,
    require_massive,
    velocity_from_k,
)


def _k(k) -> float:
    return KFactor(k.k if isinstance(k, KFactor) else float(k)).k


def _mass(m) -> float:
    m = float(m)
    if not m > 0.0:
        raise ChrononError(f"mass must be positive, got {m}")
    return m


@dataclass(frozen=True)
class EnergyMomentum:
    E0: float
    p0: float
    m: float

    @property
    def mass_shell_residual(self) -> float:
        """(E0^2 - p0^2) / m^2 - 1, zero up to rounding."""
        return (self.E0 - self.p0) * (self.E0 + self.p0) / self.m**2 - 1.0


def classical_energy_momentum(k, m) -> EnergyMomentum:
    k, m = _k(k), _mass(m)
    return EnergyMomentum(0.5 * (k + 1.0 / k) * m, 0.5 * (k - 1.0 / k) * m, m)


def measured_energy(sample, m):
    """Energy from one radar sample, m/2 [sqrt(n_r/n_e) + sqrt(n_e/n_r)].

    ``sample`` is a RadarSample or an ``(n_e, n_r)`` pair of ints or arrays.
    """
    return _mass(m) + energy_excess(sample, m)


def energy_excess(sample, m):
    """Measured energy minus rest mass, free of cancellation near n_r = n_e.

    Uses E - m = (m/2) (n_r - n_e)^2 / (sqrt(n_e n_r) (sqrt(n_r) + sqrt(n_e))^2).
    """
    m = _mass(m)
    n_e, n_r = (sample.n_e, sample.n_r) if hasattr(sample, "n_e") else sample
    n_e = np.asarray(n_e, dtype=np.float64)
    n_r = np.asarray(n_r, dtype=np.float64)
    if np.any(n_e < 1):
        raise ChrononError("n_e must be >= 1")
    if np.any(n_r <= 0):
        raise DegenerateSampleError("n_r = 0 makes the measured energy singular")
    se, sr = np.sqrt(n_e), np.sqrt(n_r)
    out = 0.5 * m * (n_r - n_e) ** 2 / (se * sr * (sr + se) ** 2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DeviationExpansion:
    """Coefficients of E as a power series in u, constant through cubic."""

    terms: tuple[float, float, float, float]

    def __call__(self, u):
        c0, c1, c2, c3 = self.terms
        return c0 + u * (c1 + u * (c2 + u * c3))


def deviation_expansion(k, m) -> DeviationExpansion:
    k, m = _k(k), _mass(m)
    em = classical_energy_momentum(k, m)
    p0 = em.p0
    return DeviationExpansion(
        (em.E0, 0.5 * p0, (m / k - p0) / 8.0, -(2.0 * m / k - p0) / 16.0)
    )


def energy_series(k, n_e, m, n):
    """Cubic expansion of the measured energy about the mean echo count."""
    k = _k(k)
    lam = k * k * float(n_e)
    if float(n_e) < 1:
        raise ChrononError("n_e must be >= 1")
    if np.any(np.abs(n) >= lam):
        raise ChrononError("|n| must be smaller than the mean echo count k^2 n_e")
    u = np.asarray(n, dtype=np.float64) / lam
    out = deviation_expansion(k, m)(u)
    return float(out) if np.ndim(out) == 0 else out


def mean_energy_series(k, n_e, m) -> float:
    """<E> to first order in 1/(k^2 n_e)."""
    k = _k(k)
    _, _, c2, _ = deviation_expansion(k, m).terms
    return classical_energy_momentum(k, m).E0 + c2 / (k * k * n_e)


def energy_variance_terms(k, n_e, m) -> tuple[float, float]:
    """The two terms of the truncated energy variance, in 1/lam and 1/lam^2.

    The second term can be negative; the sum is then not a valid variance at
    small k^2 n_e and the exact sum should be used instead.
    """
    k, m = _k(k), _mass(m)
    lam = k * k * n_e
    p0 = classical_energy_momentum(k, m).p0
    a = m / k - p0
    leading = (0.5 * p0) ** 2 / lam
    second = (a * a / 32.0 - 3.0 / 16.0 * p0 * (2.0 * m / k - p0)) / lam**2
    return leading, second


def energy_variance_series(k, n_e, m) -> float:
    leading, second = energy_variance_terms(k, n_e, m)
    return leading + second


def _uncertainty_bracket(k, n_e) -> float:
    k = _k(k)
    q = 0.5 * (k - 1.0 / k)  # p0 / m
    return (4.0 * q) ** 2 * k * k * n_e + 2.0 * (1.0 / k - q) ** 2 - 12.0 * q * (2.0 / k - q)


def uncertainty_product(k, n_e, species: ParticleSpecies | None = None) -> float:
    """Energy spread times observation interval k^2 n_e, in units of hbar.

    The mass drops out once hbar = m c^2 / (8 n_s); ``species`` is only
    checked for non-zero mass. Returns nan if the truncated bracket is
    negative.
    """
    if species is not None:
        require_massive(species)
    if n_e < 1:
        raise ChrononError("n_e must be >= 1")
    b = _uncertainty_bracket(k, n_e)
    return math.sqrt(b) if b >= 0 else math.nan


def uncertainty_floor(k) -> float:
    """The n_e-independent part of the uncertainty product, in units of hbar."""
    b = _uncertainty_bracket(k, 0)
    return math.sqrt(b) if b >= 0 else math.nan


def rest_uncertainty_product(m) -> float:
    """Kinetic-energy error times interval for a particle at rest: m/8."""
    return _mass(m) / 8.0


def rest_uncertainty_product_si(species: ParticleSpecies) -> float:
    """m c^2 / (8 n_s) in J s; equal to hbar by construction of the species."""
    require_massive(species)
    return species.mass_kg * C_LIGHT**2 / (8.0 * species.chronon_rate_ns)


def chronon_rate(species: ParticleSpecies) -> float:
    """Chronons per second, 2 pi c / (8 lambda_c)."""
    require_massive(species)
    return 2.0 * math.pi * C_LIGHT / (8.0 * species.compton_wavelength)


def chronon_rate_from_mass(species: ParticleSpecies) -> float:
    """Chronons per second from the mass form, m c^2 / (8 hbar)."""
    require_massive(species)
    return species.rest_mass * MEV_IN_JOULE / (8.0 * HBAR)


@dataclass(frozen=True)
class RegimeBound:
    """Largest observation interval over which the uncertainty floor applies.

    ``seconds`` and ``chronons`` use the small-velocity form c^2/(8 v^2);
    ``chronons_exact`` keeps the full bracket. All are ``inf`` at v = 0.
    """

    v: float
    seconds: float
    chronons: float
    chronons_exact: float

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.chronons)


def regime_bound(k, species: ParticleSpecies) -> RegimeBound:
    require_massive(species)
    k = _k(k)
    v = velocity_from_k(k)
    if v == 0.0:
        return RegimeBound(0.0, math.inf, math.inf, math.inf)
    seconds = species.compton_wavelength / (2.0 * math.pi * C_LIGHT * v * v)
    chronons = 1.0 / (8.0 * v * v)
    r = 1.0 / (0.5 * (k - 1.0 / k))  # m / p0
    exact = ((r / k) - 1.0) ** 2 / 8.0 - 0.75 * (2.0 * r / k - 1.0)
    return RegimeBound(v, seconds, chronons, exact)


def gaussian_pmf_approx(k, n_e, n_r):
    """Stirling/Gaussian form (2 pi n_r)^(-1/2) exp(-(n_r - lam)^2 / (2 lam))."""
    k = _k(k)
    lam = k * k * float(n_e)
    n_r = np.asarray(n_r, dtype=np.float64)
    if np.any(n_r < 1):
        raise ChrononError("gaussian_pmf_approx needs n_r >= 1")
    out = (2.0 * math.pi * n_r) ** -0.5 * np.exp(-0.5 * (n_r - lam) ** 2 / lam)
    return float(out) if out.ndim == 0 else out


def position_spread_pdf(k, t, x):
    """Probability of finding the particle at x after time t.

    [2 pi (t+x)]^(-1/2) exp[-(k^2+1)^2 (x - v0 t)^2 / (2 k^2 (t - x))]
    with v0 the classical velocity. Requires -t < x < t and t - x >= 1.
    """
    k = _k(k)
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if np.any(t - x < 1) or np.any(t + x <= 0):
        raise ChrononError("position_spread_pdf needs t - x >= 1 and t + x > 0")
    k2 = k * k
    v0 = (k2 - 1.0) / (k2 + 1.0)
    out = (2.0 * math.pi * (t + x)) ** -0.5 * np.exp(
        -0.5 * (k2 + 1.0) ** 2 * (x - v0 * t) ** 2 / (k2 * (t - x))
    )
    return float(out) if out.ndim == 0 else out
