"""Classical and stochastic k-calculus.

The classical relations are deterministic: an emission interval s becomes a
reception interval k^2 s. In the discrete model each such link is a Poisson
draw with the classical value as its mean. A one-way transit between two
observers scales by k, the round-trip radar echo by k^2.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    ChrononCount,
    ChrononError,
    ClassicalInterval,
    HalfIntCoord,
    KFactor,
    coords_from_counts,
    k_from_velocity,
    velocity_from_k,
)
from .sampling import RngStream, poisson_draws, poisson_sample

__all__ = [
    "RadarSample",
    "TwoObserverRecord",
    "k_from_velocity",
    "velocity_from_k",
    "velocity_estimate",
    "ksq_estimate",
    "radar_experiment",
    "radar_ensemble",
    "doppler_link",
    "two_observer_experiment",
    "lorentz_map",
    "interval_identity_holds",
    "classical_radar_coords",
    "classical_radar_intervals",
]


def _k(k) -> float:
    return KFactor(k.k if isinstance(k, KFactor) else float(k)).k


@dataclass(frozen=True)
class RadarSample:
    """One radar measurement: emission interval and echo interval."""

    n_e: int
    n_r: int

    def __post_init__(self):
        n_e = ChrononCount(self.n_e).value
        n_r = ChrononCount(self.n_r).value
        if n_e < 1:
            raise ChrononError("emission interval n_e must be >= 1")
        object.__setattr__(self, "n_e", n_e)
        object.__setattr__(self, "n_r", n_r)

    @property
    def degenerate(self) -> bool:
        """True when no echo chronons were counted (n_r = 0)."""
        return self.n_r == 0


def velocity_estimate(sample, exact: bool = False):
    """(n_r - n_e) / (n_r + n_e); equals -1 exactly on a degenerate sample.

    Accepts a :class:`RadarSample` or an ``(n_e, n_r)`` pair of ints/arrays.
    With ``exact=True`` a scalar sample gives a Fraction.
    """
    n_e, n_r = _pair(sample)
    if np.ndim(n_e) == 0 and np.ndim(n_r) == 0:
        if exact:
            return Fraction(n_r - n_e, n_r + n_e)
        return (n_r - n_e) / (n_r + n_e)
    if exact:
        raise ChrononError("exact velocity needs a scalar sample")
    n_r = np.asarray(n_r, dtype=np.float64)
    return (n_r - n_e) / (n_r + n_e)


def ksq_estimate(sample):
    """The observed ratio n_r / n_e."""
    n_e, n_r = _pair(sample)
    if np.ndim(n_r) == 0 and np.ndim(n_e) == 0:
        return float(Fraction(int(n_r), int(n_e)))
    return np.asarray(n_r, dtype=np.float64) / n_e


def _pair(sample):
    if isinstance(sample, RadarSample):
        return sample.n_e, sample.n_r
    n_e, n_r = sample
    if np.ndim(n_e) == 0 and np.ndim(n_r) == 0:
        s = RadarSample(int(n_e), int(n_r))
        return s.n_e, s.n_r
    if np.any(np.asarray(n_e) < 1) or np.any(np.asarray(n_r) < 0):
        raise ChrononError("need n_e >= 1 and n_r >= 0")
    return n_e, n_r


def radar_experiment(k, n_e, rng: RngStream) -> RadarSample:
    """Emit two flashes n_e chronons apart and count the echo interval."""
    k = _k(k)
    n_e = RadarSample(int(n_e), 0).n_e
    return RadarSample(n_e, poisson_sample(k * k * n_e, rng))


def radar_ensemble(k, n_e: int, size: int, rng) -> np.ndarray:
    """Echo intervals of ``size`` independent radar experiments."""
    k = _k(k)
    n_e = RadarSample(int(n_e), 0).n_e
    return poisson_draws(k * k * n_e, size, rng)


def doppler_link(k, count, rng, size: int | None = None):
    """One-way stochastic link: a Poisson count with mean k * count."""
    k = _k(k)
    count = ChrononCount(int(count)).value
    if count < 1:
        raise ChrononError("doppler_link needs count >= 1")
    if size is None:
        return poisson_sample(k * count, rng)
    return poisson_draws(k * count, size, rng)


@dataclass(frozen=True)
class TwoObserverRecord:
    """Chronon counts of the two-observer experiment and the derived ratios.

    ``k1 = N_e'/N_e`` and ``k2 = N_r/N_r'`` are exact fractions; either is
    ``None`` when the corresponding count needed downstream is zero.
    """

    N_e: int
    N_e_prime: int
    N_r_prime: int
    N_r: int

    @property
    def k1(self) -> Fraction | None:
        if self.N_e_prime == 0:
            return None
        return Fraction(self.N_e_prime, self.N_e)

    @property
    def k2(self) -> Fraction | None:
        if self.N_r == 0:
            return None
        return Fraction(self.N_r, self.N_r_prime)

    @property
    def degenerate(self) -> bool:
        return self.N_e_prime == 0 or self.N_r == 0

    @property
    def coords(self) -> tuple[HalfIntCoord, HalfIntCoord]:
        """(T, X) assigned by A."""
        return coords_from_counts(self.N_e, self.N_r)

    @property
    def coords_prime(self) -> tuple[HalfIntCoord, HalfIntCoord]:
        """(T', X') assigned by B."""
        return coords_from_counts(self.N_e_prime, self.N_r_prime)


def two_observer_experiment(k, N_e, N_r_prime, rng) -> TwoObserverRecord:
    """A and B both illuminate the same event P after meeting at O.

    B starts when A's flash passes it, ``N_e' ~ Poisson(k N_e)``; the echo
    B receives at ``N_r'`` travels on to A, ``N_r ~ Poisson(k N_r')``. The two
    links are drawn independently.
    """
    N_e = ChrononCount(int(N_e)).value
    N_r_prime = ChrononCount(int(N_r_prime)).value
    if N_e < 1 or N_r_prime < 1:
        raise ChrononError("two_observer_experiment needs N_e >= 1 and N_r' >= 1")
    if isinstance(rng, RngStream):
        rng = rng.generator()
    N_e_prime = doppler_link(k, N_e, rng)
    N_r = doppler_link(k, N_r_prime, rng)
    return TwoObserverRecord(N_e, N_e_prime, N_r_prime, N_r)


def lorentz_map(k1, k2, T, X):
    """Map A's coordinates to B's given the two observed k-ratios.

    Works on floats, Fractions or numpy arrays; half-integer coordinates are
    used exactly. With k1 = k2 = k this is the Lorentz boost.
    """
    if np.any(np.asarray(k1) <= 0) or np.any(np.asarray(k2) <= 0):
        raise ChrononError("k1 and k2 must be positive")
    T = T.exact if isinstance(T, HalfIntCoord) else T
    X = X.exact if isinstance(X, HalfIntCoord) else X
    if isinstance(k1, Fraction) or isinstance(k2, Fraction):
        half = Fraction(1, 2)
        one = Fraction(1)
    else:
        half, one = 0.5, 1.0
    plus = half * (k1 + one / k2)
    minus = half * (k1 - one / k2)
    return plus * T - minus * X, plus * X - minus * T


def interval_identity_holds(record: TwoObserverRecord) -> bool:
    """Exact check of (2T')^2 - (2X')^2 = (k1/k2) ((2T)^2 - (2X)^2)."""
    if record.degenerate:
        raise ChrononError("interval identity undefined for a degenerate record")
    T, X = record.coords
    Tp, Xp = record.coords_prime
    lhs = Tp.twice_value**2 - Xp.twice_value**2
    rhs = (record.k1 / record.k2) * (T.twice_value**2 - X.twice_value**2)
    return Fraction(lhs) == rhs


def classical_radar_coords(S_e, S_r) -> tuple[float, float]:
    """(T, X) = ((S_r + S_e)/2, (S_r - S_e)/2) for a reflected light signal."""
    s_e = S_e.s if isinstance(S_e, ClassicalInterval) else ClassicalInterval(float(S_e)).s
    s_r = S_r.s if isinstance(S_r, ClassicalInterval) else ClassicalInterval(float(S_r)).s
    if s_r < s_e:
        raise ChrononError("echo cannot return before emission (S_r < S_e)")
    return 0.5 * (s_r + s_e), 0.5 * (s_r - s_e)


def classical_radar_intervals(k, s) -> tuple[float, float, float]:
    """Coordinate changes (dT, dX) for flashes s apart, and the velocity dX/dT."""
    k = _k(k)
    s = ClassicalInterval(float(s)).s
    dT = 0.5 * (k * k + 1.0) * s
    dX = 0.5 * (k * k - 1.0) * s
    return dT, dX, dX / dT
