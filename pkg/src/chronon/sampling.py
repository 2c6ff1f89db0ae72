"""Seedable exact Poisson sampling and accurate pmf evaluation.

The pmf uses the saddle-point form

    P(n) = exp(-stirlerr(n) - bd0(n, mean)) / sqrt(2 pi n)

where ``bd0`` is the deviance term n log(n/mean) + mean - n evaluated without
cancellation, and ``stirlerr`` is the Stirling-series remainder of log n!.
This keeps relative error near machine precision even for means of 1e6 or
more, where the naive n log(mean) - mean - log n! loses ~9 digits.

Samples are drawn by cdf inversion for small means and by Hoermann's
transformed rejection (PTRS) otherwise; both are exact.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import MAX_POISSON_MEAN, ChrononError

INVERSION_CUTOFF = 30.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TABLE_MAX = 15

# stirlerr(n) = log n! - (n + 1/2) log n + n - log sqrt(2 pi), exact small-n table
_STIRLERR_TABLE = np.array(
    [0.0]
    + [
        math.log(math.factorial(n)) - (n + 0.5) * math.log(n) + n - _LOG_SQRT_2PI
        for n in range(1, _TABLE_MAX + 1)
    ]
)
_LOG_FACTORIAL_TABLE = np.array([math.log(math.factorial(n)) for n in range(_TABLE_MAX + 1)])


def stirlerr(n) -> np.ndarray:
    """Remainder of Stirling's formula for log n!, for integer n >= 1."""
    n = np.asarray(n, dtype=np.float64)
    out = np.empty_like(n)
    small = n <= _TABLE_MAX
    out[small] = _STIRLERR_TABLE[n[small].astype(np.int64)]
    big = n[~small]
    inv = 1.0 / big
    inv2 = inv * inv
    out[~small] = inv * (
        1.0 / 12 - inv2 * (1.0 / 360 - inv2 * (1.0 / 1260 - inv2 * (1.0 / 1680 - inv2 / 1188)))
    )
    return out


def log_factorial(n) -> np.ndarray:
    """log n! for non-negative integers, table below 16, Stirling series above."""
    n = np.asarray(n, dtype=np.float64)
    out = np.empty_like(n)
    small = n <= _TABLE_MAX
    out[small] = _LOG_FACTORIAL_TABLE[n[small].astype(np.int64)]
    big = n[~small]
    out[~small] = (big + 0.5) * np.log(big) - big + _LOG_SQRT_2PI + stirlerr(big)
    return out


def bd0(x, mean) -> np.ndarray:
    """x log(x / mean) + mean - x, accurate when x is close to mean."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), x.shape)
    out = np.empty_like(x)
    d = x - mean
    s = x + mean
    close = np.abs(d) < 0.1 * s
    # series in v = d/s converges geometrically with ratio v^2 < 0.01
    v = d[close] / s[close]
    acc = d[close] * v
    ej = 2.0 * x[close] * v
    v2 = v * v
    for j in range(1, 20):
        ej = ej * v2
        acc = acc + ej / (2 * j + 1)
    out[close] = acc
    far = ~close
    xf = x[far]
    mf = mean[far]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[far] = np.where(xf > 0, xf * np.log(xf / mf), 0.0) + mf - xf
    return out


@dataclass(frozen=True)
class PoissonLaw:
    """Poisson distribution of a chronon count with the given mean."""

    mean: float

    def __post_init__(self):
        m = float(self.mean)
        if not (m > 0.0) or not math.isfinite(m):
            raise ChrononError(f"Poisson mean must be positive and finite, got {self.mean}")
        object.__setattr__(self, "mean", m)

    @property
    def variance(self) -> float:
        return self.mean

    @property
    def std(self) -> float:
        return math.sqrt(self.mean)


def _as_law(law) -> PoissonLaw:
    return law if isinstance(law, PoissonLaw) else PoissonLaw(law)


def log_pmf(law, n) -> np.ndarray:
    lam = _as_law(law).mean
    n = np.asarray(n)
    if np.any(n < 0):
        raise ChrononError("counts must be non-negative")
    nf = n.astype(np.float64)
    out = np.full(nf.shape, -lam)
    pos = nf > 0
    npos = nf[pos]
    out[pos] = -stirlerr(npos) - bd0(npos, lam) - _LOG_SQRT_2PI - 0.5 * np.log(npos)
    return out


def poisson_pmf(law, n):
    """P(N = n) for N ~ Poisson(mean). Scalar in, float out; array in, array out."""
    out = np.exp(log_pmf(law, n))
    return float(out) if out.ndim == 0 else out


def _window_guess(lam: float) -> tuple[int, int]:
    # beyond +-(40 sd + 60) the Poisson mass is below 1e-100
    half = 40.0 * math.sqrt(lam) + 60.0
    return max(0, int(math.floor(lam - half))), int(math.ceil(lam + half))


def upper_tail(law, n_max: int) -> float:
    """P(N > n_max), summed directly over the upper window."""
    lam = _as_law(law).mean
    lo, hi = _window_guess(lam)
    start = max(n_max + 1, 0)
    if start > hi:
        return 0.0
    if start <= lo:
        return 1.0 - math.fsum(poisson_pmf(lam, np.arange(lo, start)))
    return math.fsum(poisson_pmf(lam, np.arange(start, hi + 1)))


def truncation_bound(law, tail_mass: float) -> int:
    """Smallest N with P(X > N) <= tail_mass."""
    if not 0.0 < tail_mass < 1.0:
        raise ChrononError(f"tail_mass must lie in (0, 1), got {tail_mass}")
    lam = _as_law(law).mean
    lo, hi = _window_guess(lam)
    n = np.arange(lo, hi + 1)
    p = poisson_pmf(lam, n)
    # tail[i] = P(X > n[i]) accumulated from the far right; mass below lo is < 1e-100
    tail = np.concatenate([np.cumsum(p[::-1])[::-1][1:], [0.0]])
    ok = np.nonzero(tail <= tail_mass)[0]
    return int(n[ok[0]])


def lower_bound(law, tail_mass: float) -> int:
    """Largest N with P(X < N) <= tail_mass."""
    lam = _as_law(law).mean
    lo, hi = _window_guess(lam)
    n = np.arange(lo, hi + 1)
    p = poisson_pmf(lam, n)
    below = np.concatenate([[0.0], np.cumsum(p)[:-1]])
    ok = np.nonzero(below <= tail_mass)[0]
    return int(n[ok[-1]])


def support_window(law, tail_mass: float = 1e-14) -> np.ndarray:
    """Integers carrying all but ``tail_mass`` of each tail."""
    lam = _as_law(law).mean
    return np.arange(lower_bound(lam, tail_mass), truncation_bound(lam, tail_mass) + 1)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by seed, experiment label and index.

    The generator state is derived by hashing the key, so streams are
    independent of each other and of the order in which they are created.
    """

    seed: int
    label: str = ""
    index: int = 0

    def __post_init__(self):
        if not -(2**63) <= int(self.seed) < 2**64:
            raise ChrononError("seed must fit in 64 bits")

    def key(self) -> bytes:
        h = hashlib.blake2b(digest_size=32, person=b"chronon-rng")
        h.update(struct.pack("<Q", int(self.seed) % 2**64))
        h.update(self.label.encode("utf-8"))
        h.update(b"\x00")
        h.update(struct.pack("<Q", int(self.index)))
        return h.digest()

    def generator(self) -> np.random.Generator:
        entropy = int.from_bytes(self.key(), "little")
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, label: str, index: int = 0) -> "RngStream":
        sub = f"{self.label}/{label}" if self.label else label
        return RngStream(self.seed, sub, index)


def _check_sampling_mean(lam: float) -> float:
    lam = float(lam)
    if not lam > 0.0 or not math.isfinite(lam):
        raise ChrononError(f"Poisson mean must be positive, got {lam}")
    if lam > MAX_POISSON_MEAN:
        raise ChrononError(f"Poisson mean {lam:g} above supported maximum {MAX_POISSON_MEAN:g}")
    return lam


def _sample_inversion(lam: float, size: int, gen: np.random.Generator) -> np.ndarray:
    n_max = truncation_bound(lam, 1e-17)
    n = np.arange(n_max + 1)
    cdf = np.cumsum(poisson_pmf(lam, n))
    u = gen.random(size)
    out = np.searchsorted(cdf, u, side="right")
    # u beyond the tabulated cdf (probability < 1e-16): walk the tail one term at a time
    for i in np.nonzero(out > n_max)[0]:
        k, acc = n_max, cdf[-1]
        while acc <= u[i] and acc < 1.0:
            k += 1
            acc += poisson_pmf(lam, k)
        out[i] = k
    return out.astype(np.int64)


def _sample_ptrs(lam: float, size: int, gen: np.random.Generator) -> np.ndarray:
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    log_invalpha = math.log(1.1239 + 1.1328 / (b - 3.4))
    vr = 0.9277 - 3.6224 / (b - 2.0)

    out = np.empty(size, dtype=np.int64)
    pending = np.arange(size)
    while pending.size:
        m = pending.size
        u = gen.random(m) - 0.5
        v = gen.random(m)
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a / us + b) * u + lam + 0.43)
        quick = (us >= 0.07) & (v <= vr)
        reject = (k < 0) | ((us < 0.013) & (v > us))
        slow = ~quick & ~reject
        accept = quick.copy()
        if slow.any():
            ks, vs, uss = k[slow], v[slow], us[slow]
            lhs = np.log(vs) + log_invalpha - np.log(a / (uss * uss) + b)
            rhs = -lam + ks * loglam - log_factorial(ks)
            accept[slow] = lhs <= rhs
        out[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
    return out


def poisson_draws(law, size: int, rng) -> np.ndarray:
    """``size`` exact Poisson draws as an int64 array.

    ``rng`` is an :class:`RngStream` or an existing numpy Generator.
    """
    lam = _check_sampling_mean(_as_law(law).mean)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    if lam < INVERSION_CUTOFF:
        return _sample_inversion(lam, size, gen)
    return _sample_ptrs(lam, size, gen)


def poisson_sample(law, rng) -> int:
    """A single exact draw."""
    return int(poisson_draws(law, 1, rng)[0])
