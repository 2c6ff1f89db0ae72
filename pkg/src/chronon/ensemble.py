"""Seeded replicate ensembles, exact-summation oracle and goodness of fit.

Replicates are processed in fixed-size blocks. Block ``b`` of an experiment
draws from ``RngStream(seed, label, b)``, and partial results are merged by
a pairwise tree in block order. Results therefore depend only on the spec
and seed, never on the number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats as _stats

from .core import (
    MEV_IN_JOULE,
    ChrononError,
    ParticleSpecies,
    get_species,
    require_massive,
    velocity_from_k,
)
from .kcalculus import ksq_estimate, lorentz_map, velocity_estimate
from .quantum import (
    classical_energy_momentum,
    energy_excess,
    energy_variance_series,
    gaussian_pmf_approx,
    mean_energy_series,
    position_spread_pdf,
    rest_uncertainty_product,
    uncertainty_product,
)
from .sampling import (
    PoissonLaw,
    RngStream,
    poisson_draws,
    poisson_pmf,
    support_window,
    truncation_bound,
)

BLOCK_SIZE = 1 << 16
KINDS = ("velocity", "two_observer", "uncertainty", "spread", "gof")
MIN_EXPECTED = 10.0
MIN_GOF_SAMPLES = 10_000
ORACLE_MAX_MEAN = 1e8


def compensated_sum(values) -> float:
    """Correctly rounded sum (Shewchuk expansions via math.fsum)."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


@dataclass(frozen=True)
class Moments:
    """Count, mean and central moment sums M2..M4 of a sample.

    Built from arrays with compensated sums and merged with the pairwise
    update of Chan et al. / Pebay, so partial results from separate blocks
    combine exactly as if accumulated together (up to rounding).
    """

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def of(cls, x) -> "Moments":
        x = np.asarray(x, dtype=np.float64).ravel()
        n = x.size
        if n == 0:
            return cls()
        mean = compensated_sum(x) / n
        d = x - mean
        d2 = d * d
        return cls(n, mean, compensated_sum(d2), compensated_sum(d2 * d), compensated_sum(d2 * d2))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + nb * d_n
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (
            self.m3 + other.m3
            + delta * d_n * d_n * na * nb * (na - nb)
            + 3.0 * d_n * (na * other.m2 - nb * self.m2)
        )
        m4 = (
            self.m4 + other.m4
            + delta * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
            + 6.0 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
            + 4.0 * d_n * (na * other.m3 - nb * self.m3)
        )
        return Moments(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def stderr_mean(self) -> float:
        return math.sqrt(self.variance / self.n)

    @property
    def stderr_variance(self) -> float:
        """Standard error of the variance from the sample fourth moment."""
        mu2 = self.m2 / self.n
        mu4 = self.m4 / self.n
        return math.sqrt(max(mu4 - mu2 * mu2, 0.0) / self.n)

    @property
    def stderr_std(self) -> float:
        return self.stderr_variance / (2.0 * self.std)


def tree_reduce(items: list, merge: Callable[[Any, Any], Any]):
    """Pairwise reduction in list order; the shape depends only on len(items)."""
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [merge(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def oracle_window(law, tail_mass: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Support points and pmf values covering all but ``tail_mass`` per tail."""
    law = law if isinstance(law, PoissonLaw) else PoissonLaw(law)
    if law.mean > ORACLE_MAX_MEAN:
        raise ChrononError(f"oracle summation limited to means <= {ORACLE_MAX_MEAN:g}")
    n = support_window(law, tail_mass)
    return n, poisson_pmf(law, n)


def oracle_expectation(f: Callable, law, *, exclude_zero: bool = False,
                       tail_mass: float = 1e-14) -> float:
    """E[f(N)] for N ~ law by compensated summation over the support.

    ``f`` is called once with the integer array of support points. With
    ``exclude_zero`` the expectation is conditional on N >= 1, which is how
    ensembles treat samples with no echo chronons.
    """
    law = law if isinstance(law, PoissonLaw) else PoissonLaw(law)
    n, p = oracle_window(law, tail_mass)
    if exclude_zero:
        keep = n > 0
        n, p = n[keep], p[keep]
    values = np.asarray(f(n), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ChrononError("f is not finite on the support; mask n = 0 with exclude_zero")
    total = compensated_sum(values * p)
    if exclude_zero:
        total /= -math.expm1(-law.mean)
    return total


def oracle_variance(f: Callable, law, *, exclude_zero: bool = False) -> tuple[float, float]:
    """(mean, variance) of f(N) by two-pass exact summation."""
    mu = oracle_expectation(f, law, exclude_zero=exclude_zero)
    var = oracle_expectation(lambda n: (np.asarray(f(n), dtype=np.float64) - mu) ** 2, law,
                             exclude_zero=exclude_zero)
    return mu, var


# -- goodness of fit ---------------------------------------------------------

@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    bin_edges: list  # inclusive (lo, hi) in count space; None for an open end
    observed: list
    expected: list

    def rejects(self, alpha: float) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "bins": [
                {"lo": lo, "hi": hi, "observed": o, "expected": e}
                for (lo, hi), o, e in zip(self.bin_edges, self.observed, self.expected)
            ],
        }


def merge_bins(expected: np.ndarray, min_expected: float = MIN_EXPECTED) -> list[tuple[int, int]]:
    """Group consecutive cells, left to right, until each holds >= min_expected.

    A short remainder at the right end joins the last group. Returns index
    ranges ``(start, stop)`` into ``expected``.
    """
    groups = []
    start, acc = 0, 0.0
    for i, e in enumerate(expected):
        acc += e
        if acc >= min_expected:
            groups.append((start, i + 1))
            start, acc = i + 1, 0.0
    if start < len(expected):
        if groups:
            groups[-1] = (groups[-1][0], len(expected))
        else:
            groups.append((start, len(expected)))
    return groups


def chi_square_test(observed: np.ndarray, probs: np.ndarray, offset: int = 0,
                    ddof: int = 0) -> ChiSquareResult:
    """Pearson test of cell counts against cell probabilities.

    ``observed[i]`` and ``probs[i]`` refer to count value ``offset + i``; the
    first and last cells are open-ended and must already absorb the outer
    tails of both arrays.
    """
    observed = np.asarray(observed, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    total = observed.sum()
    if total < MIN_GOF_SAMPLES:
        raise ChrononError(f"chi-square test needs >= {MIN_GOF_SAMPLES} samples, got {int(total)}")
    expected = total * probs / compensated_sum(probs)
    groups = merge_bins(expected)
    if len(groups) < 2:
        raise ChrononError("too few bins for a chi-square test")
    obs = np.array([observed[a:b].sum() for a, b in groups])
    exp_ = np.array([compensated_sum(expected[a:b]) for a, b in groups])
    stat = compensated_sum((obs - exp_) ** 2 / exp_)
    dof = len(groups) - 1 - ddof
    edges = []
    for j, (a, b) in enumerate(groups):
        lo = None if j == 0 else offset + a
        hi = None if j == len(groups) - 1 else offset + b - 1
        edges.append((lo, hi))
    return ChiSquareResult(stat, dof, float(_stats.chi2.sf(stat, dof)), edges,
                           [int(o) for o in obs], exp_.tolist())


def histogram(draws, length: int) -> np.ndarray:
    """Counts of 0..length-2, with everything larger in the last cell."""
    draws = np.minimum(np.asarray(draws, dtype=np.int64), length - 1)
    return np.bincount(draws, minlength=length)


def _law_cells(law: PoissonLaw, length: int) -> np.ndarray:
    """pmf over 0..length-2 plus the upper tail in the last cell."""
    n = np.arange(length - 1)
    p = poisson_pmf(law, n)
    return np.append(p, max(1.0 - compensated_sum(p), 0.0))


def chi_square_gof(samples, law) -> ChiSquareResult:
    """Test a histogram of counts (``samples[n]`` = draws equal to n) against ``law``."""
    law = law if isinstance(law, PoissonLaw) else PoissonLaw(law)
    hist = np.asarray(samples, dtype=np.int64)
    length = max(hist.size, truncation_bound(law, 1e-14) + 2)
    hist = np.pad(hist, (0, length - hist.size))
    return chi_square_test(hist, _law_cells(law, length))


# -- experiment specs and summaries -----------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """A named ensemble experiment.

    ``extra`` carries kind-specific parameters: ``nr_prime`` (two_observer),
    ``mass`` or ``species`` (uncertainty), ``ne_grid`` (spread, optional),
    ``sample_scale`` (gof, optional; draws from scale * k^2 n_e).
    """

    kind: str
    k: float
    n_e: int
    replicates: int
    seed: int
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ChrononError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if not (float(self.k) > 0 and math.isfinite(float(self.k))):
            raise ChrononError("k must be positive")
        if int(self.n_e) != self.n_e or self.n_e < 1:
            raise ChrononError("n_e must be a positive integer")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ChrononError("replicates must be a positive integer")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise ChrononError("seed must fit in 64 bits")
        if float(self.k) ** 2 * self.n_e > 1e15:
            raise ChrononError("mean echo count above 1e15 is not supported")
        extra = self.extra
        if self.kind == "two_observer":
            nr = extra.get("nr_prime")
            if nr is None or int(nr) != nr or nr < 1:
                raise ChrononError("two_observer needs extra['nr_prime'] >= 1")
        if self.kind == "uncertainty":
            if "mass" not in extra and "species" not in extra:
                raise ChrononError("uncertainty needs extra['mass'] or extra['species']")
            self.mass()
        if self.kind == "spread":
            for ne in extra.get("ne_grid", [self.n_e]):
                if int(ne) != ne or ne < 1:
                    raise ChrononError("ne_grid entries must be positive integers")
        if self.kind == "gof":
            if not float(extra.get("sample_scale", 1.0)) > 0:
                raise ChrononError("sample_scale must be positive")
            if self.replicates < MIN_GOF_SAMPLES:
                raise ChrononError(f"gof needs >= {MIN_GOF_SAMPLES} replicates")

    def species(self) -> ParticleSpecies | None:
        sp = self.extra.get("species")
        if sp is None:
            return None
        return sp if isinstance(sp, ParticleSpecies) else get_species(sp)

    def mass(self) -> float:
        if "mass" in self.extra:
            m = float(self.extra["mass"])
            if not m > 0:
                raise ChrononError("mass must be positive")
            return m
        sp = self.species()
        require_massive(sp)
        return sp.rest_mass

    def to_dict(self) -> dict:
        extra = {}
        for key, value in sorted(self.extra.items()):
            extra[key] = value.name if isinstance(value, ParticleSpecies) else value
        return {"kind": self.kind, "k": float(self.k), "n_e": int(self.n_e),
                "replicates": int(self.replicates), "seed": int(self.seed), "extra": extra}


@dataclass
class StatRecord:
    name: str
    estimate: float
    stderr: float
    oracle: float | None = None
    prediction: float | None = None
    excluded: int = 0

    def z(self) -> float | None:
        """(estimate - oracle) / stderr."""
        if self.oracle is None:
            return None
        return (self.estimate - self.oracle) / self.stderr

    def to_dict(self) -> dict:
        return {"name": self.name, "estimate": self.estimate, "stderr": self.stderr,
                "oracle": self.oracle, "prediction": self.prediction, "excluded": self.excluded}


@dataclass
class Table:
    columns: list[str]
    rows: list[list]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


@dataclass
class EnsembleSummary:
    spec: ExperimentSpec
    statistics: list[StatRecord]
    counts: dict[str, int] = field(default_factory=dict)
    derived: dict[str, Any] = field(default_factory=dict)
    tests: dict[str, ChiSquareResult] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    plot_table: str | None = None

    def stat(self, name: str) -> StatRecord:
        for s in self.statistics:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "statistics": [s.to_dict() for s in self.statistics],
            "counts": dict(self.counts),
            "derived": dict(self.derived),
            "tests": {k: v.to_dict() for k, v in self.tests.items()},
            "tables": {k: v.to_dict() for k, v in self.tables.items()},
            "plot_table": self.plot_table,
        }

    def to_json(self, extra: dict | None = None) -> str:
        data = self.to_dict()
        if extra:
            data = {**extra, **data}
        return dumps(data)

    def to_text(self) -> str:
        """Aligned columns for terminal output."""
        header = ("statistic", "estimate", "stderr", "oracle", "prediction", "excluded")
        rows = [header]
        for s in self.statistics:
            rows.append((s.name, _g6(s.estimate), _g6(s.stderr), _g6(s.oracle),
                         _g6(s.prediction), str(s.excluded)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in
                           enumerate(zip(r, widths))) for r in rows]
        for key, value in self.counts.items():
            lines.append(f"{key}: {value}")
        for key, value in self.derived.items():
            lines.append(f"{key}: {_g6(value) if isinstance(value, float) else value}")
        for key, t in self.tests.items():
            lines.append(f"{key}: chi2={t.statistic:.6g} dof={t.dof} p={t.p_value:.6g}")
        return "\n".join(lines)


def _g6(x) -> str:
    if x is None:
        return "-"
    return f"{x:.6g}"


def format_number(x) -> str:
    """17 significant digits for floats (exact double round trip), plain ints."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float rendered by :func:`format_number`; keys keep insertion order."""
    import json

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None:
            return "null"
        if isinstance(o, (bool, np.bool_, int, np.integer, float, np.floating)):
            return format_number(o)
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return enc(obj, 0) + "\n"


# -- running ----------------------------------------------------------------

def worker_count() -> int:
    env = os.environ.get("CHRONON_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ChrononError(f"CHRONON_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ChrononError("CHRONON_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _blocks(replicates: int) -> list[int]:
    full, rest = divmod(replicates, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


@dataclass
class _Partial:
    moments: dict[str, Moments] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    hist: dict[str, np.ndarray] = field(default_factory=dict)
    maxima: dict[str, float] = field(default_factory=dict)

    def merge(self, other: "_Partial") -> "_Partial":
        out = _Partial()
        for key in self.moments.keys() | other.moments.keys():
            out.moments[key] = self.moments.get(key, Moments()).merge(other.moments.get(key, Moments()))
        for key in self.counts.keys() | other.counts.keys():
            out.counts[key] = self.counts.get(key, 0) + other.counts.get(key, 0)
        for key in self.hist.keys() | other.hist.keys():
            if key in self.hist and key in other.hist:
                out.hist[key] = self.hist[key] + other.hist[key]
            else:
                out.hist[key] = self.hist.get(key, other.hist.get(key))
        for key in self.maxima.keys() | other.maxima.keys():
            out.maxima[key] = max(self.maxima.get(key, -math.inf), other.maxima.get(key, -math.inf))
        return out


def _hist_length(lam: float) -> int:
    return truncation_bound(lam, 1e-14) + 2


def _velocity_block(spec: ExperimentSpec, size: int, gen) -> _Partial:
    k, n_e = float(spec.k), int(spec.n_e)
    lam = k * k * n_e
    n_r = poisson_draws(lam, size, gen)
    v = velocity_estimate((n_e, n_r))
    part = _Partial()
    part.moments["v"] = Moments.of(v)
    part.moments["v2"] = Moments.of(v * v)
    part.moments["ksq"] = Moments.of(ksq_estimate((n_e, n_r)))
    part.moments["n_r"] = Moments.of(n_r)
    part.counts["zero_echo"] = int(np.count_nonzero(n_r == 0))
    part.hist["n_r"] = histogram(n_r, _hist_length(lam))
    return part


def _velocity_finish(spec: ExperimentSpec, part: _Partial) -> EnsembleSummary:
    k, n_e = float(spec.k), int(spec.n_e)
    lam = k * k * n_e
    law = PoissonLaw(lam)
    mv, mv2, mk, mn = (part.moments[x] for x in ("v", "v2", "ksq", "n_r"))
    vel = lambda n: velocity_estimate((n_e, n))  # noqa: E731
    v0 = velocity_from_k(k)
    std_exact = k * math.sqrt(n_e)
    statistics = [
        StatRecord("mean_velocity", mv.mean, mv.stderr_mean,
                   oracle_expectation(vel, law), v0),
        StatRecord("mean_square_velocity", mv2.mean, mv2.stderr_mean,
                   oracle_expectation(lambda n: vel(n) ** 2, law),
                   1.0 / (4.0 * n_e) if k == 1.0 else None),
        StatRecord("mean_ksq", mk.mean, mk.stderr_mean, lam / n_e, k * k),
        StatRecord("std_echo", mn.std, mn.stderr_std, std_exact, std_exact),
        StatRecord("std_ksq", mn.std / n_e, mn.stderr_std / n_e, k / math.sqrt(n_e), k / math.sqrt(n_e)),
    ]
    hist = part.hist["n_r"]
    rows = []
    for n in np.nonzero(hist[:-1])[0]:
        rows.append([int(n), float(vel(int(n))), float(hist[n]) / spec.replicates,
                     poisson_pmf(law, int(n))])
    table = Table(["n_r", "velocity", "empirical_probability", "poisson_pmf"], rows)
    return EnsembleSummary(
        spec, statistics,
        counts={"replicates": spec.replicates, "zero_echo": part.counts["zero_echo"],
                "excluded": 0},
        tables={"velocity_histogram": table}, plot_table="velocity_histogram",
    )


def _two_observer_block(spec: ExperimentSpec, size: int, gen) -> _Partial:
    k = float(spec.k)
    N_e, N_rp = int(spec.n_e), int(spec.extra["nr_prime"])
    N_ep = poisson_draws(k * N_e, size, gen)
    N_r = poisson_draws(k * N_rp, size, gen)
    bad = (N_ep == 0) | (N_r == 0)
    good = ~bad
    a, r = N_ep[good], N_r[good]
    part = _Partial()
    part.counts["degenerate"] = int(bad.sum())
    # exact integer check: ((2T')^2 - (2X')^2) N_e N_r == N_e' N_r' ((2T)^2 - (2X)^2)
    ao, ro = a.astype(object), r.astype(object)
    lhs = ((ao + N_rp) ** 2 - (N_rp - ao) ** 2) * (N_e * ro)
    rhs = (ao * N_rp) * ((ro + N_e) ** 2 - (ro - N_e) ** 2)
    part.counts["identity_pass"] = int(np.count_nonzero(lhs == rhs))
    k1 = a / N_e
    k2 = r / N_rp
    part.moments["k1"] = Moments.of(k1)
    part.moments["k2"] = Moments.of(k2)
    part.moments["ratio"] = Moments.of(k1 / k2)
    T, X = 0.5 * (r + N_e), 0.5 * (r - N_e)
    Tp, Xp = lorentz_map(k1, k2, T, X)
    err = np.maximum(np.abs(Tp - 0.5 * (N_rp + a)), np.abs(Xp - 0.5 * (N_rp - a)))
    scale = 0.5 * (N_rp + a)
    part.maxima["lorentz_map_rel_error"] = float(np.max(err / scale)) if err.size else 0.0
    part.hist["N_e_prime"] = histogram(N_ep, _hist_length(k * N_e))
    return part


def _two_observer_finish(spec: ExperimentSpec, part: _Partial) -> EnsembleSummary:
    k = float(spec.k)
    N_e, N_rp = int(spec.n_e), int(spec.extra["nr_prime"])
    law1, law2 = PoissonLaw(k * N_e), PoissonLaw(k * N_rp)
    mk1, mk2, mr = part.moments["k1"], part.moments["k2"], part.moments["ratio"]
    deg = part.counts["degenerate"]
    # non-degenerate means condition both draws on being > 0
    ok1 = -math.expm1(-law1.mean)
    ok2 = -math.expm1(-law2.mean)
    e_k1 = k / ok1
    e_k2 = k / ok2
    e_inv_k2 = oracle_expectation(lambda n: N_rp / n.astype(np.float64), law2, exclude_zero=True)
    statistics = [
        StatRecord("mean_k1", mk1.mean, mk1.stderr_mean, e_k1, k, deg),
        StatRecord("mean_k2", mk2.mean, mk2.stderr_mean, e_k2, k, deg),
        StatRecord("mean_interval_ratio", mr.mean, mr.stderr_mean, e_k1 * e_inv_k2, 1.0, deg),
    ]
    hist = part.hist["N_e_prime"]
    rows = [[int(n), n / N_e, float(hist[n]) / spec.replicates, poisson_pmf(law1, int(n))]
            for n in np.nonzero(hist[:-1])[0]]
    table = Table(["N_e_prime", "k1", "empirical_probability", "poisson_pmf"], rows)
    npass = part.counts["identity_pass"]
    return EnsembleSummary(
        spec, statistics,
        counts={"replicates": spec.replicates, "degenerate": deg, "excluded": deg,
                "identity_pass": npass, "identity_fail": spec.replicates - deg - npass},
        derived={"lorentz_map_max_rel_error": part.maxima["lorentz_map_rel_error"]},
        tables={"k1_histogram": table}, plot_table="k1_histogram",
    )


def _uncertainty_block(spec: ExperimentSpec, size: int, gen) -> _Partial:
    k, n_e, m = float(spec.k), int(spec.n_e), spec.mass()
    n_r = poisson_draws(k * k * n_e, size, gen)
    zero = n_r == 0
    n_r = n_r[~zero]
    v = velocity_estimate((n_e, n_r))
    part = _Partial()
    part.counts["excluded"] = int(zero.sum())
    part.moments["excess"] = Moments.of(energy_excess((n_e, n_r), m))
    part.moments["v2"] = Moments.of(v * v)
    return part


UNCERTAINTY_CURVE_NE = (10, 30, 100, 300, 1000, 3000, 10_000, 30_000, 100_000)


def _uncertainty_oracle(k: float, n_e: int, m: float) -> tuple[float, float, float]:
    law = PoissonLaw(k * k * n_e)
    excess = lambda n: energy_excess((n_e, n), m)  # noqa: E731
    mu, var = oracle_variance(excess, law, exclude_zero=True)
    v2 = oracle_expectation(lambda n: velocity_estimate((n_e, n)) ** 2, law, exclude_zero=True)
    return mu, var, v2


def _uncertainty_finish(spec: ExperimentSpec, part: _Partial) -> EnsembleSummary:
    k, n_e, m = float(spec.k), int(spec.n_e), spec.mass()
    lam = k * k * n_e
    hbar_nat = m / 8.0
    em = classical_energy_momentum(k, m)
    me, mv2 = part.moments["excess"], part.moments["v2"]
    excl = part.counts["excluded"]
    o_mu, o_var, o_v2 = _uncertainty_oracle(k, n_e, m)
    shift = em.E0 - m
    spread = me.std * lam
    spread_se = me.stderr_std * lam
    statistics = [
        StatRecord("mean_energy", m + me.mean, me.stderr_mean, m + o_mu,
                   mean_energy_series(k, n_e, m), excl),
        StatRecord("mean_energy_shift", me.mean - shift, me.stderr_mean, o_mu - shift,
                   mean_energy_series(k, n_e, m) - em.E0, excl),
        StatRecord("energy_variance", me.variance, me.stderr_variance, o_var,
                   energy_variance_series(k, n_e, m), excl),
        StatRecord("energy_spread_x_dt", spread, spread_se, math.sqrt(o_var) * lam,
                   uncertainty_product(k, n_e) * hbar_nat, excl),
        StatRecord("uncertainty_product_hbar", spread / hbar_nat, spread_se / hbar_nat,
                   math.sqrt(o_var) * lam / hbar_nat, uncertainty_product(k, n_e), excl),
        StatRecord("rest_energy_error_x_dt", 0.5 * m * mv2.mean * lam,
                   0.5 * m * mv2.stderr_mean * lam, 0.5 * m * o_v2 * lam,
                   rest_uncertainty_product(m), excl),
    ]
    rest = statistics[-1]
    derived = {
        "classical_energy": em.E0,
        "classical_momentum": em.p0,
        "observation_interval_chronons": lam,
        "hbar_natural": hbar_nat,
        "spread_to_rest_error_ratio": spread / rest.estimate,
        "variance_series_negative": bool(energy_variance_series(k, n_e, m) < 0),
    }
    sp = spec.species()
    if sp is not None:
        dt = lam / sp.chronon_rate_ns
        derived["species"] = sp.name
        derived["observation_interval_seconds"] = dt
        derived["energy_spread_x_dt_si"] = me.std * MEV_IN_JOULE * dt
    rows = []
    for ne in sorted(set(UNCERTAINTY_CURVE_NE) | {n_e}):
        _, var, _ = _uncertainty_oracle(k, ne, m)
        rows.append([ne, uncertainty_product(k, ne), math.sqrt(var) * k * k * ne / hbar_nat])
    table = Table(["n_e", "series_product_hbar", "oracle_product_hbar"], rows)
    return EnsembleSummary(
        spec, statistics, counts={"replicates": spec.replicates, "excluded": excl},
        derived=derived, tables={"uncertainty_curve": table}, plot_table="uncertainty_curve",
    )


def _spread_grid(spec: ExperimentSpec) -> list[int]:
    return [int(x) for x in spec.extra.get("ne_grid", [spec.n_e])]


def _spread_block(spec: ExperimentSpec, size: int, gen) -> _Partial:
    k = float(spec.k)
    part = _Partial()
    for ne in _spread_grid(spec):
        lam = k * k * ne
        n_r = poisson_draws(lam, size, gen)
        x = 0.5 * (n_r - ne)
        part.moments[f"x@{ne}"] = Moments.of(x)
        part.hist[f"n_r@{ne}"] = histogram(n_r, _hist_length(lam))
    return part


def spread_cells(k: float, n_e: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised P_{t,x} and exact pmf over n_r = 0..length-1 at fixed n_e.

    Cell 0 (n_r = 0, outside the spread law's domain) gets zero spread mass;
    the last cell absorbs the upper tail.
    """
    n = np.arange(1, length)
    t, x = 0.5 * (n + n_e), 0.5 * (n - n_e)
    p_tx = position_spread_pdf(k, t, x)
    p_tx = np.concatenate([[0.0], p_tx]) / compensated_sum(p_tx)
    return p_tx, _law_cells(PoissonLaw(k * k * n_e), length)


def _spread_finish(spec: ExperimentSpec, part: _Partial) -> EnsembleSummary:
    k = float(spec.k)
    statistics, tests, tables = [], {}, {}
    for ne in _spread_grid(spec):
        lam = k * k * ne
        hist = part.hist[f"n_r@{ne}"]
        mx = part.moments[f"x@{ne}"]
        law = PoissonLaw(lam)
        mean_x = 0.5 * (lam - ne)
        statistics.append(StatRecord(f"mean_x@{ne}", mx.mean, mx.stderr_mean, mean_x, mean_x))
        statistics.append(StatRecord(f"var_x@{ne}", mx.variance, mx.stderr_variance,
                                     lam / 4.0, lam / 4.0))
        p_tx, p_exact = spread_cells(k, ne, hist.size)
        tests[f"spread_law@{ne}"] = chi_square_test(hist, p_tx)
        tests[f"exact_pmf@{ne}"] = chi_square_test(hist, p_exact)
        rows = []
        for n in range(max(1, int(lam - 6 * math.sqrt(lam))), min(hist.size - 1, int(lam + 6 * math.sqrt(lam)) + 1)):
            t, x = 0.5 * (n + ne), 0.5 * (n - ne)
            rows.append([x, float(hist[n]) / spec.replicates, position_spread_pdf(k, t, x),
                         t, n, gaussian_pmf_approx(k, ne, n), poisson_pmf(law, n)])
        tables[f"spread@{ne}"] = Table(
            ["x", "empirical_probability", "spread_law", "t", "n_r", "gaussian_pmf", "poisson_pmf"],
            rows)
    v0 = velocity_from_k(k)
    return EnsembleSummary(
        spec, statistics, counts={"replicates": spec.replicates, "excluded": 0},
        derived={"classical_velocity": v0}, tests=tests, tables=tables,
        plot_table=f"spread@{_spread_grid(spec)[0]}",
    )


def _gof_block(spec: ExperimentSpec, size: int, gen) -> _Partial:
    k, n_e = float(spec.k), int(spec.n_e)
    lam = k * k * n_e
    scale = float(spec.extra.get("sample_scale", 1.0))
    draws = poisson_draws(scale * lam, size, gen)
    part = _Partial()
    part.moments["n"] = Moments.of(draws)
    length = max(_hist_length(lam), _hist_length(scale * lam))
    part.hist["n"] = histogram(draws, length)
    return part


def _gof_finish(spec: ExperimentSpec, part: _Partial) -> EnsembleSummary:
    k, n_e = float(spec.k), int(spec.n_e)
    lam = k * k * n_e
    mn = part.moments["n"]
    result = chi_square_gof(part.hist["n"], PoissonLaw(lam))
    statistics = [
        StatRecord("mean_count", mn.mean, mn.stderr_mean, lam, lam),
        StatRecord("var_count", mn.variance, mn.stderr_variance, lam, lam),
    ]
    rows = [[-1 if lo is None else lo, -1 if hi is None else hi, o, e]
            for (lo, hi), o, e in zip(result.bin_edges, result.observed, result.expected)]
    table = Table(["lo", "hi", "observed", "expected"], rows)
    return EnsembleSummary(
        spec, statistics, counts={"replicates": spec.replicates, "excluded": 0},
        derived={"sample_scale": float(spec.extra.get("sample_scale", 1.0))},
        tests={"poisson": result}, tables={"bins": table}, plot_table="bins",
    )


_RUNNERS = {
    "velocity": (_velocity_block, _velocity_finish),
    "two_observer": (_two_observer_block, _two_observer_finish),
    "uncertainty": (_uncertainty_block, _uncertainty_finish),
    "spread": (_spread_block, _spread_finish),
    "gof": (_gof_block, _gof_finish),
}


def run_ensemble(spec: ExperimentSpec, workers: int | None = None) -> EnsembleSummary:
    """Run all replicates of ``spec`` and summarise them."""
    spec.validate()
    block_fn, finish_fn = _RUNNERS[spec.kind]
    sizes = _blocks(int(spec.replicates))
    workers = worker_count() if workers is None else int(workers)
    if workers < 1:
        raise ChrononError("workers must be >= 1")

    def one(i: int) -> _Partial:
        gen = RngStream(int(spec.seed), spec.kind, i).generator()
        return block_fn(spec, sizes[i], gen)

    if workers == 1 or len(sizes) == 1:
        parts = [one(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(sizes))) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    return finish_fn(spec, tree_reduce(parts, _Partial.merge))
