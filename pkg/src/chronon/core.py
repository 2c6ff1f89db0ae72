"""Domain types, exact radar coordinates, physical constants and species.

Everything here works in natural units: c = 1, time measured in chronons,
energies as plain reals in units of the species mass scale. Conversion to
SI happens only through :func:`si_conversion`.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

C_LIGHT = 299_792_458.0  # m/s, exact
HBAR = 1.054571817e-34  # J s
MEV_IN_JOULE = 1.602176634e-13

# 2.42e-10 cm rather than CODATA, so the electron time element comes out at ~1e-20 s.
ELECTRON_COMPTON_WAVELENGTH = 2.42e-12  # m

UINT64_MAX = 2**64 - 1
MAX_POISSON_MEAN = 1e15


class ChrononError(ValueError):
    """Raised for values outside the model's domain."""


class DegenerateSampleError(ChrononError):
    """A zero count sits where the formula needs a positive denominator."""


@dataclass(frozen=True, order=True)
class ChrononCount:
    """Non-negative tick count on an observer's clock."""

    value: int

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            try:
                as_int = int(self.value)
            except (TypeError, ValueError):
                raise ChrononError(f"chronon count must be an integer, got {self.value!r}")
            if as_int != self.value:
                raise ChrononError(f"chronon count must be an integer, got {self.value!r}")
            object.__setattr__(self, "value", as_int)
        if self.value < 0:
            raise ChrononError(f"chronon count must be >= 0, got {self.value}")
        if self.value > UINT64_MAX:
            raise OverflowError(f"chronon count {self.value} exceeds 64 bits")

    def __int__(self):
        return self.value

    def __index__(self):
        return self.value

    def __add__(self, other):
        return ChrononCount(self.value + int(other))

    def __sub__(self, other):
        return ChrononCount(self.value - int(other))


@dataclass(frozen=True)
class Velocity:
    """Velocity in units of c, strictly inside the light cone."""

    v: float

    def __post_init__(self):
        if not (-1.0 < self.v < 1.0):
            raise ChrononError(f"|v| must be < 1, got {self.v}")

    def __float__(self):
        return float(self.v)


@dataclass(frozen=True)
class KFactor:
    """Bondi k-factor, k > 0."""

    k: float

    def __post_init__(self):
        if not (self.k > 0.0) or math.isinf(self.k):
            raise ChrononError(f"k must be positive and finite, got {self.k}")

    def __float__(self):
        return float(self.k)

    @property
    def velocity(self) -> Velocity:
        return Velocity(velocity_from_k(self.k))


def k_from_velocity(v) -> float:
    v = float(v)
    if not (-1.0 < v < 1.0):
        raise ChrononError(f"|v| must be < 1, got {v}")
    return math.sqrt((1.0 + v) / (1.0 - v))


def velocity_from_k(k) -> float:
    k = float(k)
    if not k > 0.0:
        raise ChrononError(f"k must be positive, got {k}")
    k2 = k * k
    return (k2 - 1.0) / (k2 + 1.0)


@dataclass(frozen=True)
class ClassicalInterval:
    """Continuous proper-time interval of the classical k-calculus."""

    s: float

    def __post_init__(self):
        if not self.s > 0.0:
            raise ChrononError(f"classical interval must be positive, got {self.s}")


@dataclass(frozen=True, order=True)
class HalfIntCoord:
    """A half-integer coordinate stored as twice its value."""

    twice_value: int

    def __post_init__(self):
        if not isinstance(self.twice_value, int) or isinstance(self.twice_value, bool):
            raise ChrononError("twice_value must be an int")
        if abs(self.twice_value) > 2**63 - 1:
            raise OverflowError("doubled coordinate exceeds signed 64 bits")

    @property
    def exact(self) -> Fraction:
        return Fraction(self.twice_value, 2)

    def __float__(self):
        return self.twice_value / 2.0

    def __repr__(self):
        return f"HalfIntCoord({self.exact})"


def coords_from_counts(n_e, n_r) -> tuple[HalfIntCoord, HalfIntCoord]:
    """Radar coordinates (T, X) of an event from emission and echo counts.

    ``2T = N_r + N_e`` and ``2X = N_r - N_e`` hold exactly.
    """
    e = ChrononCount(int(n_e)).value
    r = ChrononCount(int(n_r)).value
    return HalfIntCoord(r + e), HalfIntCoord(r - e)


@dataclass(frozen=True)
class ParticleSpecies:
    """A particle species and its chronon rate.

    The rate follows n_s = 2 pi c / (8 lambda_c), and the rest mass is tied to
    the Compton wavelength so that m c^2 / (8 n_s) = hbar for every massive
    species. Tying mass to chronon count this way is a model assumption, not
    an established fact.
    """

    name: str
    rest_mass: float  # MeV/c^2
    compton_wavelength: float | None  # m; None for massless species
    chronon_rate_ns: float = field(init=False)

    def __post_init__(self):
        if self.rest_mass < 0 or not math.isfinite(self.rest_mass):
            raise ChrononError(f"{self.name}: rest mass must be finite and >= 0")
        if self.rest_mass == 0.0:
            object.__setattr__(self, "compton_wavelength", None)
            object.__setattr__(self, "chronon_rate_ns", 0.0)
            return
        if self.compton_wavelength is None or not self.compton_wavelength > 0:
            raise ChrononError(f"{self.name}: massive species needs a positive Compton wavelength")
        rate = 2.0 * math.pi * C_LIGHT / (8.0 * self.compton_wavelength)
        object.__setattr__(self, "chronon_rate_ns", rate)

    @classmethod
    def from_compton_wavelength(cls, name: str, compton_wavelength: float) -> "ParticleSpecies":
        return cls(name, mass_from_compton_wavelength(compton_wavelength), compton_wavelength)

    @classmethod
    def from_mass(cls, name: str, mass_mev: float) -> "ParticleSpecies":
        if mass_mev == 0:
            return cls(name, 0.0, None)
        return cls(name, mass_mev, compton_wavelength_from_mass(mass_mev))

    @property
    def massive(self) -> bool:
        return self.rest_mass > 0.0

    @property
    def mass_kg(self) -> float:
        return self.rest_mass * MEV_IN_JOULE / C_LIGHT**2

    @property
    def time_element(self) -> float:
        """Duration of one chronon in seconds."""
        require_massive(self)
        return 1.0 / self.chronon_rate_ns

    @property
    def length_element(self) -> float:
        """c times the time element, in metres."""
        require_massive(self)
        return C_LIGHT / self.chronon_rate_ns


def mass_from_compton_wavelength(lam: float) -> float:
    """Rest mass in MeV/c^2 whose reduced-Planck relation gives ``lam``."""
    return 2.0 * math.pi * HBAR * C_LIGHT / lam / MEV_IN_JOULE


def compton_wavelength_from_mass(mass_mev: float) -> float:
    return 2.0 * math.pi * HBAR * C_LIGHT / (mass_mev * MEV_IN_JOULE)


def require_massive(species: ParticleSpecies) -> None:
    if not species.massive:
        raise ChrononError(f"species {species.name!r} has zero rest mass and registers no chronons")


ELECTRON = ParticleSpecies.from_compton_wavelength("electron", ELECTRON_COMPTON_WAVELENGTH)
UNIT_PARTICLE = ParticleSpecies.from_mass("unit", 1.0)

BUILTIN_SPECIES: dict[str, ParticleSpecies] = {s.name: s for s in (ELECTRON, UNIT_PARTICLE)}

_MASS_AGREEMENT = 1e-2


def load_species(source: str | Path | Mapping[str, Mapping[str, str]]) -> dict[str, ParticleSpecies]:
    """Read species from an INI-style key/value file.

    Each section is a species name with ``mass_mev`` and/or
    ``compton_wavelength_m``. When both are present they must agree to 1%;
    the wavelength then wins so the rate/mass ratio stays exact.
    """
    if isinstance(source, Mapping):
        sections = source
    else:
        parser = configparser.ConfigParser()
        path = Path(source)
        if not path.is_file():
            raise FileNotFoundError(path)
        parser.read(path)
        sections = {name: dict(parser[name]) for name in parser.sections()}
    out = {}
    for name, entry in sections.items():
        mass = entry.get("mass_mev")
        lam = entry.get("compton_wavelength_m")
        mass = None if mass is None else float(mass)
        lam = None if lam is None else float(lam)
        if mass is None and lam is None:
            raise ChrononError(f"species {name!r}: need mass_mev or compton_wavelength_m")
        if mass == 0.0:
            out[name] = ParticleSpecies(name, 0.0, None)
        elif lam is None:
            out[name] = ParticleSpecies.from_mass(name, mass)
        else:
            sp = ParticleSpecies.from_compton_wavelength(name, lam)
            if mass is not None and abs(sp.rest_mass - mass) > _MASS_AGREEMENT * mass:
                raise ChrononError(
                    f"species {name!r}: mass {mass} MeV inconsistent with "
                    f"Compton wavelength {lam} m (implies {sp.rest_mass:.6g} MeV)"
                )
            out[name] = sp
    return out


def get_species(name: str, table: Mapping[str, ParticleSpecies] | None = None) -> ParticleSpecies:
    table = BUILTIN_SPECIES if table is None else table
    try:
        return table[name]
    except KeyError:
        raise ChrononError(f"unknown species {name!r}; known: {sorted(table)}") from None


def si_conversion(value: float, species: ParticleSpecies, direction: str = "to_si") -> float:
    """Chronons to seconds (``to_si``) or seconds to chronons (``from_si``)."""
    require_massive(species)
    if direction == "to_si":
        return value / species.chronon_rate_ns
    if direction == "from_si":
        return value * species.chronon_rate_ns
    raise ValueError(f"direction must be 'to_si' or 'from_si', got {direction!r}")
