"""Physical constants, ion species, and unit conversions.

Internal units are strictly SI.  Boundary I/O (layout files, CSV exports,
CLI flags) uses micrometres, millimetres, MHz, and meV with the explicit
converters below.
"""

from __future__ import annotations

from dataclasses import dataclass

import scipy.constants as _const


@dataclass(frozen=True)
class PhysicalConstants:
    """SI constants used throughout (CODATA via scipy)."""

    reduced_planck: float = _const.hbar          # J s
    elementary_charge: float = _const.e          # C
    atomic_mass_unit: float = _const.atomic_mass  # kg
    mass_mg24: float = 23.985042 * _const.atomic_mass
    mass_mg25: float = 24.985837 * _const.atomic_mass

    def __post_init__(self) -> None:
        for name in ("reduced_planck", "elementary_charge", "atomic_mass_unit",
                     "mass_mg24", "mass_mg25"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


CONSTANTS = PhysicalConstants()

BOLTZMANN = _const.k  # J/K, used for thermal initial states


@dataclass(frozen=True)
class IonSpecies:
    """A singly ionized atomic species."""

    label: str
    mass: float    # kg
    charge: float  # C

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError("ion mass must be positive")
        if self.charge <= 0:
            raise ValueError("only positive (singly ionized) species supported")


MG24 = IonSpecies("Mg24+", CONSTANTS.mass_mg24, CONSTANTS.elementary_charge)
MG25 = IonSpecies("Mg25+", CONSTANTS.mass_mg25, CONSTANTS.elementary_charge)

UM = 1e-6   # m per micrometre
MM = 1e-3   # m per millimetre
MS = 1e-3   # s per millisecond
US = 1e-6   # s per microsecond


def joule_to_mev(energy):
    """Convert energy in J to meV (Fig.-1 style potential surfaces)."""
    return energy / (CONSTANTS.elementary_charge * 1e-3)


def mev_to_joule(energy_mev):
    return energy_mev * CONSTANTS.elementary_charge * 1e-3


def mhz_to_angular(f_mhz):
    """MHz -> rad/s."""
    return 2.0 * _const.pi * f_mhz * 1e6


def angular_to_mhz(omega):
    """rad/s -> MHz."""
    return omega / (2.0 * _const.pi * 1e6)
