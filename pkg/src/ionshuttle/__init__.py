"""Desk-scale simulator and analysis toolkit for shuttling single trapped ions
in a multi-layer surface-electrode trap array."""

__version__ = "0.1.0"

from .constants import CONSTANTS, MG24, MG25, IonSpecies, PhysicalConstants

__all__ = ["CONSTANTS", "MG24", "MG25", "IonSpecies", "PhysicalConstants",
           "__version__"]
