"""Numerical laboratory for the linearized thin-film equation near a flat
source-type profile in the hodograph (von Mises) frame."""
from .grid import Field, Grid

__all__ = ["Field", "Grid"]
__version__ = "0.1.0"
