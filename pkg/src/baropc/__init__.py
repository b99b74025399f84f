"""Pressure-correction solver for 2D compressible barotropic flow.

A desk-scale implementation built around three executable stability
results: the kinetic-energy estimate for the finite-volume transport
operator, the elastic-potential bound on the pressure work, and the
resulting unconditional energy bound for the full five-step scheme.
"""

from .mesh import RectMesh, build_rect_mesh
from .eos import make_eos, AffineLaw, LinearLaw, PowerLaw, tangent_mean

__all__ = [
    "RectMesh",
    "build_rect_mesh",
    "make_eos",
    "AffineLaw",
    "LinearLaw",
    "PowerLaw",
    "tangent_mean",
]

__version__ = "0.1.0"
