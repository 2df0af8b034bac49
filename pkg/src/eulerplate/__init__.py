"""Incompressible Euler flow in a periodic channel under a damped elastic plate.

The fluid is solved on the fixed reference channel through an ALE map built
from the harmonic extension of the plate displacement, with Fourier
collocation horizontally and Chebyshev collocation vertically.
"""

from .ale import AleMap, InterfaceState, build_map, harmonic_extension
from .driver import CoupledState, RunConfig, compatible_initial_data, initial_state, run, validate_initial_data
from .euler import FluidState
from .fields import Grid

__version__ = "0.1.0"

__all__ = [
    "AleMap",
    "CoupledState",
    "FluidState",
    "Grid",
    "InterfaceState",
    "RunConfig",
    "build_map",
    "compatible_initial_data",
    "harmonic_extension",
    "initial_state",
    "run",
    "validate_initial_data",
]
