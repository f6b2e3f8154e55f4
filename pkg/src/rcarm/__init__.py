"""Reservoir-computing control of a simulated soft muscular arm."""

__version__ = "0.1.0"

from .rod import (  # noqa: F401
    RodState, StrainField, LoadField, SimulationDiverged, SingularGeometry,
    build_rod, compute_strains, internal_loads, verlet_step, simulate_rod,
    rod_energies, stable_timestep,
)
