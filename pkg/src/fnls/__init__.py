"""Real-space ground states of the N-orbital fermionic NLS with Coulomb centres."""

__version__ = "0.1.0"

from .errors import (DomainError, FNLSError, InsufficientSamples, LineSearchStall,
                     NoConvergence, OccupationMismatch, OscillationDetected, ParseError,
                     RankDeficient, SingularSample, SolverError, ValidationError)
from .lattice import Grid3D, ScalarField, integrate
from .model import Density, ModelParams, OrbitalSet, coulomb_potential, density_of
from .energy import EnergyBreakdown, energy_gradient, evaluate_energy

__all__ = [
    "__version__",
    "DomainError", "FNLSError", "InsufficientSamples", "LineSearchStall", "NoConvergence",
    "OccupationMismatch", "OscillationDetected", "ParseError", "RankDeficient",
    "SingularSample", "SolverError", "ValidationError",
    "Grid3D", "ScalarField", "integrate",
    "Density", "ModelParams", "OrbitalSet", "coulomb_potential", "density_of",
    "EnergyBreakdown", "energy_gradient", "evaluate_energy",
]
