"""Energy functional of (mixed) orbital states and its L2 gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ScalarField, laplacian
from .model import ModelParams, OrbitalSet, coulomb_potential, density_array

__all__ = [
    "EnergyBreakdown",
    "evaluate_energy",
    "energy_gradient",
    "nonlinear_potential",
    "safe_power",
    "Functional",
    "ENERGY_CSV_COLUMNS",
    "energy_csv_row",
]


def safe_power(rho: np.ndarray, exponent: float) -> np.ndarray:
    """``rho**exponent`` for ``rho >= 0`` with ``0**exponent := 0``."""
    out = np.zeros_like(rho)
    pos = rho > 0
    out[pos] = np.exp(exponent * np.log(rho[pos]))
    return out


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    potential: float
    nonlinear: float
    total: float

    @classmethod
    def from_terms(cls, kinetic, potential, nonlinear) -> "EnergyBreakdown":
        return cls(float(kinetic), float(potential), float(nonlinear),
                   float(kinetic + potential + nonlinear))


class Functional:
    """Discrete energy for fixed parameters, caching the sampled potential.

    Works on raw orbital blocks ``(M, n, n, n)`` so that solvers avoid
    re-wrapping arrays on every step.
    """

    def __init__(self, params: ModelParams, occupations=None):
        self.params = params
        self.grid = params.grid
        self.h = params.grid.spacing
        self.dv = params.grid.cell_volume
        self.order = params.order
        self.coupling = params.coupling
        self.p = params.p
        self.V = coulomb_potential(params).values if params.centers else None
        self.occupations = (params.occupations() if occupations is None
                            else np.asarray(occupations, float))

    def density(self, block) -> np.ndarray:
        return density_array(block, self.occupations)

    def mean_field(self, rho: np.ndarray) -> np.ndarray:
        """Local potential ``V - alpha^(2p-2) rho^(p-1)``."""
        w = -self.coupling * safe_power(rho, self.p - 1.0)
        if self.V is not None:
            w += self.V
        return w

    def terms(self, block, lap=None) -> EnergyBreakdown:
        occ = self.occupations
        if lap is None:
            lap = laplacian(block, self.h, self.order)
        kin = sum(n_i * float(np.sum(u * lu)) for n_i, u, lu in zip(occ, block, lap)) * self.dv
        rho = self.density(block)
        pot = float(np.sum(self.V * rho)) * self.dv if self.V is not None else 0.0
        nl = -(self.coupling / self.p) * float(np.sum(safe_power(rho, self.p))) * self.dv
        return EnergyBreakdown.from_terms(kin, pot, nl)

    def total(self, block) -> float:
        return self.terms(block).total

    def apply_h(self, block, rho=None, lap=None) -> np.ndarray:
        """Mean-field operator applied to every orbital of the block."""
        if rho is None:
            rho = self.density(block)
        if lap is None:
            lap = laplacian(block, self.h, self.order)
        return lap + self.mean_field(rho) * block

    def gradient(self, block) -> np.ndarray:
        """``g_i = 2 n_i H_rho u_i`` (L2 gradient w.r.t. the grid inner product)."""
        hu = self.apply_h(block)
        return 2.0 * self.occupations[:, None, None, None] * hu


def _functional_for(state: OrbitalSet, params: ModelParams) -> Functional:
    if state.grid != params.grid:
        raise ValueError("state and params live on different grids")
    return Functional(params, state.occupations)


def evaluate_energy(state: OrbitalSet, params: ModelParams) -> EnergyBreakdown:
    """Kinetic, potential and nonlinear parts of the energy of ``state``."""
    return _functional_for(state, params).terms(state.block)


def energy_gradient(state: OrbitalSet, params: ModelParams) -> list:
    g = _functional_for(state, params).gradient(state.block)
    return [ScalarField(state.grid, gi) for gi in g]


def nonlinear_potential(rho: np.ndarray, params: ModelParams) -> np.ndarray:
    return params.coupling * safe_power(rho, params.p - 1.0)


ENERGY_CSV_COLUMNS = ("p", "alpha", "lambda", "kinetic", "potential", "nonlinear",
                      "total", "iterations", "residual")


def energy_csv_row(params: ModelParams, energy: EnergyBreakdown, iterations: int,
                   residual: float) -> list:
    return [params.p, params.alpha, params.lam, energy.kinetic, energy.potential,
            energy.nonlinear, energy.total, iterations, residual]
