"""Numerical checks of the functional inequalities behind the existence theory.

Every checker returns a *margin* ``lhs - rhs`` which the inequality asserts to
be nonnegative; the checkers never raise on a violation.

Lieb--Thirring constant
    The default ``C_LT_DEFAULT`` is the best rigorously established value for
    spinless fermions in three dimensions, ``0.471 * K_cl`` with the
    semiclassical constant ``K_cl = (3/5) (6 pi^2)^(2/3)`` (Frank, Hundertmark,
    Jex, Nam, J. Eur. Math. Soc. 2023). It is a configuration knob, not a claim
    about the sharp constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .energy import safe_power
from .errors import DomainError
from .lattice import ScalarField, gradient_squared, laplacian
from .model import OrbitalSet, check_exponent, density_array

__all__ = [
    "C_LT_SEMICLASSICAL",
    "C_LT_DEFAULT",
    "check_hardy",
    "check_lieb_thirring",
    "lieb_thirring_ratio",
    "empirical_lt_constant",
    "check_hoffmann_ostenhof",
    "check_gns",
    "gns_constant",
    "gns_terms",
    "InequalityRow",
]

C_LT_SEMICLASSICAL = 0.6 * (6.0 * math.pi**2) ** (2.0 / 3.0)
C_LT_DEFAULT = 0.471 * C_LT_SEMICLASSICAL


@dataclass(frozen=True)
class InequalityRow:
    inequality: str
    seed: int
    margin: float


def _kinetic_terms(state: OrbitalSet, order: int) -> np.ndarray:
    """Per-orbital ``<u_i, -Δ u_i>`` with the shared stencil."""
    h = state.grid.spacing
    lap = laplacian(state.block, h, order)
    m = state.size
    return state.grid.cell_volume * np.einsum("ij,ij->i", state.block.reshape(m, -1),
                                              lap.reshape(m, -1))


def check_hardy(u: ScalarField, epsilon: float, center=(0.0, 0.0, 0.0),
                softening: float | None = None, order: int = 2) -> float:
    """``eps ∫|∇u|^2 + (4/eps) ∫u^2 - ∫u^2/|x - center|`` (softened ``|x|``, default ``s = h``)."""
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    g = u.grid
    s = g.spacing if softening is None else softening
    dv = g.cell_volume
    v = u.values
    kin = dv * float(np.sum(v * laplacian(v, g.spacing, order)))
    mass = dv * float(np.sum(v * v))
    r = np.sqrt(g.radius(center) ** 2 + s * s)
    coulomb = dv * float(np.sum(v * v / r))
    return epsilon * kin + 4.0 * mass / epsilon - coulomb


def lieb_thirring_ratio(state: OrbitalSet, order: int = 2) -> float:
    """``||γ||^(2/3) Tr(-Δγ) / ∫ρ^(5/3)``: the largest constant this state allows."""
    kin = float(np.dot(state.occupations, _kinetic_terms(state, order)))
    rho = density_array(state.block, state.occupations)
    denom = state.grid.cell_volume * float(np.sum(safe_power(rho, 5.0 / 3.0)))
    norm = float(np.max(state.occupations))
    return norm ** (2.0 / 3.0) * kin / denom


def check_lieb_thirring(state: OrbitalSet, c_lt: float = C_LT_DEFAULT, order: int = 2) -> float:
    """``||γ||^(2/3) Σ n_i ∫|∇u_i|^2 - c_LT ∫ρ^(5/3)`` with ``||γ|| = max n_i``."""
    kin = float(np.dot(state.occupations, _kinetic_terms(state, order)))
    rho = density_array(state.block, state.occupations)
    rhs = c_lt * state.grid.cell_volume * float(np.sum(safe_power(rho, 5.0 / 3.0)))
    return float(np.max(state.occupations)) ** (2.0 / 3.0) * kin - rhs


def empirical_lt_constant(states: Iterable[OrbitalSet], order: int = 2) -> float:
    """Largest ``c`` keeping every Lieb--Thirring margin nonnegative over ``states``."""
    return min(lieb_thirring_ratio(s, order) for s in states)


def check_hoffmann_ostenhof(state: OrbitalSet, eta: float = 1e-300) -> float:
    """``Σ n_i ∫|∇u_i|^2 - ∫|∇sqrt(ρ)|^2``.

    Both sides use first differences with zero exterior values (the kinetic
    side through the identity ``<u, -Δ_2 u> = Σ|D⁺u|^2``). With that pairing
    the inequality holds exactly on the lattice, by the triangle inequality
    applied to each difference quotient.
    """
    kin = float(np.dot(state.occupations, _kinetic_terms(state, 2)))
    rho = density_array(state.block, state.occupations)
    sq = np.sqrt(rho + eta)
    return kin - gradient_squared(sq, state.grid.spacing)


def gns_constant(p: float, j1inf: float) -> float:
    """``K(p, N)`` making ``Σ∫|∇u_i|^2 >= K (∫ρ^p)^(2/(3(p-1)))`` sharp at the free minimiser."""
    check_exponent(p, DomainError)
    if not j1inf < 0:
        raise DomainError(f"J1inf must be negative, got {j1inf}")
    theta = 3.0 * (p - 1.0)
    e = (2.0 - theta) / theta
    return ((p - 1.0) * abs(j1inf) ** (-e) * (3.0 / (2.0 * p)) ** (2.0 / theta)
            * (5.0 / 3.0 - p) ** e)


def gns_terms(state: OrbitalSet, p: float, j1inf: float, order: int = 4):
    """Left side ``Σ∫|∇u_i|^2`` and right side ``K (∫ρ^p)^(2/(3(p-1)))``."""
    kin = float(np.sum(_kinetic_terms(state, order)))
    rho = density_array(state.block, np.ones(state.size))
    mom = state.grid.cell_volume * float(np.sum(safe_power(rho, p)))
    return kin, gns_constant(p, j1inf) * mom ** (2.0 / (3.0 * (p - 1.0)))


def check_gns(state: OrbitalSet, j1inf: float, p: float, order: int = 4) -> float:
    """GNS margin for a pure state; ``j1inf`` is the solver's own estimate of J₁^∞(N)."""
    if not state.is_pure:
        raise DomainError("the GNS inequality is stated for pure states (all occupations 1)")
    lhs, rhs = gns_terms(state, p, j1inf, order)
    return lhs - rhs
