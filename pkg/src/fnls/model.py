"""Problem definition: parameters, orbital/mixed states, densities, the Coulomb field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import SingularSample, ValidationError
from .lattice import Grid3D, ScalarField

__all__ = [
    "P_MIN",
    "P_MAX",
    "ModelParams",
    "OrbitalSet",
    "Density",
    "density_of",
    "density_array",
    "coulomb_potential",
    "aufbau_occupations",
    "check_exponent",
]

P_MIN, P_MAX = 1.0, 5.0 / 3.0
ORTHO_TOL = 1e-8


def check_exponent(p: float, exc=ValidationError) -> None:
    if not (P_MIN < p < P_MAX):
        raise exc(f"p outside (1, 5/3): p = {p}")


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the energy functional on a given grid.

    ``coulomb_strength`` multiplies the whole Coulomb field; it is 1 for the
    physical problem and ``eps`` for the blown-up problem. ``softening=None``
    means one grid spacing.
    """

    p: float
    alpha: float
    lam: float
    centers: tuple = ()
    grid: Grid3D = None
    softening: float | None = None
    coulomb_strength: float = 1.0
    order: int = 4

    def __post_init__(self):
        check_exponent(self.p)
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")
        if self.grid is None:
            raise ValidationError("a grid is required")
        if self.order not in (2, 4):
            raise ValidationError(f"stencil order must be 2 or 4, got {self.order}")
        if self.softening is not None and self.softening < 0:
            raise ValidationError(f"softening must be >= 0, got {self.softening}")
        c = tuple(tuple(float(v) for v in y) for y in self.centers)
        for y in c:
            if len(y) != 3:
                raise ValidationError(f"centers must be points in R^3, got {y}")
            if not self.grid.contains(y):
                raise ValidationError(f"center {y} lies outside the box")
        for i in range(len(c)):
            for j in range(i):
                if c[i] == c[j]:
                    raise ValidationError("centers pairwise distinct violated: "
                                          f"{c[i]} repeated")
        object.__setattr__(self, "centers", c)

    @property
    def s(self) -> float:
        return self.grid.spacing if self.softening is None else float(self.softening)

    @property
    def coupling(self) -> float:
        """Coefficient ``alpha^(2p-2)`` of the nonlinear potential."""
        return self.alpha ** (2.0 * self.p - 2.0)

    @property
    def n_orbitals(self) -> int:
        return max(1, math.ceil(self.lam - 1e-12))

    def occupations(self) -> np.ndarray:
        return aufbau_occupations(self.lam)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def aufbau_occupations(lam: float) -> np.ndarray:
    """``(1, ..., 1, lam - N + 1)`` with N the smallest integer ``>= lam``."""
    n = max(1, math.ceil(lam - 1e-12))
    occ = np.ones(n)
    occ[-1] = lam - (n - 1)
    return occ


@dataclass(frozen=True, eq=False)
class OrbitalSet:
    """Orbitals stored as one ``(M, n, n, n)`` block with occupation weights."""

    grid: Grid3D
    block: np.ndarray = field(repr=False)
    occupations: np.ndarray = None

    def __post_init__(self):
        b = np.ascontiguousarray(self.block, dtype=np.float64)
        if b.ndim == 3:
            b = b[None]
        if b.shape[1:] != self.grid.shape:
            raise ValueError(f"block shape {b.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("orbitals contain non-finite values")
        occ = np.ones(b.shape[0]) if self.occupations is None else np.asarray(self.occupations, float).copy()
        if occ.shape != (b.shape[0],):
            raise ValueError("one occupation per orbital required")
        if np.any(occ < 0) or np.any(occ > 1 + 1e-12):
            raise ValueError("occupations must lie in [0, 1]")
        if np.any(np.diff(occ) > 1e-12):
            raise ValueError("occupations must be sorted non-increasing")
        b.setflags(write=False)
        occ.setflags(write=False)
        object.__setattr__(self, "block", b)
        object.__setattr__(self, "occupations", occ)

    @classmethod
    def from_fields(cls, fields: Sequence[ScalarField], occupations=None) -> "OrbitalSet":
        grid = fields[0].grid
        return cls(grid, np.stack([f.values for f in fields]), occupations)

    @property
    def size(self) -> int:
        return self.block.shape[0]

    @property
    def orbitals(self) -> list[ScalarField]:
        return [ScalarField(self.grid, u) for u in self.block]

    @property
    def total_occupation(self) -> float:
        return float(np.sum(self.occupations))

    @property
    def is_pure(self) -> bool:
        return bool(np.all(self.occupations == 1.0))

    def gram(self) -> np.ndarray:
        flat = self.block.reshape(self.size, -1)
        g = self.grid.cell_volume * (flat @ flat.T)
        return 0.5 * (g + g.T)

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.size))))

    def replace_block(self, block) -> "OrbitalSet":
        return OrbitalSet(self.grid, block, self.occupations)


@dataclass(frozen=True, eq=False)
class Density:
    rho: ScalarField
    mass: float


def density_array(block: np.ndarray, occupations) -> np.ndarray:
    """``sum_i n_i u_i^2`` for a raw orbital block."""
    occ = np.asarray(occupations, dtype=float)
    rho = np.zeros(block.shape[1:])
    for n_i, u in zip(occ, block):
        rho += n_i * (u * u)
    return rho


def density_of(state: OrbitalSet) -> Density:
    rho = ScalarField(state.grid, density_array(state.block, state.occupations))
    return Density(rho, float(state.grid.cell_volume * np.sum(rho.values)))


def coulomb_array(grid: Grid3D, centers, softening: float, strength: float = 1.0) -> np.ndarray:
    v = np.zeros(grid.shape)
    x, y, z = grid.coordinates()
    for c in centers:
        r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
        v -= 1.0 / np.sqrt(r2 + softening * softening)
    return strength * v


def coulomb_potential(params: ModelParams) -> ScalarField:
    """``V_s(x) = -strength * sum_k (|x - y_k|^2 + s^2)^(-1/2)`` on the grid."""
    s = params.s
    if s == 0.0:
        for c in params.centers:
            if params.grid.is_node(c):
                raise SingularSample(f"center {c} lies on a grid node and softening is 0")
    return ScalarField(params.grid, coulomb_array(params.grid, params.centers, s,
                                                  params.coulomb_strength))
