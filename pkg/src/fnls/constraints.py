"""Orthonormality machinery: Gram matrices, symmetric (Löwdin) orthonormalisation,
seeded random frames and gauge mixing of orbitals."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import OccupationMismatch, RankDeficient
from .lattice import Grid3D, ScalarField
from .model import OrbitalSet

__all__ = [
    "RANK_THRESHOLD",
    "gram",
    "gram_block",
    "inverse_sqrt",
    "lowdin_block",
    "lowdin_orthonormalize",
    "random_orthonormal_set",
    "mix_orbitals",
]

RANK_THRESHOLD = 1e-12


def gram_block(block: np.ndarray, dv: float) -> np.ndarray:
    flat = block.reshape(block.shape[0], -1)
    g = dv * (flat @ flat.T)
    return 0.5 * (g + g.T)


def gram(orbitals: Sequence[ScalarField]) -> np.ndarray:
    """Matrix of quadrature inner products, symmetrised exactly."""
    grid = orbitals[0].grid
    return gram_block(np.stack([f.values for f in orbitals]), grid.cell_volume)


def inverse_sqrt(g: np.ndarray) -> np.ndarray:
    """``G^{-1/2}`` via symmetric eigendecomposition."""
    w, q = np.linalg.eigh(g)
    if w[0] <= RANK_THRESHOLD:
        raise RankDeficient(f"Gram matrix min eigenvalue {w[0]:.3e} <= {RANK_THRESHOLD:g}")
    return (q / np.sqrt(w)) @ q.T


def lowdin_block(block: np.ndarray, dv: float) -> np.ndarray:
    """Right-multiply the family by ``G^{-1/2}``; raw-array version."""
    s = inverse_sqrt(gram_block(block, dv))
    m = block.shape[0]
    out = (s.T @ block.reshape(m, -1)).reshape(block.shape)
    return out


def lowdin_orthonormalize(orbitals: Sequence[ScalarField]) -> list[ScalarField]:
    """Closest orthonormal family (Frobenius sense) spanning the same subspace."""
    grid = orbitals[0].grid
    out = lowdin_block(np.stack([f.values for f in orbitals]), grid.cell_volume)
    return [ScalarField(grid, u) for u in out]


def random_block(m: int, grid: Grid3D, seed: int, center=(0.0, 0.0, 0.0),
                 width: float | None = None) -> np.ndarray:
    """Gaussian-enveloped white noise, ``m`` fields, reproducible per seed."""
    if width is None:
        width = grid.extent / 4.0
    rng = np.random.default_rng(seed)
    env = np.exp(-0.5 * (grid.radius(center) / width) ** 2)
    return rng.standard_normal((m,) + grid.shape) * env


def random_orthonormal_set(m: int, grid: Grid3D, seed: int, occupations=None,
                           center=(0.0, 0.0, 0.0), width: float | None = None,
                           smooth: int = 2) -> OrbitalSet:
    """``m`` seeded random orbitals, Löwdin-orthonormalised.

    ``smooth`` rounds of nearest-neighbour averaging remove grid-scale noise so
    that kinetic energies stay moderate.
    """
    if m < 1:
        raise ValueError("need at least one orbital")
    block = random_block(m, grid, seed, center, width)
    for _ in range(smooth):
        block = _box_smooth(block)
    block = lowdin_block(block, grid.cell_volume)
    return OrbitalSet(grid, block, occupations)


def _box_smooth(block: np.ndarray) -> np.ndarray:
    out = block.copy()
    for ax in (1, 2, 3):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[ax] = slice(1, None)
        hi[ax] = slice(None, -1)
        tmp = 2.0 * out
        tmp[tuple(lo)] += out[tuple(hi)]
        tmp[tuple(hi)] += out[tuple(lo)]
        out = tmp / 4.0
    return out


def mix_orbitals(state: OrbitalSet, q: np.ndarray, tol: float = 1e-10) -> OrbitalSet:
    """Replace the orbitals by ``(u_1..u_M) Q``; Q may only rotate equal-occupation blocks."""
    q = np.asarray(q, dtype=float)
    m = state.size
    if q.shape != (m, m):
        raise ValueError(f"Q must be {m}x{m}")
    if np.max(np.abs(q.T @ q - np.eye(m))) > tol:
        raise ValueError("Q is not orthogonal")
    occ = state.occupations
    coupled = np.abs(q) > tol
    if np.any(coupled & (occ[:, None] != occ[None, :])):
        raise OccupationMismatch("Q mixes orbitals with different occupations")
    new = (q.T @ state.block.reshape(m, -1)).reshape(state.block.shape)
    return state.replace_block(new)
