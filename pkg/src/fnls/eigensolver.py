"""Lowest eigenpairs of the frozen-density mean-field operator.

The block solver is a locally optimal block preconditioned conjugate direction
iteration (LOBPCG): each step performs Rayleigh-Ritz on the span of the current
block, its preconditioned residuals and the previous search directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .constraints import random_block
from .energy import safe_power
from .errors import NoConvergence
from .lattice import ScalarField, ShiftedLaplacianInverse, laplacian, _STENCILS
from .model import Density, ModelParams, OrbitalSet, coulomb_array

log = logging.getLogger(__name__)

__all__ = [
    "SpectrumResult",
    "apply_hamiltonian",
    "lowest_eigenpairs",
    "block_lobpcg",
    "fix_signs",
    "GUARD_VECTORS",
]

GUARD_VECTORS = 2


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenfields: OrbitalSet = field(repr=False)
    residuals: np.ndarray
    iterations: int = 0
    converged: bool = True

    @property
    def unbound(self) -> np.ndarray:
        """Eigenvalues at or above the continuum edge of the whole-space operator."""
        return self.eigenvalues >= 0.0

    def csv_rows(self):
        return [[i, float(mu), float(r)] for i, (mu, r) in
                enumerate(zip(self.eigenvalues, self.residuals), start=1)]


def local_potential(rho: np.ndarray | None, params: ModelParams) -> np.ndarray:
    w = np.zeros(params.grid.shape)
    if params.centers:
        w += coulomb_array(params.grid, params.centers, params.s, params.coulomb_strength)
    if rho is not None:
        w -= params.coupling * safe_power(np.asarray(rho), params.p - 1.0)
    return w


def apply_hamiltonian(u: ScalarField, density: Density | None, params: ModelParams) -> ScalarField:
    """``-Δu + V_s u - alpha^(2p-2) rho^(p-1) u``."""
    rho = None if density is None else density.rho.values
    w = local_potential(rho, params)
    return ScalarField(u.grid, laplacian(u.values, u.grid.spacing, params.order) + w * u.values)


def _orthonormal_basis(s: np.ndarray, dv: float, drop: float = 1e-12) -> np.ndarray:
    """Coefficients ``C`` with ``(S C)`` orthonormal; near-dependent directions dropped."""
    g = dv * (s @ s.T)
    g = 0.5 * (g + g.T)
    d = np.sqrt(np.clip(np.diag(g), 1e-300, None))
    gs = g / np.outer(d, d)
    w, q = np.linalg.eigh(gs)
    keep = w > drop * w[-1]
    return (q[:, keep] / np.sqrt(w[keep])) / d[:, None]


def block_lobpcg(apply_op, precond, x0: np.ndarray, n_want: int, dv: float,
                 tol: float, max_iters: int):
    """Generic LOBPCG on flat vectors.

    ``apply_op`` and ``precond`` map ``(k, N)`` arrays to ``(k, N)`` arrays.
    Returns ``(eigenvalues, vectors, residual_norms, iterations, converged)``
    for the whole block; only the first ``n_want`` pairs are tested.
    """
    x = np.array(x0, dtype=np.float64)
    k = x.shape[0]
    c = _orthonormal_basis(x, dv)
    x = c.T @ x
    if x.shape[0] < k:
        raise ValueError("initial block is rank deficient")
    ax = apply_op(x)
    a = dv * (x @ ax.T)
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    x, ax = q.T @ x, q.T @ ax
    p = ap = None
    res = np.full(k, np.inf)
    it = 0
    converged = False
    for it in range(1, max_iters + 1):
        r = ax - w[:, None] * x
        res = np.sqrt(dv * np.einsum("ij,ij->i", r, r))
        if np.all(res[:n_want] <= tol):
            converged = True
            it -= 1
            break
        wdir = precond(r)
        wdir -= (dv * (wdir @ x.T)) @ x
        wdir /= np.sqrt(dv * np.einsum("ij,ij->i", wdir, wdir))[:, None] + 1e-300
        aw = apply_op(wdir)
        if p is None:
            s, as_ = np.vstack([x, wdir]), np.vstack([ax, aw])
        else:
            nrm = np.sqrt(dv * np.einsum("ij,ij->i", p, p))[:, None] + 1e-300
            p, ap = p / nrm, ap / nrm
            s, as_ = np.vstack([x, wdir, p]), np.vstack([ax, aw, ap])
        cb = _orthonormal_basis(s, dv)
        q_s = cb.T @ s
        aq = cb.T @ as_
        hq = dv * (q_s @ aq.T)
        wr, v = np.linalg.eigh(0.5 * (hq + hq.T))
        coef = cb @ v[:, :k]  # coefficients over s
        w = wr[:k]
        x_new = coef.T @ s
        ax_new = coef.T @ as_
        # new search direction: the part of the update outside the old block
        coef_p = coef.copy()
        coef_p[:k] = 0.0
        p = coef_p.T @ s
        ap = coef_p.T @ as_
        x, ax = x_new, ax_new
    else:
        r = ax - w[:, None] * x
        res = np.sqrt(dv * np.einsum("ij,ij->i", r, r))
        converged = bool(np.all(res[:n_want] <= tol))
    return w, x, res, it, converged


def fix_signs(block: np.ndarray) -> np.ndarray:
    """Sign convention: ``sum u^3 >= 0``, ties broken by the first nonzero entry."""
    out = np.array(block, copy=True)
    for i, u in enumerate(out):
        c = float(np.sum(u * u * u))
        if abs(c) <= 1e-12 * float(np.sum(np.abs(u) ** 3)):
            flat = u.ravel()
            nz = np.flatnonzero(np.abs(flat) > 1e-12 * np.max(np.abs(flat)))
            flip = bool(nz.size) and flat[nz[0]] < 0
        else:
            flip = c < 0
        if flip:
            out[i] = -u
    return out


def make_preconditioner(params: ModelParams, potential: np.ndarray, shift: float,
                        kind: str = "dst"):
    grid = params.grid
    if kind == "dst":
        inv = ShiftedLaplacianInverse(grid, max(shift, 0.0))
        shape = grid.shape

        def apply(r):
            return inv(r.reshape((-1,) + shape)).reshape(r.shape[0], -1)

        return apply
    if kind == "diagonal":
        diag = 3.0 * _STENCILS[params.order][0] / grid.spacing**2 + potential.ravel()
        d = 1.0 / np.maximum(diag + shift, 1e-3 * 3.0 * _STENCILS[params.order][0] / grid.spacing**2)
        return lambda r: r * d
    raise ValueError(f"unknown preconditioner {kind!r}")


def lowest_eigenpairs(density: Density | None, params: ModelParams, m: int, tol: float = 1e-6,
                      seed: int = 0, max_iters: int = 500, init: np.ndarray | None = None,
                      preconditioner: str = "dst", guards: int = GUARD_VECTORS,
                      strict: bool = True) -> SpectrumResult:
    """``m`` lowest eigenpairs of ``H = -Δ + V_s - alpha^(2p-2) rho^(p-1)``.

    Runs with ``m + guards`` vectors; guards are discarded on return. Raises
    :class:`NoConvergence` (carrying the result) when ``strict`` and the
    residuals are not all below ``tol`` after ``max_iters`` steps.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = params.grid
    shape = grid.shape
    dv = grid.cell_volume
    rho = None if density is None else density.rho.values
    pot = local_potential(rho, params)
    k = m + guards

    def apply_op(x):
        xb = x.reshape((-1,) + shape)
        return (laplacian(xb, grid.spacing, params.order) + pot * xb).reshape(x.shape[0], -1)

    center = params.centers[0] if params.centers else (0.0, 0.0, 0.0)
    x0 = random_block(k, grid, seed, center=center).reshape(k, -1)
    if init is not None:
        init = np.asarray(init).reshape(-1, grid.n**3)
        j = min(init.shape[0], k)
        x0[:j] = init[:j]
    # preconditioner shift from the initial Rayleigh quotients
    c = _orthonormal_basis(x0, dv)
    q = c.T @ x0
    rq = np.linalg.eigvalsh(dv * (q @ apply_op(q).T))
    shift = max(-float(rq[0]), 0.0)
    if shift == 0.0:
        shift = 0.1 * float(np.abs(rq).min()) if np.any(rq) else 0.0
    precond = make_preconditioner(params, pot, shift, preconditioner)
    w, x, res, it, ok = block_lobpcg(apply_op, precond, x0, m, dv, tol, max_iters)
    block = fix_signs(x[:m].reshape((m,) + shape))
    result = SpectrumResult(
        eigenvalues=np.array(w[:m]),
        eigenfields=OrbitalSet(grid, block),
        residuals=np.array(res[:m]),
        iterations=it,
        converged=ok,
    )
    if not ok:
        log.warning("eigensolver stopped after %d iterations, max residual %.3e",
                    it, float(np.max(res[:m])))
        if strict:
            raise NoConvergence(f"no convergence in {max_iters} iterations", result)
    return result
