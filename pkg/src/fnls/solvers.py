"""Ground-state solvers.

Two independent routes are provided and are expected to agree:

* :func:`minimize_direct` -- preconditioned Riemannian quasi-Newton (L-BFGS)
  descent on the set of orthonormal families, Löwdin retraction, Armijo
  backtracking on the true energy;
* :func:`minimize_scf` -- damped self-consistent field iteration filling the
  lowest eigenmodes of the frozen mean-field operator.

:func:`solve_free` adds whole-cell translation pinning for the problem without
external potential.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .constraints import lowdin_block, random_orthonormal_set
from .eigensolver import SpectrumResult, lowest_eigenpairs
from .energy import EnergyBreakdown, Functional
from .errors import (LineSearchStall, NoConvergence, OscillationDetected, RankDeficient,
                     SolverError, ValidationError)
from .lattice import Grid3D, ScalarField, ShiftedLaplacianInverse, laplacian, shift_cells
from .model import Density, ModelParams, OrbitalSet, density_array

log = logging.getLogger(__name__)

__all__ = [
    "SolveReport",
    "minimize_direct",
    "minimize_scf",
    "minimize_best",
    "solve_free",
    "energy_curve",
    "binding_check",
    "BindingReport",
    "CurvePoint",
    "initial_state",
    "attach_spectrum",
    "concentration_point",
    "estimate_mu",
    "auto_extent",
    "auto_grid",
    "ARMIJO_C",
    "BACKTRACK",
]

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 40
LBFGS_MEMORY = 8
ANDERSON_CAP = 50.0


@dataclass(frozen=True, eq=False)
class SolveReport:
    state: OrbitalSet = field(repr=False)
    energy: EnergyBreakdown
    spectrum: SpectrumResult | None = field(repr=False)
    iterations: int
    residual: float
    converged: bool
    concentration_point: np.ndarray
    method: str = "direct"
    history: tuple = field(default=(), repr=False)
    params: ModelParams | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return self.energy.total

    def eigenvalue_ordering_ok(self) -> bool:
        """``mu_1 < mu_2 <= ... <= mu_N < 0`` for the occupied levels."""
        if self.spectrum is None:
            return False
        mu = self.spectrum.eigenvalues[: self.state.size]
        ok = bool(mu[-1] < 0)
        if mu.size > 1:
            ok = ok and bool(mu[0] < mu[1]) and bool(np.all(np.diff(mu) >= 0))
        return ok


# --------------------------------------------------------------------------- sizing

def _gaussian_terms(p, coupling, lam, strength, n_centers):
    """Energy pieces of a single Gaussian of mass ``lam`` and width ``sigma``.

    Centres are collapsed onto the Gaussian's centre, which overestimates the
    binding for spread-out molecules; only used to size boxes.
    """
    def parts(sigma):
        kin = 1.5 * lam / sigma**2
        pot = -strength * n_centers * lam * 2.0 / (sigma * math.sqrt(math.pi))
        rho_p = lam**p * p**-1.5 * (math.pi * sigma**2) ** (-1.5 * (p - 1.0))
        return kin, pot, coupling * rho_p
    return parts


def estimate_mu(p: float, alpha: float, lam: float, n_centers: int = 0,
                strength: float = 1.0) -> float:
    """Rough lowest eigenvalue from the best single-Gaussian trial state."""
    coupling = alpha ** (2 * p - 2)
    parts = _gaussian_terms(p, coupling, lam, strength, n_centers)

    def energy(log_sigma):
        kin, pot, nl = parts(math.exp(log_sigma))
        return kin + pot - nl / p

    res = minimize_scalar(energy, bounds=(-30.0, 30.0), method="bounded",
                          options={"xatol": 1e-10})
    kin, pot, nl = parts(math.exp(res.x))
    mu = (kin + pot - nl) / lam
    return min(mu, -1e-300)


def auto_extent(p, alpha, lam, centers=(), strength: float = 1.0, decay_lengths: float = 12.0):
    mu = estimate_mu(p, alpha, lam, len(centers), strength)
    reach = max((float(np.max(np.abs(c))) for c in centers), default=0.0)
    return reach + decay_lengths / math.sqrt(abs(mu))


def auto_grid(p, alpha, lam, centers=(), n: int = 64, strength: float = 1.0) -> Grid3D:
    return Grid3D(auto_extent(p, alpha, lam, centers, strength), n)


def initial_state(params: ModelParams, seed: int, center=None, occupations=None) -> OrbitalSet:
    """Random orthonormal frame localised near ``center`` (default: first Coulomb centre)."""
    grid = params.grid
    if center is None:
        center = params.centers[0] if params.centers else (0.0, 0.0, 0.0)
    mu = estimate_mu(params.p, params.alpha, params.lam, len(params.centers),
                     params.coulomb_strength)
    width = float(np.clip(2.0 / math.sqrt(abs(mu)), 4 * grid.spacing, grid.extent / 4.0))
    occ = params.occupations() if occupations is None else occupations
    return random_orthonormal_set(len(occ), grid, seed, occupations=occ, center=center,
                                  width=width)


# --------------------------------------------------------------------------- helpers

def concentration_point(grid: Grid3D, rho: np.ndarray) -> np.ndarray:
    """Maximiser of ``rho``: the argmax node refined by a 3-point parabola per axis.

    The refinement is exact for a peak symmetric about any point of the cell and
    stays within half a spacing of the node.
    """
    idx = np.unravel_index(int(np.argmax(rho)), rho.shape)
    point = np.array(grid.point(idx), dtype=float)
    for ax in range(3):
        i = idx[ax]
        if 0 < i < grid.n - 1:
            lo, hi = list(idx), list(idx)
            lo[ax] -= 1
            hi[ax] += 1
            fm, f0, fp = rho[tuple(lo)], rho[idx], rho[tuple(hi)]
            curv = fm - 2.0 * f0 + fp
            if curv < 0:
                off = 0.5 * (fm - fp) / curv
                point[ax] += grid.spacing * float(np.clip(off, -0.5, 0.5))
    return point


def _canonicalize(block, hu, occ, dv):
    """Rotate within equal-occupation blocks so that ``<u_i, H u_j>`` is diagonal."""
    m = block.shape[0]
    lam = dv * (block.reshape(m, -1) @ hu.reshape(m, -1).T)
    lam = 0.5 * (lam + lam.T)
    q = np.eye(m)
    start = 0
    while start < m:
        stop = start
        while stop < m and occ[stop] == occ[start]:
            stop += 1
        sub = lam[start:stop, start:stop]
        _, v = np.linalg.eigh(sub)
        q[start:stop, start:stop] = v
        start = stop
    new = (q.T @ block.reshape(m, -1)).reshape(block.shape)
    return new


def _tangent(block, g, dv):
    m = block.shape[0]
    u = block.reshape(m, -1)
    a = dv * (u @ g.reshape(m, -1).T)  # a_ij = <u_i, g_j>
    s = 0.5 * (a + a.T)
    return (g.reshape(m, -1) - s.T @ u).reshape(block.shape)


class _Problem:
    """Energy, gradient and preconditioned directions for a fixed occupation vector."""

    def __init__(self, params: ModelParams, occ):
        self.params = params
        self.occ = np.asarray(occ, float)
        self.F = Functional(params, self.occ)
        self.dv = params.grid.cell_volume
        self.h = params.grid.spacing
        self._pinv = None
        self._shift = None

    def evaluate(self, block):
        lap = laplacian(block, self.h, self.params.order)
        terms = self.F.terms(block, lap)
        return terms, lap

    def gradient_parts(self, block, lap):
        rho = self.F.density(block)
        hu = lap + self.F.mean_field(rho) * block
        g = 2.0 * self.occ[:, None, None, None] * hu
        gt = _tangent(block, g, self.dv)
        m = block.shape[0]
        mus = self.dv * np.einsum("ij,ij->i", block.reshape(m, -1), hu.reshape(m, -1))
        return hu, g, gt, mus

    def preconditioner(self, scale):
        if self._pinv is None or not (0.5 <= scale / self._shift <= 2.0):
            self._shift = scale
            self._pinv = ShiftedLaplacianInverse(self.params.grid, scale)
        return self._pinv


def _residual(gt, occ, mus, dv):
    """Scale-free stationarity measure ``||tangent gradient|| / (2 max|mu_i|)``."""
    nrm = math.sqrt(dv * float(np.sum(gt * gt)))
    scale = 2.0 * max(float(np.max(np.abs(mus))), 1e-300)
    return nrm / scale


def _two_loop(g, memory, precond, inner):
    """L-BFGS two-loop recursion with the scaled preconditioner as initial inverse Hessian."""
    q = g.copy()
    coeffs = []
    for s, y, r in reversed(memory):
        a = r * inner(s, q)
        q -= a * y
        coeffs.append(a)
    z = precond(q)
    if memory:
        s, y, _ = memory[-1]
        py = precond(y)
        z *= inner(s, y) / inner(y, py)
    for (s, y, r), a in zip(memory, reversed(coeffs)):
        b = r * inner(y, z)
        z += (a - b) * s
    return z


def _descent(params: ModelParams, init: OrbitalSet, tol: float, max_iters: int,
             pin: bool, method: str, strict: bool, spectrum: bool,
             eig_tol: float | None) -> SolveReport:
    if init.grid != params.grid:
        raise ValidationError("initial state lives on a different grid")
    occ = params.occupations()
    if init.size != occ.size:
        raise ValidationError(f"initial state has {init.size} orbitals, lambda={params.lam} "
                              f"needs {occ.size}")
    prob = _Problem(params, occ)
    dv = prob.dv
    u = lowdin_block(np.array(init.block), dv)
    terms, lap = prob.evaluate(u)
    energy = terms.total
    history = [energy]
    memory: deque = deque(maxlen=LBFGS_MEMORY)
    prev_u = prev_gt = None
    residual = np.inf
    it = 0
    converged = False
    stalled = False
    center_idx = np.array(params.grid.center_index())

    def inner(a, b):
        return dv * float(np.sum(a * b))

    for it in range(1, max_iters + 1):
        hu, g, gt, mus = prob.gradient_parts(u, lap)
        residual = _residual(gt, occ, mus, dv)
        if residual <= tol:
            converged = True
            it -= 1
            break
        scale = max(float(np.max(np.abs(mus))), 1e-300)
        pinv = prob.preconditioner(scale)

        def precond(x):
            return _tangent(u, pinv(x) / (2.0 * occ[:, None, None, None]), dv)

        if prev_u is not None:
            # vector transport by projection onto the current tangent space
            s = _tangent(u, u - prev_u, dv)
            y = gt - _tangent(u, prev_gt, dv)
            sy = inner(s, y)
            if sy > 1e-12 * math.sqrt(inner(s, s) * inner(y, y)):
                memory.append((s, y, 1.0 / sy))
            else:
                memory.clear()
        d = -_two_loop(gt, memory, precond, inner)
        slope = inner(gt, d)
        if not slope < 0:
            memory.clear()
            d = -precond(gt)
            slope = inner(gt, d)
        t = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            try:
                trial = lowdin_block(u + t * d, dv)
            except RankDeficient:
                t *= BACKTRACK
                continue
            tterms, tlap = prob.evaluate(trial)
            slack = 1e-13 * abs(energy)
            if tterms.total <= energy + ARMIJO_C * t * slope + slack:
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            stalled = True
            log.warning("line search stalled at iteration %d (residual %.3e)", it, residual)
            break
        prev_u, prev_gt = u, gt
        u, lap, terms, energy = trial, tlap, tterms, tterms.total
        if pin:
            rho = prob.F.density(u)
            peak = np.array(np.unravel_index(int(np.argmax(rho)), rho.shape))
            shift = center_idx - peak
            if np.any(shift != 0):
                u = lowdin_block(shift_cells(u, shift), dv)
                terms, lap = prob.evaluate(u)
                energy = terms.total
                prev_u = prev_gt = None
                memory.clear()
        history.append(energy)
    else:
        hu, g, gt, mus = prob.gradient_parts(u, lap)
        residual = _residual(gt, occ, mus, dv)
        converged = residual <= tol

    hu = prob.gradient_parts(u, lap)[0]
    u = _canonicalize(u, hu, occ, dv)
    terms, lap = prob.evaluate(u)
    state = OrbitalSet(params.grid, u, occ)
    rho = prob.F.density(u)
    eig = None
    if spectrum:
        eig = _spectrum_at(rho, params, state, eig_tol)
    report = SolveReport(state=state, energy=terms, spectrum=eig, iterations=it,
                         residual=float(residual), converged=bool(converged),
                         concentration_point=concentration_point(params.grid, rho),
                         method=method, history=tuple(history), params=params)
    if eig is not None and converged and params.centers and not report.eigenvalue_ordering_ok():
        log.warning("eigenvalue ordering mu_1 < mu_2 <= ... < 0 not met: %s",
                    eig.eigenvalues[: state.size])
    if strict and not converged:
        exc = LineSearchStall if stalled else NoConvergence
        raise exc(f"{method}: residual {residual:.3e} > tol {tol:.1e} after {it} iterations",
                  report)
    return report


def _spectrum_at(rho, params, state, eig_tol):
    m = state.size
    dens = Density(ScalarField(params.grid, rho), float(params.grid.cell_volume * np.sum(rho)))
    if eig_tol is None:
        f = Functional(params, state.occupations)
        hu = f.apply_h(state.block, rho)
        mus = params.grid.cell_volume * np.einsum(
            "ij,ij->i", state.block.reshape(m, -1), hu.reshape(m, -1))
        eig_tol = 1e-6 * max(float(np.max(np.abs(mus))), 1e-300)
    return lowest_eigenpairs(dens, params, m, tol=eig_tol, init=state.block, strict=False)


def attach_spectrum(report: SolveReport, params: ModelParams | None = None,
                    eig_tol: float | None = None) -> SolveReport:
    """Copy of ``report`` with the spectrum of ``H`` at its final density."""
    params = params or report.params
    rho = density_array(report.state.block, report.state.occupations)
    return replace(report, spectrum=_spectrum_at(rho, params, report.state, eig_tol),
                   params=params)


def minimize_direct(params: ModelParams, init: OrbitalSet, tol: float = 1e-6,
                    max_iters: int = 2000, strict: bool = False, spectrum: bool = True,
                    eig_tol: float | None = None) -> SolveReport:
    """Projected preconditioned gradient descent with Löwdin retraction.

    ``tol`` bounds the scale-free residual ``||P_T grad|| / (2 max|mu_i|)``.
    With ``strict`` a non-converged run raises (:class:`LineSearchStall` or
    :class:`NoConvergence`) carrying the report; otherwise the report is
    returned with ``converged=False``.
    """
    return _descent(params, init, tol, max_iters, pin=False, method="direct",
                    strict=strict, spectrum=spectrum, eig_tol=eig_tol)


def solve_free(params: ModelParams, init: OrbitalSet, tol: float = 1e-6,
               max_iters: int = 3000, strict: bool = False, spectrum: bool = True,
               eig_tol: float | None = None) -> SolveReport:
    """Minimise without external potential, pinning the density peak to the box centre."""
    if params.centers:
        raise ValidationError("free problem requires an empty list of centers")
    return _descent(params, init, tol, max_iters, pin=True, method="free",
                    strict=strict, spectrum=spectrum, eig_tol=eig_tol)


def minimize_best(params: ModelParams, seeds=(0, 1, 2), tol: float = 1e-6,
                  max_iters: int = 2000, free: bool | None = None,
                  spectrum: bool = True) -> SolveReport:
    """Multistart: run from several seeded frames and keep the lowest energy."""
    if free is None:
        free = not params.centers
    best = None
    for seed in seeds:
        init = initial_state(params, seed)
        solve = solve_free if free else minimize_direct
        rep = solve(params, init, tol=tol, max_iters=max_iters, spectrum=False)
        log.info("seed %d: E = %.12g (converged=%s)", seed, rep.total, rep.converged)
        if best is None or rep.total < best.total:
            best = rep
    if spectrum:
        best = attach_spectrum(best, params)
    return best


def minimize_scf(params: ModelParams, init: OrbitalSet, tol: float = 1e-7,
                 max_iters: int = 200, damping: float = 0.5, strict: bool = False,
                 eig_rel_tol: float = 1e-7, window: int = 12, mixing: str = "anderson",
                 history_size: int = 6) -> SolveReport:
    """Damped SCF: fill the lowest modes of ``H_rho`` (aufbau), mix densities.

    ``mixing="linear"`` is ``rho <- (1 - damping) rho + damping rho_new``;
    ``mixing="anderson"`` applies Pulay extrapolation over the last
    ``history_size`` residuals on top of the same damping. Stops when
    ``||rho_new - rho||_1 <= tol * lambda``. Fractional weight goes to the
    highest filled mode only.
    """
    if not (0.0 < damping <= 1.0):
        raise ValidationError(f"damping must lie in (0, 1], got {damping}")
    if mixing not in ("linear", "anderson"):
        raise ValidationError(f"unknown mixing {mixing!r}")
    grid = params.grid
    dv = grid.cell_volume
    occ = params.occupations()
    m = occ.size
    f = Functional(params, occ)
    if init.size == m:
        rho = f.density(lowdin_block(np.array(init.block), dv))
    else:
        rho = Functional(params, init.occupations).density(init.block)
    vectors = init.block
    eig_tol = 1e-3 * abs(estimate_mu(params.p, params.alpha, params.lam, len(params.centers),
                                     params.coulomb_strength))
    diffs = []
    d_rho: deque = deque(maxlen=history_size)
    d_res: deque = deque(maxlen=history_size)
    prev = None
    eig = None
    converged = oscillating = False
    it = 0
    for it in range(1, max_iters + 1):
        dens = Density(ScalarField(grid, rho), float(dv * np.sum(rho)))
        eig = lowest_eigenpairs(dens, params, m, tol=eig_tol, init=vectors, strict=False)
        vectors = eig.eigenfields.block
        scale = max(float(np.max(np.abs(eig.eigenvalues))), 1e-300)
        rho_new = density_array(vectors, occ)
        res = rho_new - rho
        diff = dv * float(np.sum(np.abs(res)))
        diffs.append(diff)
        log.debug("scf %d: |drho|_1 = %.3e  mu = %s", it, diff, eig.eigenvalues)
        # eigenvector errors (residual / gap) must stay well below the density change
        eig_tol = max(eig_rel_tol * scale, min(eig_tol, 1e-4 * diff * scale))
        if diff <= tol * params.lam and eig.converged:
            converged = True
            break
        if mixing == "linear":
            rho = rho + damping * res
        else:
            if len(diffs) > 1 and diff > 2.0 * diffs[-2]:
                # aufbau switched branches: old residuals no longer describe the map
                d_rho.clear()
                d_res.clear()
                prev = None
            if prev is not None:
                d_rho.append(rho - prev[0])
                d_res.append(res - prev[1])
            prev = (rho, res)
            if d_res:
                df = np.stack([x.ravel() for x in d_res], axis=1)
                dr = np.stack([x.ravel() for x in d_rho], axis=1)
                a = dv * (df.T @ df)
                a += 1e-8 * np.trace(a) * np.eye(a.shape[0])
                gamma = np.linalg.solve(a, dv * (df.T @ res.ravel()))
                step = (damping * res.ravel() - (dr + damping * df) @ gamma).reshape(rho.shape)
                # cap the extrapolation: near-neutral modes would otherwise overshoot
                size = dv * float(np.sum(np.abs(step)))
                cap = ANDERSON_CAP * damping * diff
                if size > cap:
                    step *= cap / size
                rho = np.maximum(rho + step, 0.0)
            else:
                rho = rho + damping * res
        if len(diffs) > window:
            recent = np.array(diffs[-window:])
            if np.sum(np.diff(recent) > 0) >= (2 * window) // 3:
                oscillating = True
                break
    state = OrbitalSet(grid, vectors, occ)
    terms = f.terms(state.block)
    rho_final = f.density(state.block)
    report = SolveReport(state=state, energy=terms, spectrum=eig, iterations=it,
                         residual=float(diffs[-1] / params.lam) if diffs else np.inf,
                         converged=converged,
                         concentration_point=concentration_point(grid, rho_final),
                         method="scf", history=tuple(diffs), params=params)
    if oscillating:
        log.warning("SCF density residual not decreasing; lower the damping")
        if strict:
            raise OscillationDetected(
                f"density residual oscillates (damping={damping}); try a smaller damping",
                report)
    elif strict and not converged:
        raise NoConvergence(f"scf: residual {report.residual:.3e} after {it} iterations", report)
    return report


# --------------------------------------------------------------------------- E(lambda)

@dataclass(frozen=True)
class CurvePoint:
    lam: float
    energy: float
    converged: bool
    residual: float
    error: str | None = None


def _extend(block, m, params, seed):
    """Grow or shrink an orbital block to ``m`` orbitals (new ones random)."""
    if block.shape[0] >= m:
        return block[:m]
    extra = initial_state(params.with_(lam=float(m - block.shape[0])), seed).block
    return np.concatenate([block, extra])


def energy_curve(template: ModelParams, lambdas, tol: float = 1e-7, seeds=(0, 1, 2),
                 max_iters: int = 3000, warm_start: bool = True) -> list[CurvePoint]:
    """``E_alpha(lambda)`` for ascending ``lambdas`` via mixed-state descent.

    Each point is the best of a multistart plus (when ``warm_start``) a run
    seeded from the previous point's orbitals. Failures are recorded and the
    curve continues.
    """
    lambdas = [float(x) for x in lambdas]
    if any(x <= 0 for x in lambdas) or any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValidationError("lambdas must be positive and strictly ascending")
    out = []
    previous = None
    for lam in lambdas:
        params = template.with_(lam=lam)
        m = params.n_orbitals
        try:
            best = None
            candidates = [initial_state(params, s) for s in seeds]
            if warm_start and previous is not None:
                blk = _extend(previous, m, params, seed=1000 + m)
                candidates.append(OrbitalSet(params.grid, lowdin_block(blk, params.grid.cell_volume),
                                             params.occupations()))
            for init in candidates:
                rep = minimize_direct(params, init, tol=tol, max_iters=max_iters, spectrum=False)
                if best is None or rep.total < best.total:
                    best = rep
            previous = best.state.block
            out.append(CurvePoint(lam, best.total, best.converged, best.residual))
        except SolverError as exc:  # pragma: no cover - recorded, curve continues
            out.append(CurvePoint(lam, float("nan"), False, float("inf"), str(exc)))
    return out


# --------------------------------------------------------------------------- binding

@dataclass(frozen=True)
class BindingReport:
    lam1: float
    lam2: float
    e_total: float
    e_first: float
    e_free: float
    margin: float

    @property
    def binds(self) -> bool:
        return self.margin > 0

    @classmethod
    def from_energies(cls, lam1, lam2, e_total, e_first, e_free) -> "BindingReport":
        return cls(lam1, lam2, e_total, e_first, e_free, e_first + e_free - e_total)


def binding_check(params: ModelParams, lam1: float, lam2: float, tol: float = 1e-7,
                  seeds=(0, 1, 2), free_grid: Grid3D | None = None,
                  max_iters: int = 3000) -> BindingReport:
    """Energies ``E(l1+l2)``, ``E(l1)``, ``E_inf(l2)`` and the binding margin.

    The potential-free energy is computed on its own box (sized from its decay
    length unless ``free_grid`` is given) since its minimiser may be far wider
    than the bound state.
    """
    if not (lam1 > 0 and lam2 > 0):
        raise ValidationError("lambda_1 and lambda_2 must be positive")
    e_tot = minimize_best(params.with_(lam=lam1 + lam2), seeds, tol, max_iters, spectrum=False).total
    e_one = minimize_best(params.with_(lam=lam1), seeds, tol, max_iters, spectrum=False).total
    if free_grid is None:
        free_grid = auto_grid(params.p, params.alpha, lam2, n=params.grid.n | 1)
    free = params.with_(lam=lam2, centers=(), grid=free_grid)
    e_free = minimize_best(free, seeds, tol, max_iters, free=True, spectrum=False).total
    return BindingReport.from_energies(lam1, lam2, e_tot, e_one, e_free)
