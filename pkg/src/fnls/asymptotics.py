"""Large-coupling harness: blow-up coordinates, concentration diagnostics, fits.

With ``eps = alpha^(-2(p-1)/(2-3(p-1)))`` and ``w(x) = eps^(3/2) u(eps x + z)``
the energy satisfies ``eps^2 E_alpha(u) = Ê(w)`` where ``Ê`` has unit
coupling and Coulomb field ``-eps Σ_k |x - (y_k - z)/eps|^(-1)``. Solving for
``w`` on a grid sized to the limiting profile avoids resolving a width-``eps``
object on a fixed physical grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .constraints import gram_block, lowdin_block
from .errors import DomainError, InsufficientSamples, SolverError, ValidationError
from .lattice import Grid3D, rescale_field
from .model import Density, ModelParams, OrbitalSet, check_exponent, density_of
from .solvers import (SolveReport, attach_spectrum, auto_extent, initial_state,
                      minimize_direct, solve_free)

log = logging.getLogger(__name__)

__all__ = [
    "AsymptoticsRecord",
    "RescaledReport",
    "FreeReference",
    "epsilon_of",
    "extract_profile",
    "solve_rescaled",
    "rescaled_params",
    "free_reference",
    "fit_exponential_decay",
    "sweep_alpha",
    "fit_power_law",
    "profile_error",
    "SWEEP_COLUMNS",
    "sweep_summary",
]


def epsilon_of(alpha: float, p: float) -> float:
    """Blow-up length ``alpha^(-2(p-1)/(2-3(p-1)))``."""
    check_exponent(p, DomainError)
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    return float(alpha ** (-2.0 * (p - 1.0) / (2.0 - 3.0 * (p - 1.0))))


# --------------------------------------------------------------------------- profiles

def extract_profile(report: SolveReport, params: ModelParams, target: Grid3D,
                    epsilon: float | None = None, z=None):
    """``ŵ_i(x) = eps^(3/2) u_i(eps x + z)`` for every orbital, re-orthonormalised.

    Returns ``(profile, correction)``: the Löwdin-corrected set and the size of
    the correction ``max|G - I|`` of the transported family.
    """
    if epsilon is None:
        epsilon = epsilon_of(params.alpha, params.p)
    if z is None:
        z = report.concentration_point
    fields = [rescale_field(u, epsilon, z, target) for u in report.state.orbitals]
    block = np.stack([f.values for f in fields])
    g = gram_block(block, target.cell_volume)
    correction = float(np.max(np.abs(g - np.eye(len(fields)))))
    block = lowdin_block(block, target.cell_volume)
    return OrbitalSet(target, block, report.state.occupations), correction


def _resample_density(rho: np.ndarray, src: Grid3D, target: Grid3D, shift) -> np.ndarray:
    """Sample ``rho(x + shift)`` on ``target`` (trilinear, zero outside ``src``)."""
    a = target.axis
    shift = np.asarray(shift, dtype=float)
    idx = [(a + shift[k] + src.extent) / src.spacing for k in range(3)]
    coords = np.stack(np.meshgrid(*idx, indexing="ij"))
    return map_coordinates(rho, coords, order=1, mode="constant", cval=0.0)


def profile_error(rho: np.ndarray, grid: Grid3D, z, ref_rho: np.ndarray, ref_grid: Grid3D,
                  ref_z) -> float:
    """``||ρ - ρ_ref||_∞ / ||ρ_ref||_∞`` after moving the reference peak onto ``z``."""
    shift = np.asarray(ref_z, float) - np.asarray(z, float)
    ref = _resample_density(ref_rho, ref_grid, grid, shift)
    return float(np.max(np.abs(rho - ref)) / np.max(ref_rho))


# --------------------------------------------------------------------------- rescaled solve

@dataclass(frozen=True, eq=False)
class RescaledReport:
    report: SolveReport
    params: ModelParams
    epsilon: float
    center: tuple
    dropped: tuple = ()
    truncation_bound: float = 0.0

    @property
    def energy_scaled(self) -> float:
        return self.report.total

    def physical_point(self) -> np.ndarray:
        """Concentration point mapped back to physical coordinates ``y_k + eps ẑ``."""
        return np.asarray(self.center) + self.epsilon * self.report.concentration_point


def rescaled_params(params: ModelParams, center_index: int, grid: Grid3D | None = None,
                    n: int | None = None):
    """Parameters of the blown-up problem around ``y_k``.

    Returns ``(params_hat, dropped, bound)`` where ``dropped`` lists the
    rescaled centres falling outside the box and ``bound`` caps the potential
    they would contribute inside it (``eps / distance`` summed).
    """
    if not params.centers:
        raise ValidationError("solve_rescaled needs at least one center")
    if not 0 <= center_index < len(params.centers):
        raise ValidationError(f"center index {center_index} out of range")
    eps = epsilon_of(params.alpha, params.p)
    y0 = np.asarray(params.centers[center_index])
    mapped = [tuple((np.asarray(y) - y0) / eps) for y in params.centers]
    if grid is None:
        ext = auto_extent(params.p, 1.0, params.lam, centers=((0.0, 0.0, 0.0),), strength=eps)
        grid = Grid3D(ext, n or params.grid.n)
    kept, dropped, bound = [], [], 0.0
    for c in mapped:
        if grid.contains(c):
            kept.append(c)
        else:
            # the grid only carries in-box centres; a dropped centre changes the
            # potential inside the box by at most eps / (distance to the box)
            dropped.append(c)
            gap = float(np.linalg.norm(c)) - math.sqrt(3.0) * grid.extent
            bound += eps / max(gap, grid.spacing)
    if dropped:
        log.info("dropped %d remote centres; potential error bound %.3e", len(dropped), bound)
    hat = ModelParams(p=params.p, alpha=1.0, lam=params.lam, centers=tuple(kept), grid=grid,
                      softening=params.softening, coulomb_strength=eps, order=params.order)
    return hat, tuple(dropped), float(bound)


def solve_rescaled(params: ModelParams, center_index: int = 0, tol: float = 1e-7,
                   max_iters: int = 3000, grid: Grid3D | None = None, seeds=(0, 1, 2),
                   init: OrbitalSet | None = None, n: int | None = None) -> RescaledReport:
    """Minimise the blown-up functional around centre ``k``; energy is ``eps^2 J_alpha``.

    Without ``grid`` the box is sized from the combined Coulomb + nonlinear
    estimate with ``n`` points per axis (default: the template's).
    """
    hat, dropped, bound = rescaled_params(params, center_index, grid, n)
    best = None
    inits = [init] if init is not None else [initial_state(hat, s, center=(0.0, 0.0, 0.0))
                                             for s in seeds]
    for start in inits:
        rep = minimize_direct(hat, start, tol=tol, max_iters=max_iters, spectrum=False)
        if best is None or rep.total < best.total:
            best = rep
    best = replace(attach_spectrum(best, hat), method="rescaled")
    return RescaledReport(best, hat, epsilon_of(params.alpha, params.p),
                          tuple(params.centers[center_index]), dropped, bound)


# --------------------------------------------------------------------------- free reference

@dataclass(frozen=True, eq=False)
class FreeReference:
    report: SolveReport
    params: ModelParams

    @property
    def energy(self) -> float:
        return self.report.total

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.report.spectrum.eigenvalues

    @property
    def density(self) -> np.ndarray:
        return density_of(self.report.state).rho.values


def free_reference(p: float, lam: float, n: int = 64, order: int = 4, tol: float = 1e-8,
                   seeds=(0, 1, 2), grid: Grid3D | None = None, softening=None) -> FreeReference:
    """Minimiser of the unit-coupling problem without potential (J₁^∞ and μ̂_i)."""
    if grid is None:
        grid = Grid3D(auto_extent(p, 1.0, lam), n)
    fp = ModelParams(p=p, alpha=1.0, lam=lam, grid=grid, order=order, softening=softening)
    best = None
    for s in seeds:
        rep = solve_free(fp, initial_state(fp, s), tol=tol, spectrum=False)
        if best is None or rep.total < best.total:
            best = rep
    best = attach_spectrum(best, fp)
    return FreeReference(best, fp)


# --------------------------------------------------------------------------- fits

def fit_exponential_decay(density: Density, fit_window=None, center=None, bins: int = 40,
                          algebraic: bool = True):
    """Fit ``log <ρ>_sphere = log C + b log r - rate r`` on ``[r1, r2]``.

    The spherical average is taken over shells of width ``(r2 - r1)/bins``
    around ``center`` (default: the argmax of ``ρ``). Default window
    ``[0.35, 0.7] L``. Bound-state tails carry an algebraic factor
    (``r^-2`` for a Yukawa tail), which a pure exponential fit absorbs into the
    rate as a bias of order ``|b|/r``; ``algebraic=False`` fixes ``b = 0``.
    Returns ``(rate, prefactor, r_squared)``.
    """
    rho = density.rho.values
    grid = density.rho.grid
    if fit_window is None:
        fit_window = (0.35 * grid.extent, 0.7 * grid.extent)
    r1, r2 = map(float, fit_window)
    if not (0 < r1 < r2 <= grid.extent):
        raise InsufficientSamples(f"fit window ({r1}, {r2}) must satisfy 0 < r1 < r2 <= L")
    if center is None:
        center = grid.point(np.unravel_index(int(np.argmax(rho)), rho.shape))
    r = grid.radius(center).ravel()
    vals = rho.ravel()
    edges = np.linspace(r1, r2, bins + 1)
    which = np.digitize(r, edges) - 1
    mask = (which >= 0) & (which < bins)
    counts = np.bincount(which[mask], minlength=bins)
    sums = np.bincount(which[mask], weights=vals[mask], minlength=bins)
    rsum = np.bincount(which[mask], weights=r[mask], minlength=bins)
    ok = (counts > 0) & (sums > 0)
    if np.count_nonzero(ok) < 3:
        raise InsufficientSamples(f"only {np.count_nonzero(ok)} populated shells in ({r1}, {r2})")
    rad = rsum[ok] / counts[ok]
    avg = sums[ok] / counts[ok]
    y = np.log(avg)
    cols = [np.ones_like(rad), -rad] + ([np.log(rad)] if algebraic else [])
    design = np.stack(cols, axis=1)
    if np.count_nonzero(ok) < design.shape[1] + 1:
        raise InsufficientSamples(f"only {np.count_nonzero(ok)} populated shells in ({r1}, {r2})")
    coef = np.linalg.lstsq(design, y, rcond=None)[0]
    intercept, rate = coef[0], coef[1]
    pred = design @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_sq = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(rate), float(math.exp(intercept)), r_sq


def fit_power_law(xs, ys):
    """Least-squares slope of ``log y`` against ``log x``; returns ``(exponent, r_squared)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValidationError("xs and ys must have equal length")
    if x.size < 3:
        raise InsufficientSamples("a power-law fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("power-law fit needs positive finite data")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    return float(slope), (1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)


# --------------------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("alpha", "epsilon", "energy_scaled", "gap", "z_x", "z_y", "z_z",
                 "dist_to_center", "dist_over_eps", "decay_rate", "profile_linf_err",
                 "kinetic_scaled", "nonlinear_scaled", "mu_scaled_1", "converged", "dropped",
                 "h_scaled")


@dataclass(frozen=True)
class AsymptoticsRecord:
    alpha: float
    epsilon: float
    energy_scaled: float
    gap: float
    z: tuple
    dist_to_center: float
    decay_rate: float
    profile_linf_err: float
    kinetic_scaled: float = float("nan")
    nonlinear_scaled: float = float("nan")
    mu_scaled: tuple = ()
    converged: bool = False
    dropped: int = 0
    h_scaled: float = float("nan")
    error: str | None = None

    @property
    def dist_over_eps(self) -> float:
        return self.dist_to_center / self.epsilon

    def csv_row(self) -> list:
        mu1 = self.mu_scaled[0] if self.mu_scaled else float("nan")
        return [self.alpha, self.epsilon, self.energy_scaled, self.gap, *self.z,
                self.dist_to_center, self.dist_over_eps, self.decay_rate,
                self.profile_linf_err, self.kinetic_scaled, self.nonlinear_scaled, mu1,
                int(self.converged), self.dropped, self.h_scaled]

    def to_dict(self) -> dict:
        return asdict(self)


def _nan_record(alpha, eps, err):
    nan = float("nan")
    return AsymptoticsRecord(alpha, eps, nan, nan, (nan, nan, nan), nan, nan, nan, error=err)


def sweep_alpha(template: ModelParams, alphas, tol: float = 1e-7, reference: FreeReference | None = None,
                center_index: int = 0, n: int | None = None, seeds=(0, 1, 2),
                fit_window_fraction=(0.35, 0.7)) -> tuple[list, FreeReference]:
    """Rescaled solves along ``alphas``; one :class:`AsymptoticsRecord` per value.

    The free reference (``J₁^∞``, ``μ̂_i`` and the limiting density) is computed
    once unless supplied. Each point gets its own blown-up box, sized from the
    single-Gaussian estimate for the combined Coulomb + nonlinear problem.
    Failures are recorded and the sweep continues.
    """
    alphas = [float(a) for a in alphas]
    if len(alphas) < 3:
        raise ValidationError("sweep-alpha needs at least 3 alpha values")
    if any(b <= a for a, b in zip(alphas, alphas[1:])) or alphas[0] <= 0:
        raise ValidationError("alphas must be positive and strictly ascending")
    n = n or template.grid.n
    if reference is None:
        reference = free_reference(template.p, template.lam, n=n, order=template.order)
    j1 = reference.energy
    ref_rho = reference.density
    records = []
    for alpha in alphas:
        eps = epsilon_of(alpha, template.p)
        try:
            params = template.with_(alpha=alpha)
            rr = solve_rescaled(params, center_index, tol=tol, seeds=seeds, n=n)
            rep = rr.report
            grid = rr.params.grid
            rho = density_of(rep.state).rho.values
            z = rr.physical_point()
            dist = min(float(np.linalg.norm(z - np.asarray(y))) for y in template.centers)
            lo, hi = fit_window_fraction
            rate = fit_exponential_decay(Density(density_of(rep.state).rho, template.lam),
                                         (lo * grid.extent, hi * grid.extent),
                                         center=rep.concentration_point)[0]
            err = profile_error(rho, grid, rep.concentration_point, ref_rho,
                                reference.params.grid, reference.report.concentration_point)
            records.append(AsymptoticsRecord(
                alpha=alpha, epsilon=eps, energy_scaled=rr.energy_scaled, gap=j1 - rr.energy_scaled,
                z=tuple(float(v) for v in z), dist_to_center=dist, decay_rate=rate,
                profile_linf_err=err, kinetic_scaled=rep.energy.kinetic,
                nonlinear_scaled=rep.energy.nonlinear,
                mu_scaled=tuple(float(m) for m in rep.spectrum.eigenvalues),
                converged=rep.converged, dropped=len(rr.dropped), h_scaled=grid.spacing))
        except (SolverError, InsufficientSamples, ValidationError) as exc:
            log.warning("sweep point alpha=%g failed: %s", alpha, exc)
            records.append(_nan_record(alpha, eps, str(exc)))
    return records, reference


def sweep_summary(records, reference: FreeReference, slope_target: float = 1.0,
                  slope_tol: float = 0.15, mu_tol: float = 0.05, bracket=(0.85, 2.3),
                  growth_tol: float = 0.25) -> dict:
    """Fitted exponents and stability flags of a sweep.

    ``gap``: log-log slope of ``J₁^∞ - eps^2 J_alpha`` against ``eps``.
    ``dist``: ``|z - y_k| / eps`` is called trend-free when the least-squares
    line through it against ``log(1/eps)`` rises by at most
    ``growth_tol * max(dist/eps) + h_scaled`` across the sweep; ``h_scaled``
    (the rescaled grid spacing) is the resolution of the concentration point.
    ``profile``: errors strictly decrease as ``eps`` decreases.
    ``mu``: largest relative error of ``eps^2 mu_i`` against ``μ̂_i`` at the
    smallest ``eps``.
    ``decay``: fitted density decay rate at the smallest ``eps`` inside
    ``[lo sqrt|μ̂_N|, hi sqrt|μ̂_1|]``.
    """
    recs = sorted(records, key=lambda r: -r.epsilon)
    eps = np.array([r.epsilon for r in recs])
    out = {"epsilons": eps.tolist(), "all_converged": all(r.converged for r in recs),
           "errors": [r.error for r in recs if r.error]}
    gaps = np.array([r.gap for r in recs])
    out["gaps"] = gaps.tolist()
    out["gap_positive"] = bool(np.all(gaps > 0))
    try:
        slope, r2 = fit_power_law(eps, gaps)
    except (DomainError, InsufficientSamples):
        slope, r2 = float("nan"), float("nan")
    out["gap_slope"], out["gap_r2"] = slope, r2
    out["gap_ok"] = bool(out["gap_positive"] and abs(slope - slope_target) <= slope_tol)

    d = np.array([r.dist_over_eps for r in recs])
    h = max(r.h_scaled for r in recs)
    t = np.log(1.0 / eps)
    growth = float(np.polyfit(t, d, 1)[0] * (t[-1] - t[0])) if np.all(np.isfinite(d)) else float("nan")
    out["dist_over_eps"] = d.tolist()
    out["dist_growth"] = growth
    out["dist_growth_allowance"] = float(growth_tol * np.max(d) + h)
    out["dist_ok"] = bool(np.isfinite(growth) and growth <= out["dist_growth_allowance"])

    prof = np.array([r.profile_linf_err for r in recs])
    out["profile_errors"] = prof.tolist()
    out["profile_ok"] = bool(np.all(np.isfinite(prof)) and np.all(np.diff(prof) < 0))

    mu_ref = reference.eigenvalues
    last = recs[-1]
    mu = np.asarray(last.mu_scaled[: mu_ref.size], dtype=float)
    if mu.size == mu_ref.size:
        rel = float(np.max(np.abs(mu - mu_ref) / np.abs(mu_ref)))
    else:
        rel = float("nan")
    out["mu_rel_err"] = rel
    out["mu_ok"] = bool(rel <= mu_tol)

    lo = bracket[0] * math.sqrt(abs(mu_ref[-1]))
    hi = bracket[1] * math.sqrt(abs(mu_ref[0]))
    out["decay_rate"] = last.decay_rate
    out["decay_bracket"] = [lo, hi]
    out["decay_ok"] = bool(lo <= last.decay_rate <= hi)
    return out
