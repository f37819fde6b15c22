import numpy as np
import pytest

from fnls.constraints import random_orthonormal_set
from fnls.energy import evaluate_energy
from fnls.errors import NoConvergence, ValidationError
from fnls.lattice import Grid3D
from fnls.model import ModelParams, OrbitalSet
from fnls.solvers import (BindingReport, auto_extent, auto_grid, concentration_point,
                          energy_curve, estimate_mu, initial_state, minimize_best,
                          minimize_direct, minimize_scf, solve_free)

from oracles import hydrogen_orbital


@pytest.fixture(scope="module")
def single():
    return ModelParams(p=1.5, alpha=1.0, lam=1.0, centers=((0.0, 0.0, 0.0),),
                       grid=Grid3D(12.0, 32))


@pytest.fixture(scope="module")
def single_direct(single):
    return minimize_direct(single, initial_state(single, 0), tol=1e-7)


def test_sizing_helpers():
    mu = estimate_mu(1.5, 1.0, 1.0, n_centers=1)
    assert mu < 0
    # stronger coupling binds tighter, so the box shrinks
    assert auto_extent(1.5, 4.0, 1.0) < auto_extent(1.5, 1.0, 1.0)
    # the free extent scales exactly like the free minimiser: length ~ alpha^-2 at p = 3/2
    assert auto_extent(1.5, 2.0, 1.0) == pytest.approx(auto_extent(1.5, 1.0, 1.0) / 4, rel=1e-6)
    g = auto_grid(1.5, 1.0, 1.0, centers=((0, 0, 0),), n=33)
    assert g.n == 33


def test_initial_state_is_orthonormal_and_seeded(single):
    a = initial_state(single.with_(lam=2.0), 5)
    b = initial_state(single.with_(lam=2.0), 5)
    assert a.size == 2 and a.orthonormality_error() < 1e-10
    assert np.array_equal(a.block, b.block)


def test_direct_converges_and_decreases(single_direct):
    rep = single_direct
    assert rep.converged and rep.residual <= 1e-7
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-13 * abs(h[-1]))
    assert rep.total == pytest.approx(h[-1], rel=1e-12)
    assert rep.eigenvalue_ordering_ok()
    assert rep.state.orthonormality_error() < 1e-10


def test_direct_beats_hydrogen_trial(single, single_direct):
    g = single.grid
    trial = hydrogen_orbital(g.radius())[None]
    trial = trial / np.sqrt(g.cell_volume * np.sum(trial**2))
    e_trial = evaluate_energy(OrbitalSet(g, trial), single).total
    assert single_direct.total <= e_trial
    # nonlinear attraction lowers the energy below the pure Coulomb problem
    lin = single.with_(alpha=1e-12)
    e_lin = minimize_direct(lin, initial_state(lin, 0), tol=1e-7).total
    assert single_direct.total < e_lin


def test_multistart_consistency(single):
    best = minimize_best(single, seeds=(0, 1, 2, 3, 4), tol=1e-7, spectrum=False)
    for s in range(5):
        rep = minimize_direct(single, initial_state(single, s), tol=1e-7, spectrum=False)
        assert best.total <= rep.total + 1e-8


def test_scf_fixed_point(single, single_direct):
    rep = minimize_scf(single, single_direct.state, tol=1e-12, max_iters=1)
    assert abs(rep.total - single_direct.total) <= 1e-8


def test_scf_mixed_occupations_and_agreement():
    pr = ModelParams(p=1.5, alpha=1.0, lam=1.5, centers=((0.0, 0.0, 0.0),),
                     grid=Grid3D(14.0, 32))
    scf = minimize_scf(pr, initial_state(pr, 0), tol=1e-8, max_iters=300)
    assert list(scf.state.occupations) == [1.0, 0.5]
    assert scf.converged
    direct = minimize_best(pr, seeds=(0, 1), tol=1e-7, spectrum=False)
    assert scf.total == pytest.approx(direct.total, rel=1e-5)


def test_scf_validation(single):
    with pytest.raises(ValidationError):
        minimize_scf(single, initial_state(single, 0), damping=0.0)
    with pytest.raises(ValidationError):
        minimize_scf(single, initial_state(single, 0), mixing="broyden")


def test_strict_nonconvergence_carries_report(single):
    with pytest.raises(NoConvergence) as exc:
        minimize_direct(single, initial_state(single, 0), tol=1e-14, max_iters=3, strict=True)
    assert exc.value.result.iterations == 3


def test_wrong_orbital_count(single):
    with pytest.raises(ValidationError):
        minimize_direct(single.with_(lam=2.0), initial_state(single, 0))


def test_free_solve_is_pinned_and_descends():
    grid = auto_grid(1.5, 4.0, 1.0, n=33)
    pr = ModelParams(p=1.5, alpha=4.0, lam=1.0, grid=grid)
    rep = solve_free(pr, initial_state(pr, 1), tol=1e-6)
    assert rep.converged
    rho = rep.state.block[0] ** 2
    assert np.unravel_index(int(np.argmax(rho)), rho.shape) == grid.center_index()
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-10 * abs(h[-1]))
    assert rep.total < 0
    with pytest.raises(ValidationError):
        solve_free(ModelParams(p=1.5, alpha=1.0, lam=1.0, centers=((0, 0, 0),), grid=grid),
                   initial_state(pr, 0))


def test_concentration_point_subcell():
    g = Grid3D(4.0, 33)
    c = np.array([0.03, -0.05, 0.02])
    rho = np.exp(-(g.radius(c) ** 2))
    z = concentration_point(g, rho)
    assert np.max(np.abs(z - c)) < 0.25 * g.spacing


def test_energy_curve_small_grid():
    pr = ModelParams(p=1.5, alpha=1.0, lam=1.0, centers=((0.0, 0.0, 0.0),),
                     grid=Grid3D(14.0, 28))
    pts = energy_curve(pr, [0.5, 1.0, 1.5], tol=1e-6, seeds=(0,))
    e = [p.energy for p in pts]
    assert all(x < 0 for x in e)
    assert e[0] > e[1] > e[2]
    with pytest.raises(ValidationError):
        energy_curve(pr, [1.0, 0.5])


def test_binding_report_arithmetic():
    b = BindingReport.from_energies(1.0, 1.0, -3.0, -1.0, -1.5)
    assert b.margin == pytest.approx(0.5)
    assert b.binds
    same = BindingReport.from_energies(1.0, 1.0, -2.0, -1.0, -1.0)
    assert same.margin == 0.0 and not same.binds


def test_random_state_is_valid_init(single):
    st = random_orthonormal_set(1, single.grid, seed=7, width=3.0)
    rep = minimize_direct(single, st, tol=1e-6, spectrum=False)
    assert rep.converged
