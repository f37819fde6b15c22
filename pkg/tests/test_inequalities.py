import math

import numpy as np
import pytest

from fnls.constraints import random_orthonormal_set
from fnls.errors import DomainError
from fnls.inequalities import (C_LT_DEFAULT, C_LT_SEMICLASSICAL, check_gns, check_hardy,
                               check_hoffmann_ostenhof, check_lieb_thirring,
                               empirical_lt_constant, gns_constant, gns_terms,
                               lieb_thirring_ratio)
from fnls.lattice import Grid3D, ScalarField, kinetic_quadratic_form
from fnls.model import OrbitalSet

from oracles import (MASS_Q_P32, free_energy_from_mu, free_scaling, hydrogen_orbital)

GRID = Grid3D(5.0, 24)


def gauss_state(grid=GRID, sigma=1.0, center=(0.0, 0.0, 0.0)):
    u = np.exp(-grid.radius(center) ** 2 / (2 * sigma**2))
    u /= math.sqrt(grid.cell_volume * np.sum(u * u))
    return OrbitalSet(grid, u[None])


def test_default_constant():
    assert C_LT_SEMICLASSICAL == pytest.approx(0.6 * (6 * math.pi**2) ** (2 / 3))
    assert C_LT_DEFAULT == pytest.approx(0.471 * C_LT_SEMICLASSICAL)


def test_hardy_gaussian_and_hydrogen():
    u = gauss_state().orbitals[0]
    assert check_hardy(u, 1.0) > 0
    g = Grid3D(20.0, 64)
    h = ScalarField(g, hydrogen_orbital(g.radius()))
    for eps in (0.1, 1.0, 10.0):
        assert check_hardy(h, eps) > 0
    with pytest.raises(DomainError):
        check_hardy(u, 0.0)


def test_hardy_far_support():
    g = Grid3D(20.0, 48)
    st = gauss_state(g, 1.0, center=(15.0, 0.0, 0.0))
    u = st.orbitals[0]
    eps = 2.0
    bound = eps * kinetic_quadratic_form(u) + 4.0 / eps
    m = check_hardy(u, eps)
    assert 0 < m < bound and bound - m < 0.1


def test_lieb_thirring_gaussian_and_frames():
    assert check_lieb_thirring(gauss_state()) > 0
    states = [random_orthonormal_set(5, GRID, seed=s) for s in range(100)]
    margins = [check_lieb_thirring(st) for st in states]
    assert min(margins) > 0
    c = empirical_lt_constant(states)
    assert c >= C_LT_DEFAULT
    assert c == pytest.approx(min(lieb_thirring_ratio(s) for s in states))


def test_lieb_thirring_occupation_scaling():
    base = random_orthonormal_set(3, GRID, seed=4)
    half = OrbitalSet(GRID, base.block, [0.5, 0.5, 0.5])
    # ||γ||^(2/3) Tr(-Δγ) and ∫ρ^(5/3) both pick up (1/2)^(5/3)
    assert check_lieb_thirring(half) == pytest.approx(0.5 ** (5 / 3) * check_lieb_thirring(base),
                                                      rel=1e-12)


def test_hoffmann_ostenhof():
    assert abs(check_hoffmann_ostenhof(gauss_state())) < 1e-10
    for s in range(20):
        st = random_orthonormal_set(2, GRID, seed=s)
        assert check_hoffmann_ostenhof(st) > 0
        flipped = OrbitalSet(GRID, st.block * np.array([1, -1])[:, None, None, None])
        assert check_hoffmann_ostenhof(flipped) == pytest.approx(check_hoffmann_ostenhof(st),
                                                                 rel=1e-12)


def test_gns_constant_closed_forms():
    j = -0.37
    assert gns_constant(4.0 / 3.0, j) == pytest.approx((9.0 / 64.0) / abs(j), rel=1e-12)
    # as p -> 5/3 the exponent (2 - θ)/θ -> 0 faster than log(5/3 - p) grows, so the
    # (5/3 - p) factor tends to 1 and K -> (2/3)(9/10) = 3/5 whatever J1inf is
    for jj in (-0.37, -5.0):
        assert gns_constant(5.0 / 3.0 - 1e-9, jj) == pytest.approx(0.6, rel=1e-6)
    for p in (1.05, 1.3, 1.5, 1.6):
        assert gns_constant(p, -1e-3) > 0
    with pytest.raises(DomainError):
        gns_constant(1.5, 0.1)
    with pytest.raises(DomainError):
        gns_constant(1.7, -1.0)


def test_gns_random_frames_and_scaling():
    p = 1.5
    _, mu = free_scaling(p, MASS_Q_P32)
    j1 = free_energy_from_mu(p, mu)  # J₁^∞(1) from the shooting oracle
    for s in range(100):
        st = random_orthonormal_set(1, GRID, seed=s)
        assert check_gns(st, j1, p) >= 0
    # mass-preserving dilation u_a(x) = a^(3/2) u(a x), sampled in closed form
    g = Grid3D(8.0, 64)
    x, y, z = g.coordinates()

    def state(a):
        u = a**1.5 * (1 + 0.5 * a * x) * np.exp(-a * a * (x**2 + 2 * y**2 + z**2) / 2)
        return OrbitalSet(g, u[None] / math.sqrt(g.cell_volume * np.sum(u * u)))

    lhs, rhs = gns_terms(state(1.0), p, j1)
    l2, r2 = gns_terms(state(0.7), p, j1)
    assert l2 / lhs == pytest.approx(0.49, rel=0.01)
    assert r2 / rhs == pytest.approx(0.49, rel=0.01)
    assert np.sign(l2 - r2) == np.sign(lhs - rhs)
    with pytest.raises(DomainError):
        check_gns(OrbitalSet(GRID, random_orthonormal_set(1, GRID, 0).block, [0.5]), j1, p)
