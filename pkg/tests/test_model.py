import math

import numpy as np
import pytest

from fnls.constraints import random_orthonormal_set
from fnls.errors import SingularSample, ValidationError
from fnls.lattice import Grid3D
from fnls.model import (ModelParams, OrbitalSet, aufbau_occupations, coulomb_potential,
                        density_of)


def params(**kw):
    base = dict(p=1.5, alpha=1.0, lam=1.0, centers=((0.0, 0.0, 0.0),), grid=Grid3D(4.0, 20))
    base.update(kw)
    return ModelParams(**base)


@pytest.mark.parametrize("lam,occ", [(1.0, [1.0]), (1.5, [1.0, 0.5]), (2.0, [1.0, 1.0]),
                                     (0.3, [0.3]), (3.25, [1.0, 1.0, 1.0, 0.25])])
def test_aufbau_occupations(lam, occ):
    assert aufbau_occupations(lam) == pytest.approx(occ)
    assert params(lam=lam).n_orbitals == len(occ)


@pytest.mark.parametrize("p", [1.0, 5.0 / 3.0, 1.8, 0.5])
def test_exponent_range(p):
    with pytest.raises(ValidationError, match=r"p outside \(1, 5/3\)"):
        params(p=p)


def test_param_invariants():
    with pytest.raises(ValidationError, match="pairwise distinct"):
        params(centers=((0, 0, 0), (0, 0, 0)))
    with pytest.raises(ValidationError):
        params(alpha=0.0)
    with pytest.raises(ValidationError):
        params(lam=-1.0)
    with pytest.raises(ValidationError, match="outside the box"):
        params(centers=((10.0, 0, 0),))
    with pytest.raises(ValidationError):
        params(softening=-0.1)
    assert params().s == Grid3D(4.0, 20).spacing
    assert params(softening=0.0).s == 0.0
    assert params(alpha=2.0, p=1.5).coupling == pytest.approx(2.0)


def test_density_single_orbital():
    g = Grid3D(4.0, 24)
    st = random_orthonormal_set(1, g, seed=0)
    d = density_of(st)
    assert np.array_equal(d.rho.values, st.block[0] ** 2)
    assert d.mass == pytest.approx(1.0, abs=1e-6)


def test_density_mixed_mass():
    g = Grid3D(4.0, 24)
    st = random_orthonormal_set(2, g, seed=1, occupations=[1.0, 0.5])
    assert density_of(st).mass == pytest.approx(1.5, abs=1e-6)


def test_density_rotation_invariance():
    g = Grid3D(4.0, 24)
    st = random_orthonormal_set(2, g, seed=2)
    t = 0.7
    q = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    rot = np.einsum("ij,i...->j...", q, st.block)
    a = density_of(st).rho.values
    b = density_of(OrbitalSet(g, rot)).rho.values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(a)


def test_orbitalset_validation():
    g = Grid3D(2.0, 16)
    with pytest.raises(ValueError):
        OrbitalSet(g, np.zeros((2, 16, 16, 16)), [0.5, 1.0])
    with pytest.raises(ValueError):
        OrbitalSet(g, np.zeros((1, 15, 16, 16)))
    with pytest.raises(ValueError):
        OrbitalSet(g, np.zeros((1, 16, 16, 16)), [1.5])


def test_coulomb_unit_distance():
    g = Grid3D(2.0, 16)
    node = g.point((10, 7, 5))
    c = tuple(node - np.array([1.0, 0.0, 0.0]))
    assert not g.is_node(c)
    v = coulomb_potential(params(grid=g, centers=(c,), softening=0.0)).values
    assert v[10, 7, 5] == pytest.approx(-1.0, rel=1e-12)


def test_coulomb_two_centers_at_origin():
    g = Grid3D(2.0, 19)
    assert g.is_node((0, 0, 0)) and not g.is_node((1, 0, 0))
    pr = params(grid=g, centers=((1.0, 0, 0), (-1.0, 0, 0)), softening=0.0)
    v = coulomb_potential(pr).values
    assert v[g.center_index()] == pytest.approx(-2.0, rel=1e-12)


def test_coulomb_softened_at_center():
    g = Grid3D(2.0, 17)
    pr = params(grid=g)
    v = coulomb_potential(pr).values
    assert v[g.center_index()] == pytest.approx(-1.0 / g.spacing)
    assert np.all(np.isfinite(v))
    with pytest.raises(SingularSample):
        coulomb_potential(params(grid=g, softening=0.0))


def test_coulomb_strength_scales():
    g = Grid3D(2.0, 16)
    a = coulomb_potential(params(grid=g)).values
    b = coulomb_potential(params(grid=g, coulomb_strength=0.25)).values
    assert np.allclose(b, 0.25 * a, rtol=1e-14)
