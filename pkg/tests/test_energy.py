import math

import numpy as np
import pytest

from fnls.constraints import mix_orbitals, random_orthonormal_set
from fnls.energy import (ENERGY_CSV_COLUMNS, energy_csv_row, energy_gradient, evaluate_energy,
                         safe_power)
from fnls.lattice import Grid3D, laplacian
from fnls.model import ModelParams, OrbitalSet

from oracles import HYDROGEN_ENERGY, hydrogen_orbital


def test_safe_power_zero_convention():
    r = np.array([0.0, 1e-300, 4.0])
    assert safe_power(r, 0.5) == pytest.approx([0.0, 1e-150, 2.0])


def test_nonlinear_vanishes_with_alpha():
    g = Grid3D(6.0, 32)
    st = random_orthonormal_set(1, g, seed=0)
    e = [evaluate_energy(st, ModelParams(p=1.5, alpha=a, lam=1.0, grid=g)).nonlinear
         for a in (1.0, 1e-2, 1e-4)]
    assert abs(e[1]) == pytest.approx(1e-2 * abs(e[0]), rel=1e-10)
    assert abs(e[2]) < 1e-3 * abs(e[0])


def test_hydrogen_energy():
    g = Grid3D(20.0, 96)
    u = hydrogen_orbital(g.radius())[None]
    # n even: the centre is off-node, so the bare Coulomb field can be sampled
    pr = ModelParams(p=1.5, alpha=1e-8, lam=1.0, centers=((0.0, 0.0, 0.0),), grid=g,
                     softening=0.0)
    e = evaluate_energy(OrbitalSet(g, u), pr)
    assert e.total == pytest.approx(HYDROGEN_ENERGY, rel=0.02)
    assert e.total == pytest.approx(e.kinetic + e.potential + e.nonlinear, rel=1e-15)


def test_orthogonal_mixing_invariance():
    g = Grid3D(5.0, 28)
    st = random_orthonormal_set(2, g, seed=3)
    pr = ModelParams(p=4.0 / 3.0, alpha=1.3, lam=2.0, centers=((0.5, 0, 0),), grid=g)
    t = 0.9
    q = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    a = evaluate_energy(st, pr)
    b = evaluate_energy(mix_orbitals(st, q), pr)
    for f in ("kinetic", "potential", "nonlinear", "total"):
        assert getattr(b, f) == pytest.approx(getattr(a, f), rel=1e-10)


def test_gradient_free_linear_case():
    g = Grid3D(4.0, 20)
    st = random_orthonormal_set(1, g, seed=4)
    pr = ModelParams(p=1.5, alpha=1e-30, lam=1.0, grid=g)
    grad = energy_gradient(st, pr)[0].values
    assert np.allclose(grad, 2.0 * laplacian(st.block[0], g.spacing, pr.order), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_central_difference(seed):
    g = Grid3D(5.0, 24)
    pr = ModelParams(p=1.5, alpha=1.0, lam=1.5, centers=((0.3, 0.0, 0.0),), grid=g)
    st = random_orthonormal_set(2, g, seed=seed, occupations=pr.occupations())
    rng = np.random.default_rng(100 + seed)
    d = random_orthonormal_set(2, g, seed=200 + seed).block * rng.standard_normal((2, 1, 1, 1))
    t = 1e-4
    ep = evaluate_energy(st.replace_block(st.block + t * d), pr).total
    em = evaluate_energy(st.replace_block(st.block - t * d), pr).total
    fd = (ep - em) / (2 * t)
    grad = np.stack([f.values for f in energy_gradient(st, pr)])
    an = g.cell_volume * float(np.sum(grad * d))
    assert an == pytest.approx(fd, rel=1e-5)


def test_csv_row_layout():
    g = Grid3D(4.0, 20)
    pr = ModelParams(p=1.5, alpha=1.0, lam=1.0, grid=g)
    st = random_orthonormal_set(1, g, seed=0)
    e = evaluate_energy(st, pr)
    row = energy_csv_row(pr, e, 7, 1e-8)
    assert len(row) == len(ENERGY_CSV_COLUMNS)
    assert dict(zip(ENERGY_CSV_COLUMNS, row))["total"] == e.total
