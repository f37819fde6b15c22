import math

import numpy as np
import pytest

from fnls.constraints import (gram, gram_block, inverse_sqrt, lowdin_block,
                              lowdin_orthonormalize, mix_orbitals, random_orthonormal_set)
from fnls.errors import OccupationMismatch, RankDeficient
from fnls.lattice import Grid3D, ScalarField
from fnls.model import density_of

from oracles import gaussian_overlap


def test_gram_identity_for_orthonormal():
    g = Grid3D(4.0, 20)
    st = random_orthonormal_set(3, g, seed=0)
    assert np.max(np.abs(gram(st.orbitals) - np.eye(3))) < 1e-10


def test_gram_duplicate_is_singular():
    g = Grid3D(4.0, 20)
    u = random_orthonormal_set(1, g, seed=0).orbitals[0]
    w = np.linalg.eigvalsh(gram([u, u]))
    assert abs(w[0]) < 1e-10


def test_gaussian_overlap_matches_closed_form():
    g = Grid3D(8.0, 65)
    sigma, d = 1.0, 1.5
    x, y, z = g.coordinates()

    def unit_gauss(cx):
        f = np.exp(-((x - cx) ** 2 + y**2 + z**2) / (2 * sigma**2))
        return f / (math.pi * sigma**2) ** 0.75

    fa, fb = ScalarField(g, unit_gauss(-d / 2)), ScalarField(g, unit_gauss(d / 2))
    assert gram([fa, fb])[0, 1] == pytest.approx(gaussian_overlap(d, sigma), abs=1e-6)


def test_lowdin_identity_on_orthonormal():
    g = Grid3D(4.0, 20)
    st = random_orthonormal_set(2, g, seed=5)
    out = lowdin_orthonormalize(st.orbitals)
    assert max(np.max(np.abs(a.values - b)) for a, b in zip(out, st.block)) < 1e-10


def test_lowdin_two_by_two_overlap_half():
    gm = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert np.linalg.eigvalsh(gm) == pytest.approx([0.5, 1.5])
    s = inverse_sqrt(gm)
    assert np.sort(np.linalg.eigvalsh(s)) == pytest.approx([1 / math.sqrt(1.5), math.sqrt(2.0)])
    assert s @ gm @ s == pytest.approx(np.eye(2))


def test_lowdin_near_duplicate_raises():
    g = Grid3D(4.0, 20)
    u = random_orthonormal_set(2, g, seed=6).block
    near = np.stack([u[0], math.sqrt(1 - 1e-14) * u[0] + 1e-7 * u[1]])
    # overlap 1 - 1e-14 leaves a Gram eigenvalue of order 1e-14
    assert gram_block(near, g.cell_volume)[0, 1] == pytest.approx(1 - 5e-15, abs=1e-13)
    with pytest.raises(RankDeficient):
        lowdin_block(near, g.cell_volume)


def test_random_set_properties():
    g = Grid3D(4.0, 20)
    one = random_orthonormal_set(1, g, seed=9)
    assert one.size == 1 and one.orbitals[0].norm() == pytest.approx(1.0, abs=1e-12)
    a = random_orthonormal_set(5, g, seed=11)
    b = random_orthonormal_set(5, g, seed=11)
    assert np.array_equal(a.block, b.block)
    assert a.orthonormality_error() < 1e-10
    assert not np.array_equal(a.block, random_orthonormal_set(5, g, seed=12).block)


def test_mix_orbitals():
    g = Grid3D(4.0, 20)
    st = random_orthonormal_set(2, g, seed=1)
    assert np.array_equal(mix_orbitals(st, np.eye(2)).block, st.block)
    c = math.cos(math.pi / 4)
    q = np.array([[c, -c], [c, c]])
    a = density_of(st).rho.values
    b = density_of(mix_orbitals(st, q)).rho.values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(a)
    mixed = random_orthonormal_set(2, g, seed=1, occupations=[1.0, 0.5])
    with pytest.raises(OccupationMismatch):
        mix_orbitals(mixed, q)
    with pytest.raises(ValueError):
        mix_orbitals(st, np.ones((2, 2)))
