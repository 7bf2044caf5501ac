import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pwhetero.errors import ParameterError
from pwhetero.pwbasis import (
    FFTGrid,
    build_basis,
    fft_grid,
    read_cube,
    structure_factor,
    structure_factor_miller,
    to_realspace,
    to_reciprocal,
    write_cube,
)
from pwhetero.structure import Cell, build_heterobilayer, GAP, Layer
from pwhetero.units import ANGSTROM_IN_BOHR

TWO_PI_BOHR = 2 * math.pi / ANGSTROM_IN_BOHR  # Angstrom
GE = Layer(("Ge", "Ge"), a=3.89, buckling=0.38)


def cubic(side_angstrom):
    return Cell(np.eye(3) * side_angstrom)


def test_tiny_cutoff_keeps_only_g0():
    basis = build_basis(cubic(TWO_PI_BOHR), (0, 0, 0), 0.5)
    assert basis.gvectors.tolist() == [[0, 0, 0]]


def test_seven_vectors_in_unit_reciprocal_cell():
    # a = 2 pi Bohr gives |b| = 1; 1/2 |G|^2 <= 1 Ha means |G|^2 <= 2 Ry
    basis = build_basis(cubic(TWO_PI_BOHR), (0, 0, 0), 2.0)
    brute = [m for m in itertools.product(range(-3, 4), repeat=3) if sum(x * x for x in m) <= 2.0]
    assert len(brute) == 19
    got = {tuple(m) for m in basis.gvectors}
    assert got == set(brute)
    seven = build_basis(cubic(TWO_PI_BOHR), (0, 0, 0), 1.0)
    assert {tuple(m) for m in seven.gvectors} == {
        (0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)
    }


@given(st.floats(0.1, 40.0), st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_basis_matches_brute_force(ecut, k):
    cell = Cell(np.array([[4.0, 0, 0], [-2.0, 3.4641016, 0], [0, 0, 6.0]]))
    basis = build_basis(cell, k, ecut)
    recip = 2 * math.pi * np.linalg.inv(cell.lattice * ANGSTROM_IN_BOHR).T
    m = np.array(list(itertools.product(range(-12, 13), repeat=3)))
    kin = 0.5 * np.sum(((m + k) @ recip) ** 2, axis=1)
    want = {tuple(x) for x in m[kin <= 0.5 * ecut]}
    assert {tuple(x) for x in basis.gvectors} == want
    assert np.all(np.diff(basis.kinetic) >= -1e-12)
    assert np.all(basis.kinetic <= 0.5 * ecut * (1 + 1e-12))


def test_basis_size_monotone_in_cutoff():
    cell = build_heterobilayer(GE, GAP, "I", 3.7, 10.0)
    sizes = [len(build_basis(cell, (0.1, 0.2, 0), e)) for e in (2, 4, 6, 8, 10)]
    assert sizes == sorted(sizes)


def test_time_reversed_basis():
    cell = build_heterobilayer(GE, GAP, "I", 3.7, 10.0)
    k = np.array([0.2, -0.1, 0.0])
    plus = {tuple(g) for g in build_basis(cell, k, 8.0).gvectors}
    minus = {tuple(-g) for g in build_basis(cell, -k, 8.0).gvectors}
    assert plus == minus


def test_fft_grid_policy(caplog):
    cell = build_heterobilayer(GE, GAP, "I", 3.7, 20.0)
    with caplog.at_level(logging.WARNING):
        dims = fft_grid(cell, 120.0, 30.0)
    assert not caplog.records
    with caplog.at_level(logging.WARNING):
        fft_grid(cell, 100.0, 30.0)
    assert any("alias" in r.message for r in caplog.records)
    bigger = fft_grid(cell, 240.0)
    assert all(b >= a for a, b in zip(dims, bigger))
    basis = build_basis(cell, (0, 0, 0), 30.0, dims)
    span = 2 * np.abs(basis.gvectors).max(axis=0) + 1
    assert np.all(np.asarray(dims) >= span)
    for n in dims:
        while n % 2 == 0:
            n //= 2
        while n % 3 == 0:
            n //= 3
        while n % 5 == 0:
            n //= 5
        assert n == 1


def test_fft_grid_rejects_small_basis_grid():
    cell = cubic(5.0)
    with pytest.raises(ParameterError):
        build_basis(cell, (0, 0, 0), 20.0, fft_dims=(4, 4, 4))


def test_dc_mode_is_constant():
    basis = build_basis(cubic(3.0), (0, 0, 0), 6.0)
    c = np.zeros(len(basis), complex)
    c[0] = 0.7
    field = to_realspace(basis, c)
    assert np.allclose(field, 0.7)


def _direct_dft(basis, c):
    dims = basis.fft_dims
    axes = [np.arange(n) / n for n in dims]
    frac = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    phase = np.exp(2j * math.pi * np.tensordot(frac, basis.gvectors.T, axes=1))
    return phase @ c


@given(st.integers(0, 2**32 - 1))
def test_round_trip_against_direct_sum(seed):
    rng = np.random.default_rng(seed)
    cell = cubic(2.0)
    basis = build_basis(cell, (0, 0, 0), 9.0, fft_dims=(4, 4, 4))
    assert len(basis) > 5
    c = rng.normal(size=len(basis)) + 1j * rng.normal(size=len(basis))
    field = to_realspace(basis, c)
    assert np.allclose(field, _direct_dft(basis, c), atol=1e-12)
    back = to_reciprocal(basis, field)
    assert np.allclose(back, c, rtol=1e-12, atol=1e-12)
    # Parseval with the mean-square convention
    assert np.mean(np.abs(field) ** 2) == pytest.approx(np.sum(np.abs(c) ** 2), rel=1e-12)


def test_transform_shape_errors():
    basis = build_basis(cubic(3.0), (0, 0, 0), 6.0)
    with pytest.raises(ParameterError):
        to_realspace(basis, np.zeros(len(basis) + 1))
    with pytest.raises(ParameterError):
        to_reciprocal(basis, np.zeros((2, 2, 2)))


def test_structure_factor_examples():
    cell = build_heterobilayer(GE, GAP, "I", 3.70, 20.0)
    assert structure_factor(cell, np.zeros(3)) == pytest.approx(4.0)
    single = Cell(np.eye(3) * 4, ["Ge"], [[0, 0, 0]])
    g = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(structure_factor(single, g), 1.0)
    deck = [(0, 0, 0), (0, 2.245892547, 0.38), (0, 0, 3.70), (0, 2.245892547, 4.08)]
    gvec = np.array([0.7, -1.3, 0.4])
    direct = sum(complex(math.cos(-gvec @ p), math.sin(-gvec @ p)) for p in map(np.array, deck))
    assert structure_factor(cell, gvec) == pytest.approx(direct, abs=1e-9)
    miller = np.array([1, 2, 3])
    gcart = miller @ (2 * math.pi * np.linalg.inv(cell.lattice).T)
    assert structure_factor_miller(cell, miller) == pytest.approx(structure_factor(cell, gcart), abs=1e-12)


def test_orthonormal_orbitals_integrate_to_count():
    cell = cubic(3.0)
    basis = build_basis(cell, (0, 0, 0), 10.0)
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.normal(size=(len(basis), 3)) + 1j * rng.normal(size=(len(basis), 3)))
    occ = np.array([2.0, 2.0, 1.0])
    u = to_realspace(basis, q.T)
    grid = FFTGrid(cell, basis.fft_dims)
    density = np.einsum("b,bxyz->xyz", occ, np.abs(u) ** 2) / grid.volume
    assert grid.integrate(density) == pytest.approx(5.0, abs=1e-8)


def test_cube_round_trip(tmp_path):
    cell = build_heterobilayer(GE, GAP, "I", 3.70, 20.0)
    values = np.random.default_rng(1).normal(size=(3, 4, 7))
    path = tmp_path / "field.cube"
    write_cube(path, cell, values, comment="test", isovalue=0.004)
    got, axes, natoms, header = read_cube(path)
    assert natoms == 4
    assert got.shape == values.shape
    assert np.allclose(got, values, rtol=1e-4, atol=1e-9)
    assert "isovalue 0.004" in header[1]
    lines = path.read_text().splitlines()
    # z fastest: the first body row holds values[0, 0, :6]
    first = [float(x) for x in lines[6 + 4].split()]
    assert np.allclose(first, values[0, 0, :6], rtol=1e-4)
