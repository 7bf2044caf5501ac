import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pwhetero.errors import ParameterError
from pwhetero.kgrid import HEXAGONAL_NODES, fold_half_open, hexagonal_path, kpath, monkhorst_pack
from pwhetero.structure import hexagonal_lattice


def test_gamma_only():
    mesh = monkhorst_pack(1, 1, 1)
    assert mesh.points.tolist() == [[0.0, 0.0, 0.0]]
    assert mesh.weights.tolist() == [1.0]


def test_two_by_two():
    mesh = monkhorst_pack(2, 2, 1)
    got = sorted(map(tuple, mesh.points))
    want = sorted((sx * 0.25, sy * 0.25, 0.0) for sx in (-1, 1) for sy in (-1, 1))
    assert got == want
    assert np.all(mesh.weights == 0.25)


def _mp_oracle(q):
    # exact rational (2r - q - 1) / (2q), folded into (-1/2, 1/2]
    vals = []
    for r in range(1, q + 1):
        u = Fraction(2 * r - q - 1, 2 * q)
        while u > Fraction(1, 2):
            u -= 1
        while u <= Fraction(-1, 2):
            u += 1
        vals.append(float(u))
    return vals


def test_ten_by_ten_matches_formula():
    mesh = monkhorst_pack(10, 10, 1)
    assert len(mesh) == 100
    assert abs(mesh.weights.sum() - 1.0) < 1e-12
    axis = _mp_oracle(10)
    want = sorted((a, b, 0.0) for a in axis for b in axis)
    assert sorted(map(tuple, mesh.points)) == want


@pytest.mark.parametrize("q", [(0, 1, 1), (2, -1, 1), (1.5, 1, 1)])
def test_invalid_divisions(q):
    with pytest.raises(ParameterError):
        monkhorst_pack(*q)


@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 3))
def test_mesh_properties(q1, q2, q3):
    mesh = monkhorst_pack(q1, q2, q3)
    assert len(mesh) == q1 * q2 * q3
    assert abs(mesh.weights.sum() - 1.0) < 1e-12
    assert np.all(mesh.points > -0.5) and np.all(mesh.points <= 0.5)
    points = {tuple(np.round(p, 12)) for p in mesh.points}
    for p in mesh.points:
        assert tuple(np.round(fold_half_open(-p), 12)) in points


def test_deck_path():
    path = hexagonal_path(20)
    assert len(path) == 61
    assert path.node_indices == (0, 20, 40, 60)
    assert path.labels == ("G", "K", "M", "G")
    assert np.allclose(path.points[20], [1 / 3, 1 / 3, 0])


def test_minimal_path():
    path = kpath([("G", (0, 0, 0)), ("M", (0, 0.5, 0))], 1)
    assert np.allclose(path.points, [[0, 0, 0], [0, 0.5, 0]])
    assert path.node_indices == (0, 1)


def test_gamma_to_k_distance():
    a = 3.89
    path = hexagonal_path(20, hexagonal_lattice(a, 20.0))
    assert path.cumulative_distance[20] == pytest.approx(4 * math.pi / (3 * a), rel=1e-13)


def test_degenerate_segment_and_too_few_nodes():
    with pytest.raises(ParameterError):
        kpath([("G", (0, 0, 0)), ("G", (0, 0, 0))], 5)
    with pytest.raises(ParameterError):
        kpath([("G", (0, 0, 0))], 5)
    with pytest.raises(ParameterError):
        kpath(HEXAGONAL_NODES, 0)


def test_per_segment_counts():
    path = kpath(HEXAGONAL_NODES, [3, 5, 2])
    assert path.node_indices == (0, 3, 8, 10)


@given(st.integers(1, 30))
def test_path_invariants(pps):
    path = hexagonal_path(pps, hexagonal_lattice(3.89, 20))
    idx = path.node_indices
    assert idx[0] == 0 and idx[-1] == len(path) - 1
    assert all(b > a for a, b in zip(idx, idx[1:]))
    assert np.all(np.diff(path.cumulative_distance) >= 0)
    assert len(path) == 3 * pps + 1


def test_relabelling_keeps_arc_length():
    lattice = hexagonal_lattice(3.89, 20)
    renamed = [(name.lower() + "x", k) for name, k in HEXAGONAL_NODES]
    a = kpath(HEXAGONAL_NODES, 7, lattice)
    b = kpath(renamed, 7, lattice)
    assert np.array_equal(a.cumulative_distance, b.cumulative_distance)


def test_path_text_format():
    text = hexagonal_path(2).to_text().splitlines()
    assert len(text) == 7
    assert text[0].endswith("\tG") and text[1].endswith("\t")
