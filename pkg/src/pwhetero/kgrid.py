"""Monkhorst-Pack meshes and high-symmetry band paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .structure import reciprocal_lattice


def fold_half_open(values):
    """Fold fractional components into (-1/2, 1/2]."""
    values = np.asarray(values, dtype=float)
    folded = values - np.ceil(values - 0.5)
    return folded


@dataclass(frozen=True)
class KMesh:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.points)


def monkhorst_pack(q1, q2, q3):
    """Full (unreduced) Monkhorst-Pack mesh with uniform weights.

    Components are (2r - q - 1) / (2q) for r = 1..q, folded into (-1/2, 1/2].
    """
    qs = (q1, q2, q3)
    for q in qs:
        if int(q) != q or q < 1:
            raise ParameterError(f"Monkhorst-Pack divisions must be positive integers, got {qs}")
    axes = [
        fold_half_open((2.0 * np.arange(1, q + 1) - q - 1) / (2.0 * q)) for q in map(int, qs)
    ]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    n = len(grid)
    return KMesh(points=grid, weights=np.full(n, 1.0 / n))


def gamma_mesh():
    return KMesh(points=np.zeros((1, 3)), weights=np.ones(1))


@dataclass(frozen=True)
class KPath:
    """Piecewise-linear path; ``cumulative_distance`` is in inverse Angstrom."""

    labels: tuple
    nodes: np.ndarray
    points: np.ndarray
    node_indices: tuple
    cumulative_distance: np.ndarray

    def __len__(self):
        return len(self.points)

    def to_text(self):
        """Two columns: cumulative distance and node label (blank off-node)."""
        marks = dict(zip(self.node_indices, self.labels))
        rows = [f"{x:.10f}\t{marks.get(i, '')}" for i, x in enumerate(self.cumulative_distance)]
        return "\n".join(rows) + "\n"


HEXAGONAL_NODES = (
    ("G", (0.0, 0.0, 0.0)),
    ("K", (1.0 / 3.0, 1.0 / 3.0, 0.0)),
    ("M", (0.0, 0.5, 0.0)),
    ("G", (0.0, 0.0, 0.0)),
)


def kpath(nodes, points_per_segment, lattice=None):
    """Interpolate labelled fractional nodes.

    Each segment contributes ``points_per_segment`` points starting at its
    first node and excluding its end node; the final node is appended once.
    A sequence gives one count per segment (the deck's crystal_b weights).
    ``lattice`` (rows in Angstrom) sets the metric for the arc length; without
    it distances are measured in fractional units.
    """
    nodes = list(nodes)
    if len(nodes) < 2:
        raise ParameterError("a k-path needs at least two nodes")
    counts = np.broadcast_to(np.asarray(points_per_segment), (len(nodes) - 1,))
    if np.any(counts != np.round(counts)) or np.any(counts < 1):
        raise ParameterError("points_per_segment must be positive integers")
    counts = [int(c) for c in counts]
    labels = tuple(str(label) for label, _ in nodes)
    coords = np.array([k for _, k in nodes], dtype=float)
    for i in range(len(coords) - 1):
        if np.allclose(coords[i], coords[i + 1], atol=1e-12):
            raise ParameterError(f"degenerate segment {labels[i]}-{labels[i + 1]}")

    points, node_indices = [], []
    for i in range(len(coords) - 1):
        node_indices.append(len(points))
        for j in range(counts[i]):
            points.append(coords[i] + (coords[i + 1] - coords[i]) * j / counts[i])
    node_indices.append(len(points))
    points.append(coords[-1])
    points = np.array(points)

    metric = reciprocal_lattice(lattice) if lattice is not None else np.eye(3)
    cart = points @ metric
    steps = np.linalg.norm(np.diff(cart, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(steps)])
    return KPath(labels, coords, points, tuple(node_indices), cumulative)


def hexagonal_path(points_per_segment=20, lattice=None):
    """The G-K-M-G path of the bands deck."""
    return kpath(HEXAGONAL_NODES, points_per_segment, lattice)
