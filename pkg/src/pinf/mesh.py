"""Structured P1 discretizations of the interval and the unit disk.

Both grids carry lumped interior quadrature weights, boundary nodes with unit
outward normals and boundary quadrature weights, and per-element gradient
operators so that ``grad[d] @ values`` is the constant d-th derivative of the
piecewise-linear interpolant on each element.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError

__all__ = [
    "Grid",
    "build_interval",
    "build_disk",
    "boundary_trace",
    "write_grid_csv",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable discretization of a domain.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    nodes : ndarray, shape (n_nodes, dim)
    elements : ndarray of int, shape (n_elements, dim + 1)
    weights : ndarray, shape (n_nodes,)
        Lumped interior quadrature weight per node.
    boundary_nodes : ndarray of int
        Boundary node ids in the canonical order (``a`` then ``b`` on the
        interval, increasing angle on the disk).
    normals : ndarray, shape (n_boundary, dim)
    boundary_weights : ndarray, shape (n_boundary,)
    element_measure : ndarray, shape (n_elements,)
    grad : tuple of csr_matrix
        ``grad[d]`` maps nodal values to the d-th gradient component per element.
    kind : str
        ``"interval"`` or ``"disk"``.
    params : dict
        Construction parameters.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    weights: np.ndarray
    boundary_nodes: np.ndarray
    normals: np.ndarray
    boundary_weights: np.ndarray
    element_measure: np.ndarray
    grad: tuple
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("nodes", "elements", "weights", "boundary_nodes", "normals",
                     "boundary_weights", "element_measure"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def volume(self):
        return float(np.sum(self.weights))

    @property
    def cell_weight(self):
        """Largest interior quadrature weight (the volume resolution)."""
        return float(np.max(self.weights))

    @property
    def spacing(self):
        """Characteristic mesh size (cell length, or ring spacing on the disk)."""
        if self.kind == "interval":
            return float(np.max(self.element_measure))
        return 1.0 / self.params["n_r"]

    @property
    def boundary_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @property
    def incidence(self):
        """Element-to-node incidence as a sparse (n_elements, n_nodes) 0/1 matrix."""
        m, k = self.elements.shape
        rows = np.repeat(np.arange(m), k)
        return sp.csr_matrix((np.ones(m * k), (rows, self.elements.ravel())),
                             shape=(m, self.n_nodes))

    @property
    def adjacency(self):
        """Node-to-node adjacency (sharing an element), without the diagonal."""
        inc = self.incidence
        adj = (inc.T @ inc).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        adj.data[:] = 1.0
        return adj

    def element_gradients(self, values):
        """Per-element gradient, shape (n_elements, dim)."""
        values = np.asarray(values, dtype=float)
        return np.column_stack([g @ values for g in self.grad])

    def nodal_gradients(self, values):
        """Measure-weighted average of the element gradients around each node."""
        eg = self.element_gradients(values)
        inc = self.incidence
        wsum = inc.T @ self.element_measure
        out = (inc.T @ (eg * self.element_measure[:, None])) / wsum[:, None]
        return out

    # point location / interpolation -------------------------------------------------

    def locate(self, points):
        """Locate points in elements.

        Returns ``(element, bary, inside)`` where ``bary`` are the barycentric
        coordinates in the returned element. Points slightly outside the
        discrete domain are assigned to the nearest candidate element and
        ``inside`` is False for them.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
            pts = pts.T
        if self.kind == "interval":
            return self._locate_interval(pts[:, 0])
        return self._locate_disk(pts)

    def _locate_interval(self, x):
        xs = self.nodes[:, 0]
        n_el = self.n_elements
        e = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, n_el - 1)
        x0 = xs[e]
        x1 = xs[e + 1]
        t = (x - x0) / (x1 - x0)
        bary = np.column_stack([1.0 - t, t])
        tol = 1e-12 * (xs[-1] - xs[0])
        inside = (x >= xs[0] - tol) & (x <= xs[-1] + tol)
        return e, bary, inside

    def _locate_disk(self, pts):
        n_r = self.params["n_r"]
        n_t = self.params["n_theta"]
        r = np.hypot(pts[:, 0], pts[:, 1])
        theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * math.pi)
        j = np.minimum((theta / (2.0 * math.pi / n_t)).astype(int), n_t - 1)
        ring = np.minimum((r * n_r).astype(int), n_r - 1)
        # a point just inside ring i+1 may lie beyond that ring's chord, so the
        # annulus outside is tried as well
        up = np.minimum(ring + 1, n_r - 1)
        first = np.where(ring == 0, j, n_t + 2 * n_t * (ring - 1) + 2 * j)
        outer = n_t + 2 * n_t * (up - 1) + 2 * j
        cands = (first, np.where(ring == 0, j, first + 1), outer, outer + 1)
        e = first.copy()
        bary = np.empty((pts.shape[0], 3))
        best = np.full(pts.shape[0], -np.inf)
        for c in cands:
            b = self._bary(c, pts)
            score = b.min(axis=1)
            take = score > best
            e[take] = c[take]
            bary[take] = b[take]
            best[take] = score[take]
        inside = best >= -1e-10
        return e, bary, inside

    def _bary(self, elems, pts):
        tri = self.nodes[self.elements[elems]]
        p0, p1, p2 = tri[:, 0], tri[:, 1], tri[:, 2]
        det = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
               - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
        l1 = ((pts[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
              - (p2[:, 0] - p0[:, 0]) * (pts[:, 1] - p0[:, 1])) / det
        l2 = ((p1[:, 0] - p0[:, 0]) * (pts[:, 1] - p0[:, 1])
              - (pts[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def interpolate(self, values, points):
        """Evaluate the P1 interpolant of nodal ``values`` at ``points``."""
        values = np.asarray(values, dtype=float)
        e, bary, _ = self.locate(points)
        return np.sum(values[self.elements[e]] * bary, axis=1)

    def contains(self, points, tol=1e-12):
        """True where points lie in the closed continuous domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "interval":
            a, b = self.nodes[0, 0], self.nodes[-1, 0]
            x = pts[:, 0] if pts.shape[1] == 1 else pts[0]
            return (x >= a - tol) & (x <= b + tol)
        return np.hypot(pts[:, 0], pts[:, 1]) <= 1.0 + tol


def _gradient_operators_1d(x, elements):
    m = elements.shape[0]
    h = x[elements[:, 1]] - x[elements[:, 0]]
    rows = np.r_[np.arange(m), np.arange(m)]
    cols = np.r_[elements[:, 0], elements[:, 1]]
    data = np.r_[-1.0 / h, 1.0 / h]
    return (sp.csr_matrix((data, (rows, cols)), shape=(m, x.size)),), h


def _gradient_operators_2d(nodes, elements):
    p0 = nodes[elements[:, 0]]
    p1 = nodes[elements[:, 1]]
    p2 = nodes[elements[:, 2]]
    det = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
           - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
    area = 0.5 * det
    # gradients of the three barycentric basis functions
    bx = np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 1] - p0[:, 1], p0[:, 1] - p1[:, 1]]) / det[:, None]
    by = np.column_stack([p2[:, 0] - p1[:, 0], p0[:, 0] - p2[:, 0], p1[:, 0] - p0[:, 0]]) / det[:, None]
    m = elements.shape[0]
    rows = np.repeat(np.arange(m), 3)
    cols = elements.ravel()
    n = nodes.shape[0]
    gx = sp.csr_matrix((bx.ravel(), (rows, cols)), shape=(m, n))
    gy = sp.csr_matrix((by.ravel(), (rows, cols)), shape=(m, n))
    return (gx, gy), area


def build_interval(a, b, n_cells):
    """Uniform P1 grid on ``[a, b]`` with ``n_cells`` segments.

    Interior weights are the trapezoid rule; the two boundary nodes carry
    outward normals -1 and +1 and boundary weight 1.
    """
    try:
        a = float(a)
        b = float(b)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"endpoints must be numbers: {a!r}, {b!r}") from exc
    if not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidArgumentError("interval endpoints must be finite")
    if not a < b:
        raise InvalidArgumentError(f"need a < b, got a={a}, b={b}")
    if int(n_cells) != n_cells or n_cells < 2:
        raise InvalidArgumentError(f"n_cells must be an integer >= 2, got {n_cells!r}")
    n_cells = int(n_cells)

    x = np.linspace(a, b, n_cells + 1)
    elements = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    grad, h = _gradient_operators_1d(x, elements)
    weights = np.zeros(n_cells + 1)
    np.add.at(weights, elements[:, 0], 0.5 * h)
    np.add.at(weights, elements[:, 1], 0.5 * h)
    return Grid(
        dim=1,
        nodes=x[:, None].copy(),
        elements=elements,
        weights=weights,
        boundary_nodes=np.array([0, n_cells]),
        normals=np.array([[-1.0], [1.0]]),
        boundary_weights=np.array([1.0, 1.0]),
        element_measure=h,
        grad=grad,
        kind="interval",
        params={"a": a, "b": b, "n_cells": n_cells},
    )


def build_disk(n_r, n_theta):
    """P1 triangulation of the unit disk on a polar lattice.

    Nodes are the center plus rings ``r_i = i / n_r`` (i = 1..n_r) of
    ``n_theta`` nodes at ``theta_j = 2 pi j / n_theta``. Quads between rings are
    split along diagonals mirrored about the x-axis, so the triangulation is
    symmetric under ``theta -> -theta``.
    """
    if int(n_r) != n_r or n_r < 2:
        raise InvalidArgumentError(f"n_r must be an integer >= 2, got {n_r!r}")
    if int(n_theta) != n_theta or n_theta < 8:
        raise InvalidArgumentError(f"n_theta must be an integer >= 8, got {n_theta!r}")
    if n_theta % 2:
        raise InvalidArgumentError(f"n_theta must be even, got {n_theta}")
    n_r = int(n_r)
    n_t = int(n_theta)

    theta = 2.0 * math.pi * np.arange(n_t) / n_t
    coords = [np.zeros((1, 2))]
    for i in range(1, n_r + 1):
        r = i / n_r
        coords.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    nodes = np.vstack(coords)

    def nid(i, j):
        return 1 + (i - 1) * n_t + (j % n_t)

    tris = []
    for j in range(n_t):
        tris.append((0, nid(1, j), nid(1, j + 1)))
    half = n_t // 2
    for i in range(1, n_r):
        for j in range(n_t):
            a, b = nid(i, j), nid(i, j + 1)
            c, d = nid(i + 1, j), nid(i + 1, j + 1)
            if j < half:
                tris.append((a, c, d))
                tris.append((a, d, b))
            else:
                tris.append((a, c, b))
                tris.append((b, c, d))
    elements = np.array(tris, dtype=int)
    grad, area = _gradient_operators_2d(nodes, elements)
    flip = area < 0
    if np.any(flip):
        elements[flip] = elements[flip][:, [0, 2, 1]]
        grad, area = _gradient_operators_2d(nodes, elements)

    weights = np.zeros(nodes.shape[0])
    for k in range(3):
        np.add.at(weights, elements[:, k], area / 3.0)

    boundary = np.array([nid(n_r, j) for j in range(n_t)])
    normals = nodes[boundary] / np.linalg.norm(nodes[boundary], axis=1)[:, None]
    return Grid(
        dim=2,
        nodes=nodes,
        elements=elements,
        weights=weights,
        boundary_nodes=boundary,
        normals=normals,
        boundary_weights=np.full(n_t, 2.0 * math.pi / n_t),
        element_measure=area,
        grad=grad,
        kind="disk",
        params={"n_r": n_r, "n_theta": n_t},
    )


def ring_nodes(grid, i):
    """Node ids of ring ``i`` (1..n_r) on a disk grid, in increasing angle."""
    n_t = grid.params["n_theta"]
    return 1 + (i - 1) * n_t + np.arange(n_t)


def boundary_trace(grid, field):
    """Values of ``field`` at the boundary nodes as ``[(node, value), ...]``."""
    values = np.asarray(getattr(field, "values", field), dtype=float)
    if values.shape != (grid.n_nodes,):
        raise InvalidArgumentError(
            f"field has {values.size} values, grid has {grid.n_nodes} nodes")
    return [(int(n), float(values[n])) for n in grid.boundary_nodes]


def write_grid_csv(grid, directory):
    """Write ``nodes.csv``, ``boundary.csv`` and ``elements.csv`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    axes = ["x", "y"][: grid.dim]
    with open(out / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *axes, "interior_weight"])
        for i, (xy, wt) in enumerate(zip(grid.nodes, grid.weights)):
            w.writerow([i, *(repr(float(c)) for c in xy), repr(float(wt))])
    with open(out / "boundary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *("n" + a for a in axes), "boundary_weight"])
        for n, nrm, wt in zip(grid.boundary_nodes, grid.normals, grid.boundary_weights):
            w.writerow([int(n), *(repr(float(c)) for c in nrm), repr(float(wt))])
    with open(out / "elements.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"n{k}" for k in range(grid.dim + 1))])
        for i, el in enumerate(grid.elements):
            w.writerow([i, *(int(v) for v in el)])
    return [out / "nodes.csv", out / "boundary.csv", out / "elements.csv"]
