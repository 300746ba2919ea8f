"""The discrete p-energy, its exact nodal gradient and residuals.

Energies are evaluated exactly for P1 fields: gradients are constant per
element, so ``(1/p) * sum_e |grad v|_e^p |e|`` involves no quadrature error
for any p. Large exponents are handled by factoring out the largest element
gradient before taking powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericRangeError

__all__ = [
    "Field",
    "ProblemSpec",
    "EnergyBreakdown",
    "NeumannResidual",
    "positive_measure",
    "volume_positive",
    "dirichlet_term",
    "boundary_term",
    "energy",
    "energy_gradient",
    "neumann_residual_p",
]

_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of a P1 function on ``grid``."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise InvalidArgumentError(
                f"field has shape {vals.shape}, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(coords)`` at the nodes; ``coords`` has shape (n, dim)."""
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float).reshape(-1))

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.n_nodes, float(c)))

    def with_values(self, values):
        return Field(self.grid, values)

    def boundary_values(self):
        return self.values[self.grid.boundary_nodes]


@dataclass(frozen=True)
class ProblemSpec:
    """Boundary flux ``g`` (one value per boundary node), volume budget and exponent."""

    g: np.ndarray
    alpha: float
    p: float | None = None

    def __post_init__(self):
        g = np.array(self.g, dtype=float).reshape(-1)
        if not np.all(np.isfinite(g)):
            raise InvalidArgumentError("boundary datum g must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha!r}")
        if self.p is not None and not (math.isfinite(self.p) and self.p >= 2):
            raise InvalidArgumentError(f"p must be finite and >= 2, got {self.p!r}")

    def check(self, grid):
        """Grid-dependent validation: datum length, ``alpha < |Omega|``, ``p > N``."""
        if self.g.shape != (grid.boundary_nodes.size,):
            raise InvalidArgumentError(
                f"g has {self.g.size} values, grid has {grid.boundary_nodes.size} boundary nodes")
        if not self.alpha < grid.volume:
            raise InvalidArgumentError(
                f"alpha={self.alpha} must lie inside (0, |Omega|={grid.volume})")
        if self.p is not None and not self.p > grid.dim:
            raise InvalidArgumentError(f"p={self.p} must exceed the dimension {grid.dim}")
        return self

    def with_p(self, p):
        return ProblemSpec(self.g, self.alpha, p)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    boundary: float
    total: float
    gradient_sup: float


@dataclass(frozen=True, eq=False)
class NeumannResidual:
    """Per-boundary-node flux ``|grad u|^(p-2) du/deta`` and its mismatch with ``g``."""

    nodes: np.ndarray
    flux: np.ndarray
    residual: np.ndarray
    active: np.ndarray

    @property
    def sup(self):
        if not np.any(self.active):
            return 0.0
        return float(np.max(np.abs(self.residual[self.active])))


def _values(field):
    return np.asarray(getattr(field, "values", field), dtype=float)


def _element_positive_fraction(vals):
    """Fraction of each simplex where the linear interpolant is > 0.

    ``vals`` has shape (n_elements, k) with k = 2 (segments) or 3 (triangles).
    """
    k = vals.shape[1]
    frac = np.zeros(vals.shape[0])
    if k == 2:
        hi = vals.max(axis=1)
        lo = vals.min(axis=1)
        full = lo > 0
        part = (hi > 0) & ~full
        frac[full] = 1.0
        frac[part] = hi[part] / (hi[part] - lo[part])
        return frac
    s = -np.sort(-vals, axis=1)
    v1, v2, v3 = s[:, 0], s[:, 1], s[:, 2]
    full = v3 > 0
    one = (v1 > 0) & (v2 <= 0)
    two = (v2 > 0) & (v3 <= 0)
    frac[full] = 1.0
    # products of ratios in [0, 1] avoid underflow for tiny values
    frac[one] = (v1[one] / (v1[one] - v2[one])) * (v1[one] / (v1[one] - v3[one]))
    frac[two] = 1.0 - (v3[two] / (v3[two] - v1[two])) * (v3[two] / (v3[two] - v2[two]))
    return frac


def positive_measure(grid, values):
    """Exact measure of ``{v > 0}`` for the P1 interpolant of nodal ``values``."""
    vals = np.asarray(values, dtype=float)[grid.elements]
    return float(np.sum(_element_positive_fraction(vals) * grid.element_measure))


def volume_positive(field):
    """Lebesgue measure of the positive set of a field.

    The positive set is that of the piecewise-linear interpolant, measured
    exactly per element with the strict comparison ``v > 0``.
    """
    return positive_measure(field.grid, field.values)


def _gradient_norms(grid, values):
    eg = grid.element_gradients(values)
    return np.sqrt(np.sum(eg * eg, axis=1)), eg


def _pow_scale(m, e, p):
    """``m ** e`` for python floats, raising NumericRangeError on overflow."""
    if m == 0.0:
        return 0.0
    if e * math.log(m) > _LOG_MAX:
        raise NumericRangeError(p, m)
    return m ** e


def _dirichlet(grid, values, p):
    norms, _ = _gradient_norms(grid, values)
    m = float(norms.max()) if norms.size else 0.0
    if m == 0.0:
        return 0.0, 0.0
    s = float(np.sum((norms / m) ** p * grid.element_measure))
    scale = _pow_scale(m, p, p)
    val = scale * s / p
    if not math.isfinite(val):
        raise NumericRangeError(p, m)
    return val, m


def dirichlet_term(field, p):
    """``(1/p) * integral |grad v|^p`` computed in max-factored form."""
    if not p >= 2:
        raise InvalidArgumentError(f"p must be >= 2, got {p!r}")
    return _dirichlet(field.grid, field.values, p)[0]


def boundary_term(field, g):
    """``sum_b g_b v_b w_b``, the boundary quadrature of ``g v``."""
    grid = field.grid
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.boundary_nodes.size,):
        raise InvalidArgumentError("g must have one value per boundary node")
    return float(np.dot(g * grid.boundary_weights, field.values[grid.boundary_nodes]))


def energy(field, spec):
    """Energy breakdown of ``field`` for the data in ``spec``."""
    dirichlet, m = _dirichlet(field.grid, field.values, spec.p)
    bnd = boundary_term(field, spec.g)
    return EnergyBreakdown(dirichlet=dirichlet, boundary=bnd, total=dirichlet - bnd,
                           gradient_sup=m)


def flux_vectors(grid, values, p):
    """Per-element ``|grad v|^(p-2) grad v`` (zero where the gradient vanishes)."""
    norms, eg = _gradient_norms(grid, values)
    m = float(norms.max()) if norms.size else 0.0
    if m == 0.0:
        return np.zeros_like(eg), norms
    scale = _pow_scale(m, p - 2.0, p)
    _pow_scale(m, p - 1.0, p)
    coef = scale * (norms / m) ** (p - 2.0)
    return coef[:, None] * eg, norms


def _energy_gradient(grid, values, g, p):
    flux, _ = flux_vectors(grid, values, p)
    out = np.zeros(grid.n_nodes)
    for d, op in enumerate(grid.grad):
        out += op.T @ (grid.element_measure * flux[:, d])
    out[grid.boundary_nodes] -= np.asarray(g, dtype=float) * grid.boundary_weights
    return out


def energy_gradient(field, spec):
    """Exact nodal gradient of the discrete total energy, as a Field."""
    if not spec.p >= 2:
        raise InvalidArgumentError(f"p must be >= 2, got {spec.p!r}")
    return field.with_values(_energy_gradient(field.grid, field.values, spec.g, spec.p))


def _inactive_nodes(grid, values, nodes):
    """Nodes where the field vanishes or is locally constant."""
    norms, _ = _gradient_norms(grid, values)
    inc = grid.incidence.tocsc()
    out = np.zeros(len(nodes), dtype=bool)
    for k, n in enumerate(nodes):
        els = inc.indices[inc.indptr[n]:inc.indptr[n + 1]]
        out[k] = values[n] == 0.0 or not np.any(norms[els] > 0.0)
    return out


def neumann_residual_p(field, spec):
    """Boundary flux mismatch ``|grad u|^(p-2) du/deta - g`` per boundary node.

    The boundary gradient is the measure-weighted average of the gradients of
    the elements touching the node (the single adjacent segment in 1D). Nodes
    where the field is zero or locally constant are flagged inactive; their
    raw flux and mismatch are still reported.
    """
    grid = field.grid
    nodes = grid.boundary_nodes
    grads = grid.nodal_gradients(field.values)[nodes]
    norms = np.sqrt(np.sum(grads * grads, axis=1))
    dn = np.sum(grads * grid.normals, axis=1)
    with np.errstate(over="raise"):
        try:
            coef = np.where(norms > 0, norms ** (spec.p - 2.0), 0.0)
        except FloatingPointError as exc:
            raise NumericRangeError(spec.p, float(norms.max())) from exc
    flux = coef * dn
    resid = flux - spec.g
    active = ~_inactive_nodes(grid, field.values, nodes)
    return NeumannResidual(nodes=nodes.copy(), flux=flux, residual=resid, active=active)
