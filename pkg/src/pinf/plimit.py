"""Continuation in p and diagnostics of the limit problem.

The limit profile is taken to be the minimizer at the largest exponent of
the schedule; no extrapolation is attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .energy import Field, ProblemSpec, _gradient_norms, _inactive_nodes, boundary_term, positive_measure
from .errors import InvalidArgumentError, NonConvergenceError, PreconditionError
from .solver import SolveOptions, minimize, project_volume

__all__ = [
    "DEFAULT_SCHEDULE",
    "ContinuationReport",
    "continuation",
    "lipschitz_norm",
    "InfLaplacianResidual",
    "inf_laplacian_residual",
    "BoundaryVerdict",
    "boundary_H_residual",
    "MaximizerVerdict",
    "lipschitz_competitors",
    "maximizer_check",
]

DEFAULT_SCHEDULE = (4.0, 8.0, 16.0, 32.0, 64.0, 128.0)


def lipschitz_norm(field):
    """Largest per-element gradient norm."""
    norms, _ = _gradient_norms(field.grid, field.values)
    return float(norms.max()) if norms.size else 0.0


@dataclass(eq=False)
class ContinuationReport:
    schedule: list
    reports: list
    u_infinity: Field | None
    sup_distance_consecutive: list = dc_field(default_factory=list)
    lipschitz_constant: float = math.nan
    maximizer_value: float = math.nan
    complete: bool = True

    def table(self):
        """Rows ``(p, energy, lipschitz, volume, sup_distance)``; the first distance is nan."""
        rows = []
        for k, r in enumerate(self.reports):
            dist = self.sup_distance_consecutive[k - 1] if k > 0 else math.nan
            rows.append((r.p, r.breakdown.total, r.breakdown.gradient_sup,
                         r.positive_volume, dist))
        return rows

    def to_dict(self):
        return {
            "schedule": list(self.schedule),
            "complete": self.complete,
            "lipschitz_constant": self.lipschitz_constant,
            "maximizer_value": self.maximizer_value,
            "sup_distance_consecutive": list(self.sup_distance_consecutive),
            "stages": [r.to_dict() for r in self.reports],
        }


def _check_schedule(schedule, dim):
    sched = [float(p) for p in schedule]
    if not sched:
        raise InvalidArgumentError("empty continuation schedule")
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise InvalidArgumentError(f"schedule must be strictly increasing: {sched}")
    if sched[0] <= dim:
        raise InvalidArgumentError(f"schedule entries must exceed the dimension {dim}")
    return sched


def continuation(grid, g, alpha, schedule=DEFAULT_SCHEDULE, opts=None, init=None):
    """Solve along an increasing schedule of exponents with warm starts.

    Raises
    ------
    NonConvergenceError
        A stage did not converge; ``partial`` holds the report so far.
    """
    sched = _check_schedule(schedule, grid.dim)
    opts = opts or SolveOptions()
    reports = []
    dists = []
    start = init
    prev = None
    for p in sched:
        spec = ProblemSpec(g, alpha, p)
        rep = minimize(grid, spec, opts, init=start)
        reports.append(rep)
        if prev is not None:
            dists.append(float(np.max(np.abs(rep.minimizer.values - prev))))
        prev = rep.minimizer.values
        start = rep.minimizer
        if not rep.converged:
            partial = ContinuationReport(sched, reports, rep.minimizer, dists, complete=False)
            raise NonConvergenceError(f"stage p={p:g} stopped without converging "
                                      f"({rep.stop_reason})", partial)
    u = reports[-1].minimizer
    return ContinuationReport(
        schedule=sched,
        reports=reports,
        u_infinity=u,
        sup_distance_consecutive=dists,
        lipschitz_constant=lipschitz_norm(u),
        maximizer_value=boundary_term(u, np.asarray(g, dtype=float)),
    )


@dataclass(frozen=True, eq=False)
class InfLaplacianResidual:
    """Per-node ``Delta_inf u`` estimates; nan where a node is not eligible."""

    values: np.ndarray
    eligible: np.ndarray
    boundary_adjacent: np.ndarray

    @property
    def sup(self):
        if not self.eligible.any():
            return 0.0
        return float(np.max(np.abs(self.values[self.eligible])))


def inf_laplacian_residual(field, h=None):
    """Probe estimate of ``grad u^T D^2 u grad u`` at interior nodes.

    Uses ``(u(x + h d) - 2 u(x) + u(x - h d)) / h^2 * |grad u|^2`` with
    ``d = grad u / |grad u|`` from the averaged nodal gradient and probes
    read off the piecewise-linear interpolant. A node is eligible when its
    value, its neighbours and the vertices of both probe elements are all
    nonzero with the same sign. Probes leaving the domain flag the node as
    boundary-adjacent. ``h`` defaults to two grid spacings.
    """
    grid = field.grid
    u = field.values
    h = 2.0 * grid.spacing if h is None else float(h)
    if not h > 0:
        raise InvalidArgumentError("probe step must be positive")
    n = grid.n_nodes
    sign = np.sign(u)
    grads = grid.nodal_gradients(u)
    gnorm = np.sqrt(np.sum(grads * grads, axis=1))
    adj = grid.adjacency
    same = np.ones(n, dtype=bool)
    for i in range(n):
        nb = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        same[i] = sign[i] != 0 and np.all(sign[nb] == sign[i])
    cand = np.flatnonzero(same & ~grid.boundary_mask)
    vals = np.full(n, np.nan)
    eligible = np.zeros(n, dtype=bool)
    badj = np.zeros(n, dtype=bool)
    flat = cand[gnorm[cand] < 1e-8]
    vals[flat] = 0.0
    eligible[flat] = True
    cand = cand[gnorm[cand] >= 1e-8]
    if cand.size:
        d = grads[cand] / gnorm[cand, None]
        x = grid.nodes[cand]
        plus = x + h * d
        minus = x - h * d
        ep, bp, inp = grid.locate(plus)
        em, bm, inm = grid.locate(minus)
        inside = inp & inm
        badj[cand[~inside]] = True
        verts_p = grid.elements[np.where(inside, ep, 0)]
        verts_m = grid.elements[np.where(inside, em, 0)]
        clear = inside & np.all(sign[verts_p] == sign[cand, None], axis=1) \
            & np.all(sign[verts_m] == sign[cand, None], axis=1)
        ok = cand[clear]
        up = np.sum(bp[clear] * u[grid.elements[ep[clear]]], axis=1)
        um = np.sum(bm[clear] * u[grid.elements[em[clear]]], axis=1)
        vals[ok] = (up - 2.0 * u[ok] + um) / h ** 2 * gnorm[ok] ** 2
        eligible[ok] = True
    return InfLaplacianResidual(values=vals, eligible=eligible, boundary_adjacent=badj)


@dataclass(frozen=True)
class BoundaryVerdict:
    """Limit boundary-operator diagnostic at one boundary node.

    ``status`` is one of ``pass``, ``fail``, ``free-boundary`` (exempt) or
    ``envelope`` (g = 0 next to g != 0; both forms reported, neither asserted).
    """

    node: int
    g: float
    status: str
    value: float
    grad_norm: float
    normal_derivative: float
    sub_value: float = math.nan
    super_value: float = math.nan


def boundary_H_residual(field, g, tol):
    """Check the limit boundary operator at boundary nodes touching ``{u != 0}``.

    ``g > 0``: ``min(|grad u| - 1, du/deta) = 0``; ``g < 0``:
    ``max(1 - |grad u|, du/deta) = 0``; ``g = 0``: ``du/deta = 0``, all within
    ``tol``.
    """
    grid = field.grid
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.boundary_nodes.size,):
        raise InvalidArgumentError("g must have one value per boundary node")
    nodes = grid.boundary_nodes
    grads = grid.nodal_gradients(field.values)[nodes]
    norms = np.sqrt(np.sum(grads * grads, axis=1))
    dn = np.sum(grads * grid.normals, axis=1)
    inactive = _inactive_nodes(grid, field.values, nodes)
    # neighbours along the boundary, for the envelope case
    nb_nonzero = np.zeros(nodes.size, dtype=bool)
    if grid.kind == "disk":
        nb_nonzero = (np.roll(g, 1) != 0) | (np.roll(g, -1) != 0)
    out = []
    for k, node in enumerate(nodes):
        sub = min(norms[k] - 1.0, dn[k])
        sup = max(1.0 - norms[k], dn[k])
        if inactive[k]:
            status, val = "free-boundary", math.nan
        elif g[k] > 0:
            val = sub
            status = "pass" if abs(val) <= tol else "fail"
        elif g[k] < 0:
            val = sup
            status = "pass" if abs(val) <= tol else "fail"
        elif nb_nonzero[k]:
            status, val = "envelope", dn[k]
        else:
            val = dn[k]
            status = "pass" if abs(val) <= tol else "fail"
        out.append(BoundaryVerdict(int(node), float(g[k]), status, float(val), float(norms[k]),
                                   float(dn[k]), float(sub), float(sup)))
    return out


def lipschitz_competitors(grid, alpha, n_samples, seed, n_cones=4):
    """Seeded feasible 1-Lipschitz competitors built from cone mixtures.

    Each sample is a maximum of unit-slope cones, volume-projected to ``alpha``
    and rescaled so that every element gradient is at most 1.
    """
    rng = np.random.default_rng(seed)
    bn = grid.boundary_nodes
    out = []
    for _ in range(n_samples):
        v = np.zeros(grid.n_nodes)
        for _ in range(n_cones):
            if rng.random() < 0.7:
                apex = grid.nodes[rng.choice(bn)]
            else:
                apex = grid.nodes[rng.integers(grid.n_nodes)]
            height = rng.uniform(0.05, 1.5)
            r = np.linalg.norm(grid.nodes - apex, axis=1)
            v = np.maximum(v, height - r)
        v = project_volume(Field(grid, np.maximum(v, 0.0)), alpha)
        lip = lipschitz_norm(v)
        if lip > 1.0:
            v = v.with_values(v.values / lip)
        out.append(v)
    return out


@dataclass(frozen=True, eq=False)
class MaximizerVerdict:
    value: float
    competitor_values: np.ndarray
    tol: float
    passed: bool
    worst_excess: float
    volume: float
    saturated: bool


def maximizer_check(u_inf, g, alpha, n_samples=200, seed=0, tol=None, tol_lip=0.05,
                    competitors=None):
    """Compare ``sum g u w`` of ``u_inf`` against feasible 1-Lipschitz competitors.

    Saturation ``volume(u_inf) = alpha`` is reported, not asserted.

    Raises
    ------
    PreconditionError
        ``u_inf`` is not Lipschitz-1 within ``tol_lip`` or exceeds the budget
        by more than one cell weight.
    """
    grid = u_inf.grid
    g = np.asarray(g, dtype=float)
    lip = lipschitz_norm(u_inf)
    vol = positive_measure(grid, u_inf.values)
    if lip > 1.0 + tol_lip:
        raise PreconditionError(f"u_inf has Lipschitz constant {lip:.6g} > 1 + {tol_lip}")
    if vol > alpha + grid.cell_weight:
        raise PreconditionError(f"u_inf has positive volume {vol:.6g} > alpha = {alpha:.6g}")
    value = boundary_term(u_inf, g)
    if tol is None:
        tol = 1e-3 * abs(value)
    if competitors is None:
        competitors = lipschitz_competitors(grid, alpha, n_samples, seed)
    vals = np.array([boundary_term(v, g) for v in competitors])
    excess = float(np.max(vals - value)) if vals.size else -math.inf
    return MaximizerVerdict(
        value=value,
        competitor_values=vals,
        tol=float(tol),
        passed=bool(excess <= tol),
        worst_excess=excess,
        volume=vol,
        saturated=abs(vol - alpha) <= grid.cell_weight,
    )
