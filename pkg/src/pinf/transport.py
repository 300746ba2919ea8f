"""Transport structure of the limit profile.

Boundary source measure, level-flux measures and their small-level limit,
steepest-descent transport rays, the transport set, and instance-level
Kantorovich checks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .energy import Field, boundary_term
from .errors import (
    InvalidArgumentError,
    MeasureUnstableError,
    NotARayError,
    NumericRangeError,
    PreconditionError,
)
from .plimit import lipschitz_norm

__all__ = [
    "DiscreteMeasure",
    "Ray",
    "TransportSet",
    "KantorovichVerdict",
    "TransportReport",
    "source_measure",
    "level_flux_measure",
    "limit_measure",
    "trace_ray",
    "transport_set",
    "dual_value",
    "lipschitz_potentials",
    "kantorovich_check",
    "w1_alpha",
    "transport_report",
]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Point masses ``masses[k]`` at ``locations[k]``.

    ``nodes`` holds grid node ids when atoms sit on nodes (boundary sources),
    ``warning`` flags degenerate constructions such as an empty level set.
    """

    locations: np.ndarray
    masses: np.ndarray
    nodes: np.ndarray | None = None
    warning: str | None = None
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float)
        m = np.array(self.masses, dtype=float).reshape(-1)
        if loc.ndim == 1:
            loc = loc.reshape(-1, 1) if m.size else loc.reshape(0, 1)
        if loc.shape[0] != m.size:
            raise InvalidArgumentError("one location per mass required")
        if np.any(m < -1e-12):
            raise InvalidArgumentError("measure masses must be nonnegative")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "masses", m)

    @property
    def total_mass(self):
        return math.fsum(self.masses)

    def __len__(self):
        return self.masses.size

    @classmethod
    def empty(cls, dim, warning=None):
        return cls(np.zeros((0, dim)), np.zeros(0), warning=warning)


@dataclass(frozen=True, eq=False)
class Ray:
    anchor: int
    points: np.ndarray
    terminal: np.ndarray
    length: float
    mass: float
    drop: float

    @property
    def alignment(self):
        """``(u(anchor) - u(terminal)) / length``; 1 on an exact transport ray."""
        return self.drop / self.length if self.length > 0 else math.nan


def _require_nonnegative_g(g):
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise PreconditionError("the boundary source needs g >= 0")
    return g


def source_measure(g, grid, support=None):
    """Atoms ``g w`` at boundary nodes; ``support`` optionally restricts the nodes."""
    g = _require_nonnegative_g(g)
    if g.shape != (grid.boundary_nodes.size,):
        raise InvalidArgumentError("g must have one value per boundary node")
    m = g * grid.boundary_weights
    keep = m > 0
    if support is not None:
        keep &= np.asarray(support, dtype=bool)
    nodes = grid.boundary_nodes[keep]
    return DiscreteMeasure(grid.nodes[nodes], m[keep], nodes=nodes)


def active_support(u, level=0.0):
    """Boundary nodes where ``u > level``."""
    return u.values[u.grid.boundary_nodes] > level


def _flux_weight(norms, p):
    with np.errstate(over="raise"):
        try:
            return norms ** (p - 1.0)
        except FloatingPointError as exc:
            raise NumericRangeError(p, float(norms.max())) from exc


def level_flux_measure(u, p, eps):
    """Flux of ``|grad u|^(p-2) grad u`` through the interior level set ``{u = eps}``.

    Each interface piece (a crossing point in 1D, a marching-triangles segment
    in 2D) carries mass ``|grad u|^(p-1)`` times its measure, with the gradient
    of the containing element; this is the flux leaving ``{u > eps}``, counted
    positive. Pieces lying on the domain boundary are dropped.
    """
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    grid = u.grid
    vals = u.values
    above = vals > eps
    if not above.any():
        return DiscreteMeasure.empty(grid.dim, warning="empty level set")
    els = grid.elements
    cross = above[els].any(axis=1) & ~above[els].all(axis=1)
    eg = grid.element_gradients(vals)
    norms = np.sqrt(np.sum(eg * eg, axis=1))
    bmask = grid.boundary_mask
    locs, masses = [], []
    for e in np.flatnonzero(cross):
        ids = els[e]
        pts = []
        on_bnd = []
        for a, b in ((0, 1), (1, 2), (2, 0)) if ids.size == 3 else ((0, 1),):
            i, j = ids[a], ids[b]
            if above[i] == above[j]:
                continue
            t = (eps - vals[i]) / (vals[j] - vals[i])
            pts.append(grid.nodes[i] + t * (grid.nodes[j] - grid.nodes[i]))
            on_bnd.append((i if t == 0.0 else j if t == 1.0 else -1))
        if grid.dim == 1:
            q = pts[0]
            node = on_bnd[0]
            if node >= 0 and bmask[node]:
                continue
            locs.append(q)
            masses.append(e)
        else:
            p0, p1 = pts
            n0, n1 = on_bnd
            if n0 >= 0 and n1 >= 0 and bmask[n0] and bmask[n1]:
                continue
            length = float(np.linalg.norm(p1 - p0))
            if length == 0.0:
                continue
            locs.append(0.5 * (p0 + p1))
            masses.append((e, length))
    if not locs:
        return DiscreteMeasure.empty(grid.dim, warning="level set lies on the boundary only")
    if grid.dim == 1:
        idx = np.array(masses, dtype=int)
        m = _flux_weight(norms[idx], p)
    else:
        idx = np.array([k for k, _ in masses], dtype=int)
        m = _flux_weight(norms[idx], p) * np.array([L for _, L in masses])
    return DiscreteMeasure(np.array(locs), m)


def limit_measure(report, eps_fractions=(0.1, 0.05, 0.02, 0.01), drift_tol=0.1):
    """Small-level flux measure of the last continuation stage.

    Levels are ``eps_fractions * max u``. The returned measure uses the
    smallest level; ``diagnostics`` records the level totals, the relative
    drift between the last two, and the largest distance from an atom to the
    zero set of ``u``.

    Raises
    ------
    MeasureUnstableError
        Relative drift of the total mass above ``drift_tol`` across the last two
        levels.
    """
    u = report.u_infinity
    p = report.schedule[-1]
    umax = float(np.max(u.values))
    if not umax > 0:
        return DiscreteMeasure.empty(u.grid.dim, warning="limit profile is not positive anywhere")
    levels = [f * umax for f in eps_fractions]
    measures = [level_flux_measure(u, p, e) for e in levels]
    totals = [m.total_mass for m in measures]
    drift = abs(totals[-1] - totals[-2]) / max(abs(totals[-2]), 1e-300) if len(totals) > 1 else 0.0
    if drift > drift_tol:
        raise MeasureUnstableError(
            f"flux mass drifts by {drift:.3g} between the last two levels", totals)
    nu = measures[-1]
    zero = u.grid.nodes[u.values <= 0]
    if len(nu) and zero.size:
        dist = max(float(np.min(np.linalg.norm(zero - x, axis=1))) for x in nu.locations)
    else:
        dist = math.nan
    diag = {"levels": levels, "totals": totals, "drift": drift, "p": p,
            "support_distance": dist}
    return DiscreteMeasure(nu.locations, nu.masses, warning=nu.warning, diagnostics=diag)


def trace_ray(u_inf, y, tol_ray=0.05, mass=0.0, step=None, max_steps=None):
    """Steepest-descent polyline from boundary node ``y`` down to ``{u <= 0}``.

    Steps of half a cell follow ``-grad u`` of the element ahead; the terminal
    point is found by linear interpolation on the last step.

    Raises
    ------
    PreconditionError
        ``u_inf(y) <= 0``.
    NotARayError
        The polyline is not aligned with a unit-slope ray within ``tol_ray``.
    """
    grid = u_inf.grid
    u = u_inf.values
    if not u[y] > 0:
        raise PreconditionError(f"u({y}) = {u[y]:.6g} is not positive")
    h = 0.5 * grid.spacing if step is None else float(step)
    diam = float(np.max(np.ptp(grid.nodes, axis=0)))
    max_steps = int(4 * diam / h) + 10 if max_steps is None else max_steps
    eg = grid.element_gradients(u)
    x = grid.nodes[y].astype(float)
    d = -grid.nodal_gradients(u)[y]
    if np.linalg.norm(d) == 0:
        raise NotARayError(f"gradient vanishes at anchor {y}")
    d = d / np.linalg.norm(d)
    pts = [x.copy()]
    ux = float(u[y])
    terminal = None
    for _ in range(max_steps):
        e, _, inside = grid.locate((x + 1e-9 * h * d)[None, :])
        if not inside[0]:
            break
        ge = eg[e[0]]
        gn = float(np.linalg.norm(ge))
        if gn < 1e-12:
            break
        d = -ge / gn
        xn = x + h * d
        en, bn, inn = grid.locate(xn[None, :])
        if not inn[0]:
            break
        un = float(np.dot(bn[0], u[grid.elements[en[0]]]))
        if un <= 0:
            t = ux / (ux - un)
            terminal = x + t * (xn - x)
            pts.append(terminal)
            ux = 0.0
            break
        pts.append(xn)
        x, ux = xn, un
    if terminal is None:
        terminal = pts[-1]
    pts = np.array(pts)
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    ray = Ray(anchor=int(y), points=pts, terminal=terminal, length=length, mass=float(mass),
              drop=float(u[y]) - ux)
    if not (length > 0 and ray.alignment >= 1.0 - tol_ray):
        raise NotARayError(
            f"polyline from node {y} has slope {ray.alignment:.4g} < {1 - tol_ray:.4g}", ray)
    return ray


def _point_segment_distance(x, a, b):
    ab = b - a
    den = float(np.dot(ab, ab))
    if den == 0.0:
        return np.linalg.norm(x - a, axis=1)
    t = np.clip((x - a) @ ab / den, 0.0, 1.0)
    return np.linalg.norm(x - (a + t[:, None] * ab), axis=1)


@dataclass(frozen=True, eq=False)
class TransportSet:
    volume: float
    mask: np.ndarray
    rays: list
    failures: list


def _trace_many(u_inf, anchors, masses, tol_ray, workers):
    def one(k):
        try:
            return trace_ray(u_inf, anchors[k], tol_ray, mass=masses[k]), None
        except NotARayError as exc:
            return None, (int(anchors[k]), str(exc))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(anchors))))
    return [one(k) for k in range(len(anchors))]


def transport_set(u_inf, g, tol_ray=0.05, workers=1):
    """Nodes within half a cell of a ray from a boundary node with ``g > 0``, ``u > 0``."""
    grid = u_inf.grid
    g = _require_nonnegative_g(g)
    bn = grid.boundary_nodes
    sel = (g > 0) & (u_inf.values[bn] > 0)
    anchors = bn[sel]
    masses = (g * grid.boundary_weights)[sel]
    results = _trace_many(u_inf, anchors, masses, tol_ray, workers)
    rays = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    mask = np.zeros(grid.n_nodes, dtype=bool)
    half = 0.5 * grid.spacing
    for ray in rays:
        for a, b in zip(ray.points[:-1], ray.points[1:]):
            mask |= _point_segment_distance(grid.nodes, a, b) <= half * (1 + 1e-12)
    return TransportSet(float(np.sum(grid.weights[mask])), mask, rays, failures)


def dual_value(omega, mu, nu, tol_lip=0.05):
    """``int omega dmu - int omega dnu`` with ``omega`` interpolated at the atoms."""
    lip = lipschitz_norm(omega)
    if lip > 1.0 + tol_lip:
        raise PreconditionError(f"potential has Lipschitz constant {lip:.6g} > 1 + {tol_lip}")
    grid = omega.grid
    total = 0.0
    if len(mu):
        total += float(np.dot(mu.masses, grid.interpolate(omega.values, mu.locations)))
    if len(nu):
        total -= float(np.dot(nu.masses, grid.interpolate(omega.values, nu.locations)))
    return total


def lipschitz_potentials(grid, n_samples, seed, n_cones=4):
    """Seeded 1-Lipschitz potentials: maxima of unit-slope cones, rescaled if needed."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_samples):
        v = np.full(grid.n_nodes, -np.inf)
        for _ in range(n_cones):
            apex = grid.nodes[rng.integers(grid.n_nodes)]
            height = rng.uniform(-0.5, 1.5)
            v = np.maximum(v, height - np.linalg.norm(grid.nodes - apex, axis=1))
        if rng.random() < 0.5:
            v = np.maximum(v, 0.0)
        f = Field(grid, v)
        lip = lipschitz_norm(f)
        if lip > 1.0:
            f = f.with_values(v / lip)
        out.append(f)
    return out


@dataclass(frozen=True, eq=False)
class KantorovichVerdict:
    dual: float
    best_competitor: float
    potential_ok: bool
    ray_cost: float
    ray_cost_ok: bool
    rays: list
    failures: list

    @property
    def passed(self):
        return self.potential_ok and self.ray_cost_ok


def kantorovich_check(u_inf, mu, nu, n_samples=200, seed=0, tol=1e-3, cost_tol=0.01,
                      tol_ray=0.05, competitors=None):
    """Instance check that ``u_inf`` is a Kantorovich potential for ``(mu, nu)``.

    Two clauses: no sampled 1-Lipschitz potential beats ``u_inf`` by more than
    ``tol * |dual|``; and the ray cost ``sum mass(y) * length(ray_y)`` over the
    atoms of ``mu`` matches the dual value within ``cost_tol`` relative.

    Raises
    ------
    PreconditionError
        Total masses of ``mu`` and ``nu`` differ by more than 1%.
    """
    tm, tn = mu.total_mass, nu.total_mass
    if abs(tm - tn) > 0.01 * max(abs(tm), 1e-300):
        raise PreconditionError(f"unbalanced masses: mu {tm:.6g}, nu {tn:.6g}")
    if mu.nodes is None:
        raise InvalidArgumentError("mu must carry its boundary node ids")
    dual = dual_value(u_inf, mu, nu)
    if competitors is None:
        competitors = lipschitz_potentials(u_inf.grid, n_samples, seed)
    best = max((dual_value(w, mu, nu) for w in competitors), default=-math.inf)
    rays, failures, cost = [], [], 0.0
    for node, m in zip(mu.nodes, mu.masses):
        try:
            ray = trace_ray(u_inf, int(node), tol_ray, mass=float(m))
        except (NotARayError, PreconditionError) as exc:
            failures.append((int(node), str(exc)))
            continue
        rays.append(ray)
        cost += ray.mass * ray.length
    return KantorovichVerdict(
        dual=dual,
        best_competitor=best,
        potential_ok=bool(best <= dual + tol * abs(dual)),
        ray_cost=cost,
        ray_cost_ok=bool(not failures and abs(cost - dual) <= cost_tol * abs(dual)),
        rays=rays,
        failures=failures,
    )


def w1_alpha(u_inf, g):
    """``int u_inf g`` over the boundary, the constrained transport value."""
    g = _require_nonnegative_g(g)
    return boundary_term(u_inf, g)


@dataclass(eq=False)
class TransportReport:
    mu: DiscreteMeasure
    mu_active: DiscreteMeasure
    nu_infinity: DiscreteMeasure
    rays: list
    transport_set_volume: float
    dual_value: float
    w1_alpha: float
    compatibility_defect: float
    whole_boundary_defect: float
    kantorovich: KantorovichVerdict | None = None
    ray_failures: list = dc_field(default_factory=list)

    def to_dict(self):
        k = self.kantorovich
        return {
            "mu_total": self.mu.total_mass,
            "mu_active_total": self.mu_active.total_mass,
            "nu_total": self.nu_infinity.total_mass,
            "nu_diagnostics": {key: self.nu_infinity.diagnostics[key]
                               for key in sorted(self.nu_infinity.diagnostics)},
            "compatibility_defect": self.compatibility_defect,
            "whole_boundary_defect": self.whole_boundary_defect,
            "transport_set_volume": self.transport_set_volume,
            "dual_value": self.dual_value,
            "w1_alpha": self.w1_alpha,
            "ray_cost": None if k is None else k.ray_cost,
            "best_competitor_dual": None if k is None else k.best_competitor,
            "potential_ok": None if k is None else k.potential_ok,
            "ray_cost_ok": None if k is None else k.ray_cost_ok,
            "ray_failures": [list(f) for f in self.ray_failures],
        }


def transport_report(cont_report, g, n_samples=200, seed=0, workers=1):
    """Assemble the transport quantities for a finished continuation."""
    u = cont_report.u_infinity
    grid = u.grid
    g = _require_nonnegative_g(g)
    mu = source_measure(g, grid)
    mu_act = source_measure(g, grid, support=active_support(u))
    nu = limit_measure(cont_report)
    tset = transport_set(u, g, workers=workers)
    verdict = None
    failures = list(tset.failures)
    try:
        verdict = kantorovich_check(u, mu_act, nu, n_samples, seed)
    except PreconditionError as exc:
        failures.append((-1, str(exc)))
    return TransportReport(
        mu=mu,
        mu_active=mu_act,
        nu_infinity=nu,
        rays=tset.rays,
        transport_set_volume=tset.volume,
        dual_value=dual_value(u, mu_act, nu),
        w1_alpha=w1_alpha(u, g),
        compatibility_defect=abs(nu.total_mass - mu_act.total_mass),
        whole_boundary_defect=abs(nu.total_mass - mu.total_mass),
        kantorovich=verdict,
        ray_failures=failures,
    )
