"""Built-in regression suite on the closed-form examples.

Each criterion returns a :class:`CriterionResult`. Metrics are deterministic
so the JSON summary is reproducible; wall-clock times are kept apart.
"""

from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .energy import Field, ProblemSpec, energy
from .mesh import build_disk, build_interval, ring_nodes
from .plimit import (
    boundary_H_residual,
    continuation,
    inf_laplacian_residual,
    maximizer_check,
)
from .solver import DatumClass, check_datum, minimize
from .symmetrize import (
    boundary_symmetry_test,
    cap_symmetrize,
    check_hardy_littlewood_boundary,
    check_polya_szego,
    random_nonnegative_field,
    ring_level_counts,
)
from .transport import active_support, kantorovich_check, limit_measure, source_measure, w1_alpha

__all__ = ["CriterionResult", "Suite", "run_suite", "results_to_dict", "CRITERIA"]

SEED = 20240601


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    metrics: dict = dc_field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.cid}: {self.name}"


def _disk_angle(grid):
    xy = grid.nodes[grid.boundary_nodes]
    return np.arctan2(xy[:, 1], xy[:, 0])


class Suite:
    """Shared, lazily computed solves for the criteria."""

    def __init__(self, tol_scale=1.0):
        self.tol_scale = float(tol_scale)
        self._cache = {}

    def tol(self, t):
        return t * self.tol_scale

    def interval(self):
        if "interval" not in self._cache:
            self._cache["interval"] = build_interval(-1.0, 1.0, 400)
        return self._cache["interval"]

    def asymmetric_limit(self):
        if "asymmetric_limit" not in self._cache:
            t0 = time.perf_counter()
            rep = continuation(self.interval(), [2.0, 1.0], 1.0)
            self._cache["asymmetric_limit"] = (rep, time.perf_counter() - t0)
        return self._cache["asymmetric_limit"]


def c1_asymmetric_datum(s):
    grid = s.interval()
    x = grid.nodes[:, 0]
    t0 = time.perf_counter()
    rep = minimize(grid, ProblemSpec([2.0, 1.0], 1.0, 3.0))
    secs = time.perf_counter() - t0
    exact = math.sqrt(2.0) * np.maximum(-x, 0.0)
    sup = float(np.max(np.abs(rep.minimizer.values - exact)))
    e_err = abs(rep.breakdown.total + 4.0 * math.sqrt(2.0) / 3.0)
    ok = rep.converged and sup <= s.tol(1e-3) and e_err <= s.tol(1e-3) and secs < 10
    return ok, {"sup_error": sup, "energy": rep.breakdown.total, "energy_error": e_err,
                "volume": rep.positive_volume, "converged": rep.converged}


def c2_symmetric_datum(s):
    grid = s.interval()
    t0 = time.perf_counter()
    rep = minimize(grid, ProblemSpec([2.0, 2.0], 1.0, 8.0))
    secs = time.perf_counter() - t0
    u = rep.minimizer.values
    slopes = np.abs(grid.element_gradients(u)[:, 0])
    on = (u[grid.elements] > 0).all(axis=1)
    slope_err = float(np.max(np.abs(slopes[on] - 2.0 ** (1.0 / 7.0))))
    vol_err = abs(rep.positive_volume - 1.0)
    ok = (rep.converged and slope_err <= s.tol(1e-3) and vol_err <= s.tol(grid.cell_weight)
          and secs < 10)
    return ok, {"slope_error": slope_err, "volume": rep.positive_volume,
                "support_split": rep.support_split, "energy": rep.breakdown.total}


def saturation_configs(seed=SEED):
    """Ten seeded PositiveMass problems: six on the interval, four on the disk."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(10):
        if k < 6:
            grid = build_interval(-1.0, 1.0, 200)
            while True:
                g = rng.uniform(-1.0, 3.0, size=2)
                if g.sum() > 0.2:
                    break
            alpha = float(rng.uniform(0.3, 1.7))
            p = float(rng.choice([3.0, 4.0, 6.0]))
        else:
            grid = build_disk(8, 32)
            th = _disk_angle(grid)
            c = rng.uniform(0.3, 1.0)
            g = c + rng.uniform(0.0, 1.0) * np.cos(th - rng.uniform(-math.pi, math.pi)) \
                + rng.uniform(0.0, 0.5) * np.cos(2 * th)
            alpha = float(rng.uniform(0.3, 0.6) * math.pi)
            p = 4.0
        out.append((grid, ProblemSpec(g, alpha, p)))
    return out


def c3_saturation(s):
    gaps = []
    ok = True
    for grid, spec in saturation_configs():
        rep = minimize(grid, spec)
        gap = abs(rep.positive_volume - spec.alpha)
        gaps.append(gap)
        ok &= (check_datum(spec.g, grid) is DatumClass.POSITIVE and rep.converged
               and gap <= s.tol(grid.cell_weight))
    return ok, {"volume_gaps": gaps}


def _write_config(path, g, cmd_p="p = 3"):
    path.write_text(
        "[domain]\nkind = interval\nn_cells = 100\n"
        f"[data]\ng = {g}\n[constraint]\nalpha = 1\n"
        f"[solver]\n{cmd_p}\nseed = 0\n[output]\ndirectory = out\n", encoding="utf-8")
    return path


def c4_trichotomy(s):
    from .cli import run

    grid = build_interval(-1.0, 1.0, 100)
    codes = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        zero = _write_config(tmp / "zero.ini", "two-point 1 -1")
        neg = _write_config(tmp / "neg.ini", "constant -1", "schedule = 4 8")
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            codes["zero_solve"] = run(str(zero), "solve")
            codes["neg_limit"] = run(str(neg), "limit")
    # translation invariance for zero net flux
    spec0 = ProblemSpec([1.0, -1.0], 1.0, 3.0)
    v = Field.from_function(grid, lambda x: np.sin(3.0 * x[:, 0]) + 0.5 * x[:, 0] ** 2)
    base = energy(v, spec0).total
    shift = max(abs(energy(v.with_values(v.values - c), spec0).total - base)
                for c in (1.0, 10.0, 100.0))
    # linear decay along -a for negative net flux
    specn = ProblemSpec([-1.0, -1.0], 1.0, 3.0)
    net = float(np.dot(specn.g, grid.boundary_weights))
    lin = max(abs(energy(Field.constant(grid, -a), specn).total - a * net) /
              max(1.0, abs(a * net)) for a in (1.0, 10.0, 100.0))
    ok = (codes["zero_solve"] == 2 and codes["neg_limit"] == 2
          and shift <= s.tol(1e-12) and lin <= s.tol(1e-12))
    return ok, {"exit_codes": codes, "translation_defect": shift, "linear_defect": lin}


def c5_limit(s):
    rep, secs = s.asymmetric_limit()
    x = s.interval().nodes[:, 0]
    lip = rep.lipschitz_constant
    sup = float(np.max(np.abs(rep.u_infinity.values - np.maximum(-x, 0.0))))
    ok = abs(lip - 1.0) <= s.tol(0.05) and sup <= s.tol(1e-2) and secs < 120
    return ok, {"lipschitz": lip, "sup_error": sup,
                "slopes": [r.breakdown.gradient_sup for r in rep.reports]}


def c6_viscosity(s):
    rep, _ = s.asymmetric_limit()
    u = rep.u_infinity
    infl = inf_laplacian_residual(u)
    verdicts = boundary_H_residual(u, [2.0, 1.0], s.tol(0.05))
    left, right = verdicts[0], verdicts[1]
    ok = (infl.sup <= s.tol(0.1) and int(infl.eligible.sum()) > 0
          and left.status == "pass" and right.status == "free-boundary")
    return ok, {"inf_laplacian_sup": infl.sup, "eligible_nodes": int(infl.eligible.sum()),
                "left_status": left.status, "left_value": left.value,
                "right_status": right.status}


def c7_maximizer(s):
    rep, _ = s.asymmetric_limit()
    u = rep.u_infinity
    value = float(np.dot([2.0, 1.0], u.values[u.grid.boundary_nodes]))
    mv = maximizer_check(u, [2.0, 1.0], 1.0, 200, SEED, tol=s.tol(1e-3) * abs(value))
    return mv.passed, {"value": mv.value, "worst_excess": mv.worst_excess,
                       "best_competitor": float(np.max(mv.competitor_values)),
                       "saturated": mv.saturated}


def _ring_lp(field, p):
    grid = field.grid
    out = []
    for i in range(1, grid.params["n_r"] + 1):
        ring = field.values[ring_nodes(grid, i)]
        out.append(math.fsum(np.abs(ring) ** p))
    return np.array(out)


def c8_symmetrization(s):
    disk = build_disk(16, 64)
    fine = build_disk(32, 128)
    equi = lp = True
    ps_worst = {2: -math.inf, 4: -math.inf}
    ps_ok = hl_ok = True
    hl_worst = -math.inf
    for seed in range(SEED, SEED + 100):
        f = random_nonnegative_field(disk, seed)
        star = cap_symmetrize(f)
        vmax = float(np.max(f.values))
        for t in np.linspace(0.0, vmax, 20, endpoint=False):
            equi &= bool(np.array_equal(ring_level_counts(f, t), ring_level_counts(star, t)))
        for p in (2, 4):
            a, b = _ring_lp(f, p), _ring_lp(star, p)
            lp &= bool(np.all(np.abs(a - b) <= s.tol(1e-12) * np.maximum(a, 1e-300)))
            chk = check_polya_szego(f, p, slack=s.tol(0.02))
            ps_ok &= chk.verdict
            ps_worst[p] = max(ps_worst[p], chk.lhs / chk.rhs - 1.0)
        other = random_nonnegative_field(disk, seed + 1000)
        hl = check_hardy_littlewood_boundary(f.values[disk.boundary_nodes],
                                             other.values[disk.boundary_nodes])
        hl_ok &= hl.lhs <= hl.rhs + s.tol(1e-12) * abs(hl.rhs)
        hl_worst = max(hl_worst, hl.lhs - hl.rhs)
    fine_ok = True
    fine_worst = -math.inf
    for seed in range(SEED, SEED + 10):
        f = random_nonnegative_field(fine, seed)
        for p in (2, 4):
            chk = check_polya_szego(f, p, slack=s.tol(0.01))
            fine_ok &= chk.verdict
            fine_worst = max(fine_worst, chk.lhs / chk.rhs - 1.0)
    ok = equi and lp and ps_ok and hl_ok and fine_ok
    return ok, {"equimeasurable": equi, "lp_equal": lp, "polya_szego_excess_p2": ps_worst[2],
                "polya_szego_excess_p4": ps_worst[4], "hardy_littlewood_excess": hl_worst,
                "refined_polya_szego_excess": fine_worst}


def c9_boundary_symmetry(s):
    disk = build_disk(16, 64)
    g = 1.0 + np.cos(_disk_angle(disk))
    t0 = time.perf_counter()
    rep = minimize(disk, ProblemSpec(g, math.pi / 2.0, 8.0))
    secs = time.perf_counter() - t0
    v = boundary_symmetry_test(rep, g, s.tol(0.05))
    ok = rep.converged and v.passed and secs < 300
    return ok, {"relative_defect": v.relative_defect, "interior_defect": v.interior_defect,
                "energy": rep.breakdown.total, "volume": rep.positive_volume}


def c10_transport(s):
    rep, _ = s.asymmetric_limit()
    u = rep.u_infinity
    g = np.array([2.0, 1.0])
    nu = limit_measure(rep)
    mu_act = source_measure(g, u.grid, support=active_support(u))
    compat = abs(nu.total_mass - mu_act.total_mass) / mu_act.total_mass
    kv = kantorovich_check(u, mu_act, nu, 200, SEED, tol=s.tol(1e-3), cost_tol=s.tol(0.01))
    w1 = w1_alpha(u, g)
    ok = (compat <= s.tol(0.05) and kv.ray_cost_ok and kv.potential_ok
          and abs(w1 - 2.0) <= s.tol(0.02) * 2.0)
    return ok, {"nu_total": nu.total_mass, "active_mu_total": mu_act.total_mass,
                "compatibility": compat, "dual_value": kv.dual, "ray_cost": kv.ray_cost,
                "best_competitor": kv.best_competitor, "w1_alpha": w1,
                "whole_boundary_mu_total": source_measure(g, u.grid).total_mass}


CRITERIA = [
    (1, "asymmetric two-point datum: profile and energy (p=3)", c1_asymmetric_datum),
    (2, "symmetric two-point datum: slopes and volume (A=2, p=8)", c2_symmetric_datum),
    (3, "volume saturation on 10 seeded problems", c3_saturation),
    (4, "datum trichotomy exit codes and witnesses", c4_trichotomy),
    (5, "continuation to p=128: Lipschitz 1 and uniform limit", c5_limit),
    (6, "limit residuals: inf-Laplacian and boundary operator", c6_viscosity),
    (7, "maximizer property against 200 competitors", c7_maximizer),
    (8, "cap symmetrization suite", c8_symmetrization),
    (9, "boundary symmetry on the disk", c9_boundary_symmetry),
    (10, "transport suite at p=128", c10_transport),
]


def run_suite(selected=None, tol_scale=1.0, suite=None):
    """Run criteria 1-10 (or the ``selected`` ids)."""
    suite = suite or Suite(tol_scale)
    out = []
    for cid, name, fn in CRITERIA:
        if selected is not None and cid not in selected:
            continue
        t0 = time.perf_counter()
        ok, metrics = fn(suite)
        out.append(CriterionResult(cid, name, bool(ok), metrics, time.perf_counter() - t0))
    return out


def results_to_dict(results):
    return {"criteria": [{"id": r.cid, "name": r.name, "passed": r.passed,
                          "metrics": r.metrics} for r in results]}
