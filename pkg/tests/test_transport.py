import math
from types import SimpleNamespace

import numpy as np
import pytest

from pinf import Field, InvalidArgumentError, NotARayError, PreconditionError, build_disk, build_interval
from pinf.errors import MeasureUnstableError
from pinf.plimit import continuation
from pinf.transport import (
    DiscreteMeasure,
    active_support,
    dual_value,
    kantorovich_check,
    level_flux_measure,
    limit_measure,
    lipschitz_potentials,
    source_measure,
    trace_ray,
    transport_report,
    transport_set,
    w1_alpha,
)

SYM = [1.0, 1.0]


@pytest.fixture(scope="module")
def sym_cont():
    return continuation(build_interval(-1, 1, 200), SYM, 1.0)


def test_source_measure_interval():
    grid = build_interval(-1, 1, 10)
    mu = source_measure([2.0, 1.0], grid)
    np.testing.assert_allclose(mu.masses, [2.0, 1.0])
    np.testing.assert_allclose(mu.locations[:, 0], [-1.0, 1.0])
    assert mu.total_mass == 3.0
    only = source_measure([2.0, 1.0], grid, support=[True, False])
    assert only.total_mass == 2.0 and list(only.nodes) == [0]
    with pytest.raises(PreconditionError):
        source_measure([-1.0, 1.0], grid)


def test_source_measure_disk_total():
    grid = build_disk(4, 32)
    mu = source_measure(np.ones(32), grid)
    assert mu.total_mass == pytest.approx(2 * math.pi)


def test_measure_validation():
    with pytest.raises(InvalidArgumentError):
        DiscreteMeasure(np.zeros((2, 1)), [1.0])
    with pytest.raises(InvalidArgumentError):
        DiscreteMeasure(np.zeros((1, 1)), [-1.0])
    assert len(DiscreteMeasure.empty(2)) == 0


def test_level_flux_interval_tent():
    grid = build_interval(-1, 1, 40)
    u = Field.from_function(grid, lambda x: np.maximum(0.5 - np.abs(x[:, 0]), 0.0))
    nu = level_flux_measure(u, 4.0, 0.05)
    assert len(nu) == 2
    assert nu.total_mass == pytest.approx(2.0)
    np.testing.assert_allclose(np.sort(nu.locations[:, 0]), [-0.45, 0.45], atol=1e-12)


def test_level_flux_disk_cone():
    grid = build_disk(32, 128)
    u = Field.from_function(grid, lambda x: 1.0 - np.linalg.norm(x, axis=1))
    eps = 0.25
    nu = level_flux_measure(u, 2.0, eps)
    assert nu.total_mass == pytest.approx(2 * math.pi * (1 - eps), rel=2e-3)
    r = np.linalg.norm(nu.locations, axis=1)
    assert np.all(np.abs(r - (1 - eps)) < 0.01)


def test_level_flux_empty():
    grid = build_interval(-1, 1, 10)
    nu = level_flux_measure(Field.constant(grid, 0.0), 4.0, 0.1)
    assert len(nu) == 0 and nu.warning
    with pytest.raises(InvalidArgumentError):
        level_flux_measure(Field.constant(grid, 1.0), 4.0, 0.0)


def test_limit_measure_symmetric(sym_cont):
    nu = limit_measure(sym_cont)
    assert nu.total_mass == pytest.approx(2.0, rel=0.02)
    assert nu.diagnostics["drift"] <= 0.1
    assert nu.diagnostics["support_distance"] <= 0.02


def test_limit_measure_drift_raises():
    # a quadratic profile has a level-dependent flux |u'|^(p-1)
    grid = build_interval(-1, 1, 200)
    u = Field.from_function(grid, lambda x: np.maximum(0.5 - np.abs(x[:, 0]), 0.0) ** 2)
    rep = SimpleNamespace(u_infinity=u, schedule=[4.0])
    with pytest.raises(MeasureUnstableError) as info:
        limit_measure(rep)
    assert len(info.value.totals) == 4
    assert limit_measure(rep, drift_tol=1.0).diagnostics["drift"] > 0.1


def test_trace_ray_interval(sym_cont):
    u = sym_cont.u_infinity
    ray = trace_ray(u, 0)
    assert ray.terminal[0] == pytest.approx(-0.5, abs=0.02)
    assert ray.alignment == pytest.approx(1.0, abs=0.02)
    with pytest.raises(PreconditionError):
        trace_ray(Field.constant(u.grid, 0.0), 0)


def test_trace_ray_cone_on_disk():
    grid = build_disk(16, 64)
    u = Field.from_function(grid, lambda x: np.maximum(x[:, 0] + 0.1, 0.0))
    ray = trace_ray(u, grid.boundary_nodes[0])
    # the interpolant of the kink is positive inside the cut cells
    assert abs(ray.terminal[0] + 0.1) <= grid.spacing
    assert ray.length == pytest.approx(-ray.terminal[0] + 1.0, abs=0.01)
    assert np.all(np.diff(u.grid.interpolate(u.values, ray.points)) < 0)


def test_not_a_ray():
    grid = build_interval(-1, 1, 40)
    u = Field.from_function(grid, lambda x: 0.5 * np.maximum(-x[:, 0], 0.0))
    with pytest.raises(NotARayError) as info:
        trace_ray(u, 0)
    assert info.value.ray.alignment == pytest.approx(0.5)


def test_transport_set(sym_cont):
    ts = transport_set(sym_cont.u_infinity, SYM)
    assert len(ts.rays) == 2 and not ts.failures
    assert ts.volume == pytest.approx(1.0, abs=0.05)
    again = transport_set(sym_cont.u_infinity, SYM, workers=2)
    np.testing.assert_array_equal(ts.mask, again.mask)


def test_dual_value_examples():
    grid = build_interval(-1, 1, 20)
    mu = DiscreteMeasure([[-1.0]], [1.0])
    nu = DiscreteMeasure([[0.0]], [1.0])
    omega = Field.from_function(grid, lambda x: -x[:, 0])
    assert dual_value(omega, mu, nu) == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        dual_value(omega.with_values(3 * omega.values), mu, nu)


def test_potentials_lipschitz():
    from pinf.plimit import lipschitz_norm
    for w in lipschitz_potentials(build_disk(4, 16), 20, seed=2):
        assert lipschitz_norm(w) <= 1.0 + 1e-12


def test_kantorovich_symmetric(sym_cont):
    u = sym_cont.u_infinity
    mu = source_measure(SYM, u.grid, support=active_support(u))
    nu = limit_measure(sym_cont)
    kv = kantorovich_check(u, mu, nu, 200, seed=5)
    # atoms sit on the level eps = 0.01 max u, so the dual is short by eps * |nu|
    eps = nu.diagnostics["levels"][-1]
    assert kv.dual == pytest.approx(1.0 - eps * nu.total_mass, abs=1e-6)
    assert kv.potential_ok and not kv.failures
    assert kv.ray_cost == pytest.approx(1.0, abs=1e-6)


def test_kantorovich_unbalanced(sym_cont):
    u = sym_cont.u_infinity
    mu = source_measure([2.0, 2.0], u.grid)
    with pytest.raises(PreconditionError):
        kantorovich_check(u, mu, limit_measure(sym_cont), 5, seed=0)


def test_w1_alpha(sym_cont):
    assert w1_alpha(sym_cont.u_infinity, SYM) == pytest.approx(1.0, rel=0.02)


def test_transport_report(sym_cont):
    rep = transport_report(sym_cont, SYM, n_samples=50, seed=1)
    d = rep.to_dict()
    assert d["potential_ok"] and d["ray_failures"] == []
    assert d["ray_cost"] == pytest.approx(1.0, abs=1e-6)
    assert rep.compatibility_defect <= 0.05
    assert rep.dual_value == pytest.approx(rep.w1_alpha, rel=0.02)
