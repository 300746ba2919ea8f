import math

import numpy as np
import pytest

from pinf import (
    ConstraintInactiveError,
    Field,
    InvalidArgumentError,
    NonConvergenceError,
    PreconditionError,
    SolveOptions,
    build_disk,
    build_interval,
)
from pinf.plimit import (
    boundary_H_residual,
    continuation,
    inf_laplacian_residual,
    lipschitz_competitors,
    lipschitz_norm,
    maximizer_check,
)

ASYM = [2.0, 1.0]


@pytest.fixture(scope="module")
def asym_cont(interval400):
    return continuation(interval400, ASYM, 1.0)


def test_schedule_and_limit(asym_cont, interval400):
    x = interval400.nodes[:, 0]
    assert asym_cont.schedule == [4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
    u = asym_cont.u_infinity.values
    assert np.max(np.abs(u - np.maximum(-x, 0))) <= 1e-2
    slopes = [r.breakdown.gradient_sup for r in asym_cont.reports]
    expected = [2 ** (1 / (p - 1)) for p in asym_cont.schedule]
    np.testing.assert_allclose(slopes, expected, atol=1e-6)
    assert all(a > b for a, b in zip(slopes, slopes[1:]))


def test_lipschitz_constant(asym_cont):
    assert asym_cont.lipschitz_constant == pytest.approx(1.0, abs=0.05)
    assert asym_cont.lipschitz_constant == lipschitz_norm(asym_cont.u_infinity)


def test_nonnegative_stages(asym_cont, interval400):
    for r in asym_cont.reports:
        assert r.minimizer.values.min() >= -interval400.cell_weight


def test_sup_distance_eventually_decreasing(asym_cont):
    d = asym_cont.sup_distance_consecutive
    assert len(d) == 5
    assert all(a > b for a, b in zip(d[1:], d[2:]))


def test_maximizer_value_tail(asym_cont):
    vals = [r.breakdown.boundary for r in asym_cont.reports]
    # sum g u_p behaves like 2 * 2^(1/(p-1)): increments roughly halve per doubling
    assert asym_cont.maximizer_value == pytest.approx(vals[-1])
    steps = np.abs(np.diff(vals[-3:]))
    assert steps[1] < 0.6 * steps[0]
    assert abs(vals[-1] - 2.0) <= 2e-2


def test_table_rows(asym_cont):
    rows = asym_cont.table()
    assert len(rows) == 6 and math.isnan(rows[0][4])
    assert rows[-1][0] == 128.0


def test_symmetric_datum_limit_independent_of_amplitude(interval400):
    rep = continuation(interval400, [5.0, 5.0], 1.0)
    u = rep.u_infinity.values
    slopes = np.abs(interval400.element_gradients(u)[:, 0])
    on = (u[interval400.elements] > 0).all(axis=1)
    np.testing.assert_allclose(slopes[on], 5 ** (1 / 127), atol=1e-3)
    assert np.all(np.abs(slopes[on] - 1.0) <= 2e-2)


def test_zero_mass_rejected():
    with pytest.raises(ConstraintInactiveError):
        continuation(build_interval(-1, 1, 20), [0.0, 0.0], 1.0)


@pytest.mark.parametrize("sched", [[8, 4], [1, 4], [], [4, 4]])
def test_schedule_validation(sched):
    with pytest.raises(InvalidArgumentError):
        continuation(build_interval(-1, 1, 20), ASYM, 1.0, sched)


def test_nonconverged_stage_aborts():
    grid = build_interval(-1, 1, 100)
    with pytest.raises(NonConvergenceError) as info:
        continuation(grid, ASYM, 1.0, [4, 8], SolveOptions(max_iter=2))
    assert info.value.partial is not None and not info.value.partial.complete


# lipschitz ---------------------------------------------------------------------------

def test_lipschitz_simple():
    g = build_interval(-1, 1, 10)
    assert lipschitz_norm(Field.from_function(g, lambda x: x[:, 0])) == pytest.approx(1.0)
    assert lipschitz_norm(Field.constant(g, 0.0)) == 0.0


# inf-laplacian -------------------------------------------------------------------------

def test_inf_laplacian_linear():
    g = build_interval(-1, 1, 50)
    res = inf_laplacian_residual(Field.from_function(g, lambda x: x[:, 0] + 2.0))
    assert res.eligible.sum() > 0 and res.sup <= 1e-10


def test_inf_laplacian_cone():
    g = build_disk(32, 128)
    c = np.array([0.1, -0.05])
    u = Field.from_function(g, lambda x: 2.0 - np.linalg.norm(x - c, axis=1))
    h = 2 * g.spacing
    res = inf_laplacian_residual(u, h)
    far = np.linalg.norm(g.nodes - c, axis=1) > 4 * h
    mask = res.eligible & far
    assert mask.sum() > 100
    assert np.max(np.abs(res.values[mask])) <= 0.1


def test_inf_laplacian_flags_boundary_probes():
    g = build_interval(-1, 1, 20)
    res = inf_laplacian_residual(Field.from_function(g, lambda x: x[:, 0] + 5.0))
    assert res.boundary_adjacent[1] and not res.eligible[1]


def test_inf_laplacian_flat_nodes():
    g = build_interval(-1, 1, 20)
    res = inf_laplacian_residual(Field.constant(g, 1.0))
    assert np.all(res.values[res.eligible] == 0.0)


def test_inf_laplacian_limit(asym_cont):
    res = inf_laplacian_residual(asym_cont.u_infinity)
    assert res.eligible.sum() > 0 and res.sup <= 0.1


# boundary operator ----------------------------------------------------------------------

def test_boundary_verdicts_limit(asym_cont):
    v = boundary_H_residual(asym_cont.u_infinity, ASYM, 0.05)
    assert v[0].status == "pass"
    assert v[0].normal_derivative > 0
    assert v[1].status == "free-boundary"


def test_boundary_linear_field():
    g = build_interval(-1, 1, 10)
    v = boundary_H_residual(Field.from_function(g, lambda x: x[:, 0]), [0.0, 1.0], 1e-12)
    assert v[1].status == "pass" and v[1].value == pytest.approx(0.0, abs=1e-12)
    # g = 0 at x = -1 asks for a vanishing normal derivative, which u = x violates
    assert v[0].status == "fail"


def test_boundary_negative_datum_branch():
    g = build_interval(-1, 1, 10)
    f = Field.from_function(g, lambda x: -x[:, 0] - 3.0)
    v = boundary_H_residual(f, [0.0, -1.0], 1e-12)
    # at x = 1: |u'| = 1 and du/deta = -1, so max(1 - 1, -1) = 0
    assert v[1].status == "pass"


def test_boundary_envelope_nodes():
    g = build_disk(4, 16)
    gd = np.zeros(16)
    gd[0] = 1.0
    f = Field.from_function(g, lambda x: 1.0 + x[:, 0])
    v = boundary_H_residual(f, gd, 0.05)
    assert v[1].status == "envelope" and v[15].status == "envelope"
    assert not math.isnan(v[1].sub_value) and not math.isnan(v[1].super_value)


# maximizer -----------------------------------------------------------------------------

def test_maximizer_check(asym_cont):
    u = asym_cont.u_infinity
    mv = maximizer_check(u, ASYM, 1.0, 200, seed=3)
    assert mv.passed and mv.competitor_values.size == 200
    assert mv.worst_excess <= 1e-3 * mv.value


def test_maximizer_self_and_zero(asym_cont):
    u = asym_cont.u_infinity
    mv = maximizer_check(u, ASYM, 1.0, competitors=[u, Field.constant(u.grid, 0.0)])
    assert mv.competitor_values[0] == mv.value
    assert mv.competitor_values[1] == 0.0 < mv.value


def test_maximizer_precondition(interval400):
    steep = Field.from_function(interval400, lambda x: 3 * np.maximum(-x[:, 0], 0))
    with pytest.raises(PreconditionError):
        maximizer_check(steep, ASYM, 1.0, 5, seed=0)


def test_competitors_feasible(interval400):
    for v in lipschitz_competitors(interval400, 1.0, 30, seed=7):
        assert lipschitz_norm(v) <= 1.0 + 1e-12
        assert v.values.min() >= 0
        from pinf import volume_positive
        assert volume_positive(v) <= 1.0
