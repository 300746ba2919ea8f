import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pinf import Field, InvalidArgumentError, PreconditionError, build_disk, build_interval
from pinf.mesh import ring_nodes
from pinf.symmetrize import (
    RingProfile,
    boundary_symmetry_test,
    cap_order,
    cap_symmetrize,
    cap_symmetrize_ring,
    check_hardy_littlewood_boundary,
    check_polya_szego,
    random_nonnegative_field,
    ring_level_counts,
    ring_profile,
)

rings = arrays(float, st.integers(2, 40), elements=st.floats(0, 10, allow_nan=False))


def test_cap_order_small():
    assert list(cap_order(4)) == [0, 1, 3, 2]
    assert list(cap_order(5, 2)) == [2, 3, 1, 4, 0]


def test_ring_example():
    out = cap_symmetrize_ring(RingProfile(1.0, [3, 1, 2, 0]))
    np.testing.assert_array_equal(out.values, [3, 2, 0, 1])


def test_constant_ring():
    out = cap_symmetrize_ring(RingProfile(0.5, np.full(8, 2.0)))
    np.testing.assert_array_equal(out.values, 2.0)


def test_cos_ring_is_fixed():
    th = 2 * math.pi * np.arange(16) / 16
    vals = 1 + np.cos(th)
    out = cap_symmetrize_ring(RingProfile(1.0, vals))
    np.testing.assert_allclose(out.values, vals, atol=1e-15)


@given(rings)
def test_multiset_and_idempotent(v):
    once = cap_symmetrize_ring(RingProfile(1.0, v)).values
    np.testing.assert_array_equal(np.sort(once), np.sort(v))
    twice = cap_symmetrize_ring(RingProfile(1.0, once)).values
    np.testing.assert_array_equal(once, twice)


@given(rings, st.data())
def test_order_preserving_and_l1_contraction(u, data):
    v = data.draw(arrays(float, u.size, elements=st.floats(0, 10, allow_nan=False)))
    us = cap_symmetrize_ring(RingProfile(1.0, u)).values
    vs = cap_symmetrize_ring(RingProfile(1.0, v)).values
    assert np.sum(np.abs(us - vs)) <= np.sum(np.abs(u - v)) + 1e-9
    w = np.maximum(u, v)
    ws = cap_symmetrize_ring(RingProfile(1.0, w)).values
    assert np.all(ws >= us - 1e-15)


@given(rings)
def test_symmetric_decreasing_shape(v):
    out = cap_symmetrize_ring(RingProfile(1.0, v)).values
    n = out.size
    dist = np.minimum(np.arange(n), n - np.arange(n))
    for a in range(n):
        for b in range(n):
            if dist[a] < dist[b]:
                assert out[a] >= out[b]


def test_field_level_counts_preserved(disk16):
    f = random_nonnegative_field(disk16, seed=4)
    s = cap_symmetrize(f)
    assert s.values[0] == f.values[0]
    for t in (0.1, 0.5, 0.9):
        np.testing.assert_array_equal(ring_level_counts(f, t), ring_level_counts(s, t))


def test_half_disk_sector(disk16):
    n_t = disk16.params["n_theta"]
    f = Field(disk16, (disk16.nodes[:, 0] > 1e-12).astype(float))
    s = cap_symmetrize(f)
    for i in range(1, disk16.params["n_r"] + 1):
        ring = s.values[ring_nodes(disk16, i)]
        on = np.flatnonzero(ring > 0)
        assert on.size == ring_level_counts(f, 0.0)[i - 1]
        assert set(on) == set(cap_order(n_t)[: on.size])


def test_ring_profile_weight(disk16):
    rp = ring_profile(Field.constant(disk16, 1.0), 16)
    assert rp.radius == 1.0
    assert rp.weight == pytest.approx(2 * math.pi / disk16.params["n_theta"])
    with pytest.raises(InvalidArgumentError):
        ring_profile(Field.constant(disk16, 1.0), 0)


def test_preconditions(disk16):
    with pytest.raises(PreconditionError):
        cap_symmetrize(Field.constant(disk16, -1.0))
    with pytest.raises(InvalidArgumentError):
        cap_symmetrize(Field.constant(build_interval(-1, 1, 4), 1.0))


@pytest.mark.parametrize("seed", range(4))
def test_polya_szego(disk16, seed):
    f = random_nonnegative_field(disk16, seed)
    for p in (2.0, 4.0):
        assert check_polya_szego(f, p).verdict


def test_hardy_littlewood_examples():
    r = check_hardy_littlewood_boundary([1, 0, 0, 0], [0, 0, 1, 0])
    assert r.lhs == 0.0 and r.rhs == pytest.approx(math.pi / 2) and r.verdict
    eq = check_hardy_littlewood_boundary([2, 1, 0, 1], [3, 1, 0, 1])
    assert eq.lhs == pytest.approx(eq.rhs)
    with pytest.raises(PreconditionError):
        check_hardy_littlewood_boundary([1, -1], [0, 0])


@given(rings, st.data())
def test_hardy_littlewood_property(u, data):
    v = data.draw(arrays(float, u.size, elements=st.floats(0, 10, allow_nan=False)))
    assert check_hardy_littlewood_boundary(u, v).verdict


# boundary symmetry ---------------------------------------------------------------------

def _cap_datum(grid):
    th = np.arctan2(grid.nodes[grid.boundary_nodes, 1], grid.nodes[grid.boundary_nodes, 0])
    return 1.0 + 0.5 * np.cos(th)


def test_symmetric_trace_passes():
    grid = build_disk(8, 32)
    g = _cap_datum(grid)
    f = Field.from_function(grid, lambda x: np.maximum(x[:, 0] + 0.2, 0.0))
    v = boundary_symmetry_test(f, g, 1e-12)
    assert v.passed and v.defect <= 1e-12


def test_rotated_trace_fails():
    grid = build_disk(8, 32)
    g = _cap_datum(grid)
    c, s = math.cos(0.8), math.sin(0.8)
    f = Field.from_function(grid, lambda x: np.maximum(c * x[:, 0] + s * x[:, 1], 0.0))
    v = boundary_symmetry_test(f, g, 0.05)
    assert not v.passed and v.relative_defect > 0.1


def test_datum_preconditions():
    grid = build_disk(4, 16)
    f = Field.constant(grid, 1.0)
    with pytest.raises(PreconditionError):
        boundary_symmetry_test(f, np.ones(16), 0.01)  # plateau, not strictly decreasing
    g = _cap_datum(grid)
    with pytest.raises(PreconditionError):
        boundary_symmetry_test(f, np.roll(g, 1), 0.01)
    with pytest.raises(PreconditionError):
        boundary_symmetry_test(f, g - 2.0, 0.01)
