import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stable_sde.field import MatrixField
from stable_sde.steering import (TubeSpec, best_column_step, entry_bound, plan_segment, project,
                                 rho_from_lambda, segments_to_polyline, subdivide_tube)

vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10))
mat3 = arrays(np.float64, (3, 3), elements=st.floats(-3, 3))


def test_project_examples():
    assert np.array_equal(project([1, 1], [1, 0]), [1.0, 0.0])
    v = np.array([2.0, -4.0])
    assert np.allclose(project(v, [-1.0, 2.0]), v)
    assert np.linalg.norm(v - project(v, [-1.0, 2.0])) < 1e-12
    with pytest.raises(ValueError):
        project([1, 1], [0, 0])


@settings(max_examples=300, deadline=None)
@given(vec3, vec3, st.floats(0.0, 1.0))
def test_pythagoras_and_projection_bound(v, u, eta):
    assume(np.linalg.norm(u) > 1e-3 and np.linalg.norm(v) > 1e-3)
    p = project(v, u)
    vn2 = v @ v
    assert abs(vn2 - p @ p - (v - p) @ (v - p)) <= 1e-12 * vn2 + 1e-12
    if np.linalg.norm(p) >= eta * np.linalg.norm(v):
        assert np.linalg.norm(v - p) <= math.sqrt(1 - eta * eta) * np.linalg.norm(v) + 1e-9


def test_best_column_examples():
    s = best_column_step(np.eye(2), [1.0, 0.0])
    assert s.k == 1 and s.residual_norm == 0.0 and s.contraction == 0.0
    s = best_column_step(np.diag([1.0, 2.0]), [1.0, 1.0])
    assert s.k == 2
    assert np.allclose(s.p, [0.0, 1.0]) and np.allclose(s.residual, [1.0, 0.0])
    assert s.contraction == pytest.approx(1 / math.sqrt(2), rel=1e-15)
    # brute force over both columns: largest |column . v|
    a, v = np.diag([1.0, 2.0]), np.array([1.0, 1.0])
    assert int(np.argmax([abs(a[:, j] @ v) for j in range(2)])) + 1 == s.k


def test_ties_go_to_lowest_index():
    assert best_column_step(np.eye(3), [1.0, 1.0, 1.0]).k == 1
    assert best_column_step(np.eye(3), [0.0, -2.0, 2.0]).k == 2


def test_singular_and_zero_inputs():
    with pytest.raises(np.linalg.LinAlgError):
        best_column_step(np.array([[1.0, 2.0], [2.0, 4.0]]), [1.0, 0.0])
    with pytest.raises(ValueError):
        best_column_step(np.eye(2), [0.0, 0.0])


@settings(max_examples=300, deadline=None)
@given(mat3, vec3)
def test_best_column_properties(a, v):
    assume(np.linalg.norm(v) > 1e-3)
    with np.errstate(all="ignore"):
        ok = abs(np.linalg.det(a)) > 1e-2 and np.linalg.cond(a) < 1e8
    assume(ok)
    s = best_column_step(a, v)
    b = a.T @ v
    d = a.shape[0]
    # pigeonhole
    assert abs(b[s.k - 1]) >= np.linalg.norm(b) / d * (1 - 1e-12)
    # p is a multiple of column k, orthogonal to the residual
    assert np.allclose(s.p, s.coefficient * a[:, s.k - 1], rtol=1e-12, atol=1e-12)
    assert abs(s.residual @ s.p) <= 1e-9 * np.linalg.norm(v) * np.linalg.norm(s.p) + 1e-15
    assert s.contraction < 1.0
    assert s.contraction <= s.rho_bound + 1e-12


def test_rho_from_lambda():
    assert rho_from_lambda(1.0, 1) == 0.0
    assert 0.0 < rho_from_lambda(4.0, 3) < 1.0
    with pytest.raises(ValueError):
        rho_from_lambda(0.0, 2)
    assert entry_bound(np.diag([2.0, 0.25])) == 4.0


def test_plan_identity_example():
    plan = plan_segment(MatrixField.identity(2), [0.0, 0.0], [0.3, 0.4], 5)
    assert [st.axis for st in plan] == [2, 1]
    assert [st.r for st in plan] == pytest.approx([0.4, 0.3])
    assert plan.residual_norm == 0.0


def test_plan_empty_when_at_target():
    plan = plan_segment(MatrixField.identity(2), [0.1, 0.2], [0.1, 0.2], 5)
    assert len(plan) == 0 and plan.residual_norm == 0.0


@pytest.mark.parametrize("d,spread", [(2, 0.2), (3, 0.2), (3, 0.5)])
def test_plan_constant_field_converges(rng, d, spread):
    for _ in range(100):
        m = np.eye(d) + spread * rng.uniform(-1, 1, (d, d))
        if abs(np.linalg.det(m)) < 0.1:
            continue
        tgt = rng.uniform(-2, 2, d)
        plan = plan_segment(MatrixField.constant(m), np.zeros(d), tgt, 20)
        norms = [plan.initial_norm] + [s.residual_norm for s in plan]
        # geometric decay at the observed contraction
        assert plan.residual_norm <= plan.max_contraction ** len(plan) * plan.initial_norm + 1e-15
        assert all(b <= a * plan.max_contraction * (1 + 1e-9) + 1e-15
                   for a, b in zip(norms, norms[1:]))
        pos = [n for n in norms if n > 1e-14]
        if len(pos) > 2:
            assert np.polyfit(np.arange(len(pos)), np.log(pos), 1)[0] < 0
        if spread <= 0.2:
            assert plan.residual_norm <= 1e-3 * plan.initial_norm


def test_plan_stage_lengths_bounded(perturbed_field):
    plan = plan_segment(perturbed_field, [0.0, 0.0], [0.5, -0.3], 10)
    assert plan.residual_norm < 1e-3 * plan.initial_norm
    assert plan.residual_norm <= plan.max_contraction ** len(plan) * plan.initial_norm + 1e-15


def test_tube_spec_validation():
    with pytest.raises(ValueError):
        TubeSpec.from_arrays([0.0, 1.0], [[0, 0]], 0.5)
    with pytest.raises(ValueError):
        TubeSpec.from_arrays([0.1, 1.0], [[0, 0], [1, 0]], 0.5)
    with pytest.raises(ValueError):
        TubeSpec.from_arrays([0.0, 0.0], [[0, 0], [1, 0]], 0.5)
    with pytest.raises(ValueError):
        TubeSpec.from_arrays([0.0, 1.0], [[0, 0], [1, 0]], 0.0)
    spec = TubeSpec.straight([0, 0], [1, 0], 1.0, 0.5)
    assert np.array_equal(spec.start, [0.0, 0.0]) and spec.horizon == 1.0


def test_subdivide_examples():
    short = TubeSpec.from_arrays([0.0, 1.0], [[0, 0], [0.5 / 8, 0]], 0.5)
    assert len(subdivide_tube(short)) == 1
    unit = TubeSpec.from_arrays([0.0, 1.0], [[0, 0], [1, 0]], 0.5)
    segs = subdivide_tube(unit)
    assert len(segs) >= 8 and all(s.length < 0.125 for s in segs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=2, max_size=6),
       st.floats(0.05, 2.0))
def test_subdivide_properties(points, eps):
    times = np.cumsum([0.0] + [0.5] * (len(points) - 1))
    spec = TubeSpec.from_arrays(times, points, eps)
    segs = subdivide_tube(spec)
    assert all(s.length < eps / 4 for s in segs)
    t, pts = segments_to_polyline(segs)
    assert np.all(np.diff(t) > 0)
    assert t[0] == 0.0 and t[-1] == times[-1]
    # every original vertex reappears exactly, in order
    vs = np.asarray(points, dtype=float)
    idx = [int(np.flatnonzero((pts == v).all(axis=1) & np.isin(t, times[i]))[0])
           for i, v in enumerate(vs)]
    assert idx == sorted(idx) and idx[0] == 0 and idx[-1] == len(pts) - 1
