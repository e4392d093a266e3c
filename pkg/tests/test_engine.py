import csv
import json
import math

import numba
import numpy as np
import pytest
from scipy import stats

from stable_sde.engine import (Domain, PathScheme, first_exit, first_hit_before_exit,
                               run_exit_batch, simulate_path, write_path_dump)
from stable_sde.field import MatrixField, evaluate_compiled
from stable_sde.stable_driver import StableParams, driver_increments


def test_scheme_validation():
    with pytest.raises(ValueError):
        PathScheme(dt=0.0)
    with pytest.raises(ValueError):
        PathScheme(max_steps=0)
    with pytest.raises(ValueError):
        PathScheme("jump-adapted", 0.01)
    with pytest.raises(ValueError):
        PathScheme("euler")
    d = PathScheme.jump_adapted(0.1).describe()
    assert d["small_jumps"] == "gaussian-surrogate" and d["beta"] == 0.1
    assert PathScheme().describe()["exit_detection"] == "grid"


def test_domain_basics():
    b = Domain.ball([0, 0], 1.0)
    assert b.contains([0.5, 0.5]) and not b.contains([1.0, 0.0])
    assert b.volume == pytest.approx(math.pi)
    c = Domain.cube([0, 0], 1.0)
    assert c.half_widths == (0.5, 0.5) and c.volume == 1.0
    assert np.array_equal(c.contains_many([[0, 0], [0.5, 0], [0.4, -0.4]]), [True, False, True])
    assert Domain.cube([0, 0], 0.1).is_subset_of(c)
    assert Domain.ball([0, 0], 0.3).is_subset_of(c)
    assert not Domain.ball([0, 0], 0.6).is_subset_of(c)
    assert c.is_subset_of(Domain.ball([0, 0], 0.75))
    with pytest.raises(ValueError):
        Domain.ball([0], -1.0)
    with pytest.raises(ValueError):
        Domain.box([0, 0], [1.0, 0.0])


def test_identity_path_is_driver_path():
    p = StableParams(1.2)
    sch = PathScheme("fixed", 0.01)
    ps = simulate_path(MatrixField.identity(1), p, [0.0], 1.0, sch, seed=3, path_id=5)
    inc = driver_increments(p, 0.01, 100, 1, 3, 5)
    assert ps.states.shape == (101, 1)
    assert np.array_equal(ps.states[1:, 0], np.cumsum(inc[:, 0]))


def test_constant_field_is_linear_map_of_driver():
    m = np.array([[1.0, 0.3], [-0.2, 0.8]])
    p = StableParams(0.9)
    ps = simulate_path(MatrixField.constant(m), p, [0.1, -0.1], 0.5, PathScheme("fixed", 0.01),
                       seed=1, path_id=2)
    inc = driver_increments(p, 0.01, 50, 2, 1, 2)
    x = np.array([0.1, -0.1])
    ref = [x.copy()]
    for dz in inc:
        x = x + np.array([m[i, 0] * dz[0] + m[i, 1] * dz[1] for i in range(2)])
        ref.append(x)
    assert np.array_equal(ps.states, np.array(ref))


def test_path_sample_invariants(perturbed_field):
    ps = simulate_path(perturbed_field, StableParams(1.0), [0.2, 0.1], 2.0,
                       PathScheme.jump_adapted(0.2), seed=4)
    assert ps.times[0] == 0.0 and np.all(np.diff(ps.times) > 0)
    assert np.array_equal(ps.states[0], [0.2, 0.1])
    assert ps.times[-1] == pytest.approx(2.0)
    assert all(abs(j.size) > 0.2 for j in ps.jumps)
    assert len(ps.jumps) == sum(e.startswith("jump") for e in ps.events)
    assert ps.metadata["scheme"]["small_jumps"] == "gaussian-surrogate"
    # recorded jumps move the state by A(pre) e_k * size
    jump_rows = [i for i, e in enumerate(ps.events) if e.startswith("jump")]
    for i, ev, pre in zip(jump_rows, ps.jumps, ps.pre_jump_states):
        a = evaluate_compiled(perturbed_field, pre[None, :])[0]
        assert np.array_equal(ps.states[i], pre + a[:, ev.coordinate - 1] * ev.size)


def test_no_jumps_for_huge_cut():
    sch = PathScheme.jump_adapted(1e6)
    empty = sum(not simulate_path(MatrixField.identity(2), StableParams(1.0), [0, 0], 1.0, sch,
                                  seed=0, path_id=i).jumps for i in range(1000))
    assert empty >= 999


def test_step_cap_returns_partial_path():
    ps = simulate_path(MatrixField.identity(1), StableParams(1.0), [0.0], 1.0,
                       PathScheme("fixed", 0.01, max_steps=10))
    assert ps.truncated and len(ps.times) == 11


def test_huge_domain_no_exit():
    b = run_exit_batch(MatrixField.identity(2), StableParams(1.0), [0, 0], Domain.ball([0, 0], 1e6),
                       PathScheme("fixed", 0.01), 100, seed=1, t_cap=1.0)
    assert not b.exited.any() and b.capped.all()
    assert np.all(b.tau <= 1.0)


@pytest.mark.parametrize("scheme", [PathScheme("fixed", 0.01), PathScheme.jump_adapted(0.1)])
def test_exit_record_invariants(perturbed_field, scheme):
    dom = Domain.ball([0, 0], 1.0)
    b = run_exit_batch(perturbed_field, StableParams(1.0), [0.1, 0], dom, scheme, 2000, seed=2,
                       t_cap=50.0)
    assert b.exited.all()
    assert not dom.contains_many(b.state_post).any()
    assert (np.sum(b.state_pre**2, axis=1) <= 1.0).all()
    assert (b.tau <= 50.0).all()


def test_exit_by_large_jump_moves_along_column(perturbed_field):
    b = run_exit_batch(perturbed_field, StableParams(1.0), [0, 0], Domain.ball([0, 0], 1.0),
                       PathScheme.jump_adapted(0.1), 3000, seed=5)
    by_jump = np.flatnonzero(b.jump_axis >= 0)
    assert by_jump.size > 1000
    a = evaluate_compiled(perturbed_field, b.state_pre[by_jump])
    for idx, mat in zip(by_jump, a):
        rec = b.record(idx)
        assert np.array_equal(rec.state_post,
                              rec.state_pre + mat[:, rec.jump_axis - 1] * rec.jump_size)


def test_first_exit_matches_batch(perturbed_field):
    dom = Domain.ball([0, 0], 1.0)
    sch = PathScheme("fixed", 0.01)
    rec = first_exit(perturbed_field, StableParams(1.0), [0, 0], dom, sch, seed=3, path_id=17)
    b = run_exit_batch(perturbed_field, StableParams(1.0), [0, 0], dom, sch, 20, seed=3)
    assert rec.tau == b.tau[17] and np.array_equal(rec.state_post, b.state_post[17])
    with pytest.raises(ValueError):
        first_exit(perturbed_field, StableParams(1.0), [2, 0], dom, sch)


def test_results_independent_of_batching_and_threads(perturbed_field):
    args = (perturbed_field, StableParams(1.0), [0, 0], Domain.ball([0, 0], 1.0),
            PathScheme.jump_adapted(0.2))
    whole = run_exit_batch(*args, 64, seed=8)
    parts = [run_exit_batch(*args, 16, seed=8, path_offset=o) for o in (0, 16, 32, 48)]
    assert np.array_equal(whole.tau, np.concatenate([p.tau for p in parts]))
    assert np.array_equal(whole.state_post, np.concatenate([p.state_post for p in parts]))
    old = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        single = run_exit_batch(*args, 64, seed=8)
    finally:
        numba.set_num_threads(old)
    assert np.array_equal(whole.tau, single.tau)


def test_exit_monotone_in_domain(perturbed_field):
    args = (perturbed_field, StableParams(1.0), [0.1, 0.1])
    sch = PathScheme("fixed", 0.01)
    taus = [run_exit_batch(*args, Domain.ball([0, 0], r), sch, 2000, seed=6).tau
            for r in (0.5, 1.0, 2.0)]
    assert np.all(taus[0] <= taus[1]) and np.all(taus[1] <= taus[2])


def test_scaling_law_ks():
    # A = I: lam X_{t / lam^alpha} has the law of X_t
    a, lam, n = 1.5, 2.0, 100_000
    f, p = MatrixField.identity(2), StableParams(a)
    x1 = run_exit_batch(f, p, [0, 0], None, PathScheme("fixed", 0.01), n, seed=1, t_cap=1.0)
    ts = lam**-a
    xs = run_exit_batch(f, p, [0, 0], None, PathScheme("fixed", ts / 16), n, seed=2, t_cap=ts)
    assert stats.ks_2samp(x1.state_post[:, 0], lam * xs.state_post[:, 0]).pvalue > 0.01


def test_markov_restart_ks(perturbed_field):
    p, sch, n = StableParams(1.0), PathScheme("fixed", 0.01), 20_000
    one = run_exit_batch(perturbed_field, p, [0, 0], None, sch, n, seed=1, t_cap=1.0)
    half = run_exit_batch(perturbed_field, p, [0, 0], None, sch, n, seed=2, t_cap=0.5)
    two = run_exit_batch(perturbed_field, p, half.state_post, None, sch, n, seed=3, t_cap=0.5)
    for j in range(2):
        assert stats.ks_2samp(one.state_post[:, j], two.state_post[:, j]).pvalue > 0.01


def test_geometric_exit_tail():
    b = run_exit_batch(MatrixField.identity(2), StableParams(1.0), [0, 0], Domain.ball([0, 0], 1.0),
                       PathScheme("fixed", 0.001), 50_000, seed=4)
    surv = np.array([np.mean(b.tau > m) for m in range(0, 4)])
    assert np.all(surv > 0)
    ratios = surv[1:] / surv[:-1]
    assert ratios.max() < 0.9


def test_hit_at_start_and_target_equal_container():
    f, p, sch = MatrixField.identity(2), StableParams(1.0), PathScheme("fixed", 0.01)
    box = Domain.cube([0, 0], 1.0)
    hit, rec = first_hit_before_exit(f, p, [0.0, 0.0], Domain.cube([0, 0], 0.1), box, sch)
    assert hit is True and rec.tau == 0.0
    hit, rec = first_hit_before_exit(f, p, [0.2, 0.1], box, box, sch)
    assert hit is True and rec.tau == 0.0


def test_hitting_small_ball_positive():
    f, p = MatrixField.identity(2), StableParams(1.0)
    b = run_exit_batch(f, p, [0.5, 0.0], Domain.ball([0, 0], 1.0), PathScheme("fixed", 0.001),
                       100_000, seed=9, target=Domain.ball([0, 0], 0.25))
    m = b.hit.mean()
    assert m - 2.576 * math.sqrt(m * (1 - m) / b.hit.size) > 0


def test_path_dump_format(tmp_path, perturbed_field):
    paths = [simulate_path(perturbed_field, StableParams(1.0), [0, 0], 5.0,
                           PathScheme.jump_adapted(0.3), seed=1, path_id=i,
                           domain=Domain.ball([0, 0], 1.0)) for i in range(3)]
    out = write_path_dump(paths, tmp_path / "paths.csv", {"note": "x"})
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["path_id", "t", "x1", "x2", "event"]
    events = {r[4] for r in rows[1:]}
    assert events <= {"step", "jump:1", "jump:2", "exit"}
    assert "exit" in events
    meta = json.loads((tmp_path / "paths.meta.json").read_text())
    assert {"scheme", "seed", "field_hash", "note"} <= set(meta)
