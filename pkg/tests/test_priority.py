import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbf_taskstack.errors import CyclicOrder, IndexOutOfRange, Infeasible
from cbf_taskstack.priority import (
    ENTRYWISE,
    STEP,
    PrioritySchedule,
    PriorityStack,
    Ramp,
    insertion_gain,
    schedule_matrix,
    smoothstep,
    stack_to_matrix,
)
from cbf_taskstack.qp import QPProblem, solve_qp


def test_three_task_example_matrix():
    # T1 before T3 before T2 (0-based: 0, 2, 1)
    K = stack_to_matrix(PriorityStack.chain([0, 2, 1], kappa=2.0), 3)
    np.testing.assert_array_equal(K, [[-1, 0, 0.5], [0, 0.5, -1]])


def test_empty_order_has_no_rows():
    assert stack_to_matrix(PriorityStack(), 3).shape == (0, 3)


def test_safety_critical_pairs_are_dropped():
    stack = PriorityStack(((0, 1), (1, 2)), kappa=2.0, safety_critical={0})
    np.testing.assert_array_equal(stack_to_matrix(stack, 3), [[0, -1, 0.5]])


def test_index_and_kappa_checks():
    with pytest.raises(IndexOutOfRange):
        stack_to_matrix(PriorityStack(((0, 3),)), 3)
    with pytest.raises(ValueError):
        PriorityStack(((0, 1),), kappa=1.0)
    with pytest.raises(CyclicOrder):
        PriorityStack(((0, 0),))


def is_acyclic_by_permutation(pairs, M):
    return any(all(p.index(m) < p.index(n) for m, n in pairs) for p in itertools.permutations(range(M)))


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)).filter(lambda x: x[0] != x[1]), max_size=8))
def test_cycle_detection_matches_brute_force(pairs):
    if is_acyclic_by_permutation(pairs, 5):
        PriorityStack(tuple(pairs))
    else:
        with pytest.raises(CyclicOrder):
            PriorityStack(tuple(pairs))


@given(st.permutations(range(4)), st.floats(1.5, 100), st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_feasible_slacks_respect_every_pair(order, kappa, delta):
    K = stack_to_matrix(PriorityStack.chain(order, kappa), 4)
    delta = np.array(delta)
    if np.all(K @ delta >= 0):
        for m, n in zip(order, order[1:]):
            assert delta[m] <= delta[n] / kappa * (1 + 1e-12)


def test_smoothstep_values():
    assert smoothstep(-1.0) == 0.0 and smoothstep(0.0) == 0.0
    assert smoothstep(0.5) == 0.5
    assert smoothstep(1.0) == 1.0 and smoothstep(3.0) == 1.0


def swap_schedule(blend, kappa=2.0):
    a = PriorityStack(((1, 2),), kappa, {0})
    b = PriorityStack(((2, 1),), kappa, {0})
    return PrioritySchedule(((0.0, a), (5.0, b)), 3, transition=1.0, blend=blend)


def test_entrywise_endpoints_and_midpoint():
    s = swap_schedule(ENTRYWISE)
    np.testing.assert_array_equal(schedule_matrix(s, 5.0), [[0, -1, 0.5]])
    np.testing.assert_array_equal(schedule_matrix(s, 6.0), [[0, 0.5, -1]])
    np.testing.assert_allclose(schedule_matrix(s, 5.5), [[0, -0.25, -0.25]])


def test_entrywise_sampled_slope_bound():
    s = swap_schedule(ENTRYWISE)
    dt = 1e-3
    ts = np.arange(4.5, 6.5, dt)
    Ks = np.array([schedule_matrix(s, t) for t in ts])
    rate = np.abs(np.diff(Ks, axis=0)).max(axis=(1, 2)).max() / dt
    assert rate <= 1.5 * np.abs(Ks[-1] - Ks[0]).max() + 1e-9


@pytest.mark.parametrize("blend", ["sequential", ENTRYWISE])
def test_matrix_is_continuous_across_window(blend):
    s = swap_schedule(blend)
    dt = 1e-4
    prev = None
    for t in np.arange(4.9, 6.1, dt):
        K = schedule_matrix(s, t)
        if prev is not None and prev.shape == K.shape:
            assert np.abs(K - prev).max() <= 3.0 * dt / s.transition + 1e-12
        prev = K


def test_sequential_relaxes_before_tightening():
    s = swap_schedule("sequential", kappa=10.0)
    np.testing.assert_array_equal(schedule_matrix(s, 4.0), [[0, -1, 0.1]])
    np.testing.assert_array_equal(schedule_matrix(s, 6.0), [[0, 0.1, -1]])
    mid = schedule_matrix(s, 5.5)
    # both rows vacuous at the midpoint: only the +1/kappa entries remain
    assert np.all(mid >= 0)
    for t in np.linspace(5.0, 6.0, 101):
        assert not np.any(np.all(schedule_matrix(s, t)[:, 1:] < 0, axis=1))


@settings(max_examples=40, deadline=None)
@given(st.permutations(range(4)), st.permutations(range(4)), st.floats(0.0, 1.0))
def test_sequential_blend_keeps_positive_slacks_feasible(first, second, x):
    s = PrioritySchedule(
        ((0.0, PriorityStack.chain(first, 10.0)), (1.0, PriorityStack.chain(second, 10.0))), 4, transition=1.0
    )
    K = schedule_matrix(s, 1.0 + x)
    # some delta >= 1 satisfies K delta >= 0; the solver raises Infeasible otherwise
    A = np.vstack([K, np.eye(4)]) if K.size else np.eye(4)
    b = np.concatenate([np.zeros(K.shape[0]), np.ones(4)])
    z = solve_qp(QPProblem(np.eye(4), np.zeros(4), A, b)).z_star
    assert np.all(K @ z >= -1e-9)


def test_entrywise_swap_forces_zero_slacks_midway():
    K = schedule_matrix(swap_schedule(ENTRYWISE, kappa=10.0), 5.5)
    with pytest.raises(Infeasible):
        solve_qp(QPProblem(np.eye(3), np.zeros(3), np.vstack([K, np.eye(3)[1:]]), [0.0, 1.0, 1.0]))


def test_step_blend_switches_instantly():
    s = swap_schedule(STEP)
    np.testing.assert_array_equal(schedule_matrix(s, 4.9999), [[0, -1, 0.5]])
    np.testing.assert_array_equal(schedule_matrix(s, 5.0), [[0, 0.5, -1]])


def test_insertion_gain_examples():
    s = PrioritySchedule(((0.0, PriorityStack()),), 2, ramps=(Ramp(1, 2.0, 1.0),))
    assert insertion_gain(s, 1, 1.0) == 0.0
    assert insertion_gain(s, 1, 2.0) == 0.0
    assert insertion_gain(s, 1, 2.5) == 0.5
    assert insertion_gain(s, 1, 3.0) == 1.0
    assert insertion_gain(s, 0, 0.0) == 1.0


@given(st.floats(0, 10), st.floats(0, 10))
def test_ramps_are_monotone(t1, t2):
    ins, rem = Ramp(0, 3.0, 2.0, "insert"), Ramp(0, 6.0, 2.0, "remove")
    lo, hi = min(t1, t2), max(t1, t2)
    assert ins(lo) <= ins(hi)
    assert rem(lo) >= rem(hi)
    assert rem(6.0) == 0.0 and rem(4.0) == 1.0


def test_gain_weighting_fades_pair_with_uninserted_task():
    s = PrioritySchedule(((0.0, PriorityStack(((0, 1),), 10.0)),), 2, ramps=(Ramp(1, 1.0, 1.0),))
    np.testing.assert_allclose(schedule_matrix(s, 0.5), [[0.0, 0.1]])
    np.testing.assert_allclose(schedule_matrix(s, 1.5), [[-0.5, 0.1]])
    np.testing.assert_allclose(schedule_matrix(s, 2.5), [[-1.0, 0.1]])


def test_schedule_validation():
    with pytest.raises(ValueError):
        PrioritySchedule(((1.0, PriorityStack()), (1.0, PriorityStack())), 2)
    with pytest.raises(ValueError):
        PrioritySchedule(((0.0, PriorityStack()), (1.0, PriorityStack()), (1.5, PriorityStack())), 2)
    with pytest.raises(IndexOutOfRange):
        PrioritySchedule(((0.0, PriorityStack()),), 2, ramps=(Ramp(2, 0.0),))
