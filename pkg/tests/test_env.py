import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensroute import env as E
from ensroute.ensemble import action_distribution
from ensroute.instances import GenConfig, Instance, Kind, ScaleSampler, gen_batch, gen_instance
from ensroute.kernels import brute_force_tsp
from ensroute.solver import make_policy, rollout


def _cvrp(coords, demands, q):
    return Instance(Kind.CVRP, coords, demands=demands, capacity=q)


def random_rollout(inst, rng, starts=None, depot_first=True):
    starts = E.default_starts(inst) if starts is None else starts
    state = E.reset(inst, starts, depot_first=depot_first)
    while not state.all_done:
        mask = E.action_mask(state)
        u = rng.random(mask.shape)
        action = np.argmax(np.where(mask, u, -1.0), axis=-1)
        state = E.step(state, action, mask)
    return state


def test_reset_tsp():
    inst = Instance(Kind.TSP, np.random.default_rng(0).random((5, 2)))
    st_ = E.reset(inst, [1, 2])
    assert st_.batch_shape == (1, 2)
    assert st_.t == 1
    assert st_.first.tolist() == [[1, 2]]


def test_reset_cvrp_reduces_load():
    inst = _cvrp([[0, 0], [1, 0], [0, 1]], [0, 4, 3], 10)
    st_ = E.reset(inst, [1])
    assert st_.load.tolist() == [[6.0]]
    assert st_.partial_tour.tolist() == [[[0, 1]]]


def test_reset_rejects_depot_start():
    inst = _cvrp([[0, 0], [1, 0]], [0, 1], 3)
    with pytest.raises(ValueError):
        E.reset(inst, [0])


@pytest.mark.parametrize("n,want", [(1500, 1000), (200, 200), (1000, 1000)])
def test_rollout_count(n, want):
    assert E.rollout_count(n) == want


def test_default_starts_capped_are_distinct():
    inst = gen_instance(GenConfig(), Kind.CVRP, np.random.default_rng(0), n=1500)
    s = E.default_starts(inst)
    assert len(s) == 1000 and len(np.unique(s)) == 1000 and s.min() >= 1


def test_mask_only_depot_when_all_visited():
    inst = _cvrp([[0, 0], [1, 0], [0, 1]], [0, 1, 1], 5)
    st_ = E.step(E.reset(inst, [1]), [[2]])
    assert E.action_mask(st_).tolist() == [[[True, False, False]]]


def test_mask_demand_exceeding_load():
    inst = _cvrp([[0, 0], [1, 0], [0, 1], [1, 1]], [0, 7, 5, 1], 10)
    mask = E.action_mask(E.reset(inst, [1]))  # load 3
    assert mask[0, 0].tolist() == [True, False, False, True]


def test_mask_depot_when_at_depot():
    inst = _cvrp([[0, 0], [1, 0], [0, 1]], [0, 3, 3], 3)
    st_ = E.step(E.reset(inst, [1]), [[0]])
    mask = E.action_mask(st_)
    assert mask[0, 0].tolist() == [False, False, True]


def test_step_depot_restores_capacity():
    inst = _cvrp([[0, 0], [1, 0], [0, 1]], [0, 5, 5], 30)
    st_ = E.step(E.reset(inst, [1]), [[0]])
    assert st_.load.tolist() == [[30.0]]


def test_step_tsp_terminal():
    inst = Instance(Kind.TSP, [[0, 0], [1, 0], [1, 1]])
    st_ = E.reset(inst, [0])
    st_ = E.step(st_, [[1]])
    assert not st_.all_done
    st_ = E.step(st_, [[2]])
    assert st_.all_done


def test_step_masked_action_raises():
    inst = Instance(Kind.TSP, [[0, 0], [1, 0], [1, 1]])
    with pytest.raises(E.InvalidActionError):
        E.step(E.reset(inst, [0]), [[0]])


def test_step_returns_new_state():
    inst = Instance(Kind.TSP, [[0, 0], [1, 0], [1, 1]])
    s0 = E.reset(inst, [0])
    s1 = E.step(s0, [[1]])
    assert s0.t == 1 and s1.t == 2 and not s0.visited[0, 0, 1]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 25), depot_first=st.booleans())
def test_random_rollouts_feasible(seed, n, depot_first):
    rng = np.random.default_rng(seed)
    inst = gen_instance(GenConfig(), Kind.CVRP, rng, n=n)
    state = random_rollout(inst, rng, depot_first=depot_first)
    tours = E.final_tours(state)
    lengths = E.batch_tour_lengths(state)
    for p in range(tours.shape[1]):
        tour = E.trim_tour(inst, tours[0, p])
        assert E.feasibility_check(inst, tour).ok
        sol = E.Solution(tour, E.tour_length(inst, tour))
        assert sol.reward == -sol.objective
        assert sol.objective == pytest.approx(lengths[0, p], rel=1e-12)
    assert np.all((state.load >= 0) & (state.load <= inst.capacity))


def test_fuzz_thousand_rollouts():
    rng = np.random.default_rng(2024)
    total = 0
    while total < 1000:
        n = int(rng.integers(5, 40))
        kind = Kind.CVRP if rng.random() < 0.7 else Kind.TSP
        inst = gen_instance(GenConfig(), kind, rng, n=n)
        state = random_rollout(inst, rng)
        for tour in E.final_tours(state)[0]:
            assert E.feasibility_check(inst, E.trim_tour(inst, tour)).ok
            total += 1


def test_masked_probability_exactly_zero():
    rng = np.random.default_rng(8)
    for _ in range(50):
        inst = gen_instance(GenConfig(), Kind.CVRP, rng, n=12)
        state = E.reset(inst, E.default_starts(inst))
        for _ in range(int(rng.integers(0, 8))):
            mask = E.action_mask(state)
            action = np.argmax(np.where(mask, rng.random(mask.shape), -1), axis=-1)
            state = E.step(state, action, mask)
        mask = E.action_mask(state)
        pi = action_distribution(rng.normal(size=mask.shape) * 5, mask)
        assert np.all(pi[~mask] == 0.0)
        np.testing.assert_allclose(pi.sum(axis=-1), 1.0, atol=1e-9)


def test_tour_length_examples():
    square = Instance(Kind.TSP, [[0, 0], [0, 1], [1, 1], [1, 0]])
    assert E.tour_length(square, [0, 1, 2, 3]) == 4.0
    single = _cvrp([[0, 0], [1, 0]], [0, 1], 1)
    assert E.tour_length(single, [0, 1, 0]) == 2.0
    assert E.tour_length(single, [1]) == 2.0  # depot return implied


def test_tour_length_rejects_infeasible():
    square = Instance(Kind.TSP, [[0, 0], [0, 1], [1, 1], [1, 0]])
    with pytest.raises(E.InvalidActionError, match="uncovered"):
        E.tour_length(square, [0, 1, 2])


def test_feasibility_reports():
    square = Instance(Kind.TSP, [[0, 0], [0, 1], [1, 1], [1, 0]])
    assert E.feasibility_check(square, [0, 1, 2]).violations == ["uncovered: 3"]
    assert "duplicate: 1" in E.feasibility_check(square, [0, 1, 1, 2, 3]).violations
    inst = _cvrp([[0, 0], [1, 0], [0, 1], [1, 1]], [0, 10, 11, 10], 30)
    rep = E.feasibility_check(inst, [0, 1, 2, 3, 0])
    assert rep.violations == ["capacity: route 1 demand 31 > 30"]


def test_greedy_not_below_optimum_n7():
    rng = np.random.default_rng(77)
    policy = make_policy("TSP", preset="tiny", local_ks=(8,), local_hidden=16, seed=3)
    insts = gen_batch(GenConfig(ScaleSampler.fixed(7)), Kind.TSP, rng, 20, 7)
    res = rollout(policy, insts)
    for inst, lengths in zip(insts, res.lengths):
        opt, _ = brute_force_tsp(inst.coords)
        assert lengths.min() >= opt - 1e-12


def test_rollouts_independent_streams():
    # sampled trajectories of one start do not depend on the other starts present
    policy = make_policy("TSP", preset="tiny", local_ks=(8,), local_hidden=16, seed=3, dtype="float64")
    inst = gen_instance(GenConfig(), Kind.TSP, np.random.default_rng(1), n=8)
    a = rollout(policy, [inst], starts=np.array([[2, 5]]), mode="greedy")
    b = rollout(policy, [inst], starts=np.array([[5]]), mode="greedy")
    np.testing.assert_array_equal(a.tours[0, 1], b.tours[0, 0])
