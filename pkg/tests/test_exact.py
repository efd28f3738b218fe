import numpy as np
import pytest

from flexsched.dispatch import all_rules, solve_dr
from flexsched.exact import SolverBudget, lower_bound, solve_exact
from flexsched.instance import parse_instance
from flexsched.state import GraphState, random_chooser, rollout, validate_schedule

from .conftest import tiny_instances
from .oracles import count_leaves, enumerate_optimum


def test_two_job_example(fig2):
    res = solve_exact(fig2)
    assert res.makespan == 8
    assert res.optimal
    validate_schedule(fig2, res.schedule)
    # the full dispatch tree of this instance is small and fully known
    assert count_leaves(fig2) == 6


def test_single_op():
    res = solve_exact(parse_instance("1 1\n1 1 1 5\n"))
    assert res.makespan == 5 and res.optimal


def test_matches_enumeration_on_tiny_instances():
    for inst in tiny_instances(12, seed=31):
        res = solve_exact(inst)
        assert res.optimal
        assert res.makespan == enumerate_optimum(inst), inst.id
        validate_schedule(inst, res.schedule)


def test_pruned_equals_unpruned():
    for inst in tiny_instances(8, seed=41):
        assert solve_exact(inst, prune=True).makespan == \
            solve_exact(inst, prune=False).makespan


def test_admissibility_against_random_rollouts():
    rng = np.random.default_rng(6)
    for inst in tiny_instances(4, seed=51):
        opt = solve_exact(inst).makespan
        for _ in range(200):
            assert rollout(inst, random_chooser(rng)).makespan >= opt


def test_dr_dominated_by_optimum():
    for inst in tiny_instances(6, seed=61):
        res = solve_exact(inst)
        assert res.optimal
        for rule in all_rules():
            assert solve_dr(inst, rule).makespan >= res.makespan


def test_lower_bound_examples(fig2):
    state = GraphState(fig2)
    assert lower_bound(state) == 8
    while not state.is_terminal:
        state.step(state.legal_actions()[0])
    assert lower_bound(state) == state.makespan


def test_lower_bound_monotone_along_paths():
    rng = np.random.default_rng(8)
    for inst in tiny_instances(6, seed=71):
        for _ in range(5):
            state = GraphState(inst)
            prev = lower_bound(state)
            while not state.is_terminal:
                actions = state.legal_actions()
                state.step(actions[int(rng.integers(len(actions)))])
                cur = lower_bound(state)
                assert cur >= prev
                prev = cur


def test_budget_exhaustion_flagged():
    inst = tiny_instances(1, seed=81)[0]
    res = solve_exact(inst, SolverBudget(max_nodes=1))
    assert not res.optimal
    validate_schedule(inst, res.schedule)
    assert res.makespan >= enumerate_optimum(inst)


def test_budget_validation():
    with pytest.raises(ValueError):
        SolverBudget(max_nodes=0)
    with pytest.raises(ValueError):
        SolverBudget(max_seconds=-1.0)
