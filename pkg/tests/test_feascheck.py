import numpy as np
import pytest

from oracle import all_routes, optimum, staffable
from bpcs import instance_gen
from bpcs.feascheck import (check_flows, construct_dmp_certificate, feasibility_check, predecessors,
                            successors)
from bpcs.model import DEPOT_IN, DEPOT_OUT, Workforce, evaluate_route


def test_predecessors_are_strict(chain):
    first = evaluate_route(chain, (1,), 0, 1)
    touching = evaluate_route(chain, (2,), 0, 5)
    later = evaluate_route(chain, (2,), 0, 6)
    assert first.tr == 5
    pred = predecessors([first, touching, later])
    assert pred == [[], [], [0]]
    assert successors([first, touching, later]) == [[2], [], []]


def test_single_worker_chain(chain):
    columns = [evaluate_route(chain, (i,), 0, tl) for i, tl in ((1, 1), (2, 6), (3, 11))]
    feasible, slack, flows = feasibility_check(columns, chain.workforce)
    assert feasible and slack == 0
    assert check_flows(columns, flows, chain.workforce) == []
    assert flows[(0, DEPOT_OUT, 0)] == 1
    assert flows[(0, 2, DEPOT_IN)] == 1


def test_overlapping_routes_need_slack(chain):
    columns = [evaluate_route(chain, (1,), 0, 1), evaluate_route(chain, (2,), 0, 5)]
    feasible, slack, _ = feasibility_check(columns, chain.workforce)
    assert not feasible
    assert slack == 1
    feasible, slack, flows = feasibility_check(columns, Workforce((2,)))
    assert feasible
    assert check_flows(columns, flows, Workforce((2,))) == []


@pytest.mark.parametrize('seed', range(4))
def test_check_agrees_with_brute_force(seed):
    inst = instance_gen.generate_compact(seed=seed, n_tasks=4, n_levels=2)
    routes = all_routes(inst)
    rng = np.random.default_rng(seed)
    for _ in range(8):
        size = int(rng.integers(1, min(4, len(routes)) + 1))
        picks = [routes[i] for i in rng.choice(len(routes), size=size, replace=False)]
        feasible, _, flows = feasibility_check(picks, inst.workforce)
        assert feasible == staffable(picks, inst)
        if feasible:
            assert check_flows(picks, flows, inst.workforce) == []


@pytest.mark.parametrize('seed', range(3))
def test_certificate_for_disaggregated_optimum(seed):
    inst = instance_gen.generate_compact(seed=seed, n_tasks=4, n_levels=2)
    best = optimum(inst)
    if best is None:
        pytest.skip('no feasible plan for this seed')
    _, chosen = best
    flows = construct_dmp_certificate(chosen, inst.workforce)
    assert check_flows(chosen, flows, inst.workforce) == []


def test_certificate_needs_compositions(chain):
    with pytest.raises(ValueError):
        construct_dmp_certificate([evaluate_route(chain, (1,), 0, 1)], chain.workforce)


def test_check_flows_reports_problems(chain):
    columns = [evaluate_route(chain, (1,), 0, 1).with_composition((1,)),
               evaluate_route(chain, (2,), 0, 6).with_composition((1,))]
    flows = construct_dmp_certificate(columns, chain.workforce)
    assert check_flows(columns, flows, chain.workforce) == []
    broken = dict(flows)
    del broken[(0, 0, 1)]
    assert check_flows(columns, broken, chain.workforce)
    overlapping = {(0, DEPOT_OUT, 1): 1, (0, 1, 0): 1, (0, 0, DEPOT_IN): 1}
    problems = check_flows(columns, overlapping, chain.workforce)
    assert any('overlap' in p for p in problems)
