import math
from types import SimpleNamespace

import pytest

from oracle import optimum
from bpcs import instance_gen, lp_mip, search
from bpcs import master as master_mod
from bpcs.lp_mip import LpSolution
from bpcs.master import BranchDecisions, RouteKey, initial_columns
from bpcs.model import Solution, evaluate_route
from bpcs.search import (FEATURES, Node, SolverConfig, branch, branch_on_integer, early_termination,
                         finish_time_branch, relative_gap, tour_count_branch, variable_branch)


def fake(route, finishes):
    return SimpleNamespace(route=route, gamma_finishes=finishes, artificial=False)


class TestBranchingRules:

    def test_finish_time_splits_between_values(self):
        values = {0: (fake((1,), (8,)), 0.5), 1: (fake((1,), (12,)), 0.5)}
        assert finish_time_branch(values) == (1, 10)

    def test_finish_time_steps_below_the_largest(self):
        values = {0: (fake((1,), (8,)), 0.4), 1: (fake((1,), (9,)), 0.3), 2: (fake((1,), (9,)), 0.3)}
        assert finish_time_branch(values) == (1, 8)

    def test_widest_spread_wins(self):
        values = {0: (fake((1, 2), (8, 20)), 0.5), 1: (fake((1, 2), (9, 30)), 0.5)}
        assert finish_time_branch(values)[0] == 2

    def test_single_finish_gives_nothing(self):
        values = {0: (fake((1,), (8,)), 0.5), 1: (fake((1,), (8,)), 0.5)}
        assert finish_time_branch(values) is None

    def test_tour_count(self, chain):
        first = evaluate_route(chain, (1,), 0, 1)
        second = evaluate_route(chain, (2,), 0, 6)
        values = {0: (first, 0.5), 1: (second, 0.3)}
        assert tour_count_branch(values) == (1, pytest.approx(0.5))

    def test_integral_tour_counts(self, chain):
        values = {0: (evaluate_route(chain, (1,), 0, 1), 1.0)}
        assert tour_count_branch(values) is None

    def test_most_fractional_variable(self, chain):
        values = {0: (evaluate_route(chain, (1,), 0, 1), 0.3), 4: (evaluate_route(chain, (2,), 0, 6), 0.5),
                  5: (evaluate_route(chain, (3,), 0, 11), 1.0)}
        assert variable_branch(values) == 4


class TestBranch:

    def test_children_share_parent_and_are_siblings(self, chain):
        col = evaluate_route(chain, (1, 2), 0, 1)
        other = evaluate_route(chain, (1,), 0, 2)
        values = {0: (col, 0.5), 1: (other, 0.5)}
        a, b = branch(Node(0), values)
        assert a.rule == b.rule == search.RULE_FINISH
        assert a.sibling is b and b.sibling is a
        assert a.parent.id == 0 and a.depth == 1
        assert a.decisions.window(1)[1] == b.decisions.window(1)[0] - 1

    def test_without_finish_branching(self, chain):
        col = evaluate_route(chain, (1, 2), 0, 1)
        other = evaluate_route(chain, (1,), 0, 1)
        values = {0: (col, 0.5), 1: (other, 0.5)}
        a, b = branch(Node(0), values, finish_branching=False)
        assert a.rule == search.RULE_TOURS
        assert [row.sense for row in a.decisions.tour_rows] == ['<=']
        assert [row.sense for row in b.decisions.tour_rows] == ['>=']

    def test_integer_point_is_cut_off_by_its_routes(self, chain):
        col = evaluate_route(chain, (1, 2), 0, 1)
        children = branch_on_integer(Node(0), {0: (col, 1.0)}, iter(range(1, 10)))
        a, b = children
        assert not a.decisions.allows(col)
        assert b.decisions.forced_tasks == frozenset({1, 2})
        forced = Node(3, decisions=BranchDecisions().with_forced(RouteKey.of(col, False)))
        assert branch_on_integer(forced, {0: (col, 1.0)}, iter(range(4, 10))) is None

    def test_flag_is_inherited(self):
        root = Node(0)
        child = root.child(1, BranchDecisions(), search.RULE_FINISH)
        assert not child.disaggregated
        root.flagged = True
        assert child.disaggregated


class TestConfig:

    @pytest.mark.parametrize('name', FEATURES)
    def test_named_features(self, name):
        config = SolverConfig.for_features(name)
        assert config.features == name
        if name == 'basic':
            assert not (config.cuts or config.switch or config.finish_branching)
        if name == 'full':
            assert config.cuts and config.switch and config.finish_branching

    def test_from_dict(self):
        config = SolverConfig.from_dict({'features': 'no-cgc', 'time-limit': 5, 'threads': 2})
        assert not config.cuts
        assert config.switch
        assert config.time_limit == 5
        assert config.pricing_options().threads == 2

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError):
            SolverConfig.from_dict({'colour': 'red'})
        with pytest.raises(ValueError):
            SolverConfig.for_features('fast')

    def test_updated_skips_none(self):
        config = SolverConfig(time_limit=10.0)
        assert config.updated(time_limit=None, gamma=0.9).time_limit == 10.0
        assert config.updated(gamma=0.9).gamma == 0.9


def test_relative_gap():
    assert relative_gap(10.0, 9.0) == pytest.approx(0.1)
    assert relative_gap(0.5, 0.0) == pytest.approx(0.5)
    assert relative_gap(math.inf, 1.0) == math.inf
    assert relative_gap(3.0, 4.0) == 0.0


def test_chain_solves_without_waiting(chain):
    result = search.solve(chain)
    assert result.status == search.OPTIMAL
    assert result.objective == pytest.approx(0.0)
    covered = sorted(i for col in result.solution.columns for i in col.route)
    assert covered == [1, 2, 3]
    assert result.gap == pytest.approx(0.0)
    row = result.as_row('chain', timings=True)
    assert row['instance'] == 'chain' and 'runtime' in row


def test_infeasible_instance(chain):
    # one worker cannot be in two places at once
    inst = chain.replace(tasks=tuple(t.__class__(t.id, 2, 6, 6, t.weight, t.location, t.exec_times)
                                     for t in chain.tasks))
    result = search.solve(inst)
    assert result.status == search.INFEASIBLE
    assert not result.feasible
    assert math.isnan(result.objective)


def test_early_termination_uses_pool(chain):
    solution = early_termination(initial_columns(chain), chain)
    assert solution is not None
    assert solution.objective == pytest.approx(0.0)
    assert all(col.composition == (1,) for col in solution.columns)


def test_time_limit_falls_back_to_early_termination(chain):
    result = search.solve(chain, SolverConfig(time_limit=0.0))
    assert result.status == search.TIME_LIMIT
    assert result.feasible
    assert result.objective == pytest.approx(0.0)


def check_against_oracle(seed, features):
    inst = instance_gen.generate_compact(seed=seed, n_tasks=4, n_levels=2)
    expected = optimum(inst)
    result = search.solve(inst, SolverConfig.for_features(features, time_limit=120.0))
    if expected is None:
        assert result.status == search.INFEASIBLE
        return
    assert result.status == search.OPTIMAL
    assert result.objective == pytest.approx(expected[0], rel=1e-6, abs=1e-6)


@pytest.mark.parametrize('features', FEATURES)
def test_matches_enumeration(compact_seed, features):
    check_against_oracle(compact_seed, features)


@pytest.mark.slow
@pytest.mark.parametrize('features', FEATURES)
@pytest.mark.parametrize('seed', range(3, 50))
def test_matches_enumeration_many_seeds(seed, features):
    check_against_oracle(seed, features)


def test_deterministic(compact):
    a = search.solve(compact)
    b = search.solve(compact)
    assert a.status == b.status
    if a.feasible:
        assert a.objective == b.objective
        assert [c.describe() for c in a.solution.columns] == [c.describe() for c in b.solution.columns]


def test_root_cuts_never_lower_the_bound(compact_seed):
    inst = instance_gen.generate_compact(seed=compact_seed, n_tasks=5, n_levels=2)
    result = search.solve(inst, SolverConfig.for_features('full', time_limit=120.0))
    before, after = result.stats.root_lb_before_cuts, result.stats.root_lb
    if math.isfinite(before) and math.isfinite(after):
        assert after >= before - 1e-6


def test_unsolved_master_is_not_reported_optimal(chain, monkeypatch):
    monkeypatch.setattr(master_mod, 'solve_lp', lambda lp, basis=None: LpSolution(lp_mip.ITERATION_LIMIT))
    result = search.solve(chain)
    assert result.status != search.OPTIMAL
    assert result.status != search.INFEASIBLE


def test_unresolved_child_keeps_the_gap_open(chain, monkeypatch):
    bp = search.BranchAndPrice(chain)
    singles = tuple(evaluate_route(chain, (i,), 0, tl) for i, tl in ((1, 1), (2, 6), (3, 11)))

    def process(node):
        if node.parent is None:
            node.bound = -1.0
            return (node.child(1, BranchDecisions(), search.RULE_VARIABLE),
                    node.child(2, BranchDecisions(), search.RULE_VARIABLE)), True
        if node.id == 1:
            bp.incumbent = Solution(singles, {})
            bp.upper_bound = 0.0
            return (), True
        bp.lose(node, 'master LP ended with status %s' % lp_mip.ITERATION_LIMIT)
        return (), True

    monkeypatch.setattr(bp, 'process', process)
    result = bp.run()
    assert result.status == search.TIME_LIMIT
    assert result.lower_bound == -1.0
    assert result.gap > 0.0
    assert bp.lost_bounds == [-1.0]


def test_objective_never_falls_as_gamma_rises(compact_seed):
    inst = instance_gen.generate_compact(seed=compact_seed, n_tasks=4, n_levels=2)
    low = search.solve(inst, SolverConfig(gamma=0.5))
    high = search.solve(inst, SolverConfig(gamma=0.95))
    assert low.status != search.TIME_LIMIT and high.status != search.TIME_LIMIT
    if high.feasible:
        assert low.feasible
        assert low.objective <= high.objective + 1e-6


@pytest.mark.slow
def test_root_cuts_lift_the_bound_somewhere():
    lifted = []
    for seed in range(60):
        inst = instance_gen.generate_compact(seed=seed, n_tasks=5, n_levels=2)
        stats = search.solve(inst, SolverConfig.for_features('full', time_limit=120.0)).stats
        before, after = stats.root_lb_before_cuts, stats.root_lb
        if stats.cuts and math.isfinite(before) and math.isfinite(after) and after > before + 1e-6:
            lifted.append(seed)
            break
    assert lifted
