import numpy as np
import pytest

from bpcs import instance_gen, search, simulate
from bpcs.model import DEPOT_IN, DEPOT_OUT, Solution, evaluate_route
from bpcs.simulate import PLANNED, execute_plan, quantile_scenario, sample_scenario


@pytest.fixture
def worked_plan(worked_example):
    result = search.solve(worked_example)
    assert result.feasible
    return result


def singles(chain):
    columns = tuple(evaluate_route(chain, (i,), 0, tl) for i, tl in ((1, 1), (2, 6), (3, 11)))
    flows = {(0, DEPOT_OUT, 0): 1, (0, 0, 1): 1, (0, 1, 2): 1, (0, 2, DEPOT_IN): 1}
    return Solution(columns, flows)


def fixed_scenario(instance, value=1):
    return {pair: [value] * instance.edges.n_bins for pair in instance.edges.pairs()}


class TestScenarios:

    def test_one_draw_per_pair_and_bin(self, worked_example):
        scenario = sample_scenario(worked_example, np.random.default_rng(1))
        assert set(scenario) == set(worked_example.edges.pairs())
        assert all(len(v) == 2 for v in scenario.values())
        assert set(scenario[(0, 1)]) <= {1, 2}

    def test_seeded(self, worked_example):
        a = sample_scenario(worked_example, np.random.default_rng(4))
        b = sample_scenario(worked_example, np.random.default_rng(4))
        assert a == b

    def test_quantile_scenario(self, worked_example):
        scenario = quantile_scenario(worked_example)
        assert scenario[(0, 1)] == [2, 2]
        assert scenario[(2, 3)] == [4, 4]
        assert quantile_scenario(worked_example, 0.5)[(0, 1)] == [1, 1]


class TestExecution:

    def test_planned_bins_reproduce_gamma_finishes(self, worked_example, worked_plan):
        solution = worked_plan.solution
        run = execute_plan(worked_example, solution, quantile_scenario(worked_example), PLANNED)
        for col, start, back in zip(solution.columns, run.starts, run.returns):
            assert start == col.tl
            assert back == col.tr
            for task_id, g in zip(col.route, col.gamma_finishes):
                assert run.finishes[task_id] == g
        assert all(d == 0 for d in run.postponement(solution))

    def test_late_return_postpones_next_tour(self, chain):
        solution = singles(chain)
        scenario = fixed_scenario(chain)
        scenario[(1, 0)] = [5] * chain.edges.n_bins
        run = execute_plan(chain, solution, scenario)
        assert run.returns[0] == 9
        assert run.starts == [1, 10, 15]
        assert run.postponement(solution) == [0, 4, 4]
        assert run.finishes == {1: 4, 2: 13, 3: 18}
        assert simulate.occupancy_audit(chain, solution, run) == []

    def test_audit_flags_double_booking(self, chain):
        solution = singles(chain)
        run = execute_plan(chain, solution, fixed_scenario(chain))
        flows = {(0, DEPOT_OUT, 0): 1, (0, DEPOT_OUT, 1): 1, (0, DEPOT_OUT, 2): 1}
        clash = simulate.Execution(run.finishes, [1, 4, 11], [5, 10, 15])
        problems = simulate.occupancy_audit(chain, solution, clash, flows)
        assert problems
        assert all(k == 0 and busy == 2 for k, _, busy in problems)


class TestEvaluate:

    def test_point_masses_give_the_planned_cost(self, chain):
        result = search.solve(chain)
        ev = simulate.evaluate(chain, result.solution, n_scenarios=5)
        assert ev.obj == pytest.approx(result.objective)
        assert ev.sl_mean == 1.0
        assert ev.sl_std == 0.0
        assert ev.lfe_violation == 0.0
        assert ev.histogram == {}
        assert len(ev.objectives) == 5

    def test_random_travel_times(self, worked_example, worked_plan):
        ev = simulate.evaluate(worked_example, worked_plan.solution, n_scenarios=200, rng=np.random.default_rng(2))
        assert 0.0 <= ev.sl_min <= ev.sl_mean <= 1.0
        assert ev.obj_pen <= ev.obj + 1e-9
        assert set(ev.service_levels) == {1, 2, 3}
        assert all(delay > 0 for delay in ev.histogram)
        frame = simulate.histogram_frame(ev.histogram)
        assert list(frame.columns) == ['delay', 'count']

    def test_finish_table(self, chain):
        frame = simulate.finish_table(chain, singles(chain), [fixed_scenario(chain)] * 2)
        assert len(frame) == 6
        assert list(frame['finish'][:3]) == [4, 9, 14]


class TestDeterministic:

    def test_instance_naming_and_travel(self, worked_example):
        worst = simulate.deterministic_instance(worked_example, 'worst')
        assert worst.name == 'worked-example-worst'
        assert worst.edges.travel(0, 1, 0).is_point
        assert worst.edges.travel(0, 1, 0).max_time == 2

    def test_unknown_mode(self, worked_example):
        with pytest.raises(ValueError):
            simulate.deterministic_instance(worked_example, 'typical')

    def test_assessment_matches_solver(self, worked_example, worked_plan):
        check = simulate.assess_plan(worked_example, worked_plan.solution)
        assert check.objective == pytest.approx(worked_plan.objective)
        assert check.stoch_feasible

    def test_best_case_plan_costs_more_under_true_travel(self, worked_example):
        best = simulate.solve_deterministic(worked_example, 'best')
        assert best.feasible
        check = simulate.assess_plan(worked_example, best.solution)
        assert check.objective >= best.objective - 1e-9


def test_no_value_of_information_without_uncertainty(chain):
    vss, evpi = simulate.vss_evpi(chain, n_scenarios=3, perfect_scenarios=2)
    assert vss == pytest.approx(0.0)
    assert evpi == pytest.approx(0.0)


def test_saa_stops_at_first_count_for_fixed_travel(chain):
    solution = search.solve(chain).solution
    n = simulate.saa_scenario_count([(chain, solution)], start=10, batches=3, step=10, limit=50)
    assert n == 10


def test_compare_rows(chain):
    rows = simulate.compare(chain, n_scenarios=2, gammas=[0.9], modes=('mean', 'worst'), perfect_scenarios=1)
    assert [row['travel_times'] for row in rows] == ['mean', 'worst', 'stochastic-0.9']
    assert all(row['feasible'] for row in rows)
    assert rows[-1]['vss'] == pytest.approx(0.0)
    assert rows[0]['stoch_feas']


def test_solver_plans_keep_chance_constraints(compact_seed):
    inst = instance_gen.generate_compact(seed=compact_seed, n_tasks=4)
    result = search.solve(inst)
    if not result.feasible:
        pytest.skip('no feasible plan for this seed')
    check = simulate.assess_plan(inst, result.solution)
    assert check.alpha_feasible and check.lfe_feasible
    assert check.objective == pytest.approx(result.objective, abs=1e-6)
    assert all(level >= inst.alpha - 1e-9 for level in check.service_levels.values())


def test_gamma_scenario_never_postpones_on_one_bin(compact_seed):
    inst = instance_gen.generate_compact(seed=compact_seed, n_tasks=4, n_bins=1)
    result = search.solve(inst)
    if not result.feasible:
        pytest.skip('no feasible plan for this seed')
    solution = result.solution
    run = execute_plan(inst, solution, quantile_scenario(inst))
    assert all(d == 0 for d in run.postponement(solution))
    for col, back in zip(solution.columns, run.returns):
        assert back == col.tr
        for task_id, g in zip(col.route, col.gamma_finishes):
            assert run.finishes[task_id] == g


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(5))
def test_simulated_service_level_meets_alpha(seed):
    inst = instance_gen.generate_compact(seed=seed, n_tasks=4, n_bins=1)
    result = search.solve(inst)
    if not result.feasible:
        pytest.skip('no feasible plan for this seed')
    ev = simulate.evaluate(inst, result.solution, n_scenarios=500, rng=np.random.default_rng(seed))
    assert ev.sl_mean >= inst.alpha - 0.03


@pytest.mark.slow
def test_faster_travel_never_loses_feasibility():
    counts = dict.fromkeys(('best', 'mean', 'worst'), 0)
    for seed in range(12):
        inst = instance_gen.generate_compact(seed=seed, n_tasks=4, n_bins=1)
        feasible = {mode: simulate.solve_deterministic(inst, mode).feasible for mode in counts}
        assert feasible['best'] >= feasible['mean'] >= feasible['worst']
        for mode, ok in feasible.items():
            counts[mode] += ok
    assert counts['best'] >= counts['mean'] >= counts['worst']
