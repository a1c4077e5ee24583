import math

import pytest

from conftest import chain_instance
from oracle import all_routes, optimum
from bpcs import instance_gen
from bpcs import master as master_mod
from bpcs.master import BranchDecisions, ColumnPool, MasterProblem, RouteKey, initial_columns
from bpcs.model import AGGREGATED, DISAGGREGATED, evaluate_route


def test_initial_columns_cover_every_task(chain):
    columns = initial_columns(chain)
    assert columns[-1].artificial
    singles = [col for col in columns if not col.artificial]
    assert sorted(col.route[0] for col in singles) == [1, 2, 3]
    # leaves at ES - travel
    assert [col.tl for col in singles] == [1, 6, 11]


def test_initial_master_is_feasible(chain):
    m = master_mod.build(chain, initial_columns(chain))
    sol = m.resolve()
    assert sol.status == 'optimal'
    assert not m.uses_artificial()
    # three singletons with zero waiting cost
    assert m.objective == pytest.approx(0.0)


def test_workforce_rows_only_where_occupied(chain):
    m = master_mod.build(chain, initial_columns(chain))
    m.build_lp()
    taus = sorted(tau for _, tau in m.workforce_rows)
    art = [col for col in m.pool if col.artificial][0]
    assert taus == list(range(art.tl, art.tr + 1))


def test_tight_workforce_forces_artificial():
    inst = chain_instance(per_level=(1,), spacing=1)
    m = master_mod.build(inst, initial_columns(inst))
    m.resolve()
    assert m.is_optimal
    assert m.objective > 0.0


class TestDuals:

    def test_signs_and_covering_prices(self, chain):
        m = master_mod.build(chain, initial_columns(chain))
        m.resolve()
        duals = m.price_duals()
        for task in chain.tasks:
            assert duals.mu[task.id] >= task.weight * task.ef - 1e-9
        assert all(d <= 0.0 for d in duals.delta.values())

    def test_column_reduced_costs_non_negative_at_optimum(self, chain):
        from bpcs.pricing import reduced_cost
        m = master_mod.build(chain, initial_columns(chain))
        m.resolve()
        duals = m.price_duals()
        for idx, col in m.active():
            if not col.artificial:
                assert reduced_cost(col, duals, chain) >= -1e-6


class TestPool:

    def test_duplicates_are_ignored(self, chain):
        pool = ColumnPool(initial_columns(chain))
        size = len(pool)
        assert pool.add(pool[0]) is None
        assert len(pool) == size
        assert pool.index_of(pool[1]) == 1

    def test_expand_disaggregated_once(self, chain):
        pool = ColumnPool(initial_columns(chain))
        added = pool.expand_disaggregated(chain)
        assert added == len(pool.of_kind(AGGREGATED))
        assert pool.expand_disaggregated(chain) == 0

    def test_add_column_checks_kind(self, chain):
        m = master_mod.build(chain, initial_columns(chain))
        col = evaluate_route(chain, (1, 2), 0, 1)
        with pytest.raises(ValueError):
            m.add_column(col.with_composition((1,)))
        assert m.add_column(col)
        assert not m.add_column(col)


class TestDecisions:

    def test_window_filters_columns(self, chain):
        col = evaluate_route(chain, (1,), 0, 1)
        assert col.gamma_finishes == (4,)
        assert not BranchDecisions().with_window(1, hi=3).allows(col)
        assert BranchDecisions().with_window(1, lo=4).allows(col)
        assert BranchDecisions().with_window(1, lo=2, hi=6).window(1) == (2, 6)

    def test_forced_route_excludes_overlapping_routes(self, chain):
        forced = evaluate_route(chain, (1, 2), 0, 1)
        other = evaluate_route(chain, (2,), 0, 6)
        untouched = evaluate_route(chain, (3,), 0, 11)
        decisions = BranchDecisions().with_forced(RouteKey.of(forced, False))
        assert decisions.allows(forced)
        assert not decisions.allows(other)
        assert decisions.allows(untouched)
        assert decisions.forced_tasks == frozenset({1, 2})

    def test_forbidden_route(self, chain):
        col = evaluate_route(chain, (1, 2), 0, 1)
        decisions = BranchDecisions().with_forbidden(RouteKey.of(col, False))
        assert not decisions.allows(col)
        assert not decisions.allows(col.with_composition((1,)))

    def test_filtered_columns_stay_with_zero_bound(self, chain):
        columns = initial_columns(chain)
        decisions = BranchDecisions().with_forbidden(RouteKey.of(columns[0], False))
        m = master_mod.build(chain, columns, decisions=decisions)
        lp = m.build_lp()
        assert lp.num_vars == len(columns)
        assert lp.ub[0] == 0.0
        assert math.isinf(lp.ub[1])

    def test_tour_row(self, chain):
        decisions = BranchDecisions().with_tour_row(5, '<=', 0)
        m = master_mod.build(chain, initial_columns(chain), decisions=decisions)
        m.resolve()
        assert m.tour_count(5) == pytest.approx(0.0, abs=1e-7)


def test_disaggregated_master_uses_exact_levels():
    inst = chain_instance(per_level=(1,))
    m = master_mod.build(inst, initial_columns(inst), kind=DISAGGREGATED)
    m.resolve()
    assert m.is_optimal
    assert m.capacities == inst.workforce.per_level
    assert all(col.kind == DISAGGREGATED for _, col in m.active())


def test_dump_writes_lp_text(tmp_path, chain):
    m = master_mod.build(chain, initial_columns(chain))
    m.resolve()
    path = tmp_path / 'root.lp'
    m.dump(str(path))
    text = path.read_text()
    assert 'cover1' in text and 'wf0_' in text


def test_disaggregated_bound_is_never_weaker(compact_seed):
    inst = instance_gen.generate_compact(seed=compact_seed, n_tasks=4, n_levels=2)
    columns = initial_columns(inst) + list(all_routes(inst))
    aggregated = master_mod.build(inst, columns)
    aggregated.resolve()
    exact = master_mod.build(inst, columns, kind=DISAGGREGATED)
    exact.resolve()
    assert aggregated.is_optimal and exact.is_optimal
    assert exact.objective >= aggregated.objective - 1e-6


@pytest.mark.parametrize('seed', range(6))
def test_repeated_columns_never_pay(seed):
    inst = instance_gen.generate_compact(seed=seed, n_tasks=4, n_levels=2)
    binary = optimum(inst)
    general = optimum(inst, copies=3)
    assert (binary is None) == (general is None)
    if binary is not None:
        assert general[0] == pytest.approx(binary[0], abs=1e-6)
