"""
search.py - The Branch-Price-Cut-and-Switch tree.
=================================================
Nodes are explored best first by LP bound (ties to the smaller node id). Each
node runs column generation on its restricted master until pricing finds no
negative column. At the root, violated Chvatal-Gomory cuts are added one at a
time, re-pricing after each, up to SolverConfig.max_cuts.

An integral aggregated solution is only a candidate: feascheck decides whether
real workers can staff it. If not, the node and its sibling are flagged and the
node is solved again with the disaggregated master; flagged nodes pass the flag
on to their descendants. With the switch disabled the candidate is cut off by
branching on one of its columns instead.

Branching tries, in order: the gamma-scenario finish time of a task, the number
of tours active at one instant and finally a single route variable.

When the time limit is hit, early_termination() solves the disaggregated
master with integrality over every pooled route and all its compositions.
"""
import heapq
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from bpcs import lp_mip
from bpcs.cuts import separate
from bpcs.feascheck import CertificateError, check_flows, construct_dmp_certificate, feasibility_check
from bpcs.lp_mip import GAP_TOL, GE, INT_TOL, LE, solve_mip
from bpcs.master import BranchDecisions, ColumnPool, MasterProblem, RouteKey, SUPPORT_TOL, initial_columns
from bpcs.model import AGGREGATED, DISAGGREGATED, Solution
from bpcs.pricing import PricingOptions, PricingStats, build_graphs, price

log = logging.getLogger(__name__)

OPTIMAL = 'optimal'
TIME_LIMIT = 'time-limit'
INFEASIBLE = 'infeasible'
UNRESOLVED = 'unresolved'

FEATURES = ('full', 'basic', 'no-cgc', 'no-drmp', 'no-branching')

RULE_FINISH = 'finish'
RULE_TOURS = 'tours'
RULE_VARIABLE = 'variable'


@dataclass
class SolverConfig:
    features: str = 'full'
    cuts: bool = True
    switch: bool = True
    finish_branching: bool = True
    time_limit: float = 180.0
    max_cuts: int = 12
    cut_time_limit: float = 0.3
    heuristic_time_limit: float = 30.0
    container_size: int = 5
    delta_arcs: int = 4
    dssr: bool = True
    heuristics: bool = True
    threads: int = 1
    gamma: float = None
    alpha: float = None
    debuglevel: int = 0

    @classmethod
    def for_features(cls, name, **overrides):
        """One of the named feature configurations, with optional field overrides."""
        if name not in FEATURES:
            raise ValueError('unknown feature configuration %r (expected one of %s)' % (name, ', '.join(FEATURES)))
        switches = dict(cuts=True, switch=True, finish_branching=True)
        if name == 'basic':
            switches = dict(cuts=False, switch=False, finish_branching=False)
        elif name == 'no-cgc':
            switches['cuts'] = False
        elif name == 'no-drmp':
            switches['switch'] = False
        elif name == 'no-branching':
            switches['finish_branching'] = False
        switches.update(overrides)
        return cls(features=name, **switches)

    @classmethod
    def from_dict(cls, data):
        """Config file contents (keys as the long CLI flags, dashes allowed)."""
        known = {f.name for f in fields(cls)}
        values = {}
        for key, value in data.items():
            name = key.replace('-', '_')
            if name not in known:
                raise ValueError('unknown configuration key %r' % (key,))
            values[name] = value
        features = values.pop('features', 'full')
        return cls.for_features(features, **values)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def updated(self, **changes):
        """Copy with the non-None changes applied."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def pricing_options(self):
        return PricingOptions(self.container_size, self.delta_arcs, self.dssr, self.heuristics, self.threads)


@dataclass(eq=False)
class Node:
    id: int
    parent: object = None
    bound: float = -math.inf
    decisions: BranchDecisions = field(default_factory=BranchDecisions)
    flagged: bool = False
    status: str = 'open'
    rule: str = ''
    sibling: object = None
    depth: int = 0

    @property
    def disaggregated(self):
        """True when this node or an ancestor was flagged disaggregated-infeasible."""
        node = self
        while node is not None:
            if node.flagged:
                return True
            node = node.parent
        return False

    def child(self, node_id, decisions, rule):
        return Node(node_id, self, self.bound, decisions, False, 'open', rule, None, self.depth + 1)


@dataclass
class SearchStats:
    nodes: int = 0
    armp_nodes: int = 0
    drmp_nodes: int = 0
    disagg_infeasible: int = 0
    cuts: int = 0
    root_lb_before_cuts: float = math.nan
    root_lb: float = math.nan
    root_optimal: bool = False
    nodes_to_optimum: int = 0
    columns: int = 0
    pricing: PricingStats = field(default_factory=PricingStats)
    runtime: float = 0.0
    pricing_time: float = 0.0


@dataclass
class SolveResult:
    solution: Solution
    upper_bound: float
    lower_bound: float
    status: str
    stats: SearchStats
    features: str = 'full'

    @property
    def gap(self):
        return relative_gap(self.upper_bound, self.lower_bound)

    @property
    def objective(self):
        return self.solution.objective if self.solution is not None else math.nan

    @property
    def feasible(self):
        return self.solution is not None

    def as_row(self, instance_name='', timings=False):
        """One line of the solver statistics table."""
        s = self.stats
        row = {
            'instance': instance_name,
            'features': self.features,
            'status': self.status,
            'objective': self.upper_bound if self.feasible else math.nan,
            'lower_bound': self.lower_bound,
            'gap': self.gap,
            'nodes': s.nodes,
            'armp_nodes': s.armp_nodes,
            'drmp_nodes': s.drmp_nodes,
            'disagg_infeasible': s.disagg_infeasible,
            'cuts': s.cuts,
            'root_lb_before_cuts': s.root_lb_before_cuts,
            'root_lb': s.root_lb,
            'root_optimal': s.root_optimal,
            'nodes_to_optimum': s.nodes_to_optimum,
            'columns': s.columns,
            'pricing_calls': s.pricing.calls,
            'labels_created': s.pricing.labels_created,
            'labels_dominated': s.pricing.labels_dominated,
            'labels_extended': s.pricing.labels_extended,
        }
        if timings:
            row['runtime'] = s.runtime
            row['pricing_time'] = s.pricing_time
        return row


def relative_gap(upper, lower):
    if not math.isfinite(upper):
        return math.inf
    return max(0.0, (upper - lower) / max(abs(upper), 1.0))


def _cutoff(upper):
    return upper - GAP_TOL * max(abs(upper), 1.0) if math.isfinite(upper) else math.inf


# ---------------------------------------------------------------------------
# Branching rules

def _fractional(values):
    return [(idx, col, x) for idx, (col, x) in sorted(values.items())
            if not col.artificial and abs(x - round(x)) > INT_TOL]


def finish_time_branch(values):
    """
    (task id, tau*) for branching on a gamma-scenario finish time, or None when
    every task has a single finish time over the fractional columns.
    """
    finishes = {}
    for _, col, _ in _fractional(values):
        for task_id, g in zip(col.route, col.gamma_finishes):
            finishes.setdefault(task_id, []).append(g)
    if not finishes:
        return None
    most = max(len(set(times)) for times in finishes.values())
    candidates = [tid for tid in sorted(finishes) if len(set(finishes[tid])) == most]
    spread = {tid: float(np.std(finishes[tid])) for tid in candidates}
    best = max(spread.values())
    if best <= 0.0:
        return None
    task_id = min(tid for tid in candidates if spread[tid] == best)
    times = sorted(finishes[task_id])
    tau = int(math.floor(np.median(times)))
    if tau >= times[-1]:
        # the upper median; step down so that both sides keep a column
        tau = max(t for t in times if t < times[-1])
    return task_id, tau


def tour_count_branch(values):
    """(tau*, count) where the number of active tours is fractional and closest to one half."""
    selected = [(col, x) for col, x in values.values() if not col.artificial and x > SUPPORT_TOL]
    if not selected:
        return None
    events = sorted({col.tl for col, _ in selected} | {col.tr + 1 for col, _ in selected})
    best = None
    for tau in events:
        count = sum(x for col, x in selected if col.occupied(tau))
        frac = count - math.floor(count)
        if frac <= INT_TOL or frac >= 1.0 - INT_TOL:
            continue
        distance = abs(frac - 0.5)
        if best is None or distance < best[0] - 1e-12:
            best = (distance, tau, count)
    if best is None:
        return None
    return best[1], best[2]


def variable_branch(values):
    """Pool index of the most fractional route variable (ties to the smaller index)."""
    best = None
    for idx, col, x in _fractional(values):
        distance = abs(x - math.floor(x) - 0.5)
        if best is None or distance < best[0] - 1e-12:
            best = (distance, idx)
    return None if best is None else best[1]


def branch(node, values, finish_branching=True, ids=None, kind=AGGREGATED):
    """
    Two children cutting off the fractional master point `values`
    ({pool index: (column, value)}), or None when no rule applies.
    """
    ids = ids if ids is not None else itertools.count(node.id + 1)
    decisions = node.decisions
    pair = None
    if finish_branching:
        choice = finish_time_branch(values)
        if choice is not None:
            task_id, tau = choice
            pair = (decisions.with_window(task_id, hi=tau), decisions.with_window(task_id, lo=tau + 1), RULE_FINISH)
            log.debug('node %d: branch on finish of task %d at %d', node.id, task_id, tau)
    if pair is None:
        choice = tour_count_branch(values)
        if choice is not None:
            tau, count = choice
            pair = (decisions.with_tour_row(tau, LE, int(math.floor(count))),
                    decisions.with_tour_row(tau, GE, int(math.ceil(count))), RULE_TOURS)
            log.debug('node %d: branch on %.3f tours at %d', node.id, count, tau)
    if pair is None:
        idx = variable_branch(values)
        if idx is None:
            return None
        key = RouteKey.of(values[idx][0], kind == DISAGGREGATED)
        pair = (decisions.with_forbidden(key), decisions.with_forced(key), RULE_VARIABLE)
        log.debug('node %d: branch on route variable %d', node.id, idx)
    left, right, rule = pair
    a = node.child(next(ids), left, rule)
    b = node.child(next(ids), right, rule)
    a.sibling, b.sibling = b, a
    return a, b


def branch_on_integer(node, values, ids, kind=AGGREGATED):
    """
    Cut off an integral but disaggregated-infeasible point by forbidding or
    forcing one of its routes not forced yet. None when every route is forced.
    """
    forced = node.decisions.forced
    for idx, (col, x) in sorted(values.items()):
        if col.artificial or x <= SUPPORT_TOL:
            continue
        key = RouteKey.of(col, kind == DISAGGREGATED)
        if any(f.matches(col) for f in forced):
            continue
        a = node.child(next(ids), node.decisions.with_forbidden(key), RULE_VARIABLE)
        b = node.child(next(ids), node.decisions.with_forced(key), RULE_VARIABLE)
        a.sibling, b.sibling = b, a
        return a, b
    return None


# ---------------------------------------------------------------------------
# Early termination

def early_termination(pool, instance, time_limit=30.0):
    """
    Best integer disaggregated solution over every pooled route with all skill
    compositions of its profile, or None.
    """
    expanded = ColumnPool(col for col in pool if col.kind == AGGREGATED)
    for col in pool:
        if col.kind == DISAGGREGATED:
            expanded.add(col.aggregated())
    expanded.expand_disaggregated(instance)
    master = MasterProblem(instance, DISAGGREGATED, expanded)
    lp = master.build_lp()
    for j in range(lp.num_vars):
        lp.integer[j] = True
    result = solve_mip(lp, time_limit=time_limit)
    if not result.has_solution:
        log.info('early termination found no integer solution (%s)', result.status)
        return None
    chosen = []
    for j, idx in enumerate(master.variables):
        n = int(round(result.x[j]))
        chosen.extend([expanded[idx]] * n)
    if any(col.artificial for col in chosen):
        log.info('early termination solution still needs the artificial column')
        return None
    try:
        flows = construct_dmp_certificate(chosen, instance.workforce)
    except CertificateError as e:
        log.warning('early termination solution has no regrouping plan: %s', e)
        return None
    log.info('early termination: objective %.6f from %d columns', result.objective, len(expanded))
    return Solution(tuple(chosen), flows)


# ---------------------------------------------------------------------------
# The tree

class BranchAndPrice(object):
    """
    One solve of one instance. Holds the column pool shared by every node, the
    root cuts and the incumbent.
    """

    def __init__(self, instance, config=None, columns=None, debuglevel=None):
        self.config = config if config is not None else SolverConfig()
        self.instance = instance
        self.debuglevel = self.config.debuglevel if debuglevel is None else debuglevel
        self.pool = ColumnPool(initial_columns(instance))
        for col in columns or ():
            self.pool.add(col.aggregated())
        self.cuts = []
        self.stats = SearchStats()
        self.incumbent = None
        self.upper_bound = math.inf
        self.options = self.config.pricing_options()
        self.ids = itertools.count(1)
        self.started = None
        self.dump_lp = None
        self._root_cuts_done = False
        self.lost_bounds = []

    def set_debuglevel(self, debuglevel=0):
        self.debuglevel = debuglevel

    def lose(self, node, reason):
        """Drop a node whose bound could not be settled; its bound still limits the lower bound."""
        node.status = UNRESOLVED
        self.lost_bounds.append(node.bound)
        log.warning('node %d dropped unresolved with bound %.6f: %s', node.id, node.bound, reason)

    def out_of_time(self):
        return time.perf_counter() - self.started > self.config.time_limit

    def column_generation(self, master, graphs):
        """Price until no negative column is left; False when the time limit interrupted."""
        mode = master.kind
        rounds = 0
        while True:
            sol = master.resolve()
            if sol.status != lp_mip.OPTIMAL:
                log.warning('%s master LP not optimal: %s', mode, sol.status)
                return True
            if self.out_of_time():
                return False
            started = time.perf_counter()
            priced, stats = price(graphs, master.price_duals(), mode, self.options, self.debuglevel)
            self.stats.pricing_time += time.perf_counter() - started
            self.stats.pricing.merge(stats)
            rounds += 1
            added = sum(1 for col in priced if master.add_column(col))
            if self.debuglevel > 1:
                log.debug('column generation round %d: objective %.6f, %d new columns', rounds, master.objective,
                          added)
            if not added:
                if priced:
                    log.warning('pricing returned only pooled columns; stopping column generation')
                return True

    def root_cuts(self, master, graphs):
        """Separate, add and re-price until max_cuts or no violated cut."""
        while len(self.cuts) < self.config.max_cuts and not master.is_integral():
            cut = separate(master, time_limit=self.config.cut_time_limit, index=len(self.cuts))
            if cut is None:
                break
            self.cuts.append(cut)
            master.add_cut(cut)
            self.stats.cuts += 1
            if not self.column_generation(master, graphs):
                return False
            if not master.is_optimal:
                break
        return True

    def accept(self, columns, flows, node):
        objective = float(sum(col.expected_cost for col in columns))
        if objective >= self.upper_bound - 1e-9:
            return True
        problems = check_flows(columns, flows, self.instance.workforce)
        if problems:
            self.lose(node, 'rejected incumbent: %s' % problems[0])
            return False
        self.incumbent = Solution(tuple(columns), flows)
        self.upper_bound = objective
        self.stats.nodes_to_optimum = self.stats.nodes
        log.info('node %d: new incumbent %.6f', node.id, objective)
        return True

    def process(self, node):
        """
        Solve one node. Returns (children, finished) where finished is False when
        the time limit stopped column generation.
        """
        instance = self.instance
        kind = DISAGGREGATED if self.config.switch and node.disaggregated else AGGREGATED
        if kind == DISAGGREGATED:
            self.pool.expand_disaggregated(instance)
            self.stats.drmp_nodes += 1
        else:
            self.stats.armp_nodes += 1
        master = MasterProblem(instance, kind, self.pool, node.decisions, self.cuts, self.debuglevel)
        graphs = build_graphs(instance, node.decisions)
        if not self.column_generation(master, graphs):
            return (), False
        if node.parent is None and self.dump_lp:
            master.dump(self.dump_lp)
            self.dump_lp = None
        if node.parent is None and not self._root_cuts_done:
            self._root_cuts_done = True
            if master.is_optimal:
                self.stats.root_lb_before_cuts = master.objective
                if self.config.cuts and not self.root_cuts(master, graphs):
                    return (), False
                if master.is_optimal:
                    self.stats.root_lb = master.objective
        if not master.is_optimal:
            if master.solution.status == lp_mip.INFEASIBLE:
                node.status = INFEASIBLE
            else:
                self.lose(node, 'master LP ended with status %s' % master.solution.status)
            return (), True
        node.bound = max(node.bound, master.objective)
        if node.bound >= _cutoff(self.upper_bound):
            node.status = 'pruned'
            return (), True
        if self.debuglevel > 0:
            log.info('node %d (%s, depth %d): bound %.6f', node.id, kind, node.depth, node.bound)
        values = master.values

        if master.is_integral():
            if master.uses_artificial():
                node.status = INFEASIBLE
                return (), True
            columns = master.integer_columns()
            if kind == DISAGGREGATED:
                try:
                    flows = construct_dmp_certificate(columns, instance.workforce)
                except CertificateError as e:
                    log.error('node %d: %s', node.id, e)
                    feasible, _, flows = feasibility_check(columns, instance.workforce)
                    if not feasible:
                        node.status = INFEASIBLE
                        return (), True
                if self.accept(columns, flows, node):
                    node.status = 'integral'
                return (), True
            feasible, slack, flows = feasibility_check(columns, instance.workforce)
            if feasible:
                if self.accept(columns, flows, node):
                    node.status = 'integral'
                return (), True
            self.stats.disagg_infeasible += 1
            log.info('node %d: integral but disaggregated-infeasible (slack %s)', node.id, slack)
            if self.config.switch:
                node.flagged = True
                if node.sibling is not None:
                    node.sibling.flagged = True
                return self.process(node)
            children = branch_on_integer(node, values, self.ids, kind)
            node.status = 'branched' if children else INFEASIBLE
            return children or (), True

        children = branch(node, values, self.config.finish_branching, self.ids, kind)
        if children is None:
            self.lose(node, 'fractional point without a branching candidate')
            return (), True
        node.status = 'branched'
        return children, True

    def run(self, dump_lp=None):
        self.started = time.perf_counter()
        self.dump_lp = dump_lp
        root = Node(0)
        heap = [(root.bound, root.id, root)]
        timed_out = False
        while heap:
            bound, _, node = heapq.heappop(heap)
            if bound >= _cutoff(self.upper_bound):
                continue
            if self.out_of_time():
                heapq.heappush(heap, (bound, node.id, node))
                timed_out = True
                break
            self.stats.nodes += 1
            children, finished = self.process(node)
            if not finished:
                heapq.heappush(heap, (node.bound, node.id, node))
                timed_out = True
                break
            for child in children:
                child.bound = node.bound
                heapq.heappush(heap, (child.bound, child.id, child))

        if timed_out:
            log.info('time limit reached with %d open nodes', len(heap))
            solution = early_termination(self.pool, self.instance, self.config.heuristic_time_limit)
            if solution is not None and solution.objective < self.upper_bound - 1e-9:
                self.incumbent = solution
                self.upper_bound = solution.objective
            open_bounds = [b for b, _, _ in heap]
        else:
            open_bounds = []
        lost = [b for b in self.lost_bounds if b < _cutoff(self.upper_bound)]
        lower = min(open_bounds + lost + [self.upper_bound])
        if not math.isfinite(lower):
            lower = self.stats.root_lb if math.isfinite(self.stats.root_lb) else -math.inf
        lower = min(lower, self.upper_bound)

        self.stats.columns = len(self.pool)
        self.stats.runtime = time.perf_counter() - self.started
        if self.incumbent is None:
            status = TIME_LIMIT if timed_out or lost else INFEASIBLE
        elif relative_gap(self.upper_bound, lower) <= GAP_TOL:
            status = OPTIMAL
        else:
            status = TIME_LIMIT
        if status == OPTIMAL and math.isfinite(self.stats.root_lb):
            self.stats.root_optimal = self.stats.root_lb >= _cutoff(self.upper_bound)
        log.info('%s: status %s, objective %.6f, bound %.6f, %d nodes', self.instance.name, status, self.upper_bound,
                 lower, self.stats.nodes)
        return SolveResult(self.incumbent, self.upper_bound, lower, status, self.stats, self.config.features)


def solve(instance, config=None, columns=None, dump_lp=None):
    """
    Solve `instance` to optimality or until config.time_limit.
    config.gamma / config.alpha, when set, override the instance's levels.
    """
    config = config if config is not None else SolverConfig()
    changes = {}
    if config.gamma is not None:
        changes['gamma'] = config.gamma
    if config.alpha is not None:
        changes['alpha'] = config.alpha
    if changes:
        instance = instance.replace(**changes)
    return BranchAndPrice(instance, config, columns).run(dump_lp)

