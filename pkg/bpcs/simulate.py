"""
simulate.py - Executing plans under sampled travel times.
=========================================================
* solve_deterministic() plans with every travel time distribution collapsed
  to one statistic (best, mean, median or worst case).
* assess_plan() recomputes a plan's exact finish time distributions under the
  true instance and reports which service requirements it keeps.
* sample_scenario() draws one travel time per location pair and time bin;
  execute_plan() runs a plan through it. Tours go out in leave-time order and a
  tour waits until every route that hands it workers is back at the depot.
* evaluate() aggregates executions into objective and service-level figures,
  vss_evpi() compares against the mean-value plan and perfect information and
  saa_scenario_count() picks a scenario count by sample average approximation.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from bpcs import search
from bpcs.feascheck import construct_dmp_certificate, feasibility_check
from bpcs.model import DEPOT_OUT, EdgeDistributions, evaluate_route

log = logging.getLogger(__name__)

STATISTICS = {
    'best': lambda d: d.min_time,
    'mean': lambda d: int(math.floor(d.expectation() + 0.5)),
    'median': lambda d: d.median,
    'worst': lambda d: d.max_time,
}
MODES = ('best', 'mean', 'median', 'worst')

REALIZED = 'realized'
PLANNED = 'planned'

SAA_START = 50
SAA_STEP = 50
SAA_BATCHES = 25
SAA_MAX = 2000


def deterministic_instance(instance, mode):
    """Copy of instance with point-mass travel times at statistic `mode`."""
    try:
        statistic = STATISTICS[mode]
    except KeyError:
        raise ValueError('unknown travel time statistic %r (expected one of %s)' % (mode, ', '.join(MODES)))
    return instance.replace(name='%s-%s' % (instance.name, mode), edges=instance.edges.point_masses(statistic))


def solve_deterministic(instance, mode, config=None):
    return search.solve(deterministic_instance(instance, mode), config)


# ---------------------------------------------------------------------------
# In-model assessment

@dataclass
class PlanAssessment:
    objective: float
    alpha_feasible: bool
    lfe_feasible: bool
    service_levels: dict = field(default_factory=dict)

    @property
    def stoch_feasible(self):
        return self.alpha_feasible and self.lfe_feasible


def assess_plan(instance, solution):
    """Exact finish distributions of the plan's routes under `instance`."""
    objective = 0.0
    alpha_ok = True
    lfe_ok = True
    levels = {}
    for col in solution.columns:
        true = evaluate_route(instance, col.route, col.profile, col.tl, col.composition, enforce=False)
        objective += true.expected_cost
        for task_id, finish in zip(true.route, true.finishes):
            task = instance.task(task_id)
            levels[task_id] = finish.prob_le(task.lf)
            alpha_ok = alpha_ok and task.meets_service_level(finish, instance.alpha)
            lfe_ok = lfe_ok and task.within_hard_cap(finish)
    return PlanAssessment(float(objective), alpha_ok, lfe_ok, levels)


# ---------------------------------------------------------------------------
# Scenarios and execution

def sample_scenario(instance, rng):
    """Realised travel time per ordered location pair and bin: {(a, b): [t_0, t_1, ...]}."""
    edges = instance.edges
    scenario = {}
    for a, b in edges.pairs():
        scenario[(a, b)] = [edges.travel(a, b, k).sample(rng) for k in range(edges.n_bins)]
    return scenario


def quantile_scenario(instance, gamma=None):
    """The scenario where every travel time sits at its gamma-quantile."""
    gamma = instance.gamma if gamma is None else gamma
    edges = instance.edges
    return {(a, b): [edges.quantile_time(a, b, k, gamma) for k in range(edges.n_bins)] for a, b in edges.pairs()}


def plan_flows(instance, solution):
    """The solution's regrouping plan, rebuilt when the solution carries none."""
    if solution.flows:
        return solution.flows
    if all(col.composition is not None for col in solution.columns):
        return construct_dmp_certificate(solution.columns, instance.workforce)
    feasible, _, flows = feasibility_check(solution.columns, instance.workforce)
    if not feasible:
        log.warning('plan cannot be staffed; executing with the best regrouping found')
    return flows


@dataclass
class Execution:
    finishes: dict
    starts: list
    returns: list

    def postponement(self, solution):
        return [start - col.tl for start, col in zip(self.starts, solution.columns)]


def _leg(scenario, instance, a, b, t):
    if a == b:
        return 0
    return int(scenario[(a, b)][instance.bins.bin_of(t)])


def execute_plan(instance, solution, scenario, bin_policy=REALIZED, flows=None):
    """
    Realised finish times of every task. With bin_policy 'planned' a leg's
    travel time is read in the bin the plan used (the bin of the previous
    finish median) instead of the bin of the actual departure. Only under
    'planned' (or with a single bin) does the gamma-quantile scenario replay
    the plan's gamma finishes without postponing a tour.
    """
    columns = solution.columns
    flows = plan_flows(instance, solution) if flows is None else flows
    feeders = [set() for _ in columns]
    for (k, src, dst), n in flows.items():
        if n > 0 and src != DEPOT_OUT and isinstance(dst, int):
            feeders[dst].add(src)
    order = sorted(range(len(columns)), key=lambda r: (columns[r].tl, r))
    starts = [0] * len(columns)
    returns = [0] * len(columns)
    finishes = {}
    depot = instance.depot
    for r in order:
        col = columns[r]
        start = max([col.tl] + [returns[j] + 1 for j in feeders[r]])
        starts[r] = start
        t = start
        location = depot
        for pos, task_id in enumerate(col.route):
            task = instance.task(task_id)
            when = t if bin_policy == REALIZED else (col.tl if pos == 0 else col.finishes[pos - 1].median)
            t = max(t + _leg(scenario, instance, location, task.location, when), task.es) + task.exec_times[col.profile]
            finishes[task_id] = t
            location = task.location
        when = t if bin_policy == REALIZED else col.finishes[-1].median
        returns[r] = t + _leg(scenario, instance, location, depot, when)
    return Execution(finishes, starts, returns)


def occupancy_audit(instance, solution, execution, flows=None):
    """(level, tau, busy) wherever more workers of a level are out than exist."""
    flows = plan_flows(instance, solution) if flows is None else flows
    levels = instance.levels
    inflow = [[0] * levels for _ in solution.columns]
    for (k, src, dst), n in flows.items():
        if isinstance(dst, int):
            inflow[dst][k] += n
    if not solution.columns:
        return []
    first = min(execution.starts)
    last = max(execution.returns)
    busy = np.zeros((levels, last - first + 1), dtype=int)
    for r in range(len(solution.columns)):
        a = execution.starts[r] - first
        b = execution.returns[r] - first
        for k in range(levels):
            busy[k, a:b + 1] += inflow[r][k]
    problems = []
    for k in range(levels):
        for offset in np.nonzero(busy[k] > instance.workforce.per_level[k])[0]:
            problems.append((k, first + int(offset), int(busy[k, offset])))
    return problems


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class Evaluation:
    obj: float
    obj_pen: float
    sl_mean: float
    sl_std: float
    sl_min: float
    lfe_violation: float
    service_levels: dict
    histogram: dict
    objectives: np.ndarray
    postponed: float = 0.0


def finish_table(instance, solution, scenarios, bin_policy=REALIZED):
    """One row per (scenario, task) with the realised finish time."""
    flows = plan_flows(instance, solution)
    rows = []
    postponed = 0
    for n, scenario in enumerate(scenarios):
        run = execute_plan(instance, solution, scenario, bin_policy, flows)
        postponed += sum(1 for d in run.postponement(solution) if d > 0)
        for task_id in sorted(run.finishes):
            task = instance.task(task_id)
            rows.append((n, task_id, run.finishes[task_id], task.lf, task.lf_e, task.ef, task.weight))
    frame = pd.DataFrame(rows, columns=['scenario', 'task', 'finish', 'lf', 'lf_e', 'ef', 'weight'])
    frame.attrs['postponed'] = postponed / max(len(scenarios), 1)
    return frame


def evaluate(instance, solution, n_scenarios=500, rng=None, scenarios=None, bin_policy=REALIZED):
    """Simulated objective and service levels of a plan over sampled scenarios."""
    if scenarios is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        scenarios = [sample_scenario(instance, rng) for _ in range(n_scenarios)]
    frame = finish_table(instance, solution, scenarios, bin_policy)
    late = (frame['finish'] - frame['lf']).clip(lower=0)
    frame['penalty'] = frame['weight'] * late * late
    frame['cost'] = frame['weight'] * (frame['finish'] - frame['ef']) + frame['penalty']
    frame['on_time'] = frame['finish'] <= frame['lf']
    per_scenario = frame.groupby('scenario')[['cost', 'penalty']].sum()
    levels = frame.groupby('task')['on_time'].mean()
    delays = late[late > 0].astype(int)
    histogram = dict(sorted(Counter(delays.tolist()).items()))
    return Evaluation(obj=float(per_scenario['cost'].mean()),
                      obj_pen=float((per_scenario['cost'] - per_scenario['penalty']).mean()),
                      sl_mean=float(levels.mean()), sl_std=float(levels.std(ddof=0)), sl_min=float(levels.min()),
                      lfe_violation=float((frame['finish'] > frame['lf_e']).mean()),
                      service_levels={int(k): float(v) for k, v in levels.items()},
                      histogram=histogram, objectives=per_scenario['cost'].to_numpy(),
                      postponed=frame.attrs['postponed'])


def histogram_frame(histogram):
    return pd.DataFrame(sorted(histogram.items()), columns=['delay', 'count'])


# ---------------------------------------------------------------------------
# Value of the stochastic solution and of perfect information

def perfect_information_objective(instance, scenario, config=None):
    """Optimum when the scenario's travel times are known in advance; None if infeasible."""
    known = instance.replace(name='%s-perfect' % instance.name,
                             edges=EdgeDistributions.from_realized(scenario, instance.edges.n_bins),
                             service_level_enforced=False)
    result = search.solve(known, config)
    return result.upper_bound if result.feasible else None


def value_of_information(instance, stochastic, mean_plan, scenarios, config=None, perfect_scenarios=None):
    """(VSS, EVPI) of a stochastic plan against the mean-value plan on shared scenarios."""
    stoch_eval = evaluate(instance, stochastic, scenarios=scenarios)
    vss = None
    if mean_plan is not None:
        vss = evaluate(instance, mean_plan, scenarios=scenarios).obj - stoch_eval.obj
    chosen = list(range(len(scenarios) if perfect_scenarios is None else min(perfect_scenarios, len(scenarios))))
    own = []
    perfect = []
    for n in chosen:
        value = perfect_information_objective(instance, scenarios[n], config)
        if value is None:
            log.info('scenario %d: no plan meets the hard caps with perfect information', n)
            continue
        own.append(stoch_eval.objectives[n])
        perfect.append(value)
    evpi = float(np.mean(own) - np.mean(perfect)) if perfect else None
    return vss, evpi


def vss_evpi(instance, n_scenarios=500, rng=None, config=None, perfect_scenarios=None):
    """
    (VSS, EVPI) for the instance, or None when the stochastic or the mean-value
    plan does not exist.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    stochastic = search.solve(instance, config)
    mean = solve_deterministic(instance, 'mean', config)
    if not stochastic.feasible or not mean.feasible:
        log.info('%s: skipped, %s plan missing', instance.name, 'stochastic' if not stochastic.feasible else 'mean')
        return None
    scenarios = [sample_scenario(instance, rng) for _ in range(n_scenarios)]
    return value_of_information(instance, stochastic.solution, mean.solution, scenarios, config, perfect_scenarios)


# ---------------------------------------------------------------------------
# Scenario count

def saa_statistics(instance, solution, n, batches, rng):
    """(mean, standard deviation, CI half-width) of the batch means for batch size n."""
    means = []
    for _ in range(batches):
        scenarios = [sample_scenario(instance, rng) for _ in range(n)]
        means.append(evaluate(instance, solution, scenarios=scenarios).obj)
    means = np.asarray(means)
    spread = float(means.std(ddof=1)) if batches > 1 else 0.0
    return float(means.mean()), spread, float(norm.ppf(0.975) * spread / math.sqrt(batches))


def saa_scenario_count(cases, start=SAA_START, batches=SAA_BATCHES, rng=None, step=SAA_STEP, limit=SAA_MAX):
    """
    Smallest scenario count N (start, start + step, ...) at which, for every
    (instance, solution) case, both the batch standard deviation and the 95%
    confidence half-width stay below max(0.05 * mean, 0.5).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = start
    while True:
        ok = True
        for instance, solution in cases:
            mean, spread, half = saa_statistics(instance, solution, n, batches, rng)
            threshold = max(0.05 * mean, 0.5)
            log.debug('%s: N=%d mean %.4f s %.4f CI %.4f', instance.name, n, mean, spread, half)
            if spread > threshold or half > threshold:
                ok = False
                break
        if ok:
            return n
        if n + step > limit:
            log.warning('scenario count criterion not met up to %d', limit)
            return n
        n += step


# ---------------------------------------------------------------------------
# Comparison table

def _row(label, result, instance, scenarios):
    row = {'travel_times': label, 'feasible': result.feasible, 'objective': result.upper_bound,
           'alpha_feas': False, 'lfe_feas': False, 'stoch_feas': False}
    if not result.feasible:
        return row
    check = assess_plan(instance, result.solution)
    ev = evaluate(instance, result.solution, scenarios=scenarios)
    row.update(alpha_feas=check.alpha_feasible, lfe_feas=check.lfe_feasible, stoch_feas=check.stoch_feasible,
               obj=ev.obj, obj_pen=ev.obj_pen, sl_mean=ev.sl_mean, sl_std=ev.sl_std, sl_min=ev.sl_min)
    return row


def compare(instance, n_scenarios=500, rng=None, config=None, gammas=None, modes=MODES, perfect_scenarios=None):
    """
    Rows for each deterministic plan and each stochastic plan (one per gamma),
    all simulated on the same scenarios.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    config = config if config is not None else search.SolverConfig()
    scenarios = [sample_scenario(instance, rng) for _ in range(n_scenarios)]
    rows = []
    mean_plan = None
    for mode in modes:
        result = solve_deterministic(instance, mode, config)
        if mode == 'mean' and result.feasible:
            mean_plan = result.solution
        rows.append(_row(mode, result, instance, scenarios))
    for gamma in gammas or [instance.gamma]:
        tuned = instance.replace(gamma=gamma)
        result = search.solve(tuned, config)
        row = _row('stochastic-%g' % gamma, result, tuned, scenarios)
        if result.feasible:
            vss, evpi = value_of_information(tuned, result.solution, mean_plan, scenarios, config, perfect_scenarios)
            row.update(vss=vss, evpi=evpi)
        rows.append(row)
    return rows
