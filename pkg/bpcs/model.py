"""
model.py - Instances, profiles, skill compositions, team routes and their evaluation.
====================================================================================
* An Instance bundles baggage-handling tasks, team profiles, the workforce per skill
  level, the time-bin partition of the horizon and the bin-dependent travel time
  distributions between locations.
* Levels are indexed from 0 (lowest skill) upwards. A profile's xi[k] counts the
  workers of level k or higher a team of that profile needs; a skill composition
  s[k] counts workers of exactly level k.
* A team route leaves the depot at tl, serves its tasks in order and returns. Its
  finish time distributions follow the median-bin rule: the travel time out of a
  task is drawn from the bin holding the median of that task's finish time. The
  gamma-scenario finish times use the same bin and fix the occupancy interval
  [tl, tr] charged against the workforce.
* Instance and solution files are JSON. The instance schema is described in
  README.md.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from bpcs.distributions import MASS_TOL, DiscreteDistribution

log = logging.getLogger(__name__)

AGGREGATED = 'aggregated'
DISAGGREGATED = 'disaggregated'
# Flow end points of the worker regrouping plan.
DEPOT_OUT = 'o'
DEPOT_IN = "o'"


class InstanceError(ValueError):
    """A malformed instance or solution; the message names the broken invariant."""


class HorizonOverflow(ValueError):
    """A finish time distribution reached past its hard cap."""


@dataclass(frozen=True)
class TimeBins:
    """Partition of the time axis into `count` bins of `bin_length` steps."""
    bin_length: int
    count: int

    def __post_init__(self):
        if self.bin_length < 1 or self.count < 1:
            raise InstanceError('time bins need bin_length >= 1 and count >= 1')

    @property
    def horizon(self):
        return self.bin_length * self.count

    def bin_of(self, t):
        # Times before 0 or past the horizon belong to the first or last bin.
        return min(max(int(t), 0) // self.bin_length, self.count - 1)

    def bins(self):
        return [range(k * self.bin_length, (k + 1) * self.bin_length) for k in range(self.count)]


@dataclass(frozen=True, eq=False)
class Task:
    id: int
    es: int
    lf: int
    lf_e: int
    weight: float
    location: int
    exec_times: dict = field(default_factory=dict)

    @property
    def ef(self):
        return self.es + min(self.exec_times.values())

    @property
    def profiles(self):
        return sorted(self.exec_times)

    def penalty(self, times):
        late = np.maximum(np.asarray(times, dtype=float) - self.lf, 0.0)
        return late * late

    def cost_of(self, finish):
        """w * E[(F - EF) + P(F)]"""
        ef = self.ef
        return self.weight * finish.expect(lambda t: (t - ef) + self.penalty(t))

    def priced_cost(self, finish):
        """w * E[F + P(F)], the time-dependent part of a pricing arc weight."""
        return self.weight * finish.expect(lambda t: t + self.penalty(t))

    def penalty_cost(self, finish):
        return self.weight * finish.expect(self.penalty)

    def meets_service_level(self, finish, alpha):
        return finish.prob_le(self.lf) >= alpha - MASS_TOL

    def within_hard_cap(self, finish):
        return finish.max_time <= self.lf_e


@dataclass(frozen=True)
class Profile:
    id: int
    xi: tuple
    name: str = ''

    def __post_init__(self):
        xi = tuple(int(x) for x in self.xi)
        object.__setattr__(self, 'xi', xi)
        if not xi or xi[0] < 1:
            raise InstanceError('profile %s: xi[0] >= 1 violated' % self.id)
        if any(b > a for a, b in zip(xi, xi[1:])):
            raise InstanceError('profile %s: xi non-increasing in level violated' % self.id)

    @property
    def levels(self):
        return len(self.xi)

    @property
    def team_size(self):
        return self.xi[0]


def enumerate_skill_compositions(profile, levels=None):
    """
    All vectors s of workers per exact level with sum(s) == xi[0] and, for every
    level k, sum(s[k:]) >= xi[k]. Returned in lexicographic order.
    """
    xi = profile.xi if levels is None else tuple(profile.xi) + (0,) * (levels - len(profile.xi))
    n = len(xi)
    size = xi[0]
    found = []

    def fill(k, above, suffix):
        # `above` workers already placed on levels > k.
        if k == 0:
            s0 = size - above
            if s0 >= 0 and s0 + above >= xi[0]:
                found.append((s0,) + suffix)
            return
        for sk in range(max(0, xi[k] - above), size - above + 1):
            fill(k - 1, above + sk, (sk,) + suffix)

    fill(n - 1, 0, ())
    return sorted(found)


def composition_from_inflow(xi, inflow):
    """
    A composition covered by the worker inflow of a route: the highest levels are
    kept first until the team size xi[0] is reached.
    """
    remaining = xi[0]
    s = [0] * len(xi)
    for k in range(len(xi) - 1, -1, -1):
        s[k] = min(int(inflow[k]), remaining)
        remaining -= s[k]
    return tuple(s)


@dataclass(frozen=True)
class Workforce:
    """Available workers per exact skill level."""
    per_level: tuple

    def __post_init__(self):
        per_level = tuple(int(n) for n in self.per_level)
        object.__setattr__(self, 'per_level', per_level)
        if any(n < 0 for n in per_level):
            raise InstanceError('workforce: N_k^D >= 0 violated')

    @property
    def levels(self):
        return len(self.per_level)

    @property
    def cumulative(self):
        """N_k: workers of level k or higher."""
        return tuple(int(x) for x in np.cumsum(self.per_level[::-1])[::-1])


@dataclass(frozen=True)
class EdgeSpec:
    t_det: int
    delays: tuple


class EdgeDistributions(object):
    """
    Travel time distributions t_det + delay for each ordered location pair and bin.
    Derived travel distributions and quantiles are cached.
    """

    def __init__(self, specs, n_bins):
        self.specs = dict(specs)
        self.n_bins = int(n_bins)
        self._travel = {}
        self._quantiles = {}
        for (a, b), spec in self.specs.items():
            if spec.t_det < 0:
                raise InstanceError('edge (%d, %d): t_det >= 0 violated' % (a, b))
            if len(spec.delays) != self.n_bins:
                raise InstanceError('edge (%d, %d): %d delay distributions for %d bins'
                                    % (a, b, len(spec.delays), self.n_bins))
            for d in spec.delays:
                if d.min_time < 0:
                    raise InstanceError('edge (%d, %d): delays >= 0 violated' % (a, b))

    def has(self, a, b):
        return a == b or (a, b) in self.specs

    def pairs(self):
        return sorted(self.specs)

    def travel(self, a, b, k):
        key = (a, b, k)
        dist = self._travel.get(key)
        if dist is None:
            if a == b and (a, b) not in self.specs:
                dist = DiscreteDistribution.point(0)
            else:
                try:
                    spec = self.specs[(a, b)]
                except KeyError:
                    raise InstanceError('no travel time distribution for locations (%d, %d)' % (a, b))
                dist = spec.delays[k].shift(spec.t_det)
            self._travel[key] = dist
        return dist

    def quantile_time(self, a, b, k, gamma):
        key = (a, b, k, gamma)
        q = self._quantiles.get(key)
        if q is None:
            q = self.travel(a, b, k).quantile(gamma)
            self._quantiles[key] = q
        return q

    def min_time(self, a, b):
        """Shortest possible travel time over all bins."""
        return min(self.travel(a, b, k).min_time for k in range(self.n_bins))

    def max_time(self, a, b):
        """Longest possible travel time over all bins."""
        return max(self.travel(a, b, k).max_time for k in range(self.n_bins))

    def point_masses(self, statistic):
        """
        A copy where every per-bin travel distribution is replaced by the point mass
        statistic(distribution).
        """
        specs = {}
        for pair, spec in self.specs.items():
            # statistic of t_det + delay never drops below t_det
            delays = tuple(DiscreteDistribution.point(statistic(d.shift(spec.t_det)) - spec.t_det)
                           for d in spec.delays)
            specs[pair] = EdgeSpec(spec.t_det, delays)
        return EdgeDistributions(specs, self.n_bins)

    @classmethod
    def from_realized(cls, realized, n_bins):
        """Point masses at realised travel times, realized[(a, b)][k]."""
        specs = {}
        for pair, times in realized.items():
            specs[pair] = EdgeSpec(0, tuple(DiscreteDistribution.point(int(t)) for t in times))
        return cls(specs, n_bins)


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    tasks: tuple
    profiles: tuple
    workforce: Workforce
    bins: TimeBins
    edges: EdgeDistributions
    alpha: float = 0.9
    gamma: float = 0.9
    depot: int = 0
    service_level_enforced: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'tasks', tuple(sorted(self.tasks, key=lambda t: t.id)))
        object.__setattr__(self, 'profiles', tuple(sorted(self.profiles, key=lambda q: q.id)))
        self.validate()

    def validate(self):
        if not 0.0 < self.alpha <= 1.0:
            raise InstanceError('0 < alpha <= 1 violated (alpha=%r)' % (self.alpha,))
        if not 0.0 < self.gamma <= 1.0:
            raise InstanceError('0 < gamma <= 1 violated (gamma=%r)' % (self.gamma,))
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise InstanceError('task ids must be unique')
        pids = [q.id for q in self.profiles]
        if len(set(pids)) != len(pids):
            raise InstanceError('profile ids must be unique')
        for q in self.profiles:
            if q.levels != self.workforce.levels:
                raise InstanceError('profile %d: %d levels but workforce has %d'
                                    % (q.id, q.levels, self.workforce.levels))
        known = set(pids)
        for t in self.tasks:
            if not t.es <= t.lf <= t.lf_e:
                raise InstanceError('task %d: ES <= LF <= LF_e violated' % t.id)
            if t.weight < 0:
                raise InstanceError('task %d: weight >= 0 violated' % t.id)
            if not t.exec_times:
                raise InstanceError('task %d: Q_i non-empty violated' % t.id)
            for q, p in t.exec_times.items():
                if q not in known:
                    raise InstanceError('task %d: unknown profile %r' % (t.id, q))
                if p <= 0:
                    raise InstanceError('task %d: execution time p > 0 violated for profile %d' % (t.id, q))
        locations = [self.depot] + [t.location for t in self.tasks]
        for a in locations:
            for b in locations:
                if not self.edges.has(a, b):
                    raise InstanceError('missing travel time distribution for locations (%d, %d)' % (a, b))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @cached_property
    def task_by_id(self):
        return {t.id: t for t in self.tasks}

    @cached_property
    def profile_by_id(self):
        return {q.id: q for q in self.profiles}

    @cached_property
    def compositions(self):
        """S_q per profile id."""
        return {q.id: enumerate_skill_compositions(q) for q in self.profiles}

    @property
    def levels(self):
        return self.workforce.levels

    @cached_property
    def time_span(self):
        """An upper bound on every time step a feasible route can occupy."""
        worst = max(self.edges.max_time(a, b) for a, b in self._location_pairs())
        return max(t.lf_e for t in self.tasks) + worst + 1

    def _location_pairs(self):
        locations = sorted({self.depot} | {t.location for t in self.tasks})
        return [(a, b) for a in locations for b in locations]

    def task(self, task_id):
        return self.task_by_id[task_id]

    def profile(self, profile_id):
        return self.profile_by_id[profile_id]


def propagate_finish(prev_finish, prev_gamma, edge, exec_time, earliest_start, bins, edges, gamma, cap=None):
    """
    Finish time distribution of the next task on a route, and its gamma-scenario
    finish time. The travel distribution comes from the bin of the median of
    prev_finish. Raises HorizonOverflow if cap is given and exceeded.
    """
    origin, target = edge
    k = bins.bin_of(prev_finish.median)
    travel = edges.travel(origin, target, k)
    finish = prev_finish.convolve(travel).truncate_left(earliest_start).shift(exec_time)
    if cap is not None and finish.max_time > cap:
        raise HorizonOverflow('finish time %d exceeds cap %d' % (finish.max_time, cap))
    gamma_finish = max(prev_gamma + edges.quantile_time(origin, target, k, gamma), earliest_start) + exec_time
    return finish, gamma_finish


def return_time(last_finish, last_gamma, origin, instance):
    """tr: gamma-scenario arrival back at the depot."""
    k = instance.bins.bin_of(last_finish.median)
    return last_gamma + instance.edges.quantile_time(origin, instance.depot, k, instance.gamma)


@dataclass(frozen=True, eq=False)
class Column:
    """
    A team route (aggregated, composition None) or a disaggregated team route
    with an exact skill composition.
    """
    route: tuple
    profile: int
    xi: tuple
    composition: tuple
    tl: int
    tr: int
    finishes: tuple
    gamma_finishes: tuple
    expected_cost: float
    artificial: bool = False

    @property
    def key(self):
        return (self.route, self.profile, self.composition, self.tl, self.artificial)

    @property
    def kind(self):
        return AGGREGATED if self.composition is None else DISAGGREGATED

    @property
    def requirement(self):
        return self.xi if self.composition is None else self.composition

    def occupied(self, tau):
        return self.tl <= tau <= self.tr

    def occupancy(self, level, tau):
        return self.requirement[level] if self.tl <= tau <= self.tr else 0

    def covers(self, task_id):
        return task_id in self.route

    def position(self, task_id):
        return self.route.index(task_id)

    def finish_of(self, task_id):
        return self.finishes[self.route.index(task_id)]

    def gamma_finish_of(self, task_id):
        return self.gamma_finishes[self.route.index(task_id)]

    def with_composition(self, composition):
        return dataclasses.replace(self, composition=tuple(composition))

    def aggregated(self):
        return dataclasses.replace(self, composition=None)

    def describe(self):
        route = '-'.join(str(i) for i in self.route)
        if self.artificial:
            return 'artificial'
        comp = '' if self.composition is None else ' s=%s' % (self.composition,)
        return 'd-%s-d q=%d%s tl=%d tr=%d cost=%.4f' % (route, self.profile, comp, self.tl, self.tr, self.expected_cost)


def evaluate_route(instance, route, profile_id, tl, composition=None, enforce=True):
    """
    Build the Column for `route` served by a team of `profile_id` leaving at tl.
    With enforce, returns None when a task is incompatible with the profile or a
    chance constraint or hard cap fails.
    """
    profile = instance.profile(profile_id)
    location = instance.depot
    finish = DiscreteDistribution.point(tl)
    gamma_finish = tl
    finishes = []
    gammas = []
    for task_id in route:
        task = instance.task(task_id)
        p = task.exec_times.get(profile_id)
        if p is None:
            if enforce:
                return None
            raise InstanceError('task %d cannot be served by profile %d' % (task_id, profile_id))
        try:
            finish, gamma_finish = propagate_finish(finish, gamma_finish, (location, task.location), p, task.es,
                                                    instance.bins, instance.edges, instance.gamma,
                                                    cap=task.lf_e if enforce else None)
        except HorizonOverflow:
            return None
        if enforce and instance.service_level_enforced and not task.meets_service_level(finish, instance.alpha):
            return None
        finishes.append(finish)
        gammas.append(gamma_finish)
        location = task.location
    tr = return_time(finish, gamma_finish, location, instance)
    cost = sum(instance.task(i).cost_of(f) for i, f in zip(route, finishes))
    return Column(tuple(route), profile_id, profile.xi, None if composition is None else tuple(composition),
                  int(tl), int(tr), tuple(finishes), tuple(gammas), float(cost))


def route_cost(column, instance):
    """Sum over the route of w_i * E[(F_i - EF_i) + P_i(F_i)]."""
    return float(sum(instance.task(i).cost_of(f) for i, f in zip(column.route, column.finishes)))


def check_route_feasibility(column, instance, alpha=None):
    """Chance constraint P(F_i <= LF_i) >= alpha and hard cap P(F_i > LF_e_i) = 0 per task."""
    alpha = instance.alpha if alpha is None else alpha
    for task_id, finish in zip(column.route, column.finishes):
        task = instance.task(task_id)
        if not task.within_hard_cap(finish):
            return False
        if instance.service_level_enforced and not task.meets_service_level(finish, alpha):
            return False
    return True


def occupancy(column, level, tau):
    return column.occupancy(level, tau)


def artificial_column(instance, disaggregated=False):
    """
    Sentinel covering every task, finishing each at LF_e and holding the whole
    workforce over the whole time span.
    """
    worst = 0.0
    for task in instance.tasks:
        finish = DiscreteDistribution.point(task.lf_e)
        worst += task.cost_of(finish)
    route = tuple(t.id for t in instance.tasks)
    cumulative = instance.workforce.cumulative
    composition = instance.workforce.per_level if disaggregated else None
    return Column(route, -1, cumulative, composition, 0, instance.time_span,
                  tuple(DiscreteDistribution.point(t.lf_e) for t in instance.tasks),
                  tuple(t.lf_e for t in instance.tasks), 10.0 * max(worst, 1.0), artificial=True)


@dataclass
class Solution:
    """Selected columns with the worker flows that realise them."""
    columns: tuple
    flows: dict = field(default_factory=dict)

    @property
    def objective(self):
        return float(sum(c.expected_cost for c in self.columns))

    def inflow(self, index):
        """Workers per level entering route `index`."""
        levels = len(self.columns[index].xi)
        inflow = [0] * levels
        for (k, src, dst), n in self.flows.items():
            if dst == index:
                inflow[k] += n
        return inflow

    def compositions(self):
        """Exact composition per selected column (derived from flows when aggregated)."""
        result = []
        for idx, col in enumerate(self.columns):
            if col.composition is not None:
                result.append(col.composition)
            elif self.flows:
                result.append(composition_from_inflow(col.xi, self.inflow(idx)))
            else:
                result.append(None)
        return result

    def finish_of(self, task_id):
        for col in self.columns:
            if col.covers(task_id):
                return col.finish_of(task_id)
        raise KeyError(task_id)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _dist_from_json(pairs, where):
    try:
        return DiscreteDistribution([int(t) for t, _ in pairs], [float(p) for _, p in pairs])
    except (TypeError, ValueError) as e:
        raise InstanceError('%s: %s' % (where, e))


def instance_to_dict(instance):
    edges = []
    for a, b in instance.edges.pairs():
        spec = instance.edges.specs[(a, b)]
        edges.append({'from': a, 'to': b, 't_det': spec.t_det,
                      'delays': [d.to_list() for d in spec.delays]})
    return {
        'name': instance.name,
        'alpha': instance.alpha,
        'gamma': instance.gamma,
        'depot': instance.depot,
        'service_level_enforced': instance.service_level_enforced,
        'bin_length': instance.bins.bin_length,
        'bins': instance.bins.count,
        'workforce': list(instance.workforce.per_level),
        'profiles': [{'id': q.id, 'name': q.name, 'xi': list(q.xi)} for q in instance.profiles],
        'tasks': [{'id': t.id, 'es': t.es, 'lf': t.lf, 'lf_e': t.lf_e, 'weight': t.weight,
                   'location': t.location,
                   'exec_times': {str(q): p for q, p in sorted(t.exec_times.items())}}
                  for t in instance.tasks],
        'edges': edges,
    }


def instance_from_dict(data):
    try:
        bins = TimeBins(int(data['bin_length']), int(data['bins']))
        profiles = [Profile(int(q['id']), tuple(q['xi']), q.get('name', '')) for q in data['profiles']]
        tasks = [Task(int(t['id']), int(t['es']), int(t['lf']), int(t['lf_e']), float(t.get('weight', 1.0)),
                      int(t['location']), {int(q): int(p) for q, p in t['exec_times'].items()})
                 for t in data['tasks']]
        specs = {}
        for e in data['edges']:
            pair = (int(e['from']), int(e['to']))
            where = 'edge (%d, %d)' % pair
            specs[pair] = EdgeSpec(int(e['t_det']), tuple(_dist_from_json(d, where) for d in e['delays']))
        return Instance(name=data.get('name', 'instance'), tasks=tuple(tasks), profiles=tuple(profiles),
                        workforce=Workforce(tuple(data['workforce'])), bins=bins,
                        edges=EdgeDistributions(specs, bins.count),
                        alpha=float(data.get('alpha', 0.9)), gamma=float(data.get('gamma', 0.9)),
                        depot=int(data.get('depot', 0)),
                        service_level_enforced=bool(data.get('service_level_enforced', True)))
    except KeyError as e:
        raise InstanceError('missing field %s' % e)


def dump_json(data, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write('\n')


def load_instance(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InstanceError('%s is not valid JSON: %s' % (path, e))
    return instance_from_dict(data)


def save_instance(instance, path):
    dump_json(instance_to_dict(instance), path)


def _endpoint_to_json(x):
    return x if isinstance(x, str) else int(x)


def solution_to_dict(solution):
    compositions = solution.compositions()
    columns = []
    for col, comp in zip(solution.columns, compositions):
        columns.append({'route': list(col.route), 'profile': col.profile, 'tl': col.tl, 'tr': col.tr,
                        'composition': None if comp is None else list(comp),
                        'aggregated': col.composition is None,
                        'gamma_finishes': list(col.gamma_finishes),
                        'expected_cost': round(col.expected_cost, 10)})
    flows = [{'level': k, 'from': _endpoint_to_json(src), 'to': _endpoint_to_json(dst), 'workers': int(n)}
             for (k, src, dst), n in sorted(solution.flows.items(), key=lambda kv: (kv[0][0], str(kv[0][1]), str(kv[0][2])))
             if n > 0]
    return {'objective': round(solution.objective, 10), 'columns': columns, 'flows': flows}


def save_solution(solution, path):
    dump_json(solution_to_dict(solution), path)


def load_solution(path, instance):
    """Rebuild a Solution against `instance`; route distributions are recomputed."""
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    columns = []
    for c in data['columns']:
        comp = None if c.get('aggregated', False) or c['composition'] is None else tuple(c['composition'])
        col = evaluate_route(instance, tuple(c['route']), int(c['profile']), int(c['tl']), comp, enforce=False)
        columns.append(col)
    flows = {}
    for f in data.get('flows', []):
        src = f['from'] if isinstance(f['from'], str) else int(f['from'])
        dst = f['to'] if isinstance(f['to'], str) else int(f['to'])
        flows[(int(f['level']), src, dst)] = int(f['workers'])
    return Solution(tuple(columns), flows)
