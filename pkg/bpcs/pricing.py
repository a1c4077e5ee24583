"""
pricing.py - Column generation subproblem: elementary shortest paths with
resource constraints over one network per team profile.
=========================================================================
* A PricingGraph holds the tasks a profile may serve and the arcs between them
  that can still carry a feasible route.
* Labels carry the depot leave time, the path, the reduced cost so far, the
  finish time distribution at the current task and its gamma-scenario finish.
  Arc weights are time dynamic:
      w_j E[F_j + P_j(F_j)] - mu_j - sum_k sum_{t=g+1..g'} delta_{k,t} req_k
  minus tour-count duals whose instant falls into (g, g'], plus the cut
  carries weighted by their duals. mu_j here is the covering dual plus
  w_j * EF_j, so a sink label's cost is the exact reduced cost of its column.
* Aggregated pricing uses the profile's cumulative requirement xi and the plain
  dominance rule. Disaggregated pricing solves one network with a fixed
  composition under the offset-cost rule and then picks the best composition
  per sink label.
* Acceleration: depot leave times are split into containers, successor sets are
  first restricted to the arcs with the largest task duals, and elementarity is
  relaxed (decremental state space relaxation) until a cycle shows up.
"""
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from bpcs.cuts import coefficient_for_column
from bpcs.distributions import DiscreteDistribution
from bpcs.model import AGGREGATED, DISAGGREGATED, evaluate_route

log = logging.getLogger(__name__)

SINK = -1
COST_TOL = 1e-9
NEGATIVE_TOL = 1e-6
ARMP_RULE = 'armp'
DRMP_RULE = 'drmp'


@dataclass(frozen=True)
class PricingOptions:
    container_size: int = 5
    delta_arcs: int = 4
    dssr: bool = True
    heuristics: bool = True
    threads: int = 1


@dataclass
class PricingStats:
    calls: int = 0
    labels_created: int = 0
    labels_dominated: int = 0
    labels_extended: int = 0
    dssr_rounds: int = 0

    def merge(self, other):
        self.calls += other.calls
        self.labels_created += other.labels_created
        self.labels_dominated += other.labels_dominated
        self.labels_extended += other.labels_extended
        self.dssr_rounds += other.dssr_rounds


@dataclass(frozen=True, eq=False)
class DualSnapshot:
    """
    Duals of one master solve. mu holds the covering prices pricing works
    with (covering dual + w_i * EF_i); delta the workforce duals (<= 0); psi
    the cut duals (>= 0) aligned with cuts; tours (tau, dual) pairs.
    """
    mu: dict
    delta: dict = field(default_factory=dict)
    psi: tuple = ()
    cuts: tuple = ()
    tours: tuple = ()
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @classmethod
    def zero(cls, instance):
        return cls({t.id: t.weight * t.ef for t in instance.tasks})

    def delta_prefix(self, levels, span):
        key = ('delta', levels, span)
        prefix = self._cache.get(key)
        if prefix is None:
            dense = np.zeros((levels, span + 2))
            for (k, tau), d in self.delta.items():
                if 0 <= tau <= span and k < levels:
                    dense[k, tau + 1] += d
            prefix = np.cumsum(dense, axis=1)
            self._cache[key] = prefix
        return prefix

    def workforce_charge(self, requirement, start, end, levels, span):
        """sum_k requirement[k] * sum_{t=start..end} delta_{k,t} (zero on an empty interval)."""
        if end < start:
            return 0.0
        prefix = self.delta_prefix(levels, span)
        a = min(max(start, 0), span + 1)
        b = min(max(end + 1, 0), span + 1)
        return float(np.dot(np.asarray(requirement, dtype=float), prefix[:, b] - prefix[:, a]))

    def tour_charge(self, start, end):
        return sum(dual for tau, dual in self.tours if start <= tau <= end)

    def active_cuts(self):
        return [(g, cut, psi) for g, (cut, psi) in enumerate(zip(self.cuts, self.psi)) if psi > COST_TOL]


def workforce_charge(duals, requirement, start, end, instance):
    return duals.workforce_charge(requirement, start, end, instance.levels, instance.time_span)


def reduced_cost(column, duals, instance):
    """Reduced cost of a column under a dual snapshot, evaluated from scratch."""
    rc = 0.0
    for task_id, finish in zip(column.route, column.finishes):
        rc += instance.task(task_id).priced_cost(finish) - duals.mu.get(task_id, 0.0)
    rc -= workforce_charge(duals, column.requirement, column.tl, column.tr, instance)
    rc -= duals.tour_charge(column.tl, column.tr)
    for _, cut, psi in duals.active_cuts():
        rc += psi * coefficient_for_column(cut, column)
    return rc


class PricingGraph(object):
    """Tasks and arcs one profile's network may use at a search node."""

    def __init__(self, instance, profile, tasks, successors, decisions=None):
        self.instance = instance
        self.profile = profile
        self.tasks = tuple(tasks)
        self.successors = successors
        self.exec_time = {i: instance.task(i).exec_times[profile.id] for i in self.tasks}
        self.windows = {}
        self.forbidden = ()
        if decisions is not None:
            self.windows = {i: decisions.window(i) for i in self.tasks}
            self.forbidden = tuple(key for key in decisions.forbidden if key.profile == profile.id)
        edges = instance.edges
        origins = [instance.task(i).location for i in self.tasks]
        # fastest way into each task from anywhere on a route
        self.min_in = {}
        self.min_in_max = {}
        for i in self.tasks:
            loc = instance.task(i).location
            others = [a for a, j in zip(origins, self.tasks) if j != i]
            if others:
                self.min_in[i] = min(min(edges.travel(a, loc, k).min_time for k in range(edges.n_bins))
                                     for a in others)
                self.min_in_max[i] = min(min(edges.travel(a, loc, k).max_time for k in range(edges.n_bins))
                                         for a in others)
            else:
                self.min_in[i] = self.min_in_max[i] = math.inf

    @property
    def profile_id(self):
        return self.profile.id

    def arcs(self):
        out = [('o', i) for i in self.tasks]
        for i in self.tasks:
            out.extend((i, j) for j in self.successors[i])
        out.extend((i, "o'") for i in self.tasks)
        return out

    def has_arc(self, i, j):
        return j in self.successors.get(i, ())

    def window(self, task_id):
        return self.windows.get(task_id, (-math.inf, math.inf))

    def finish_range(self, task_id):
        task = self.instance.task(task_id)
        return task.es + self.exec_time[task_id], task.lf_e


def arc_admissible(instance, task_i, task_j, profile_id):
    """
    False when no finish time of task_i lets task_j meet its chance constraint
    and hard cap, whichever bin the travel time comes from.
    """
    edges = instance.edges
    p_i = task_i.exec_times[profile_id]
    p_j = task_j.exec_times[profile_id]
    t = task_i.es + p_i
    travels = [edges.travel(task_i.location, task_j.location, k) for k in range(edges.n_bins)]
    if t + min(d.max_time for d in travels) > task_j.lf_e - p_j:
        return False
    if instance.service_level_enforced:
        if t + min(d.quantile(instance.alpha) for d in travels) > task_j.lf - p_j:
            return False
    return True


def split_removable(instance, task_i, task_j):
    """
    True when every route using (i, j) can be split at the depot into two
    feasible routes with the same cost and no extra workforce.
    """
    edges = instance.edges
    depot = instance.depot
    bins = range(edges.n_bins)
    back = max(edges.quantile_time(task_i.location, depot, k, instance.gamma) for k in bins)
    out = max(edges.travel(depot, task_j.location, k).max_time for k in bins)
    direct = max(edges.travel(task_i.location, task_j.location, k).max_time for k in bins)
    return task_j.es - task_i.lf_e > back + out and task_i.lf_e + direct <= task_j.es


def build_graph(instance, profile_id, decisions=None):
    profile = instance.profile(profile_id)
    forced = decisions.forced_tasks if decisions is not None else frozenset()
    # splitting drops tour coverage, which a >= tour-count row may need
    allow_split = decisions is None or not any(row.sense == '>=' for row in decisions.tour_rows)
    tasks = []
    for task in instance.tasks:
        p = task.exec_times.get(profile_id)
        if p is None or task.id in forced or task.es + p > task.lf_e:
            continue
        tasks.append(task)
    successors = {}
    for ti in tasks:
        succ = []
        for tj in tasks:
            if tj.id == ti.id or not arc_admissible(instance, ti, tj, profile_id):
                continue
            if allow_split and split_removable(instance, ti, tj):
                continue
            succ.append(tj.id)
        successors[ti.id] = succ
    return PricingGraph(instance, profile, [t.id for t in tasks], successors, decisions)


def build_graphs(instance, decisions=None):
    return [build_graph(instance, q.id, decisions) for q in instance.profiles]


@dataclass(eq=False)
class Label:
    tl: int
    node: int
    path: tuple
    cost: float
    finish: object
    gamma: int
    median: int
    closed: frozenset = frozenset()
    workforce: float = 0.0
    window: tuple = (-math.inf, math.inf)
    cut_frac: tuple = ()
    blocked: bool = False
    alive: bool = True

    @property
    def length(self):
        return len(self.path)

    @property
    def offset_cost(self):
        """Reduced cost with the workforce charges taken back out."""
        return self.cost + self.workforce

    @property
    def is_elementary(self):
        return len(set(self.path)) == len(self.path)


def _finish_dominates(l1, l2):
    lo, hi = l1.window
    if not math.isfinite(lo) or not math.isfinite(hi):
        lo = min(l1.finish.min_time, l2.finish.min_time)
        hi = max(l1.finish.max_time, l2.finish.max_time)
    return l1.finish.dominates_stochastically(l2.finish, lo, hi)


def _cost_dominates(c1, c2, l1, l2, psi):
    extra = 0.0
    for g, weight in enumerate(psi):
        if weight > COST_TOL and l1.cut_frac[g] > l2.cut_frac[g] + 1e-12:
            extra += weight
    return c1 + extra <= c2 + COST_TOL


def _common(l1, l2, compare_length):
    if l1.blocked or l1.node != l2.node:
        return False
    if l1.gamma != l2.gamma or l1.median != l2.median:
        return False
    if not l1.closed <= l2.closed:
        return False
    if compare_length and l1.length > l2.length:
        return False
    return True


def dominates_armp(l1, l2, psi=(), compare_length=False):
    """Plain dominance, with cut resources when psi is given."""
    if not _common(l1, l2, compare_length):
        return False
    if not _cost_dominates(l1.cost, l2.cost, l1, l2, psi):
        return False
    return _finish_dominates(l1, l2)


def dominates_drmp(l1, l2, psi=(), compare_length=False):
    """Offset-cost dominance valid in every composition's network at once."""
    if not _common(l1, l2, compare_length) or l1.tl < l2.tl:
        return False
    if not _cost_dominates(l1.offset_cost, l2.offset_cost, l1, l2, psi):
        return False
    return _finish_dominates(l1, l2)


@dataclass(frozen=True)
class PricedRoute:
    reduced_cost: float
    label: Label
    composition: tuple

    def sort_key(self):
        return (self.reduced_cost, self.label.length, self.label.path, self.label.tl, self.composition or ())


def first_repeated(path):
    seen = set()
    for i in path:
        if i in seen:
            return i
        seen.add(i)
    return None


class Labeler(object):
    """
    Forward labeling over one PricingGraph with a fixed workforce requirement.
    """

    def __init__(self, graph, duals, requirement=None, rule=ARMP_RULE, critical=None, debuglevel=0):
        self.graph = graph
        self.duals = duals
        self.instance = graph.instance
        self.requirement = tuple(graph.profile.xi if requirement is None else requirement)
        self.rule = rule
        self.critical = set(graph.tasks) if critical is None else set(critical)
        self.debuglevel = debuglevel
        self.stats = PricingStats()
        self.levels = self.instance.levels
        self.span = self.instance.time_span
        self.cuts = duals.active_cuts()
        self.psi = tuple(psi for _, _, psi in self.cuts)
        self.cut_prefixes = [cut.workforce_prefix(self.levels, self.span) for _, cut, _ in self.cuts]
        self.xi = np.asarray(graph.profile.xi, dtype=float)
        self.restricted = {}
        self.restricted_size = 4
        self._dominates = dominates_armp if rule == ARMP_RULE else dominates_drmp

    def set_debuglevel(self, debuglevel=0):
        self.debuglevel = debuglevel

    @property
    def relaxed(self):
        return not self.critical >= set(self.graph.tasks)

    def charge(self, start, end):
        return self.duals.workforce_charge(self.requirement, start, end, self.levels, self.span)

    def _cut_step(self, fracs, task_id, start, end):
        if not self.cuts:
            return fracs, 0.0
        out = []
        cost = 0.0
        a = min(max(start, 0), self.span + 1)
        b = min(max(end + 1, 0), self.span + 1)
        for (_, cut, psi), prefix, frac in zip(self.cuts, self.cut_prefixes, fracs):
            inc = cut.task_multipliers.get(task_id, 0.0) if task_id is not None else 0.0
            if end >= start:
                inc += float(np.dot(self.xi, prefix[:, b] - prefix[:, a]))
            total = frac + inc
            carry = math.floor(total)
            cost += psi * carry
            out.append(total - carry)
        return tuple(out), cost

    def _blocked(self, tl, path):
        n = len(path)
        return any(key.tl == tl and key.route[:n] == path for key in self.graph.forbidden)

    def _close(self, closed, finish):
        """Add tasks no extension can reach anymore."""
        instance = self.instance
        extra = set()
        q_alpha = finish.quantile(instance.alpha) if instance.service_level_enforced else None
        fmax = finish.max_time
        for i in self.graph.tasks:
            if i in closed:
                continue
            task = instance.task(i)
            p = self.graph.exec_time[i]
            if fmax + self.graph.min_in_max[i] + p > task.lf_e:
                extra.add(i)
            elif q_alpha is not None and q_alpha + self.graph.min_in[i] + p > task.lf:
                extra.add(i)
        return closed | extra if extra else closed

    def _visit(self, tl, path, cost, workforce, fracs, prev_finish, prev_gamma, prev_median, origin, j,
               interval_start, closed):
        instance = self.instance
        task = instance.task(j)
        p = self.graph.exec_time[j]
        k = instance.bins.bin_of(prev_median)
        travel = instance.edges.travel(origin, task.location, k)
        finish = prev_finish.convolve(travel).truncate_left(task.es).shift(p)
        if finish.max_time > task.lf_e:
            return None
        if instance.service_level_enforced and not task.meets_service_level(finish, instance.alpha):
            return None
        gamma = max(prev_gamma + instance.edges.quantile_time(origin, task.location, k, instance.gamma),
                    task.es) + p
        lo, hi = self.graph.window(j)
        if gamma < lo or gamma > hi:
            return None
        wf = self.charge(interval_start, gamma)
        fracs, cut_cost = self._cut_step(fracs, j, interval_start, gamma)
        cost = (cost + task.priced_cost(finish) - self.duals.mu.get(j, 0.0) - wf
                - self.duals.tour_charge(interval_start, gamma) + cut_cost)
        path = path + (j,)
        if j in self.critical:
            closed = closed | {j}
        closed = self._close(frozenset(closed), finish)
        return Label(tl, j, path, cost, finish, gamma, finish.median, closed, workforce + wf,
                     self.graph.finish_range(j), fracs, self._blocked(tl, path))

    def initial_label(self, task_id, tl):
        """Label for the path (o, task_id) leaving the depot at tl, or None if infeasible."""
        fracs = (0.0,) * len(self.cuts)
        return self._visit(tl, (), 0.0, 0.0, fracs, DiscreteDistribution.point(tl), tl, tl, self.instance.depot, task_id, tl,
                           frozenset())

    def extend(self, label, target):
        """Extend label to task `target` or to the sink (target SINK)."""
        origin = self.instance.task(label.node).location
        if target == SINK:
            return self.to_sink(label)
        if target in label.closed:
            return None
        return self._visit(label.tl, label.path, label.cost, label.workforce, label.cut_frac, label.finish,
                           label.gamma, label.median, origin, target, label.gamma + 1, label.closed)

    def to_sink(self, label):
        instance = self.instance
        origin = instance.task(label.node).location
        k = instance.bins.bin_of(label.median)
        tr = label.gamma + instance.edges.quantile_time(origin, instance.depot, k, instance.gamma)
        wf = self.charge(label.gamma + 1, tr)
        fracs, cut_cost = self._cut_step(label.cut_frac, None, label.gamma + 1, tr)
        cost = label.cost - wf - self.duals.tour_charge(label.gamma + 1, tr) + cut_cost
        return Label(label.tl, SINK, label.path, cost, label.finish, tr, label.median, label.closed,
                     label.workforce + wf, label.window, fracs, label.blocked)

    def leave_times(self, task_id):
        """Depot leave times worth an initial label for task_id."""
        instance = self.instance
        task = instance.task(task_id)
        edges = instance.edges
        fastest = edges.min_time(instance.depot, task.location)
        slowest = edges.max_time(instance.depot, task.location)
        lo = max(0, task.es - slowest)
        taus = [tau for tau, dual in self.duals.tours if dual != 0.0]
        if taus:
            lo = max(0, min(lo, min(taus)))
        hi = task.lf_e - self.graph.exec_time[task_id] - fastest
        return range(lo, hi + 1)

    def seeds(self):
        return [(i, tl) for i in self.graph.tasks for tl in self.leave_times(i)]

    def successors(self, node, restricted):
        if not restricted:
            return self.graph.successors[node]
        cached = self.restricted.get(node)
        if cached is None:
            instance = self.instance

            def raw_dual(j):
                t = instance.task(j)
                return self.duals.mu.get(j, 0.0) - t.weight * t.ef
            ranked = sorted(self.graph.successors[node], key=lambda j: (-raw_dual(j), j))
            cached = ranked[:self.restricted_size]
            self.restricted[node] = cached
        return cached

    def _insert(self, label, buckets, queue):
        bucket = buckets.setdefault((label.node, label.gamma, label.median), [])
        relaxed = self.relaxed
        for other in bucket:
            if self._dominates(other, label, self.psi, relaxed):
                self.stats.labels_dominated += 1
                return False
        kept = []
        for other in bucket:
            if self._dominates(label, other, self.psi, relaxed):
                other.alive = False
                self.stats.labels_dominated += 1
            else:
                kept.append(other)
        kept.append(label)
        buckets[(label.node, label.gamma, label.median)] = kept
        queue.append(label)
        return True

    def run(self, seeds, restricted=False):
        """Label from the given (task, tl) seeds until no extension remains; returns sink labels."""
        buckets = {}
        queue = deque()
        for task_id, tl in seeds:
            label = self.initial_label(task_id, tl)
            if label is not None:
                self.stats.labels_created += 1
                self._insert(label, buckets, queue)
        sinks = []
        while queue:
            label = queue.popleft()
            if not label.alive:
                continue
            self.stats.labels_extended += 1
            for j in self.successors(label.node, restricted):
                new = self.extend(label, j)
                if new is not None:
                    self.stats.labels_created += 1
                    self._insert(new, buckets, queue)
            sinks.append(self.to_sink(label))
        if self.debuglevel > 1:
            log.debug('profile %d: %d seeds, %d sink labels', self.graph.profile_id, len(seeds), len(sinks))
        return sinks

    def price_sinks(self, sinks, compositions=None):
        """
        Reduced cost per sink label. With compositions, each label is re-offset
        to every composition and forbidden (route, composition, tl) triples skipped.
        """
        out = []
        for label in sinks:
            if compositions is None:
                if any(key.tl == label.tl and key.route == label.path for key in self.graph.forbidden):
                    continue
                out.append(PricedRoute(label.cost, label, None))
                continue
            for s in compositions:
                if any(key.tl == label.tl and key.route == label.path
                       and (key.composition is None or key.composition == s) for key in self.graph.forbidden):
                    continue
                own = self.duals.workforce_charge(s, label.tl, label.gamma, self.levels, self.span)
                out.append(PricedRoute(label.cost + label.workforce - own, label, tuple(s)))
        out.sort(key=PricedRoute.sort_key)
        return out

    def solve(self, seeds, restricted=False, compositions=None):
        """Best negative elementary route for the seeds, refining the critical set on cycles."""
        while True:
            priced = self.price_sinks(self.run(seeds, restricted), compositions)
            negative = [r for r in priced if r.reduced_cost < -NEGATIVE_TOL]
            if not negative:
                return None
            best = negative[0]
            repeated = first_repeated(best.label.path)
            if repeated is None:
                return best
            self.critical.add(repeated)
            self.stats.dssr_rounds += 1
            if self.debuglevel > 1:
                log.debug('profile %d: task %d made critical', self.graph.profile_id, repeated)


def containers(labeler, seeds, size):
    """Group seeds by leave time into containers of `size` leave times, cheapest first."""
    tls = sorted({tl for _, tl in seeds})
    groups = [tls[i:i + size] for i in range(0, len(tls), size)]
    keyed = []
    for group in groups:
        members = set(group)
        chunk = [s for s in seeds if s[1] in members]
        best = math.inf
        for task_id, tl in chunk:
            label = labeler.initial_label(task_id, tl)
            if label is not None:
                best = min(best, label.cost)
        keyed.append((best, group[0], chunk))
    keyed.sort(key=lambda item: (item[0], item[1]))
    return [chunk for _, _, chunk in keyed]


def solve_espprc(graph, duals, mode=AGGREGATED, options=None, debuglevel=0):
    """
    Most negative reduced cost column of one profile, or [] when there is none.
    Returns (columns, stats).
    """
    options = options or PricingOptions()
    instance = graph.instance
    q = graph.profile_id
    if mode == DISAGGREGATED:
        compositions = instance.compositions[q]
        labeler = Labeler(graph, duals, compositions[0], DRMP_RULE, set() if options.dssr else None, debuglevel)
    else:
        compositions = None
        labeler = Labeler(graph, duals, None, ARMP_RULE, set() if options.dssr else None, debuglevel)
    labeler.restricted_size = options.delta_arcs
    labeler.stats.calls = 1
    seeds = labeler.seeds()
    if not seeds:
        return [], labeler.stats
    if options.heuristics:
        chunks = containers(labeler, seeds, options.container_size)
        stages = [(chunk, True) for chunk in chunks] + [(chunk, False) for chunk in chunks]
    else:
        stages = [(seeds, False)]
    best = None
    for chunk, restricted in stages:
        best = labeler.solve(chunk, restricted, compositions)
        if best is not None:
            break
    if best is None:
        return [], labeler.stats
    label = best.label
    column = evaluate_route(instance, label.path, q, label.tl, best.composition)
    if column is None:
        log.warning('profile %d: priced route %s failed re-evaluation', q, label.path)
        return [], labeler.stats
    if debuglevel > 0:
        check = reduced_cost(column, duals, instance)
        if abs(check - best.reduced_cost) > 1e-6:
            log.warning('profile %d: label cost %.9f but column reduced cost %.9f', q, best.reduced_cost, check)
    return [column], labeler.stats


def price(graphs, duals, mode=AGGREGATED, options=None, debuglevel=0):
    """
    Solve every profile's network; returns (columns in profile order, merged stats).
    """
    options = options or PricingOptions()
    stats = PricingStats()

    def one(graph):
        return solve_espprc(graph, duals, mode, options, debuglevel)

    if options.threads > 1 and len(graphs) > 1:
        if graphs:
            duals.delta_prefix(graphs[0].instance.levels, graphs[0].instance.time_span)
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            results = list(pool.map(one, graphs))
    else:
        results = [one(g) for g in graphs]
    columns = []
    for cols, s in results:
        columns.extend(cols)
        stats.merge(s)
    return columns, stats
