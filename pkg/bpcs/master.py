"""
master.py - Aggregated and disaggregated restricted master problems.
====================================================================
* ColumnPool: append-only store shared by every node of the search tree.
  Columns are addressed by their pool index, which doubles as the LP variable
  name, so the pool never forgets a column it has seen.
* BranchDecisions: the node-local filters (finish windows, tour-count rows,
  forced and forbidden routes). Filtered columns stay in the LP with upper
  bound 0.
* MasterProblem: builds the covering / workforce / cut / tour-count LP for the
  columns of one kind, solves it with lp_mip and hands duals to pricing.
  Workforce rows are only materialised at (level, time) pairs some column
  occupies.
"""
import logging
import math
from dataclasses import dataclass

from bpcs import lp_mip
from bpcs.cuts import coefficient_for_column
from bpcs.lp_mip import GE, INT_TOL, LE, LinearProgram, solve_lp
from bpcs.model import AGGREGATED, DISAGGREGATED, artificial_column, evaluate_route
from bpcs.pricing import DualSnapshot

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-6


class ColumnPool(object):
    """Append-only list of columns with duplicate detection."""

    def __init__(self, columns=()):
        self.columns = []
        self._index = {}
        self._expanded = set()
        for column in columns:
            self.add(column)

    def __len__(self):
        return len(self.columns)

    def __iter__(self):
        return iter(self.columns)

    def __getitem__(self, idx):
        return self.columns[idx]

    def add(self, column):
        """Append column; returns its index, or None when already pooled."""
        if column.key in self._index:
            return None
        self._index[column.key] = len(self.columns)
        self.columns.append(column)
        return len(self.columns) - 1

    def index_of(self, column):
        return self._index.get(column.key)

    def of_kind(self, kind):
        return [(idx, col) for idx, col in enumerate(self.columns) if col.kind == kind]

    def expand_disaggregated(self, instance):
        """
        Add every composition of every aggregated column not expanded yet.
        The artificial column gets the full per-level workforce.
        Returns the number of new columns.
        """
        added = 0
        for idx, col in self.of_kind(AGGREGATED):
            if idx in self._expanded:
                continue
            self._expanded.add(idx)
            if col.artificial:
                compositions = [instance.workforce.per_level]
            else:
                compositions = instance.compositions[col.profile]
            for s in compositions:
                if self.add(col.with_composition(s)) is not None:
                    added += 1
        return added


@dataclass(frozen=True)
class RouteKey:
    route: tuple
    profile: int
    composition: tuple
    tl: int

    @classmethod
    def of(cls, column, with_composition=True):
        return cls(column.route, column.profile, column.composition if with_composition else None, column.tl)

    def matches(self, column):
        if column.artificial:
            return False
        if self.route != column.route or self.profile != column.profile or self.tl != column.tl:
            return False
        return self.composition is None or self.composition == column.composition


@dataclass(frozen=True)
class TourRow:
    """Number of tours active at tau compared against rhs."""
    tau: int
    sense: str
    rhs: int


@dataclass(frozen=True)
class BranchDecisions:
    windows: tuple = ()
    tour_rows: tuple = ()
    forced: tuple = ()
    forbidden: tuple = ()

    def window(self, task_id):
        """(lo, hi) bounds on the gamma-scenario finish of task_id."""
        lo, hi = -math.inf, math.inf
        for tid, a, b in self.windows:
            if tid == task_id:
                lo, hi = max(lo, a), min(hi, b)
        return lo, hi

    def with_window(self, task_id, lo=-math.inf, hi=math.inf):
        return BranchDecisions(self.windows + ((task_id, lo, hi),), self.tour_rows, self.forced, self.forbidden)

    def with_tour_row(self, tau, sense, rhs):
        return BranchDecisions(self.windows, self.tour_rows + (TourRow(tau, sense, rhs),), self.forced,
                               self.forbidden)

    def with_forced(self, key):
        return BranchDecisions(self.windows, self.tour_rows, self.forced + (key,), self.forbidden)

    def with_forbidden(self, key):
        return BranchDecisions(self.windows, self.tour_rows, self.forced, self.forbidden + (key,))

    @property
    def forced_tasks(self):
        return frozenset(i for key in self.forced for i in key.route)

    def allows(self, column):
        if column.artificial:
            return True
        for task_id, g in zip(column.route, column.gamma_finishes):
            lo, hi = self.window(task_id)
            if g < lo or g > hi:
                return False
        if any(key.matches(column) for key in self.forbidden):
            return False
        for key in self.forced:
            if not key.matches(column) and set(key.route) & set(column.route):
                return False
        return True


class MasterProblem(object):
    """
    The restricted master LP of one kind over the columns of a pool.
    """

    def __init__(self, instance, kind, pool, decisions=None, cuts=(), debuglevel=0):
        if kind not in (AGGREGATED, DISAGGREGATED):
            raise ValueError('unknown master kind %r' % (kind,))
        self.instance = instance
        self.kind = kind
        self.pool = pool
        self.decisions = decisions if decisions is not None else BranchDecisions()
        self.cuts = list(cuts)
        self.debuglevel = debuglevel
        self.lp = None
        self.solution = None
        self.variables = []
        self.cover_rows = {}
        self.workforce_rows = {}
        self.cut_rows = []
        self.tour_rows = []
        self._basis = None

    def set_debuglevel(self, debuglevel=0):
        self.debuglevel = debuglevel

    @property
    def capacities(self):
        """Right hand sides of the workforce rows per level."""
        if self.kind == AGGREGATED:
            return self.instance.workforce.cumulative
        return self.instance.workforce.per_level

    def active(self):
        return self.pool.of_kind(self.kind)

    def add_column(self, column):
        """Add a priced column; returns True when it is new to the pool."""
        if column.kind != self.kind:
            raise ValueError('%s column offered to the %s master' % (column.kind, self.kind))
        return self.pool.add(column) is not None

    def add_cut(self, cut):
        self.cuts.append(cut)

    def build_lp(self):
        instance = self.instance
        lp = LinearProgram('armp' if self.kind == AGGREGATED else 'drmp')
        columns = self.active()
        self.variables = [idx for idx, _ in columns]
        allowed = []
        for idx, col in columns:
            ok = self.decisions.allows(col)
            allowed.append(ok)
            lp.add_variable(col.expected_cost, 0.0, math.inf if ok else 0.0, name='lam%d' % idx)

        self.cover_rows = {}
        for task in instance.tasks:
            coeffs = {j: 1.0 for j, (_, col) in enumerate(columns) if col.covers(task.id)}
            self.cover_rows[task.id] = lp.add_row(coeffs, GE, 1.0, name='cover%d' % task.id)

        usage = {}
        for j, (_, col) in enumerate(columns):
            if not allowed[j]:
                continue
            req = col.requirement
            for k in range(instance.levels):
                if req[k] > 0:
                    for tau in range(col.tl, col.tr + 1):
                        usage.setdefault((k, tau), {})[j] = float(req[k])
        caps = self.capacities
        self.workforce_rows = {}
        for (k, tau) in sorted(usage):
            self.workforce_rows[(k, tau)] = lp.add_row(usage[(k, tau)], LE, float(caps[k]),
                                                       name='wf%d_%d' % (k, tau))

        self.cut_rows = []
        for cut in self.cuts:
            coeffs = {}
            for j, (_, col) in enumerate(columns):
                a = coefficient_for_column(cut, col)
                if a:
                    coeffs[j] = float(a)
            self.cut_rows.append(lp.add_row(coeffs, LE, float(cut.rhs), name='cg%d' % cut.index))

        self.tour_rows = []
        for row in self.decisions.tour_rows:
            coeffs = {j: 1.0 for j, (_, col) in enumerate(columns) if not col.artificial and col.occupied(row.tau)}
            self.tour_rows.append(lp.add_row(coeffs, row.sense, float(row.rhs), name='tour%d' % row.tau))
        self.lp = lp
        return lp

    def resolve(self):
        """Rebuild the LP over the current pool and solve it, warm started from the last basis."""
        lp = self.build_lp()
        sol = solve_lp(lp, basis=self._basis)
        if sol.status == lp_mip.OPTIMAL:
            self._basis = sol.basis
        elif self.debuglevel > 0:
            log.debug('%s master LP ended with status %s', self.kind, sol.status)
        self.solution = sol
        if self.debuglevel > 1:
            log.debug('%s master: %d columns, %d rows, objective %.6f', self.kind, lp.num_vars, lp.num_rows,
                      sol.objective)
        return sol

    @property
    def objective(self):
        return self.solution.objective if self.solution is not None else math.inf

    @property
    def is_optimal(self):
        return self.solution is not None and self.solution.status == lp_mip.OPTIMAL

    def price_duals(self):
        """
        Dual snapshot for pricing. Covering prices already carry w_i * EF_i so
        that label costs add up to exact reduced costs.
        """
        y = self.solution.duals
        instance = self.instance
        cover = {tid: max(0.0, float(y[row])) for tid, row in self.cover_rows.items()}
        mu = {t.id: cover[t.id] + t.weight * t.ef for t in instance.tasks}
        delta = {kt: min(0.0, float(y[row])) for kt, row in self.workforce_rows.items()}
        psi = tuple(max(0.0, -float(y[row])) for row in self.cut_rows)
        tours = []
        for spec, row in zip(self.decisions.tour_rows, self.tour_rows):
            dual = float(y[row])
            dual = max(0.0, dual) if spec.sense == GE else min(0.0, dual)
            tours.append((spec.tau, dual))
        return DualSnapshot(mu, delta, psi, tuple(self.cuts), tuple(tours))

    def values_of(self, solution):
        return {idx: (self.pool[idx], float(solution.x[j])) for j, idx in enumerate(self.variables)}

    @property
    def values(self):
        return self.values_of(self.solution)

    def selected(self, tol=SUPPORT_TOL):
        """(pool index, column, value) for columns with positive LP value."""
        return [(idx, col, x) for idx, (col, x) in sorted(self.values.items()) if x > tol]

    def is_integral(self, tol=INT_TOL):
        return all(abs(x - round(x)) <= tol for _, _, x in self.selected())

    def integer_columns(self):
        """Columns at value one (with repetition when a value rounds above one)."""
        out = []
        for _, col, x in self.selected():
            out.extend([col] * int(round(x)))
        return out

    def uses_artificial(self):
        return any(col.artificial for _, col, _ in self.selected())

    def tour_count(self, tau):
        return sum(x for _, col, x in self.selected() if not col.artificial and col.occupied(tau))

    def dump(self, path):
        lp = self.lp if self.lp is not None else self.build_lp()
        with open(path, 'w') as f:
            f.write(lp.to_text())


def earliest_singleton(instance, task, profile_id):
    """
    Singleton route leaving at ES - fastest travel, or at the latest earlier
    leave time that makes it feasible. None when no leave time works.
    """
    loc = task.location
    tmin = instance.edges.min_time(instance.depot, loc)
    tmax = instance.edges.max_time(instance.depot, loc)
    start = max(0, task.es - tmin)
    for tl in range(start, max(0, task.es - tmax) - 1, -1):
        col = evaluate_route(instance, (task.id,), profile_id, tl)
        if col is not None:
            return col
    return None


def initial_columns(instance):
    """Singleton routes at their earliest feasible leave time plus the artificial column."""
    columns = []
    for task in instance.tasks:
        for q in task.profiles:
            col = earliest_singleton(instance, task, q)
            if col is None:
                log.info('task %d has no feasible singleton route for profile %d', task.id, q)
                continue
            columns.append(col)
    columns.append(artificial_column(instance))
    return columns


def build(instance, columns, kind=AGGREGATED, decisions=None, cuts=(), debuglevel=0):
    pool = columns if isinstance(columns, ColumnPool) else ColumnPool(columns)
    if kind == DISAGGREGATED:
        pool.expand_disaggregated(instance)
    return MasterProblem(instance, kind, pool, decisions, cuts, debuglevel)


def to_aggregated(columns):
    """Map disaggregated columns onto their team routes (same costs, cumulative requirements)."""
    return [col.aggregated() for col in columns]
