"""
lp_mip.py - Embedded LP and MIP solver.
=======================================
* LinearProgram collects variables (bounds, objective, integrality) and rows
  (sense, right hand side). Everything is a minimisation.
* solve_lp() is a two-phase bounded-variable revised simplex working on dense
  numpy arrays, with an explicit basis inverse refreshed every REFACTOR_EVERY
  pivots. Dantzig pricing switches to Bland's rule after DEGENERATE_LIMIT
  degenerate pivots. Row duals come back with the usual minimisation signs:
  >= rows have duals >= 0, <= rows have duals <= 0.
* solve_mip() is best-first branch and bound over solve_lp(), branching on the
  most fractional integer variable.
"""
import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
INT_TOL = 1e-6
GAP_TOL = 1e-6
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
DEGENERATE_LIMIT = 1000
REFACTOR_EVERY = 50
MAX_ITERATIONS = 50000
NODE_LIMIT = 100000

LE = '<='
GE = '>='
EQ = '='
SENSES = (LE, GE, EQ)

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'
UNBOUNDED = 'unbounded'
ITERATION_LIMIT = 'iteration_limit'
TIME_LIMIT = 'time_limit'
NODE_LIMITED = 'node_limit'
NO_SOLUTION = 'no_solution'


class LinearProgram(object):
    """
    min c x  s.t.  rows (<=, >=, =),  lb <= x <= ub,  x_j integer where flagged.
    Lower bounds must be finite.
    """

    def __init__(self, name='lp'):
        self.name = name
        self.obj = []
        self.lb = []
        self.ub = []
        self.integer = []
        self.var_names = []
        self.rows = []
        self.senses = []
        self.rhs = []
        self.row_names = []
        self._dense = None

    @property
    def num_vars(self):
        return len(self.obj)

    @property
    def num_rows(self):
        return len(self.rows)

    @property
    def is_mip(self):
        return any(self.integer)

    def add_variable(self, obj=0.0, lb=0.0, ub=math.inf, integer=False, name=None):
        if not math.isfinite(lb):
            raise ValueError('variable lower bounds must be finite')
        self.obj.append(float(obj))
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.integer.append(bool(integer))
        self.var_names.append(name or 'x%d' % len(self.obj))
        self._dense = None
        return len(self.obj) - 1

    def add_row(self, coeffs, sense, rhs, name=None):
        if sense not in SENSES:
            raise ValueError('unknown row sense %r' % (sense,))
        row = {}
        for j, a in coeffs.items():
            if not 0 <= j < self.num_vars:
                raise ValueError('row refers to unknown variable %r' % (j,))
            if a != 0.0:
                row[j] = row.get(j, 0.0) + float(a)
        self.rows.append(row)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or 'r%d' % len(self.rows))
        self._dense = None
        return len(self.rows) - 1

    def set_bounds(self, j, lb=None, ub=None):
        if lb is not None:
            self.lb[j] = float(lb)
        if ub is not None:
            self.ub[j] = float(ub)

    def matrix(self):
        if self._dense is None:
            A = np.zeros((self.num_rows, self.num_vars))
            for i, row in enumerate(self.rows):
                for j, a in row.items():
                    A[i, j] = a
            self._dense = A
        return self._dense

    def activity(self, x):
        return self.matrix() @ np.asarray(x, dtype=float)

    def is_feasible(self, x, tol=FEAS_TOL):
        x = np.asarray(x, dtype=float)
        if np.any(x < np.asarray(self.lb) - tol) or np.any(x > np.asarray(self.ub) + tol):
            return False
        act = self.activity(x) if self.num_rows else np.zeros(0)
        for a, sense, b in zip(act, self.senses, self.rhs):
            scale = tol * max(1.0, abs(b))
            if sense == LE and a > b + scale:
                return False
            if sense == GE and a < b - scale:
                return False
            if sense == EQ and abs(a - b) > scale:
                return False
        return True

    def to_text(self):
        """LP-format text for debugging."""
        def term(a, name):
            return '%s %.10g %s' % ('-' if a < 0 else '+', abs(a), name)
        out = ['\\ %s' % self.name, 'Minimize', ' obj: ' + ' '.join(
            term(a, n) for a, n in zip(self.obj, self.var_names) if a != 0.0), 'Subject To']
        for name, row, sense, b in zip(self.row_names, self.rows, self.senses, self.rhs):
            lhs = ' '.join(term(a, self.var_names[j]) for j, a in sorted(row.items())) or '0 x0'
            out.append(' %s: %s %s %.10g' % (name, lhs, sense, b))
        out.append('Bounds')
        for name, lo, hi in zip(self.var_names, self.lb, self.ub):
            out.append(' %.10g <= %s <= %s' % (lo, name, '+inf' if math.isinf(hi) else '%.10g' % hi))
        ints = [n for n, flag in zip(self.var_names, self.integer) if flag]
        if ints:
            out.append('General')
            out.append(' ' + ' '.join(ints))
        out.append('End')
        return '\n'.join(out) + '\n'


@dataclass
class LpSolution:
    status: str
    x: np.ndarray = None
    objective: float = math.inf
    duals: np.ndarray = None
    reduced_costs: np.ndarray = None
    basis: list = field(default_factory=list)
    iterations: int = 0
    bound: float = -math.inf
    nodes: int = 0

    @property
    def has_solution(self):
        return self.x is not None and self.status in (OPTIMAL, TIME_LIMIT, NODE_LIMITED, ITERATION_LIMIT)


class _Simplex(object):
    """One solve of the bounded revised simplex over M y = b."""

    def __init__(self, M, b, lbs, ubs, max_iterations):
        self.M = M
        self.b = b
        self.lbs = lbs
        self.ubs = ubs
        self.max_iterations = max_iterations
        self.iterations = 0
        self.bland = False
        self.degenerate = 0

    def refactor(self, x, basis):
        self.Binv = np.linalg.inv(self.M[:, basis])
        nonbasic = np.ones(self.M.shape[1], dtype=bool)
        nonbasic[basis] = False
        x[basis] = self.Binv @ (self.b - self.M[:, nonbasic] @ x[nonbasic])

    def run(self, cost, x, basis):
        M = self.M
        lbs, ubs = self.lbs, self.ubs
        self.refactor(x, basis)
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iterations:
                return ITERATION_LIMIT
            if since_refactor >= REFACTOR_EVERY:
                self.refactor(x, basis)
                since_refactor = 0
            y = cost[basis] @ self.Binv
            d = cost - y @ M
            nonbasic = np.ones(M.shape[1], dtype=bool)
            nonbasic[basis] = False
            movable = ubs - lbs > FEAS_TOL
            up = nonbasic & movable & (d < -OPT_TOL) & (x < ubs - FEAS_TOL)
            down = nonbasic & movable & (d > OPT_TOL) & (x > lbs + FEAS_TOL)
            cands = np.nonzero(up | down)[0]
            if cands.size == 0:
                self.y = y
                self.d = d
                return OPTIMAL
            if self.bland:
                j = int(cands[0])
            else:
                j = int(cands[np.argmax(np.abs(d[cands]))])
            direction = 1.0 if up[j] else -1.0
            alpha = self.Binv @ M[:, j]
            rates = -direction * alpha
            xb = x[basis]
            limits = np.full(len(basis), np.inf)
            dec = rates < -PIVOT_TOL
            inc = rates > PIVOT_TOL
            limits[dec] = (xb[dec] - lbs[basis][dec]) / (-rates[dec])
            limits[inc] = (ubs[basis][inc] - xb[inc]) / rates[inc]
            limits = np.maximum(limits, 0.0)
            flip = ubs[j] - lbs[j]
            theta = limits.min() if limits.size else np.inf
            if not math.isfinite(theta) and not math.isfinite(flip):
                return UNBOUNDED
            if flip <= theta:
                x[j] += direction * flip
                x[basis] = xb + rates * flip
                step = flip
            else:
                ties = np.nonzero(limits <= theta + 1e-12)[0]
                if self.bland:
                    r = int(ties[np.argmin(np.asarray(basis)[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
                leaving = basis[r]
                x[j] += direction * theta
                x[basis] = xb + rates * theta
                x[leaving] = lbs[leaving] if rates[r] < 0 else ubs[leaving]
                pivot_row = self.Binv[r] / alpha[r]
                self.Binv -= np.outer(alpha, pivot_row)
                self.Binv[r] = pivot_row
                basis[r] = j
                step = theta
            self.iterations += 1
            since_refactor += 1
            if step < 1e-12:
                self.degenerate += 1
                if self.degenerate > DEGENERATE_LIMIT and not self.bland:
                    log.debug('switching to Bland pricing after %d degenerate pivots', self.degenerate)
                    self.bland = True


def _standard_form(lp):
    A = lp.matrix()
    m, n = A.shape
    ineq = [i for i in range(m) if lp.senses[i] != EQ]
    S = np.zeros((m, len(ineq)))
    for col, i in enumerate(ineq):
        S[i, col] = 1.0 if lp.senses[i] == LE else -1.0
    return A, ineq, S


def _basis_ids(basis, n, ineq):
    ids = []
    for j in basis:
        if j < n:
            ids.append(('x', int(j)))
        elif j < n + len(ineq):
            ids.append(('s', int(ineq[j - n])))
        else:
            ids.append(('a', int(j - n - len(ineq))))
    return ids


def _warm_basis(hint, n, ineq, m):
    slack_of = {i: n + pos for pos, i in enumerate(ineq)}
    cols = []
    seen_rows = set()
    for kind, idx in hint:
        if kind == 'x' and idx < n:
            cols.append(idx)
        elif kind == 's' and idx in slack_of:
            cols.append(slack_of[idx])
            seen_rows.add(idx)
        else:
            return None
    # rows added since the hint was taken enter with their slack
    for i in range(m):
        if len(cols) >= m:
            break
        if i in slack_of and slack_of[i] not in cols and i not in seen_rows and i >= len(hint):
            cols.append(slack_of[i])
    if len(cols) != m or len(set(cols)) != m:
        return None
    return cols


def solve_lp(lp, lb=None, ub=None, basis=None, max_iterations=MAX_ITERATIONS):
    """
    Solve the LP relaxation of `lp`, optionally with overriding bound vectors and a
    basis hint from a previous solve (used only when it is primal feasible).
    """
    c = np.asarray(lp.obj, dtype=float)
    lb = np.asarray(lp.lb if lb is None else lb, dtype=float)
    ub = np.asarray(lp.ub if ub is None else ub, dtype=float)
    n = c.size
    if np.any(lb > ub + FEAS_TOL):
        return LpSolution(INFEASIBLE)
    A, ineq, S = _standard_form(lp)
    m = A.shape[0]
    b = np.asarray(lp.rhs, dtype=float)
    if m == 0:
        if np.any((c < 0) & np.isinf(ub)):
            return LpSolution(UNBOUNDED)
        x = np.where(c < 0, ub, lb)
        return LpSolution(OPTIMAL, x, float(c @ x), np.zeros(0), c.copy())
    n_s = len(ineq)
    M = np.hstack([A, S, np.eye(m)])
    total = n + n_s + m
    lbs = np.concatenate([lb, np.zeros(n_s + m)])
    ubs = np.concatenate([ub, np.full(n_s, np.inf), np.zeros(m)])
    x = np.zeros(total)
    x[:n] = lb
    cost2 = np.concatenate([c, np.zeros(n_s + m)])

    start = None
    if basis:
        cols = _warm_basis(basis, n, ineq, m)
        if cols is not None:
            try:
                trial = x.copy()
                Binv = np.linalg.inv(M[:, cols])
                nonbasic = np.ones(total, dtype=bool)
                nonbasic[cols] = False
                trial[cols] = Binv @ (b - M[:, nonbasic] @ trial[nonbasic])
                tol = FEAS_TOL * 10
                if np.all(trial[cols] >= lbs[cols] - tol) and np.all(trial[cols] <= ubs[cols] + tol):
                    start = cols
                    x = trial
            except np.linalg.LinAlgError:
                start = None

    engine = _Simplex(M, b, lbs, ubs, max_iterations)
    if start is None:
        r = b - A @ lb
        start = []
        slack_of = {i: n + pos for pos, i in enumerate(ineq)}
        used = []
        for i in range(m):
            sense = lp.senses[i]
            if sense == LE and r[i] >= 0:
                start.append(slack_of[i])
                x[slack_of[i]] = r[i]
            elif sense == GE and r[i] <= 0:
                start.append(slack_of[i])
                x[slack_of[i]] = -r[i]
            else:
                a = n + n_s + i
                M[i, a] = 1.0 if r[i] >= 0 else -1.0
                ubs[a] = np.inf
                x[a] = abs(r[i])
                start.append(a)
                used.append(a)
        if used:
            cost1 = np.zeros(total)
            cost1[used] = 1.0
            status = engine.run(cost1, x, start)
            if status != OPTIMAL:
                return LpSolution(status, iterations=engine.iterations)
            infeasibility = float(x[used].sum())
            if infeasibility > FEAS_TOL * max(1.0, float(np.abs(b).max())):
                return LpSolution(INFEASIBLE, iterations=engine.iterations)
            ubs[used] = 0.0
            x[used] = 0.0
            _drive_out_artificials(engine, x, start, n + n_s)
    status = engine.run(cost2, x, start)
    if status != OPTIMAL:
        return LpSolution(status, iterations=engine.iterations)
    xs = np.clip(x[:n], lb, ub)
    return LpSolution(OPTIMAL, xs, float(c @ xs), engine.y.copy(), engine.d[:n].copy(),
                      _basis_ids(start, n, ineq), engine.iterations)


def _drive_out_artificials(engine, x, basis, first_artificial):
    """Pivot zero-valued basic artificials out where a structural column allows it."""
    M = engine.M
    engine.refactor(x, basis)
    for r, j in enumerate(list(basis)):
        if j < first_artificial:
            continue
        row = engine.Binv[r] @ M[:, :first_artificial]
        row[[k for k in basis if k < first_artificial]] = 0.0
        k = int(np.argmax(np.abs(row)))
        if abs(row[k]) <= 1e-7:
            continue
        alpha = engine.Binv @ M[:, k]
        pivot_row = engine.Binv[r] / alpha[r]
        engine.Binv -= np.outer(alpha, pivot_row)
        engine.Binv[r] = pivot_row
        basis[r] = k
    engine.refactor(x, basis)


def _round_heuristic(lp, x, lb, ub, ints):
    """Round the integer variables; re-solve the continuous part if there is one."""
    xr = np.array(x, dtype=float)
    xr[ints] = np.clip(np.round(xr[ints]), lb[ints], ub[ints])
    if len(ints) == lp.num_vars:
        return xr if lp.is_feasible(xr) else None
    flb = lb.copy()
    fub = ub.copy()
    flb[ints] = xr[ints]
    fub[ints] = xr[ints]
    sol = solve_lp(lp, flb, fub)
    if sol.status != OPTIMAL:
        return None
    return sol.x


def solve_mip(lp, time_limit=None, incumbent_callback=None, node_limit=NODE_LIMIT):
    """
    Best-first branch and bound. If the limit is hit the best solution found so
    far is returned with status time_limit / node_limit, or no_solution.
    """
    started = time.perf_counter()
    c = np.asarray(lp.obj, dtype=float)
    ints = np.nonzero(np.asarray(lp.integer, dtype=bool))[0]
    lb0 = np.asarray(lp.lb, dtype=float)
    ub0 = np.asarray(lp.ub, dtype=float)
    root = solve_lp(lp, lb0, ub0)
    if root.status != OPTIMAL:
        return LpSolution(root.status, iterations=root.iterations)
    best_x = None
    best_obj = math.inf
    counter = 0
    heap = [(root.objective, counter, lb0, ub0, root)]
    nodes = 0
    limited = None

    def cutoff():
        return best_obj - GAP_TOL * max(1.0, abs(best_obj)) if best_x is not None else math.inf

    while heap:
        if time_limit is not None and time.perf_counter() - started > time_limit:
            limited = TIME_LIMIT
            break
        if nodes >= node_limit:
            limited = NODE_LIMITED
            break
        bound, _, lb, ub, sol = heapq.heappop(heap)
        if bound >= cutoff():
            continue
        nodes += 1
        x = sol.x
        frac = np.abs(x[ints] - np.round(x[ints]))
        if frac.size == 0 or frac.max() <= INT_TOL:
            xi = x.copy()
            xi[ints] = np.round(xi[ints])
            obj = float(c @ xi)
            if obj < best_obj:
                best_obj, best_x = obj, xi
                if incumbent_callback is not None:
                    incumbent_callback(xi, obj)
            continue
        if best_x is None and (nodes == 1 or nodes % 10 == 0):
            guess = _round_heuristic(lp, x, lb, ub, ints)
            if guess is not None and float(c @ guess) < best_obj:
                best_obj, best_x = float(c @ guess), guess
                if incumbent_callback is not None:
                    incumbent_callback(guess, best_obj)
        # most fractional, ties to the smallest index
        dist = np.abs(frac - 0.5)
        j = int(ints[int(np.argmin(dist))])
        value = x[j]
        for side in (0, 1):
            clb = lb.copy()
            cub = ub.copy()
            if side == 0:
                cub[j] = math.floor(value)
            else:
                clb[j] = math.ceil(value)
            if clb[j] > cub[j]:
                continue
            child = solve_lp(lp, clb, cub, basis=sol.basis)
            if child.status == OPTIMAL and child.objective < cutoff():
                counter += 1
                heapq.heappush(heap, (child.objective, counter, clb, cub, child))
    if limited is None:
        if best_x is None:
            return LpSolution(INFEASIBLE, nodes=nodes)
        return LpSolution(OPTIMAL, best_x, best_obj, bound=best_obj, nodes=nodes)
    open_bound = min([h[0] for h in heap] + [best_obj])
    if best_x is None:
        return LpSolution(NO_SOLUTION, bound=open_bound, nodes=nodes)
    return LpSolution(limited, best_x, best_obj, bound=open_bound, nodes=nodes)
