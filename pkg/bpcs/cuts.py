"""
cuts.py - Rank-1 Chvatal-Gomory cuts over the covering and workforce rows.
=========================================================================
A cut is defined by multipliers u_i on task rows and u_{k,t} on aggregated
workforce rows. Its coefficient for a column is
    floor( sum_{i in route} u_i + sum_k sum_{t=tl..tr} xi_k u_{k,t} )
and its right hand side is floor( sum_i u_i + sum_k N_k sum_t u_{k,t} ).
Columns of either master kind are charged through their aggregated requirement
xi, so cuts stay valid when a node switches to the disaggregated master.

Multipliers are snapped to multiples of 1/64 (kept below 1), which keeps every
sum exact in binary floating point.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from bpcs.lp_mip import GE, LE, LinearProgram, solve_mip

log = logging.getLogger(__name__)

GRID = 64
MAX_MULTIPLIER = 1.0 - 1.0 / GRID
FRACTION_MARGIN = 0.01
MIN_VIOLATION = 1e-6
SPARSITY_WEIGHT = 1e-4


def snap(u):
    return min(max(round(u * GRID), 0), GRID - 1) / GRID


@dataclass(frozen=True, eq=False)
class ChvatalGomoryCut:
    index: int
    task_multipliers: dict
    workforce_multipliers: dict
    rhs: int
    coefficients: dict = field(default_factory=dict)
    violation: float = 0.0

    def task_weight(self, route):
        return sum(self.task_multipliers.get(i, 0.0) for i in route)

    def workforce_weight(self, requirement, start, end):
        """sum_k requirement[k] * sum_{t=start..end} u_{k,t}"""
        total = 0.0
        for (k, t), u in self.workforce_multipliers.items():
            if start <= t <= end:
                total += requirement[k] * u
        return total

    def workforce_prefix(self, levels, span):
        """Per level cumulative sums P[k, t] = sum_{t' < t} u_{k,t'} over [0, span]."""
        dense = np.zeros((levels, span + 2))
        for (k, t), u in self.workforce_multipliers.items():
            if 0 <= t <= span:
                dense[k, t + 1] += u
        return np.cumsum(dense, axis=1)


def coefficient_for_column(cut, column):
    value = cut.task_weight(column.route) + cut.workforce_weight(column.xi, column.tl, column.tr)
    return int(math.floor(value))


def cut_rhs(task_multipliers, workforce_multipliers, cumulative):
    value = sum(task_multipliers.values())
    value += sum(cumulative[k] * u for (k, _), u in workforce_multipliers.items())
    return int(math.floor(value))


def make_cut(index, task_multipliers, workforce_multipliers, cumulative, support=()):
    """Build a cut from (already snapped) multipliers; support = [(key, column, value)]."""
    tasks = {i: u for i, u in task_multipliers.items() if u > 0.0}
    workforce = {kt: u for kt, u in workforce_multipliers.items() if u > 0.0}
    rhs = cut_rhs(tasks, workforce, cumulative)
    probe = ChvatalGomoryCut(index, tasks, workforce, rhs)
    coefficients = {key: coefficient_for_column(probe, col) for key, col, _ in support}
    violation = sum(coefficients[key] * value for key, _, value in support) - rhs
    return ChvatalGomoryCut(index, tasks, workforce, rhs, coefficients, violation)


def separate(master, lp_solution=None, time_limit=0.3, index=None):
    """
    Most violated rank-1 cut for the current master LP point, found by the
    Fischetti-Lodi separation MIP within time_limit. Returns None when no
    violated cut turns up.
    """
    values = master.values if lp_solution is None else master.values_of(lp_solution)
    support = [(key, col, x) for key, (col, x) in sorted(values.items()) if x > 1e-6]
    if not support or all(abs(x - round(x)) <= 1e-6 for _, _, x in support):
        return None
    instance = master.instance
    cumulative = instance.workforce.cumulative
    levels = instance.levels
    rows = set()
    for _, col, _ in support:
        for k in range(levels):
            if col.xi[k] > 0:
                for t in range(col.tl, col.tr + 1):
                    rows.add((k, t))
    rows = sorted(rows)

    lp = LinearProgram('cg-separation')
    u_task = {t.id: lp.add_variable(SPARSITY_WEIGHT, 0.0, MAX_MULTIPLIER, name='u_%d' % t.id)
              for t in instance.tasks}
    u_wf = {kt: lp.add_variable(SPARSITY_WEIGHT, 0.0, MAX_MULTIPLIER, name='u_%d_%d' % kt) for kt in rows}
    alpha = {}
    for key, col, x in support:
        alpha[key] = lp.add_variable(-x, 0.0, math.inf, integer=True, name='a_%d' % key)
    alpha0 = lp.add_variable(1.0, 0.0, math.inf, integer=True, name='a0')
    for key, col, _ in support:
        row = {u_task[i]: 1.0 for i in col.route}
        for k in range(levels):
            if col.xi[k] > 0:
                for t in range(col.tl, col.tr + 1):
                    row[u_wf[(k, t)]] = row.get(u_wf[(k, t)], 0.0) + col.xi[k]
        row[alpha[key]] = -1.0
        lp.add_row(row, GE, 0.0)
        lp.add_row(row, LE, 1.0 - FRACTION_MARGIN)
    row = {u_task[i]: 1.0 for i in u_task}
    for kt, var in u_wf.items():
        row[var] = float(cumulative[kt[0]])
    row[alpha0] = -1.0
    lp.add_row(row, GE, 0.0)
    lp.add_row(row, LE, 1.0 - FRACTION_MARGIN)

    result = solve_mip(lp, time_limit=time_limit)
    if not result.has_solution:
        log.debug('cut separation found no solution (%s)', result.status)
        return None
    x = result.x
    tasks = {i: snap(x[v]) for i, v in u_task.items()}
    workforce = {kt: snap(x[v]) for kt, v in u_wf.items()}
    cut = make_cut(len(master.cuts) if index is None else index, tasks, workforce, cumulative, support)
    if cut.violation < MIN_VIOLATION:
        log.debug('best cut violation %.3g too small', cut.violation)
        return None
    log.info('separated cut %d: rhs %d, violation %.4f', cut.index, cut.rhs, cut.violation)
    return cut
