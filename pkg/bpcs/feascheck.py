"""
feascheck.py - Can a set of selected routes be staffed by real workers?
=======================================================================
An integer aggregated master solution only bounds workers of "level k or
higher" at each instant. feasibility_check() builds the worker regrouping
problem: integer flows of level-k workers from the depot into routes, between
routes (from a route that is back at the depot before the next one leaves) and
back to the depot, with slack on the cumulative requirements. The solution is
disaggregated-feasible iff the minimum slack is zero; the flows are then the
regrouping plan.

construct_dmp_certificate() builds such flows greedily for routes that already
carry an exact skill composition, which always succeeds for a solution of the
disaggregated master.

Flow keys are (level, source, target) where source/target are route indices
into the column list, model.DEPOT_OUT or model.DEPOT_IN.
"""
import logging

from bpcs import lp_mip
from bpcs.lp_mip import EQ, GE, LinearProgram, solve_mip
from bpcs.model import DEPOT_IN, DEPOT_OUT

log = logging.getLogger(__name__)

INFLOW_WEIGHT = 1e-3


class CertificateError(RuntimeError):
    """The greedy construction could not staff a disaggregated solution."""


def predecessors(columns):
    """pred[r]: routes back at the depot strictly before route r leaves."""
    return [[j for j, other in enumerate(columns) if j != r and other.tr < col.tl]
            for r, col in enumerate(columns)]


def successors(columns):
    pred = predecessors(columns)
    succ = [[] for _ in columns]
    for r, ps in enumerate(pred):
        for j in ps:
            succ[j].append(r)
    return succ


def feasibility_check(columns, workforce, time_limit=None):
    """
    Minimum number of extra workers needed to staff `columns`.
    Returns (feasible, slack_total, flows).
    """
    columns = list(columns)
    levels = workforce.levels
    per_level = workforce.per_level
    pred = predecessors(columns)
    succ = successors(columns)
    lp = LinearProgram('feasibility-check')
    weight = INFLOW_WEIGHT / (1.0 + sum(per_level))
    x = {}
    chi = {}
    for k in range(levels):
        x[(k, DEPOT_OUT, DEPOT_IN)] = lp.add_variable(0.0, 0.0, per_level[k], integer=True,
                                                      name='x_%d_o_oo' % k)
        for r in range(len(columns)):
            x[(k, DEPOT_OUT, r)] = lp.add_variable(weight, 0.0, per_level[k], integer=True,
                                                   name='x_%d_o_%d' % (k, r))
            x[(k, r, DEPOT_IN)] = lp.add_variable(0.0, 0.0, per_level[k], integer=True,
                                                  name='x_%d_%d_oo' % (k, r))
            for j in pred[r]:
                x[(k, j, r)] = lp.add_variable(weight, 0.0, per_level[k], integer=True,
                                               name='x_%d_%d_%d' % (k, j, r))
            chi[(k, r)] = lp.add_variable(1.0, 0.0, columns[r].xi[k], integer=True, name='chi_%d_%d' % (k, r))

    for r, col in enumerate(columns):
        for k in range(levels):
            row = {}
            for kappa in range(k, levels):
                row[x[(kappa, DEPOT_OUT, r)]] = 1.0
                for j in pred[r]:
                    row[x[(kappa, j, r)]] = 1.0
            row[chi[(k, r)]] = 1.0
            lp.add_row(row, GE, float(col.xi[k]), name='req_%d_%d' % (r, k))
        for k in range(levels):
            row = {x[(k, DEPOT_OUT, r)]: 1.0, x[(k, r, DEPOT_IN)]: -1.0}
            for j in pred[r]:
                row[x[(k, j, r)]] = 1.0
            for j in succ[r]:
                row[x[(k, r, j)]] = -1.0
            lp.add_row(row, EQ, 0.0, name='flow_%d_%d' % (r, k))
    for k in range(levels):
        out = {x[(k, DEPOT_OUT, DEPOT_IN)]: 1.0}
        back = {x[(k, DEPOT_OUT, DEPOT_IN)]: 1.0}
        for r in range(len(columns)):
            out[x[(k, DEPOT_OUT, r)]] = 1.0
            back[x[(k, r, DEPOT_IN)]] = 1.0
        lp.add_row(out, EQ, float(per_level[k]), name='leave_%d' % k)
        lp.add_row(back, EQ, float(per_level[k]), name='return_%d' % k)

    result = solve_mip(lp, time_limit=time_limit)
    if not result.has_solution:
        # only reachable on a time limit; the all-slack point is always feasible
        log.warning('feasibility check ended without a solution (%s)', result.status)
        return False, None, {}
    slack = int(round(sum(result.x[v] for v in chi.values())))
    flows = {}
    for key, v in x.items():
        n = int(round(result.x[v]))
        if n:
            flows[key] = n
    feasible = slack == 0
    if result.status != lp_mip.OPTIMAL and not feasible:
        log.warning('feasibility check stopped at %s with slack %d', result.status, slack)
    log.info('feasibility check over %d routes: slack %d', len(columns), slack)
    return feasible, slack, flows


def construct_dmp_certificate(columns, workforce):
    """
    Regrouping flows for routes with exact compositions: routes are staffed in
    leave-time order, first from their predecessors (earliest leave time
    first), then from the depot.
    """
    columns = list(columns)
    for col in columns:
        if col.composition is None:
            raise ValueError('certificate needs disaggregated columns')
    levels = workforce.levels
    per_level = workforce.per_level
    pred = predecessors(columns)
    flows = {}

    def add(k, src, dst, n):
        if n:
            flows[(k, src, dst)] = flows.get((k, src, dst), 0) + n

    inflow = [[0] * levels for _ in columns]
    outflow = [[0] * levels for _ in columns]
    from_depot = [0] * levels

    first = [r for r in range(len(columns)) if not pred[r]]
    rest = sorted((r for r in range(len(columns)) if pred[r]), key=lambda r: (columns[r].tl, r))
    for r in first:
        for k in range(levels):
            need = columns[r].composition[k]
            add(k, DEPOT_OUT, r, need)
            inflow[r][k] += need
            from_depot[k] += need
    for r in rest:
        s = columns[r].composition
        ordered = sorted(pred[r], key=lambda j: (columns[j].tl, j))
        for k in range(levels):
            for j in ordered:
                if inflow[r][k] == s[k]:
                    break
                n = min(s[k] - inflow[r][k], inflow[j][k] - outflow[j][k])
                if n > 0:
                    add(k, j, r, n)
                    inflow[r][k] += n
                    outflow[j][k] += n
            if s[k] > inflow[r][k]:
                n = min(s[k] - inflow[r][k], per_level[k] - from_depot[k])
                add(k, DEPOT_OUT, r, n)
                inflow[r][k] += n
                from_depot[k] += n
            if inflow[r][k] != s[k]:
                raise CertificateError('route %d (%s) short of %d level-%d workers'
                                       % (r, columns[r].describe(), s[k] - inflow[r][k], k))
    for r in range(len(columns)):
        for k in range(levels):
            add(k, r, DEPOT_IN, inflow[r][k] - outflow[r][k])
    for k in range(levels):
        add(k, DEPOT_OUT, DEPOT_IN, per_level[k] - from_depot[k])
    return flows


def check_flows(columns, flows, workforce):
    """
    Problems with a regrouping plan as a list of messages; empty when the plan
    staffs every route with zero slack.
    """
    columns = list(columns)
    levels = workforce.levels
    pred = predecessors(columns)
    problems = []
    inflow = [[0] * levels for _ in columns]
    outflow = [[0] * levels for _ in columns]
    leave = [0] * levels
    back = [0] * levels
    for (k, src, dst), n in flows.items():
        if n < 0 or int(n) != n:
            problems.append('flow %r is not a non-negative integer' % ((k, src, dst),))
        if src == DEPOT_OUT:
            leave[k] += n
        if dst == DEPOT_IN:
            back[k] += n
        if src != DEPOT_OUT and dst != DEPOT_IN and src not in pred[dst]:
            problems.append('flow %r joins routes that overlap in time' % ((k, src, dst),))
        if dst != DEPOT_IN:
            inflow[dst][k] += n
        if src != DEPOT_OUT:
            outflow[src][k] += n
    for r, col in enumerate(columns):
        for k in range(levels):
            if sum(inflow[r][k:]) < col.xi[k]:
                problems.append('route %d: %d workers of level >= %d, needs %d'
                                % (r, sum(inflow[r][k:]), k, col.xi[k]))
            if inflow[r][k] != outflow[r][k]:
                problems.append('route %d: level %d flow not conserved' % (r, k))
    for k in range(levels):
        if leave[k] != workforce.per_level[k]:
            problems.append('level %d: %d leave the depot, workforce is %d' % (k, leave[k], workforce.per_level[k]))
        if back[k] != workforce.per_level[k]:
            problems.append('level %d: %d return to the depot, workforce is %d' % (k, back[k], workforce.per_level[k]))
    return problems
