"""
instance_gen.py - Synthetic baggage-handling instances.
=======================================================
generate() draws a peak-period flight plan: one task per flight, an aircraft
class per flight deciding which team modes (profiles) can serve it and how long
each takes, a stand per flight on an apron grid, and per-bin travel time
distributions between stands. The workforce is a fraction (the worker strength)
of what the trivial plan needs: every task started at ES with its fastest mode
by a team that returns to the depot right after.

The constants live in aircraft.jsn beside this module.

generate_compact() draws the small instances used to cross-check the solver
against exhaustive enumeration.
"""
import json
import logging
import math
import os

import numpy as np
from scipy.optimize import brentq

from bpcs.distributions import DiscreteDistribution
from bpcs.model import EdgeDistributions, EdgeSpec, Instance, Profile, Task, TimeBins, Workforce

log = logging.getLogger(__name__)

HORIZONS = (60, 90, 120)
FLIGHTS_PER_HOUR = (10, 20, 30)
MODE_ORDER = ('slow', 'intermediate', 'fast')

_constants = None


def constants(path=None):
    """The generator constants (aircraft.jsn unless `path` is given)."""
    global _constants
    if path is not None:
        with open(path, 'r') as f:
            return json.load(f)
    if _constants is None:
        with open(os.path.join(os.path.dirname(__file__), 'aircraft.jsn'), 'r') as f:
            _constants = json.load(f)
    return _constants


def truncated_geometric(ratio, support):
    """P(d) proportional to ratio**d on d = 0..support-1."""
    weights = np.power(float(ratio), np.arange(support, dtype=float))
    return weights / weights.sum()


def delay_distribution(mean, support):
    """Truncated geometric delay on {0..support-1} with the given mean."""
    if support < 2:
        return DiscreteDistribution.point(0)
    top = support - 1
    target = min(max(float(mean), 1e-3), top - 1e-3)
    d = np.arange(support, dtype=float)

    def excess(ratio):
        return float(truncated_geometric(ratio, support) @ d) - target

    ratio = brentq(excess, 1e-9, 1e4)
    return DiscreteDistribution.from_dense(0, truncated_geometric(ratio, support))


def _check(horizon, flights_per_hour, strength, modes):
    if horizon not in HORIZONS:
        raise ValueError('horizon must be one of %s minutes, got %r' % (HORIZONS, horizon))
    if flights_per_hour not in FLIGHTS_PER_HOUR:
        raise ValueError('flights per hour must be one of %s, got %r' % (FLIGHTS_PER_HOUR, flights_per_hour))
    if not 0.0 < strength <= 1.0:
        raise ValueError('worker strength must lie in (0, 1], got %r' % (strength,))
    if modes not in constants()['mode_sets']:
        raise ValueError('mode set must be one of %s, got %r' % (constants()['mode_sets'], modes))


def _profiles(data, modes):
    """Profiles per (class, mode) and the modes each class may use under the mode set."""
    wanted = [data['modes'][letter] for letter in modes]
    profiles = []
    usable = {}
    for cls_name in sorted(data['classes']):
        cls_modes = data['classes'][cls_name]['modes']
        chosen = [m for m in MODE_ORDER if m in wanted and m in cls_modes]
        if not chosen:
            chosen = ['slow']
        usable[cls_name] = []
        for mode in chosen:
            q = Profile(len(profiles), tuple(cls_modes[mode]['xi']), '%s-%s' % (cls_name, mode))
            profiles.append(q)
            usable[cls_name].append((q, int(math.ceil(cls_modes[mode]['minutes'] / data['step_minutes']))))
    return profiles, usable


def _stands(rng, data, n):
    width, height = data['stand_grid']
    depot = tuple(data['depot_stand'])
    cells = [(x, y) for x in range(width) for y in range(height) if (x, y) != depot]
    picked = rng.choice(len(cells), size=min(n, len(cells)), replace=False)
    return [depot] + [cells[int(i)] for i in picked]


def _travel_specs(rng, data, coords, locations, n_bins):
    lo, hi = data['delay_support']
    mlo, mhi = data['delay_mean']
    specs = {}
    for a in locations:
        for b in locations:
            if a == b:
                continue
            dist = abs(coords[a][0] - coords[b][0]) + abs(coords[a][1] - coords[b][1])
            t_det = max(1, int(round(dist * data['steps_per_grid_unit'])))
            support = min(int(rng.integers(lo, hi + 1)), data['delay_max'] + 1)
            base = float(rng.uniform(mlo, mhi))
            delays = tuple(delay_distribution(base * data['delay_growth'] ** k, support) for k in range(n_bins))
            specs[(a, b)] = EdgeSpec(t_det, delays)
    return specs


def trivial_need(tasks, profiles_by_id, specs, levels, depot=0):
    """
    Peak number of workers per exact level when every task is served alone at
    ES by its fastest profile, with worst-case travel out and back.
    """
    usage = {}
    for task in tasks:
        q_id = min(task.exec_times, key=lambda q: (task.exec_times[q], profiles_by_id[q].xi[0], q))
        xi = profiles_by_id[q_id].xi
        exact = [xi[k] - (xi[k + 1] if k + 1 < levels else 0) for k in range(levels)]
        out = specs[(depot, task.location)]
        back = specs[(task.location, depot)]
        start = task.es - out.t_det - max(d.max_time for d in out.delays)
        end = task.es + task.exec_times[q_id] + back.t_det + max(d.max_time for d in back.delays)
        for tau in range(start, end + 1):
            row = usage.setdefault(tau, [0] * levels)
            for k in range(levels):
                row[k] += exact[k]
    need = [0] * levels
    for row in usage.values():
        for k in range(levels):
            need[k] = max(need[k], row[k])
    return need


def generate(horizon=60, flights_per_hour=10, strength=0.6, modes='sif', seed=0, path=None):
    """A peak-period instance; the same arguments always give the same instance."""
    _check(horizon, flights_per_hour, strength, modes)
    data = constants(path)
    rng = np.random.default_rng(seed)
    levels = data['levels']
    steps = horizon // data['step_minutes']
    n_tasks = flights_per_hour * horizon // 60
    profiles, usable = _profiles(data, modes)
    profiles_by_id = {q.id: q for q in profiles}

    names = sorted(data['classes'])
    shares = np.array([data['classes'][c]['share'] for c in names], dtype=float)
    shares /= shares.sum()
    coords = _stands(rng, data, data['stand_count'])
    slack_lo, slack_hi = data['window_slack']
    tasks = []
    for i in range(n_tasks):
        cls_name = names[int(rng.choice(len(names), p=shares))]
        exec_times = {q.id: p for q, p in usable[cls_name]}
        es = int(rng.integers(data['earliest_start'], max(data['earliest_start'] + 1, steps)))
        lf = es + max(exec_times.values()) + int(rng.integers(slack_lo, slack_hi + 1))
        location = 1 + int(rng.integers(0, len(coords) - 1))
        tasks.append(Task(i + 1, es, lf, lf + data['lf_extension'], 1.0, location, exec_times))

    locations = sorted({0} | {t.location for t in tasks})
    worst_leg = max(abs(a[0] - b[0]) + abs(a[1] - b[1]) for a in coords for b in coords)
    last = max(t.lf_e for t in tasks) + int(round(worst_leg * data['steps_per_grid_unit'])) + data['delay_max'] + 2
    n_bins = max(1, int(math.ceil(last / data['bin_steps'])))
    specs = _travel_specs(rng, data, coords, locations, n_bins)

    need = trivial_need(tasks, profiles_by_id, specs, levels)
    per_level = tuple(int(math.floor(strength * n)) for n in need)
    name = 'h%d-f%d-s%.1f-%s-%d' % (horizon, flights_per_hour, strength, modes, seed)
    log.info('%s: %d tasks, %d profiles, workforce %s of %s', name, n_tasks, len(profiles), per_level, need)
    return Instance(name=name, tasks=tuple(tasks), profiles=tuple(profiles), workforce=Workforce(per_level),
                    bins=TimeBins(data['bin_steps'], n_bins), edges=EdgeDistributions(specs, n_bins),
                    alpha=data['alpha'], gamma=data['gamma'])


def generate_compact(seed=0, n_tasks=5, n_profiles=2, n_levels=2, n_bins=2, max_support=3, bin_length=6):
    """A small random instance for exhaustive cross-checks."""
    if n_tasks < 1 or n_profiles < 1 or n_levels < 1 or n_bins < 1 or max_support < 1:
        raise ValueError('compact instance sizes must be positive')
    rng = np.random.default_rng(seed)
    profiles = []
    for q in range(n_profiles):
        xi = [int(rng.integers(1, 3))]
        for _ in range(1, n_levels):
            xi.append(int(rng.integers(0, xi[-1] + 1)))
        profiles.append(Profile(q, tuple(xi), 'q%d' % q))
    per_level = tuple(int(n) for n in rng.integers(1, 3, size=n_levels))

    span = bin_length * n_bins
    tasks = []
    for i in range(1, n_tasks + 1):
        exec_times = {q: int(rng.integers(2, 5)) for q in range(n_profiles) if rng.random() < 0.7}
        if not exec_times:
            exec_times = {0: int(rng.integers(2, 5))}
        es = int(rng.integers(2, max(3, span - 2)))
        lf = es + max(exec_times.values()) + int(rng.integers(1, 5))
        lf_e = lf + int(rng.integers(0, 3))
        tasks.append(Task(i, es, lf, lf_e, 1.0, i, exec_times))

    specs = {}
    locations = range(n_tasks + 1)
    for a in locations:
        for b in locations:
            if a == b:
                continue
            delays = []
            for _ in range(n_bins):
                support = int(rng.integers(1, max_support + 1))
                delays.append(DiscreteDistribution.from_dense(0, rng.dirichlet(np.ones(support))))
            specs[(a, b)] = EdgeSpec(int(rng.integers(1, 3)), tuple(delays))
    return Instance(name='compact-%d' % seed, tasks=tuple(tasks), profiles=tuple(profiles),
                    workforce=Workforce(per_level), bins=TimeBins(bin_length, n_bins),
                    edges=EdgeDistributions(specs, n_bins), alpha=0.9, gamma=0.9)
