import pytest

from bpcs import instance_gen
from bpcs.distributions import DiscreteDistribution as D
from bpcs.model import EdgeDistributions, EdgeSpec, Instance, Profile, Task, TimeBins, Workforce


def uniform_edges(locations, n_bins, t_det=1, delay=None):
    """Every ordered pair of distinct locations gets t_det + delay in every bin."""
    delay = delay if delay is not None else D.point(0)
    specs = {}
    for a in locations:
        for b in locations:
            if a != b:
                specs[(a, b)] = EdgeSpec(t_det, (delay,) * n_bins)
    return specs


def make_instance(tasks, profiles, per_level, specs, n_bins=2, bin_length=6, **kwargs):
    return Instance(name=kwargs.pop('name', 'test'), tasks=tuple(tasks), profiles=tuple(profiles),
                    workforce=Workforce(tuple(per_level)), bins=TimeBins(bin_length, n_bins),
                    edges=EdgeDistributions(specs, n_bins), **kwargs)


def worked_example_instance():
    """
    Three tasks, one single-worker profile, bins {0..5} and {6..11}, gamma 0.95.
    Depot -> 1 takes 1 or 2 steps; 1 -> 3 takes 1 step in the second bin;
    2 -> 3 takes 3 or 4 steps in the first bin.
    """
    half = D.from_pairs([(0, 0.5), (1, 0.5)])
    specs = uniform_edges(range(4), 2)
    specs[(0, 1)] = EdgeSpec(1, (half, half))
    specs[(2, 3)] = EdgeSpec(3, (half, half))
    tasks = [
        Task(1, 0, 10, 10, 1.0, 1, {0: 3}),
        Task(2, 0, 10, 10, 1.0, 2, {0: 3}),
        Task(3, 3, 15, 15, 1.0, 3, {0: 3}),
    ]
    return make_instance(tasks, [Profile(0, (1,))], (2,), specs, n_bins=2, bin_length=6, alpha=0.9, gamma=0.95,
                         name='worked-example')


@pytest.fixture
def worked_example():
    return worked_example_instance()


def chain_instance(per_level=(1,), spacing=5, n_tasks=3, delay=None):
    """
    Tasks one after another at locations 1..n, each taking 2 steps, one
    single-worker profile, travel 1 (plus delay) between any two places.
    """
    tasks = []
    for i in range(1, n_tasks + 1):
        es = 2 + spacing * (i - 1)
        tasks.append(Task(i, es, es + 4, es + 6, 1.0, i, {0: 2}))
    specs = uniform_edges(range(n_tasks + 1), 3, delay=delay)
    return make_instance(tasks, [Profile(0, (1,))], per_level, specs, n_bins=3, bin_length=8, name='chain')


@pytest.fixture
def chain():
    return chain_instance()


@pytest.fixture
def compact():
    return instance_gen.generate_compact(seed=3, n_tasks=4)


@pytest.fixture(params=[0, 1, 2])
def compact_seed(request):
    return request.param
