"""
distributions.py - Finite-support probability distributions over integer time steps.
=====================================================================================
* Travel times, start times and finish times are all carried as DiscreteDistribution
  values: a strictly increasing array of integer times and a matching array of
  positive probabilities summing to one.
* Arithmetic is exact on the support (no binning). Convolution goes through dense
  numpy arrays and drops entries below PRUNE_TOL, renormalising what is left.
* Values are immutable once built, so they can be shared between pricing workers.
"""
import numpy as np

MASS_TOL = 1e-9
PRUNE_TOL = 1e-12
CDF_TOL = 1e-12
# Slack when searching the cumulative sums for a quantile level.
QUANTILE_TOL = 1e-10


class DiscreteDistribution(object):
    """
    A probability mass function on integer time steps.
    """
    __slots__ = ('times', 'probs', 'cdf')

    def __init__(self, times, probs, validate=True):
        times = np.array(times, dtype=np.int64, copy=True).reshape(-1)
        probs = np.array(probs, dtype=float, copy=True).reshape(-1)
        if validate:
            if times.size == 0:
                raise ValueError('distribution support must be non-empty')
            if times.size != probs.size:
                raise ValueError('distribution has %d times but %d probabilities' % (times.size, probs.size))
            if np.any(np.diff(times) <= 0):
                raise ValueError('distribution support times must be strictly increasing')
            if np.any(probs <= 0.0):
                raise ValueError('distribution probabilities must be positive')
            if abs(probs.sum() - 1.0) > MASS_TOL:
                raise ValueError('distribution probabilities sum to %.12f, not 1' % probs.sum())
        times.setflags(write=False)
        probs.setflags(write=False)
        cdf = np.cumsum(probs)
        cdf.setflags(write=False)
        self.times = times
        self.probs = probs
        self.cdf = cdf

    @classmethod
    def point(cls, time):
        """Point mass at a single time step."""
        return cls([int(time)], [1.0], validate=False)

    @classmethod
    def from_pairs(cls, pairs):
        """
        Build from (time, probability) pairs in any order. Equal times are merged.
        """
        merged = {}
        for t, p in pairs:
            merged[int(t)] = merged.get(int(t), 0.0) + float(p)
        times = sorted(t for t in merged if merged[t] > 0.0)
        return cls(times, [merged[t] for t in times])

    @classmethod
    def from_dense(cls, offset, masses):
        """
        Build from a dense mass vector whose first entry sits at time `offset`.
        Entries below PRUNE_TOL are dropped and the remainder renormalised.
        """
        masses = np.asarray(masses, dtype=float)
        keep = np.nonzero(masses > PRUNE_TOL)[0]
        kept = masses[keep]
        return cls(keep + int(offset), kept / kept.sum(), validate=False)

    def __len__(self):
        return int(self.times.size)

    def __repr__(self):
        body = ', '.join('%d: %.6g' % (t, p) for t, p in self.pairs())
        return 'DiscreteDistribution({%s})' % body

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return (self.times.size == other.times.size
                and np.array_equal(self.times, other.times)
                and np.allclose(self.probs, other.probs, rtol=0.0, atol=MASS_TOL))

    def __hash__(self):
        return hash(self.times.tobytes())

    def pairs(self):
        """Support as a list of (time, probability) tuples."""
        return [(int(t), float(p)) for t, p in zip(self.times, self.probs)]

    def to_list(self):
        """Support as [[time, probability], ...] for JSON files."""
        return [[int(t), float(p)] for t, p in zip(self.times, self.probs)]

    @property
    def min_time(self):
        return int(self.times[0])

    @property
    def max_time(self):
        return int(self.times[-1])

    @property
    def is_point(self):
        return self.times.size == 1

    def dense(self):
        """(offset, dense mass vector) covering [min_time, max_time]."""
        masses = np.zeros(self.max_time - self.min_time + 1)
        masses[self.times - self.min_time] = self.probs
        return self.min_time, masses

    def shift(self, steps):
        """Distribution of T + steps."""
        if steps == 0:
            return self
        return DiscreteDistribution(self.times + int(steps), self.probs, validate=False)

    def convolve(self, other):
        """Distribution of the independent sum of self and other."""
        if other.is_point:
            return self.shift(other.min_time)
        if self.is_point:
            return other.shift(self.min_time)
        off_a, dense_a = self.dense()
        off_b, dense_b = other.dense()
        return DiscreteDistribution.from_dense(off_a + off_b, np.convolve(dense_a, dense_b))

    def truncate_left(self, floor):
        """Distribution of max(T, floor): mass at or below floor moves onto floor."""
        floor = int(floor)
        if self.min_time >= floor:
            return self
        if self.max_time <= floor:
            return DiscreteDistribution.point(floor)
        above = self.times > floor
        times = np.concatenate(([floor], self.times[above]))
        probs = np.concatenate(([self.probs[~above].sum()], self.probs[above]))
        return DiscreteDistribution(times, probs, validate=False)

    def quantile(self, gamma):
        """Smallest support time whose cumulative probability reaches gamma."""
        if not 0.0 < gamma <= 1.0:
            raise ValueError('quantile level must lie in (0, 1], got %r' % (gamma,))
        idx = int(np.searchsorted(self.cdf, gamma - QUANTILE_TOL, side='left'))
        return int(self.times[min(idx, self.times.size - 1)])

    @property
    def median(self):
        return self.quantile(0.5)

    def expectation(self):
        return float(np.dot(self.times, self.probs))

    def expect(self, func):
        """E[func(T)] for a vectorised func of the support times."""
        return float(np.dot(func(self.times.astype(float)), self.probs))

    def cdf_at(self, tau):
        """P(T <= tau)."""
        idx = int(np.searchsorted(self.times, tau, side='right'))
        return float(self.cdf[idx - 1]) if idx > 0 else 0.0

    def cdf_on(self, taus):
        """P(T <= tau) for an array of taus."""
        idx = np.searchsorted(self.times, taus, side='right')
        padded = np.concatenate(([0.0], self.cdf))
        return padded[idx]

    def prob_le(self, tau):
        return self.cdf_at(tau)

    def prob_gt(self, tau):
        return max(0.0, 1.0 - self.cdf_at(tau))

    def dominates_stochastically(self, other, lo, hi):
        """
        True when P(self <= tau) >= P(other <= tau) at every integer tau in [lo, hi].
        """
        if lo > hi:
            raise ValueError('empty dominance window [%d, %d]' % (lo, hi))
        taus = np.arange(int(lo), int(hi) + 1)
        return bool(np.all(self.cdf_on(taus) >= other.cdf_on(taus) - CDF_TOL))

    def sample(self, rng, size=None):
        """Draw times with a numpy Generator."""
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(self.cdf, u, side='right'), self.times.size - 1)
        if size is None:
            return int(self.times[int(idx)])
        return self.times[idx]


def point(time):
    return DiscreteDistribution.point(time)


def convolve(a, b):
    return a.convolve(b)


def truncate_left(a, floor):
    return a.truncate_left(floor)


def quantile(a, gamma):
    return a.quantile(gamma)


def expectation(a):
    return a.expectation()


def dominates_stochastically(a, b, window):
    lo, hi = window
    return a.dominates_stochastically(b, lo, hi)
