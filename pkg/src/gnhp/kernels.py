"""Truncated, normalized triggering kernels.

All functions broadcast over ``t`` and ``rate`` so that the likelihood and
EM code can evaluate thousands of (lag, rate) pairs in one call.
"""

from abc import ABC, abstractmethod

import numpy as np

# below this value of rate * b the normalizer switches to a Taylor series
SMALL_RATE_B = 1e-6


def _check_finite(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("kernel arguments must be finite")
    return t


class TriggeringKernel(ABC):
    """A density on [0, b] indexed by a positive rate parameter."""

    def __init__(self, truncation):
        truncation = float(truncation)
        if not truncation > 0 or not np.isfinite(truncation):
            raise ValueError("truncation must be a positive finite number")
        self.truncation = truncation

    @abstractmethod
    def density(self, t, rate):
        """Kernel density at lag ``t``."""

    @abstractmethod
    def cumulative(self, s, rate):
        """Integral of the density over [0, s]."""

    @abstractmethod
    def inverse_cumulative(self, u, rate, upper):
        """Lag whose mass on [0, lag] equals ``u`` times the mass on [0, upper]."""

    def sample_offspring_times(self, expected_count, rate, horizon, rng):
        """Draw offspring lags of one parent.

        The number of children is Poisson(expected_count * cumulative(horizon))
        and the lags are i.i.d. from the kernel restricted to [0, horizon].
        """
        if expected_count < 0:
            raise ValueError("expected_count must be nonnegative")
        if expected_count == 0 or horizon <= 0:
            return np.empty(0)
        upper = min(horizon, self.truncation)
        n = rng.poisson(expected_count * float(self.cumulative(upper, rate)))
        if n == 0:
            return np.empty(0)
        lags = self.inverse_cumulative(rng.random(n), rate, upper)
        return np.sort(lags)

    def sample_offspring_batch(self, expected_counts, rates, horizons, rng):
        """Vectorized ``sample_offspring_times`` over many parents.

        Returns ``(owner, lags)``: the index of the parent of every child and
        its lag. Lags are sorted within each parent.
        """
        mult = np.asarray(expected_counts, dtype=float)
        rates = np.broadcast_to(np.asarray(rates, dtype=float), mult.shape)
        horizons = np.broadcast_to(np.asarray(horizons, dtype=float), mult.shape)
        upper = np.clip(horizons, 0.0, self.truncation)
        counts = rng.poisson(mult * self.cumulative(upper, rates))
        owner = np.repeat(np.arange(mult.size), counts)
        if owner.size == 0:
            return owner, np.empty(0)
        lags = self.inverse_cumulative(rng.random(owner.size), rates[owner], upper[owner])
        order = np.lexsort((lags, owner))
        return owner[order], lags[order]


class TruncatedExponentialKernel(TriggeringKernel):
    """``rate * exp(-rate t) / (1 - exp(-rate b))`` on [0, b], zero elsewhere."""

    def normalizer(self, rate):
        """``rate / (1 - exp(-rate b))``, the density value at zero."""
        rate = np.asarray(rate, dtype=float)
        b = self.truncation
        x = rate * b
        small = x < SMALL_RATE_B
        xs = np.where(small, x, 1.0)
        # x / (1 - e^{-x}) = 1 + x/2 + x^2/12 + O(x^4)
        series = (1.0 + xs / 2.0 + xs * xs / 12.0) / b
        safe = np.where(small, 1.0, rate)
        exact = safe / -np.expm1(-safe * b)
        return np.where(small, series, exact)

    def density(self, t, rate):
        t = _check_finite(t)
        rate = np.asarray(rate, dtype=float)
        inside = (t >= 0) & (t <= self.truncation)
        val = self.normalizer(rate) * np.exp(-rate * np.where(inside, t, 0.0))
        return np.where(inside, val, 0.0)

    def log_density(self, t, rate):
        """Log density for lags inside [0, b]; no support check."""
        t = np.asarray(t, dtype=float)
        return np.log(self.normalizer(rate)) - np.asarray(rate) * t

    def cumulative(self, s, rate):
        s = np.clip(_check_finite(s), 0.0, self.truncation)
        rate = np.asarray(rate, dtype=float)
        b = self.truncation
        small = rate * b < SMALL_RATE_B
        rs = np.where(small, rate, 0.0)
        p = 1.0 - rs * s / 2.0 + rs * rs * s * s / 6.0
        q = 1.0 - rs * b / 2.0 + rs * rs * b * b / 6.0
        series = (s / b) * p / q
        safe = np.where(small, 1.0, rate)
        exact = np.expm1(-safe * s) / np.expm1(-safe * b)
        return np.where(small, series, exact)

    def inverse_cumulative(self, u, rate, upper):
        u = np.asarray(u, dtype=float)
        rate = np.asarray(rate, dtype=float)
        upper = np.minimum(upper, self.truncation)
        small = rate * upper < SMALL_RATE_B
        safe = np.where(small, 1.0, rate)
        exact = -np.log1p(u * np.expm1(-safe * upper)) / safe
        return np.where(small, u * upper, np.minimum(exact, upper))

    def d_log_density(self, t, rate):
        """Derivative of the log density with respect to the rate."""
        t = np.asarray(t, dtype=float)
        rate = np.asarray(rate, dtype=float)
        b = self.truncation
        x = rate * b
        small = x < SMALL_RATE_B
        safe = np.where(small, 1.0, rate)
        # 1/rate - b / (e^{rate b} - 1)
        exact = 1.0 / safe - b / np.expm1(safe * b)
        series = b / 2.0 - np.where(small, rate, 0.0) * b * b / 12.0
        return np.where(small, series, exact) - t

    def d_density(self, t, rate):
        """Derivative of the density with respect to the rate."""
        return self.density(t, rate) * self.d_log_density(t, rate)

    def d_cumulative(self, s, rate):
        """Derivative of ``cumulative(s, rate)`` with respect to the rate."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.truncation)
        rate = np.asarray(rate, dtype=float)
        b = self.truncation
        small = rate * b < SMALL_RATE_B
        rs = np.where(small, rate, 0.0)
        p = 1.0 - rs * s / 2.0 + rs * rs * s * s / 6.0
        q = 1.0 - rs * b / 2.0 + rs * rs * b * b / 6.0
        dp = -s / 2.0 + rs * s * s / 3.0
        dq = -b / 2.0 + rs * b * b / 3.0
        series = (s / b) * (dp * q - p * dq) / (q * q)
        safe = np.where(small, 1.0, rate)
        a_s = -np.expm1(-safe * s)
        a_b = -np.expm1(-safe * b)
        exact = (s * np.exp(-safe * s) * a_b - a_s * b * np.exp(-safe * b)) / (a_b * a_b)
        return np.where(small, series, exact)
