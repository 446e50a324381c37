"""Periodic B-spline basis for baseline intensities.

The basis is ``x(t) = sqrt(n) * (k_1(t mod w), ..., k_n(t mod w))`` where the
``k_j`` are order-``r`` B-splines on a periodically wrapped knot sequence.
With ``n`` knot spans on [0, w] there are exactly ``n`` basis functions and
they sum to one everywhere.
"""

import bisect
import math

import numpy as np


class PeriodicSplineBasis:
    """Periodic B-splines of a given order on [0, period).

    Parameters
    ----------
    num_basis : int
        Number of basis functions, equal to the number of knot spans.
    period : float
        Period of the basis, in hours.
    order : int, default=4
        Spline order (4 is cubic).
    knots : array-like, optional
        Strictly increasing breakpoints starting at 0 and ending at
        ``period``; ``num_basis + 1`` values. Equally spaced if omitted.
    """

    def __init__(self, num_basis, period, order=4, knots=None):
        num_basis = int(num_basis)
        order = int(order)
        period = float(period)
        if order < 1:
            raise ValueError("order must be >= 1")
        if num_basis < order:
            raise ValueError("num_basis must be >= order")
        if not period > 0:
            raise ValueError("period must be positive")
        if knots is None:
            knots = np.linspace(0.0, period, num_basis + 1)
        knots = np.asarray(knots, dtype=float)
        if knots.shape != (num_basis + 1,):
            raise ValueError("knots must have num_basis + 1 entries")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not (np.isclose(knots[0], 0.0) and np.isclose(knots[-1], period)):
            raise ValueError("knots must start at 0 and end at the period")
        knots[0], knots[-1] = 0.0, period

        self.num_basis = num_basis
        self.order = order
        self.period = period
        self.knots = knots
        self.scale = math.sqrt(num_basis)
        # breakpoints from -period to beyond 2 * period so every support
        # [t_j, t_{j+r}) touching [0, 2 * period) is covered
        n = num_basis
        reps = 2 + (order + n - 1) // n
        ext = [knots[:-1] + p * period for p in range(-1, reps)]
        self._ext = np.concatenate(ext + [np.array([reps * period])])
        self._offset = n
        self._ext_list = self._ext.tolist()
        self._gl_nodes, self._gl_weights = np.polynomial.legendre.leggauss(
            max(1, math.ceil((order + 1) / 2))
        )
        self._build_span_integrals()

    def to_dict(self):
        return {
            "num_basis": self.num_basis,
            "period": self.period,
            "order": self.order,
            "knots": self.knots.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["num_basis"], d["period"], d.get("order", 4), d.get("knots"))

    def __eq__(self, other):
        return (
            isinstance(other, PeriodicSplineBasis)
            and self.num_basis == other.num_basis
            and self.order == other.order
            and self.period == other.period
            and np.array_equal(self.knots, other.knots)
        )

    def __repr__(self):
        return (
            f"PeriodicSplineBasis(num_basis={self.num_basis}, "
            f"period={self.period}, order={self.order})"
        )

    # ------------------------------------------------------------------
    def _raw_phase(self, u):
        """Unscaled basis values at phases ``u`` in [0, period); shape (len(u), n).

        Function j is the B-spline on breakpoints t_j..t_{j+r} of the
        periodically extended sequence; at phase u it receives the pieces
        lying over u and over u + period.
        """
        u = np.asarray(u, dtype=float)
        if u.size == 1:
            return self._raw_scalar(float(u.reshape(-1)[0]))[None, :]
        n, r = self.num_basis, self.order
        ext, off = self._ext, self._offset
        out = np.zeros((u.size, n))
        rows = np.arange(u.size)
        for shift in (0.0, self.period):
            x = u + shift
            span = np.searchsorted(ext, x, side="right") - 1
            vals = np.ones((u.size, 1))
            for k in range(1, r):
                new = np.zeros((u.size, k + 1))
                for s in range(k):
                    j = span - k + 1 + s
                    left = ext[j]
                    w = (x - left) / (ext[j + k] - left)
                    new[:, s] += (1.0 - w) * vals[:, s]
                    new[:, s + 1] += w * vals[:, s]
                vals = new
            for s in range(r):
                j = span - r + 1 + s - off
                keep = (j >= 0) & (j < n)
                np.add.at(out, (rows[keep], j[keep]), vals[keep, s])
        return out

    def _raw_scalar(self, u):
        # same recursion in plain floats; thinning calls this once per candidate
        n, r = self.num_basis, self.order
        ext, off = self._ext_list, self._offset
        out = np.zeros(n)
        for x in (u, u + self.period):
            span = bisect.bisect_right(ext, x) - 1
            vals = [1.0]
            for k in range(1, r):
                new = [0.0] * (k + 1)
                for s in range(k):
                    left = ext[span - k + 1 + s]
                    w = (x - left) / (ext[span + 1 + s] - left)
                    new[s] += (1.0 - w) * vals[s]
                    new[s + 1] += w * vals[s]
                vals = new
            for s in range(r):
                j = span - r + 1 + s - off
                if 0 <= j < n:
                    out[j] += vals[s]
        return out

    def evaluate(self, t):
        """Scaled basis values; shape ``(n,)`` for scalar ``t``, else ``(len(t), n)``."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u = np.mod(t, self.period)
        u = np.where(u >= self.period, 0.0, u)
        vals = self.scale * self._raw_phase(u)
        return vals[0] if scalar else vals

    # ------------------------------------------------------------------
    def _build_span_integrals(self):
        n = self.num_basis
        nodes, weights = self._gl_nodes, self._gl_weights
        per_span = np.zeros((n, n))
        for s in range(n):
            a, b = self.knots[s], self.knots[s + 1]
            x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            per_span[s] = 0.5 * (b - a) * (weights @ self._raw_phase(x))
        self._span_integrals = per_span * self.scale
        self._span_cumsum = np.vstack([np.zeros(n), np.cumsum(self._span_integrals, axis=0)])
        self.period_integral = self._span_cumsum[-1].copy()

    def _primitive_phase(self, u):
        """Integral of the scaled basis over [0, u] for one phase u in [0, period]."""
        s = min(int(np.searchsorted(self.knots, u, side="right")) - 1, self.num_basis - 1)
        acc = self._span_cumsum[s].copy()
        a = self.knots[s]
        if u > a:
            x = 0.5 * (u - a) * self._gl_nodes + 0.5 * (u + a)
            acc += 0.5 * (u - a) * self.scale * (self._gl_weights @ self._raw_phase(x))
        return acc

    def primitive(self, t):
        """Componentwise integral of ``evaluate`` over [0, t]."""
        t = float(t)
        if t < 0:
            raise ValueError("t must be nonnegative")
        full = math.floor(t / self.period)
        u = t - full * self.period
        if u >= self.period:
            full, u = full + 1, 0.0
        return full * self.period_integral + self._primitive_phase(u)

    def integral_over(self, t0, t1):
        """Exact componentwise integral of ``evaluate`` over [t0, t1]."""
        if not 0 <= t0 <= t1:
            raise ValueError("need 0 <= t0 <= t1")
        if t0 == t1:
            return np.zeros(self.num_basis)
        return self.primitive(t1) - self.primitive(t0)

    def sup_intensity(self, weights):
        """Upper bound of ``weights @ x(t)`` over all t."""
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        return self.scale * float(np.max(weights, initial=0.0))
