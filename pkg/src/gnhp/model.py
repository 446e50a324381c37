"""Model container, event data, intensity and exact log-likelihood.

Everything downstream (EM, refinement, standard errors) works on a
``History``: the flat list of events plus every admissible (child, parent)
pair inside the kernel window, built once per data set and network.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import TruncatedExponentialKernel
from .splines import PeriodicSplineBasis

WEIGHT_FLOOR_MU = 1e-8
RATE_BOUNDS = (1e-6, 100.0)
TIE_JITTER = 1e-9


class InfeasibleModelError(ValueError):
    """Intensity is zero at an observed event."""


# ----------------------------------------------------------------------
# event data


class EventData:
    """Event times of ``m`` nodes on [0, horizon].

    Times are stored flat, grouped by node and increasing within a node.
    Ties inside a node are broken by adding ``1e-9 * rank``.
    """

    def __init__(self, times_per_node, horizon, period=12.0):
        horizon = float(horizon)
        if not horizon >= 0:
            raise ValueError("horizon must be nonnegative")
        chunks = []
        for i, t in enumerate(times_per_node):
            t = np.sort(np.asarray(t, dtype=float).ravel())
            if t.size and (not np.all(np.isfinite(t)) or t[0] < 0 or t[-1] > horizon):
                raise ValueError(f"node {i}: event times must lie in [0, horizon]")
            t = _break_ties(t)
            chunks.append(t)
        self.m = len(chunks)
        self.horizon = horizon
        self.period = float(period)
        self.counts = np.array([c.size for c in chunks], dtype=np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)
        self.times = np.concatenate(chunks) if chunks else np.empty(0)
        self.nodes = np.repeat(np.arange(self.m), self.counts)

    @classmethod
    def from_arrays(cls, nodes, times, m, horizon, period=12.0):
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=float)
        if nodes.size and (nodes.min() < 0 or nodes.max() >= m):
            raise ValueError("node index out of range")
        order = np.lexsort((times, nodes))
        nodes, times = nodes[order], times[order]
        ptr = np.searchsorted(nodes, np.arange(m + 1))
        return cls([times[ptr[i]:ptr[i + 1]] for i in range(m)], horizon, period)

    @property
    def n_events(self):
        return int(self.times.size)

    def node_times(self, i):
        return self.times[self.ptr[i]:self.ptr[i + 1]]

    def __eq__(self, other):
        return (
            isinstance(other, EventData)
            and self.m == other.m
            and self.horizon == other.horizon
            and np.array_equal(self.ptr, other.ptr)
            and np.array_equal(self.times, other.times)
        )

    def to_csv(self, path, extra=None):
        """Write ``node,time`` rows in time order; ``extra`` maps column name to a flat array."""
        order = np.argsort(self.times, kind="stable")
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "time", *extra])
            cols = [np.asarray(v)[order] for v in extra.values()]
            for k, e in enumerate(order):
                w.writerow([int(self.nodes[e]), f"{self.times[e]:.9f}", *(int(c[k]) for c in cols)])

    @classmethod
    def from_csv(cls, path, m, horizon, period=12.0):
        nodes, times = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"node", "time"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected header starting 'node,time'")
            for row in reader:
                nodes.append(int(row["node"]))
                times.append(float(row["time"]))
        return cls.from_arrays(nodes, times, m, horizon, period)


def _break_ties(t):
    if t.size < 2:
        return t
    dup = np.diff(t) <= 0
    if not dup.any():
        return t
    # rank within each run of equal values
    run_start = np.concatenate([[True], ~dup])
    idx = np.arange(t.size)
    start = np.maximum.accumulate(np.where(run_start, idx, 0))
    return t + TIE_JITTER * (idx - start)


# ----------------------------------------------------------------------
# baselines


class SplineBaseline:
    """Group baselines ``mu_g(t) = w_g @ x(t)`` on a periodic spline basis."""

    kind = "spline"

    def __init__(self, basis, weights):
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if weights.shape[1] != basis.num_basis:
            raise ValueError("weights must have num_basis columns")
        if np.any(weights < 0):
            raise ValueError("spline weights must be nonnegative")
        self.basis = basis
        self.weights = weights

    @property
    def n_groups(self):
        return self.weights.shape[0]

    @property
    def period(self):
        return self.basis.period

    def evaluate(self, t):
        """Array of shape ``(G, len(t))``."""
        return self.weights @ self.basis.evaluate(np.atleast_1d(t)).T

    def at_events(self, groups, design):
        return np.einsum("ij,ij->i", design, self.weights[groups])

    def integral(self, t0, t1):
        return self.weights @ self.basis.integral_over(t0, t1)

    def sup(self):
        return np.array([self.basis.sup_intensity(w) for w in self.weights])

    def permuted(self, perm):
        return SplineBaseline(self.basis, self.weights[perm])

    def to_dict(self):
        return {"basis": self.basis.to_dict(), "w": self.weights.tolist()}


class BumpBaseline:
    """``nu0 + nu1 * sum_h sin(pi (t - a_h) / width)`` on each bump [a_h, a_h + width].

    Used for the simulation truth; ``nu0`` is calibrated from the target
    integral over one period.
    """

    kind = "bump"

    def __init__(self, nu0, nu1, starts, widths, period):
        self.nu0 = np.asarray(nu0, dtype=float)
        self.nu1 = np.asarray(nu1, dtype=float)
        self.starts = [list(map(float, a)) for a in starts]
        self.widths = np.asarray(widths, dtype=float)
        self._period = float(period)

    @classmethod
    def calibrated(cls, integrals, ratios, starts, widths, period):
        """Solve ``nu0`` so each group's baseline integrates to ``integrals`` per period."""
        integrals = np.asarray(integrals, float)
        ratios = np.asarray(ratios, float)
        widths = np.asarray(widths, float)
        n_bumps = np.array([len(a) for a in starts])
        bump_mass = n_bumps * 2.0 * widths / np.pi
        nu0 = integrals / (period + ratios * bump_mass)
        return cls(nu0, ratios * nu0, starts, widths, period)

    @property
    def n_groups(self):
        return self.nu0.size

    @property
    def period(self):
        return self._period

    def _phase_values(self, u):
        out = np.tile(self.nu0[:, None], (1, u.size))
        for g in range(self.n_groups):
            w = self.widths[g]
            for a in self.starts[g]:
                inside = (u >= a) & (u <= a + w)
                out[g] += np.where(inside, self.nu1[g] * np.sin(np.pi * (u - a) / w), 0.0)
        return out

    def evaluate(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        return self._phase_values(np.mod(t, self._period))

    def at_events(self, groups, times):
        vals = self.evaluate(times)
        return vals[groups, np.arange(times.size)]

    def _primitive(self, t):
        full, u = divmod(t, self._period)
        out = self.nu0 * (full * self._period + u)
        for g in range(self.n_groups):
            w = self.widths[g]
            for a in self.starts[g]:
                mass = 2.0 * w / np.pi
                part = 0.0
                if u > a:
                    v = min(u, a + w)
                    part = w / np.pi * (1.0 - np.cos(np.pi * (v - a) / w))
                out[g] += self.nu1[g] * (full * mass + part)
        return out

    def integral(self, t0, t1):
        return self._primitive(t1) - self._primitive(t0)

    def sup(self):
        return self.nu0 + self.nu1 * np.array([1.0 if len(a) else 0.0 for a in self.starts])

    def permuted(self, perm):
        return BumpBaseline(
            self.nu0[perm], self.nu1[perm], [self.starts[p] for p in perm], self.widths[perm], self._period
        )

    def to_dict(self):
        return {
            "baseline": {
                "type": "bump",
                "nu0": self.nu0.tolist(),
                "nu1": self.nu1.tolist(),
                "starts": self.starts,
                "widths": self.widths.tolist(),
            }
        }


# ----------------------------------------------------------------------
# model


@dataclass
class GnhpModel:
    """Parameters of a group network Hawkes process.

    ``membership`` holds 0-based group labels; ``phi[g, h]`` is the effect of
    a followed node in group ``h`` on a follower in group ``g``.
    """

    baseline: object
    beta: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    membership: np.ndarray
    truncation: float = 5.0
    kernel: TruncatedExponentialKernel = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.eta = np.asarray(self.eta, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        self.membership = np.asarray(self.membership, dtype=np.int64).ravel()
        G = self.baseline.n_groups
        for name in ("beta", "eta", "gamma"):
            if getattr(self, name).shape != (G,):
                raise ValueError(f"{name} must have one entry per group")
        if self.phi.shape != (G, G):
            raise ValueError("phi must be G x G")
        if np.any(self.beta < 0) or np.any(self.phi < 0):
            raise ValueError("beta and phi must be nonnegative")
        if np.any(self.eta <= 0) or np.any(self.gamma <= 0):
            raise ValueError("eta and gamma must be positive")
        if self.membership.size and (self.membership.min() < 0 or self.membership.max() >= G):
            raise ValueError("membership index out of range")
        self.kernel = TruncatedExponentialKernel(self.truncation)

    @property
    def n_groups(self):
        return self.baseline.n_groups

    @property
    def m(self):
        return self.membership.size

    @property
    def period(self):
        return self.baseline.period

    @property
    def weights(self):
        return self.baseline.weights

    def copy(self, **changes):
        d = dict(
            baseline=self.baseline,
            beta=self.beta.copy(),
            eta=self.eta.copy(),
            gamma=self.gamma.copy(),
            phi=self.phi.copy(),
            membership=self.membership.copy(),
            truncation=self.truncation,
        )
        d.update(changes)
        return GnhpModel(**d)

    def permuted(self, perm):
        """Relabel groups: new group ``k`` is old group ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return GnhpModel(
            baseline=self.baseline.permuted(perm),
            beta=self.beta[perm],
            eta=self.eta[perm],
            gamma=self.gamma[perm],
            phi=self.phi[np.ix_(perm, perm)],
            membership=inv[self.membership],
            truncation=self.truncation,
        )

    def theta(self):
        """``(G, 3)`` array of (beta, eta, gamma) per group."""
        return np.column_stack([self.beta, self.eta, self.gamma])

    # parameter vector: spline weights, then (beta, eta, gamma) per group,
    # then phi row-major
    def param_vector(self):
        return np.concatenate([self.weights.ravel(), self.theta().ravel(), self.phi.ravel()])

    def with_param_vector(self, vec):
        G, n = self.weights.shape
        vec = np.asarray(vec, dtype=float)
        w = vec[: G * n].reshape(G, n)
        th = vec[G * n : G * n + 3 * G].reshape(G, 3)
        phi = vec[G * n + 3 * G :].reshape(G, G)
        return self.copy(
            baseline=SplineBaseline(self.baseline.basis, w),
            beta=th[:, 0],
            eta=th[:, 1],
            gamma=th[:, 2],
            phi=phi,
        )

    def param_names(self):
        G = self.n_groups
        names = []
        if self.baseline.kind == "spline":
            names += [f"w[{g}][{j}]" for g in range(G) for j in range(self.weights.shape[1])]
        for g in range(G):
            names += [f"beta[{g}]", f"eta[{g}]", f"gamma[{g}]"]
        names += [f"phi[{g}][{h}]" for g in range(G) for h in range(G)]
        return names

    # ------------------------------------------------------------------
    def to_dict(self):
        d = {
            "G": int(self.n_groups),
            "period": float(self.period),
            "b": float(self.truncation),
        }
        d.update(self.baseline.to_dict())
        d.update(
            beta=self.beta.tolist(),
            eta=self.eta.tolist(),
            gamma=self.gamma.tolist(),
            phi=self.phi.tolist(),
            membership=self.membership.tolist(),
        )
        return d

    @classmethod
    def from_dict(cls, d):
        if "baseline" in d:
            b = d["baseline"]
            if b.get("type") != "bump":
                raise ValueError(f"unknown baseline type {b.get('type')!r}")
            baseline = BumpBaseline(b["nu0"], b["nu1"], b["starts"], b["widths"], d["period"])
        else:
            basis = PeriodicSplineBasis.from_dict(d["basis"])
            baseline = SplineBaseline(basis, d["w"])
        return cls(
            baseline=baseline,
            beta=d["beta"],
            eta=d["eta"],
            gamma=d["gamma"],
            phi=d["phi"],
            membership=d["membership"],
            truncation=d["b"],
        )

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def constant_baseline_model(basis, levels, beta, eta, gamma, phi, membership, truncation=5.0):
    """Convenience constructor with flat baselines ``mu_g(t) = levels[g]``."""
    levels = np.asarray(levels, float)
    w = np.repeat(levels[:, None] / basis.scale, basis.num_basis, axis=1)
    return GnhpModel(SplineBaseline(basis, w), beta, eta, gamma, phi, membership, truncation)


# ----------------------------------------------------------------------
# candidate parents


def _concat_ranges(lo, cnt):
    """Concatenate ``arange(lo[k], lo[k] + cnt[k])`` for all k."""
    cnt = np.asarray(cnt, dtype=np.int64)
    total = int(cnt.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = np.cumsum(cnt) - cnt
    return np.repeat(np.asarray(lo, dtype=np.int64) - starts, cnt) + np.arange(total)


class History:
    """Flat events plus all (child, parent) pairs within the kernel window.

    Own pairs link an event to earlier events of the same node; network
    pairs link it to events of followed nodes. A pair qualifies when
    ``0 < t_child - t_parent <= b``.
    """

    def __init__(self, data, net, truncation):
        if data.m != net.m:
            raise ValueError("event data and network have different node counts")
        b = float(truncation)
        self.data = data
        self.net = net
        self.truncation = b
        self.m = data.m
        self.T = data.horizon
        times, ptr, nodes = data.times, data.ptr, data.nodes
        self.times = times
        self.nodes = nodes
        self.n_events = times.size

        # own pairs
        oc, op = [], []
        for i in range(self.m):
            t = times[ptr[i]:ptr[i + 1]]
            if t.size < 2:
                continue
            lo = np.searchsorted(t, t - b, side="left")
            cnt = np.arange(t.size) - lo
            oc.append(np.repeat(np.arange(t.size), cnt) + ptr[i])
            op.append(_concat_ranges(lo, cnt) + ptr[i])
        self.own_child = np.concatenate(oc) if oc else np.empty(0, np.int64)
        self.own_parent = np.concatenate(op) if op else np.empty(0, np.int64)
        self.own_dt = times[self.own_child] - times[self.own_parent]
        keep = self.own_dt > 0
        self.own_child, self.own_parent, self.own_dt = (
            self.own_child[keep], self.own_parent[keep], self.own_dt[keep])

        # network pairs, grouped by parent node
        nc, npa, ne = [], [], []
        for j in range(self.m):
            tj = times[ptr[j]:ptr[j + 1]]
            if tj.size == 0:
                continue
            lo_in, hi_in = net.in_ptr[j], net.in_ptr[j + 1]
            followers = net.in_idx[lo_in:hi_in]
            if followers.size == 0:
                continue
            edges = net.in_edge[lo_in:hi_in]
            fcnt = data.counts[followers]
            child = _concat_ranges(ptr[followers], fcnt)
            if child.size == 0:
                continue
            edge = np.repeat(edges, fcnt)
            ct = times[child]
            lo = np.searchsorted(tj, ct - b, side="left")
            hi = np.searchsorted(tj, ct, side="left")
            cnt = hi - lo
            nc.append(np.repeat(child, cnt))
            ne.append(np.repeat(edge, cnt))
            npa.append(_concat_ranges(lo, cnt) + ptr[j])
        self.net_child = np.concatenate(nc) if nc else np.empty(0, np.int64)
        self.net_parent = np.concatenate(npa) if npa else np.empty(0, np.int64)
        self.net_edge = np.concatenate(ne) if ne else np.empty(0, np.int64)
        self.net_dt = times[self.net_child] - times[self.net_parent]
        keep = self.net_dt > 0
        self.net_child, self.net_parent, self.net_edge, self.net_dt = (
            self.net_child[keep], self.net_parent[keep], self.net_edge[keep], self.net_dt[keep])
        self.net_child_node = nodes[self.net_child]
        self.net_parent_node = nodes[self.net_parent]

        # right-censoring: events whose offspring window is cut by T
        resid = self.T - times
        self.censored = np.nonzero(resid < b)[0]
        self.cens_resid = resid[self.censored]
        self.cens_node = nodes[self.censored]
        self.n_full = np.bincount(nodes[resid >= b], minlength=self.m).astype(float)

        self.edge_src = np.repeat(np.arange(self.m), net.out_degree)
        self.edge_dst = net.out_idx
        deg = net.out_degree.astype(float)
        self.inv_deg = np.divide(1.0, deg, out=np.zeros(self.m), where=deg > 0)
        self._design = {}

    def design(self, basis):
        """Spline basis evaluated at every event, cached per basis."""
        key = id(basis)
        if key not in self._design:
            self._design[key] = (basis, basis.evaluate(self.times))
        return self._design[key][1]

    def mass_per_node(self, kernel, rate):
        """``sum_l cumulative(T - t_jl; rate)`` for every node j."""
        F = kernel.cumulative(self.cens_resid, rate)
        return self.n_full + np.bincount(self.cens_node, F, minlength=self.m)


def baseline_at_events(model, hist, groups=None):
    g = model.membership if groups is None else groups
    ge = g[hist.nodes]
    if model.baseline.kind == "spline":
        return model.baseline.at_events(ge, hist.design(model.baseline.basis))
    return model.baseline.at_events(ge, hist.times)


# ----------------------------------------------------------------------
# intensities and likelihood


@dataclass
class EventTerms:
    mu: np.ndarray          # baseline at each event
    own: np.ndarray         # contribution of each own pair
    net: np.ndarray         # contribution of each network pair
    lam: np.ndarray         # total intensity at each event


def event_terms(model, hist, param_group=None, phi_row=None):
    """Per-event baseline and per-pair triggering contributions.

    ``param_group[i]`` overrides the group whose (w, beta, eta, gamma) node
    ``i`` uses, and ``phi_row[i]`` the row of phi applied to its neighbours;
    parent memberships always come from ``model.membership``.
    """
    g = model.membership
    pg = g if param_group is None else param_group
    pr = pg if phi_row is None else phi_row
    k = model.kernel
    mu = baseline_at_events(model, hist, pg)
    gc = pg[hist.nodes[hist.own_child]]
    own = model.beta[gc] * k.density(hist.own_dt, model.eta[gc])
    cn = hist.net_child_node
    gn = pg[cn]
    net = (
        model.phi[pr[cn], g[hist.net_parent_node]]
        * hist.inv_deg[cn]
        * k.density(hist.net_dt, model.gamma[gn])
    )
    lam = mu.copy()
    lam += np.bincount(hist.own_child, own, minlength=hist.n_events)
    lam += np.bincount(hist.net_child, net, minlength=hist.n_events)
    return EventTerms(mu, own, net, lam)


def node_compensators(model, hist, param_group=None, phi_row=None):
    """Exact ``int_0^T lambda_i(t) dt`` for every node."""
    g = model.membership
    pg = g if param_group is None else param_group
    pr = pg if phi_row is None else phi_row
    k = model.kernel
    G = model.n_groups
    base = model.baseline.integral(0.0, hist.T)[pg]
    own_mass = np.empty((G, hist.m))
    net_mass = np.empty((G, hist.m))
    for a in range(G):
        own_mass[a] = hist.mass_per_node(k, model.eta[a])
        net_mass[a] = hist.mass_per_node(k, model.gamma[a])
    nodes = np.arange(hist.m)
    momentum = model.beta[pg] * own_mass[pg, nodes]
    src, dst = hist.edge_src, hist.edge_dst
    edge_val = model.phi[pr[src], g[dst]] * net_mass[pg[src], dst]
    network = np.bincount(src, edge_val, minlength=hist.m) * hist.inv_deg
    return base + momentum + network


def node_log_likelihoods(model, hist, param_group=None, phi_row=None, terms=None):
    """Per-node ``(1/T) [sum_k log lambda_i(t_ik) - int_0^T lambda_i]``."""
    if terms is None:
        terms = event_terms(model, hist, param_group, phi_row)
    if np.any(terms.lam <= 0):
        raise InfeasibleModelError("zero intensity at an observed event")
    logs = np.bincount(hist.nodes, np.log(terms.lam), minlength=hist.m)
    comp = node_compensators(model, hist, param_group, phi_row)
    T = hist.T if hist.T > 0 else 1.0
    return (logs - comp) / T


def log_likelihood(model, net, data, hist=None):
    """Average log-likelihood per node per unit time."""
    hist = hist or History(data, net, model.truncation)
    return float(node_log_likelihoods(model, hist).mean())


def node_log_likelihood(model, net, data, node, group=None, varphi=None, hist=None):
    """Log-likelihood term of one node with an optional group override.

    ``varphi`` replaces the raw interaction values ``phi[g_i, g_j]`` for the
    node's out-neighbours (ordered as ``net.out_neighbors(node)``).
    """
    hist = hist or History(data, net, model.truncation)
    if not 0 <= node < hist.m:
        raise IndexError("node index out of range")
    pg = model.membership.copy()
    if group is not None:
        pg[node] = group
    if varphi is None:
        return float(node_log_likelihoods(model, hist, param_group=pg)[node])
    varphi = np.asarray(varphi, float)
    nbrs = net.out_neighbors(node)
    if varphi.shape != nbrs.shape:
        raise ValueError("varphi must have one entry per out-neighbour")
    return float(_node_loglik_custom_phi(model, hist, node, pg[node], varphi))


def _node_loglik_custom_phi(model, hist, node, group, varphi):
    k = model.kernel
    data, net = hist.data, hist.net
    lo, hi = data.ptr[node], data.ptr[node + 1]
    e_lo = net.out_ptr[node]
    pg = model.membership.copy()
    pg[node] = group
    mu = baseline_at_events(model, hist, pg)[lo:hi]
    lam = mu.copy()
    sel = (hist.own_child >= lo) & (hist.own_child < hi)
    lam += np.bincount(hist.own_child[sel] - lo,
                       model.beta[group] * k.density(hist.own_dt[sel], model.eta[group]),
                       minlength=hi - lo)
    sel = (hist.net_child >= lo) & (hist.net_child < hi)
    vals = varphi[hist.net_edge[sel] - e_lo] * hist.inv_deg[node] * k.density(
        hist.net_dt[sel], model.gamma[group])
    lam += np.bincount(hist.net_child[sel] - lo, vals, minlength=hi - lo)
    if np.any(lam <= 0):
        raise InfeasibleModelError("zero intensity at an observed event")
    comp = model.baseline.integral(0.0, hist.T)[group]
    comp += model.beta[group] * hist.mass_per_node(k, model.eta[group])[node]
    mass = hist.mass_per_node(k, model.gamma[group])
    comp += hist.inv_deg[node] * np.dot(varphi, mass[net.out_neighbors(node)])
    return (np.log(lam).sum() - comp) / hist.T


def intensity(model, net, data, node, t):
    """Conditional intensity of ``node`` at time ``t`` given events strictly before ``t``."""
    if not 0 <= node < net.m:
        raise IndexError("node index out of range")
    k = model.kernel
    b = model.truncation
    g = model.membership
    gi = g[node]
    lam = float(model.baseline.evaluate(np.array([t]))[gi, 0])
    own = data.node_times(node)
    own = own[np.searchsorted(own, t - b, "left"):np.searchsorted(own, t, "left")]
    lam += model.beta[gi] * float(np.sum(k.density(t - own, model.eta[gi])))
    d = net.out_degree[node]
    if d:
        for j in net.out_neighbors(node):
            tj = data.node_times(j)
            tj = tj[np.searchsorted(tj, t - b, "left"):np.searchsorted(tj, t, "left")]
            lam += model.phi[gi, g[j]] / d * float(np.sum(k.density(t - tj, model.gamma[gi])))
    return lam


# ----------------------------------------------------------------------
# score and plug-in information


def _rate_indices(G, n):
    base = G * n
    beta = base + 3 * np.arange(G)
    return beta, beta + 1, beta + 2, base + 3 * G


def event_gradients(model, hist):
    """Per-event intensity gradients (dense ``N x P``) and the compensator gradient."""
    if model.baseline.kind != "spline":
        raise ValueError("gradients need a spline baseline")
    k = model.kernel
    g = model.membership
    G, n = model.weights.shape
    P = G * n + 3 * G + G * G
    ib, ie, ig, iphi = _rate_indices(G, n)
    N = hist.n_events
    X = hist.design(model.baseline.basis)
    ge = g[hist.nodes]
    L = np.zeros((N, P))
    rows = np.arange(N)
    for j in range(n):
        L[rows, ge * n + j] = X[:, j]

    oc = hist.own_child
    go = ge[oc]
    f_own = k.density(hist.own_dt, model.eta[go])
    np.add.at(L, (oc, ib[go]), f_own)
    np.add.at(L, (oc, ie[go]), model.beta[go] * f_own * k.d_log_density(hist.own_dt, model.eta[go]))

    nc = hist.net_child
    gn = ge[nc]
    gp = g[hist.net_parent_node]
    f_net = k.density(hist.net_dt, model.gamma[gn]) * hist.inv_deg[hist.net_child_node]
    np.add.at(L, (nc, iphi + gn * G + gp), f_net)
    np.add.at(L, (nc, ig[gn]), model.phi[gn, gp] * f_net * k.d_log_density(hist.net_dt, model.gamma[gn]))

    # compensator gradient
    C = np.zeros(P)
    nodes_per_group = np.bincount(g, minlength=G).astype(float)
    I = model.baseline.basis.integral_over(0.0, hist.T)
    for a in range(G):
        C[a * n:(a + 1) * n] = nodes_per_group[a] * I
    cens_g = g[hist.cens_node]
    F_own = k.cumulative(hist.cens_resid, model.eta[cens_g])
    dF_own = k.d_cumulative(hist.cens_resid, model.eta[cens_g])
    C[ib] += np.bincount(g, hist.n_full, minlength=G) + np.bincount(cens_g, F_own, minlength=G)
    C[ie] += model.beta * np.bincount(cens_g, dF_own, minlength=G)
    src, dst = hist.edge_src, hist.edge_dst
    w_edge = hist.inv_deg[src]
    gs, gd = g[src], g[dst]
    for a in range(G):
        mass = hist.mass_per_node(k, model.gamma[a])
        dmass = np.bincount(hist.cens_node, k.d_cumulative(hist.cens_resid, model.gamma[a]),
                            minlength=hist.m)
        sel = gs == a
        C[iphi + a * G:iphi + (a + 1) * G] += np.bincount(gd[sel], w_edge[sel] * mass[dst[sel]], minlength=G)
        C[ig[a]] += np.sum(model.phi[a, gd[sel]] * w_edge[sel] * dmass[dst[sel]])
    return L, C


def score(model, net, data, hist=None):
    """Gradient of the average log-likelihood w.r.t. the parameter vector."""
    hist = hist or History(data, net, model.truncation)
    terms = event_terms(model, hist)
    L, C = event_gradients(model, hist)
    mT = hist.m * hist.T
    return (L.T @ (1.0 / terms.lam) - C) / mT


@dataclass
class InferenceResult:
    gradient: np.ndarray
    hessian: np.ndarray
    covariance: np.ndarray        # limiting covariance of sqrt(mT)(alpha_hat - alpha)
    standard_errors: np.ndarray   # for (beta, eta, gamma per group, phi row-major)
    names: list
    condition_number: float
    singular: bool


def score_and_hessian_plugin(model, net, data, hist=None, cond_limit=1e12):
    """Score and event-sum plug-in information matrix with Wald standard errors.

    The information matrix is ``(mT)^{-1} sum_events (grad lam)(grad lam)^T / lam^2``;
    the covariance of the non-baseline parameters is the corresponding block
    of its inverse, and standard errors are ``sqrt(diag / (mT))``.
    """
    hist = hist or History(data, net, model.truncation)
    terms = event_terms(model, hist)
    L, C = event_gradients(model, hist)
    mT = hist.m * hist.T
    grad = (L.T @ (1.0 / terms.lam) - C) / mT
    Ls = L / terms.lam[:, None]
    H = Ls.T @ Ls / mT
    # drop directions with no information (e.g. basis functions without events)
    active = np.abs(H).sum(axis=1) > 0
    Ha = H[np.ix_(active, active)]
    cond = float(np.linalg.cond(Ha)) if Ha.size else np.inf
    singular = not np.isfinite(cond) or cond > cond_limit
    Hinv = np.full_like(H, np.nan)
    Hinv[np.ix_(active, active)] = np.linalg.pinv(Ha) if singular else np.linalg.inv(Ha)
    G, n = model.weights.shape
    alpha = slice(G * n, None)
    cov = Hinv[alpha, alpha]
    se = np.sqrt(np.clip(np.diag(cov), 0, None) / mT)
    names = model.param_names()[G * n:]
    return InferenceResult(grad, H, cov, se, names, cond, singular)
