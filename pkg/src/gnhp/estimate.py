"""EM estimation through the branching structure.

The E-step assigns every event a posterior over its possible parents (the
background, earlier own events, earlier events of followed nodes inside the
kernel window). The M-step maximizes the expected complete-data likelihood.
With sufficient statistics of the form ``sum p`` and ``sum p * lag`` the
kernel-rate profiles only need the right-censored events, so a full M-step
costs little more than one pass over the pairs.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import (
    RATE_BOUNDS,
    WEIGHT_FLOOR_MU,
    GnhpModel,
    History,
    InfeasibleModelError,
    SplineBaseline,
    baseline_at_events,
    event_terms,
    node_compensators,
    node_log_likelihoods,
    score_and_hessian_plugin,
)
from .network import build_transition, transition_from_arrays
from .splines import PeriodicSplineBasis

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FitConfig:
    """Tunable settings of ``fit``; all keys can come from a key=value file."""

    num_basis: int = 36
    order: int = 4
    truncation: float = 5.0
    period: float = 12.0
    tol: float = 1e-6
    max_iter: int = 500
    refit_max_iter: int = 500
    n_starts: int = 20
    start_max_iter: int = 100   # hard-membership EM iterations per start
    polish: bool = True         # exact observed-likelihood membership sweeps per start
    polish_rounds: int = 30
    polish_refit_iter: int = 30
    init_features: str = "posterior"   # or "basic"
    stem_iter: int = 0          # stochastic-EM iterations before deterministic EM
    inner_tol: float = 1e-8
    inner_max_iter: int = 200
    golden_tol: float = 1e-8
    refine: bool = True
    refine_threshold: float = None   # None = data driven, inf disables switching
    standard_errors: bool = True
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping):
        kw = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in mapping:
                continue
            v = mapping[name]
            if isinstance(v, str):
                if f.type is bool or f.type == "bool":
                    v = v.strip().lower() in ("1", "true", "yes", "on")
                elif v.strip().lower() == "none":
                    v = None
                elif f.type is str or f.type == "str":
                    v = v.strip()
                elif f.type in (int, "int"):
                    v = int(v)
                else:
                    v = float(v)
            kw[name] = v
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kw)


# ----------------------------------------------------------------------
# E-step


@dataclass
class Responsibilities:
    """Posterior parent probabilities aligned with the pairs of a ``History``."""

    background: np.ndarray
    own: np.ndarray
    net: np.ndarray

    def totals(self, hist):
        s = self.background.copy()
        s += np.bincount(hist.own_child, self.own, minlength=s.size)
        s += np.bincount(hist.net_child, self.net, minlength=s.size)
        return s


def e_step(model, hist, return_loglik=False):
    """Posterior over parents for every event under ``model``."""
    terms = event_terms(model, hist)
    if np.any(terms.lam <= 0):
        raise InfeasibleModelError("zero intensity at an observed event")
    inv = 1.0 / terms.lam
    resp = Responsibilities(
        background=terms.mu * inv,
        own=terms.own * inv[hist.own_child],
        net=terms.net * inv[hist.net_child],
    )
    if not return_loglik:
        return resp
    ll = node_log_likelihoods(model, hist, terms=terms).mean()
    return resp, float(ll)


def sample_responsibilities(resp, hist, rng):
    """Draw one parent per event; the result is a 0/1 responsibility set."""
    N = hist.n_events
    child = np.concatenate([np.arange(N), hist.own_child, hist.net_child])
    prob = np.concatenate([resp.background, resp.own, resp.net])
    order = np.argsort(child, kind="stable")
    child, prob = child[order], prob[order]
    cum = np.cumsum(prob)
    start = np.searchsorted(child, np.arange(N), side="left")
    base = np.where(start > 0, cum[np.maximum(start - 1, 0)], 0.0)
    stop = np.searchsorted(child, np.arange(N), side="right") - 1
    u = base + rng.random(N) * (cum[stop] - base)
    pick = np.minimum(np.searchsorted(cum, u, side="right"), stop)
    chosen = np.zeros(prob.size)
    chosen[pick] = 1.0
    out = np.empty_like(chosen)
    out[order] = chosen
    n_own = hist.own_child.size
    return Responsibilities(out[:N], out[N:N + n_own], out[N + n_own:])


def complete_log_likelihood(model, hist, resp):
    """Expected complete-data log-likelihood per node, split into its three parts.

    Returns an ``(m, 3)`` array with the background, momentum and network
    terms (not divided by T). With 0/1 responsibilities this is the
    complete-data log-likelihood of the implied branching structure.
    """
    k = model.kernel
    m = hist.m
    g = model.membership
    mu = baseline_at_events(model, hist)
    bg = np.bincount(hist.nodes, _xlogy(resp.background, mu), minlength=m)
    integ = model.baseline.integral(0.0, hist.T)
    bg -= integ[g]

    gc = g[hist.nodes[hist.own_child]]
    own_f = model.beta[gc] * k.density(hist.own_dt, model.eta[gc])
    own = np.bincount(hist.nodes[hist.own_child], _xlogy(resp.own, own_f), minlength=m)
    mass = np.zeros(m)
    for a in range(model.n_groups):
        sel = g == a
        mass[sel] = hist.mass_per_node(k, model.eta[a])[sel]
    own -= model.beta[g] * mass

    cn, pn = hist.net_child_node, hist.net_parent_node
    net_f = model.phi[g[cn], g[pn]] * hist.inv_deg[cn] * k.density(hist.net_dt, model.gamma[g[cn]])
    net = np.bincount(cn, _xlogy(resp.net, net_f), minlength=m)
    src, dst = hist.edge_src, hist.edge_dst
    comp = np.zeros(src.size)
    for a in range(model.n_groups):
        sel = g[src] == a
        if sel.any():
            comp[sel] = hist.mass_per_node(k, model.gamma[a])[dst[sel]]
    net -= np.bincount(src, model.phi[g[src], g[dst]] * hist.inv_deg[src] * comp, minlength=m)
    return np.column_stack([bg, own, net])


# ----------------------------------------------------------------------
# sufficient statistics


class _Stats:
    """Per-node sums of responsibilities needed by the M-step."""

    def __init__(self, resp, hist, model):
        m = hist.m
        G = model.n_groups
        g = model.membership
        self.bg = resp.background
        self.own0 = np.bincount(hist.nodes[hist.own_child], resp.own, minlength=m)
        self.own1 = np.bincount(hist.nodes[hist.own_child], resp.own * hist.own_dt, minlength=m)
        cn = hist.net_child_node
        pn = hist.net_parent_node
        self.net0 = np.bincount(cn, resp.net, minlength=m)
        self.net1 = np.bincount(cn, resp.net * hist.net_dt, minlength=m)
        # mass by (child node, parent node) collapsed to parent / child groups
        self.net_by_parent_group = np.zeros((m, G))
        np.add.at(self.net_by_parent_group, (cn, g[pn]), resp.net)
        self.net_by_child_group = np.zeros((m, G))
        np.add.at(self.net_by_child_group, (pn, g[cn]), resp.net)
        self.net_pair_child = cn
        self.net_pair_parent = pn
        self.net_p = resp.net


def _xlogy(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(y)
    return np.where(x == 0, 0.0, out)


def _log_norm(kernel, rate):
    return np.log(kernel.normalizer(rate))


def membership_scores(model, hist, stats):
    """Expected complete-data log-likelihood of each node under each group.

    Includes the node's own terms and the terms of its followers that depend
    on the node's group; other nodes keep their current groups.
    """
    k = model.kernel
    G = model.n_groups
    m = hist.m
    g = model.membership
    X = _design(model, hist)
    I = model.baseline.basis.integral_over(0.0, hist.T)
    mu = np.asarray(X @ model.weights.T)                       # (N, G)
    with np.errstate(divide="ignore"):
        score = np.column_stack(
            [np.bincount(hist.nodes, _xlogy(stats.bg, mu[:, a]), minlength=m) for a in range(G)]
        )
    score -= (model.weights @ I)[None, :]

    A = hist.net.adjacency
    onehot = np.eye(G)[g]
    for a in range(G):
        beta, eta, gam = model.beta[a], model.eta[a], model.gamma[a]
        own_mass = hist.mass_per_node(k, eta)
        score[:, a] += (
            _xlogy(stats.own0, beta) + stats.own0 * _log_norm(k, eta) - eta * stats.own1
            - beta * own_mass
        )
        net_mass = hist.mass_per_node(k, gam)
        exposure = (A @ (net_mass[:, None] * onehot)) * hist.inv_deg[:, None]   # (m, G)
        score[:, a] += (
            _xlogy(stats.net_by_parent_group, model.phi[a][None, :]).sum(axis=1)
            + stats.net0 * _log_norm(k, gam) - gam * stats.net1
            - exposure @ model.phi[a]
        )
    # follower side: node i as a parent in group a
    mass_by_rate = np.column_stack([hist.mass_per_node(k, model.gamma[h]) for h in range(G)])
    AT = A.T.tocsr()
    inv_onehot = onehot * hist.inv_deg[:, None]
    W = AT @ inv_onehot                                            # (m, G): sum over followers of 1/d
    for a in range(G):
        score[:, a] += _xlogy(stats.net_by_child_group, model.phi[:, a][None, :]).sum(axis=1)
        score[:, a] -= (W * mass_by_rate) @ model.phi[:, a]
    return score


def _design(model, hist):
    key = ("sparse", id(model.baseline.basis))
    if key not in hist._design:
        X = hist.design(model.baseline.basis)
        hist._design[key] = (model.baseline.basis, sp.csr_matrix(X))
    return hist._design[key][1]


# ----------------------------------------------------------------------
# M-step


def _golden_max(f, lo, hi, tol):
    """Maximize a unimodal ``f`` on [lo, hi] by golden-section search."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol * (1.0 + abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def _update_rate(profile, old, tol):
    """Maximize a 1-D profile in log-rate; keep the old rate unless strictly better."""
    lo, hi = np.log(RATE_BOUNDS[0]), np.log(RATE_BOUNDS[1])
    x, fx = _golden_max(lambda s: profile(math.exp(s)), lo, hi, tol)
    f_old = profile(old)
    return (math.exp(x), True) if fx > f_old else (old, False)


def _update_weights(w, X, p_bg, n_nodes, integ, floor, tol, max_iter):
    """Multiplicative ascent for ``sum_e p_e log(w.x_e) - n * w.I`` on ``w >= floor``."""
    if n_nodes == 0:
        return w
    XT = X.T.tocsr()
    for _ in range(max_iter):
        mu = X @ w
        ratio = np.divide(p_bg, mu, out=np.zeros_like(p_bg), where=mu > 0)
        new = np.maximum(w * (XT @ ratio) / (n_nodes * integ), floor)
        if np.max(np.abs(new - w) / np.maximum(w, floor)) < tol:
            return new
        w = new
    return w


def update_memberships(model, hist, stats):
    """Hard reassignment of every node to its best-scoring group (ties: smaller index)."""
    score = membership_scores(model, hist, stats)
    return np.argmax(score, axis=1)


def m_step(resp, hist, model, mode="fixed_membership", config=None, flags=None):
    """One M-step; ``mode`` is ``hard_membership`` or ``fixed_membership``."""
    config = config or FitConfig()
    if mode not in ("hard_membership", "fixed_membership"):
        raise ValueError(f"unknown mode {mode!r}")
    flags = flags if flags is not None else {}
    stats = _Stats(resp, hist, model)
    G = model.n_groups
    m = hist.m
    g = model.membership
    if mode == "hard_membership" and G > 1:
        g = update_memberships(model, hist, stats)
        if not np.array_equal(g, model.membership):
            # group-level statistics depend on the new labels
            stats = _Stats(resp, hist, model.copy(membership=g))
    k = model.kernel
    basis = model.baseline.basis
    X = _design(model, hist)
    integ = basis.integral_over(0.0, hist.T)
    floor = WEIGHT_FLOOR_MU / basis.scale
    sizes = np.bincount(g, minlength=G)
    empty = np.nonzero(sizes == 0)[0]
    if empty.size:
        flags.setdefault("empty_groups", set()).update(int(a) for a in empty)

    ge = g[hist.nodes]
    W = model.weights.copy()
    for a in range(G):
        if sizes[a] == 0:
            continue
        rows = np.nonzero(ge == a)[0]
        W[a] = _update_weights(W[a], X[rows], stats.bg[rows], sizes[a], integ, floor,
                               config.inner_tol, config.inner_max_iter)

    beta, eta = model.beta.copy(), model.eta.copy()
    gamma, phi = model.gamma.copy(), model.phi.copy()
    cens_g = g[hist.cens_node]
    full_cnt = np.bincount(g, hist.n_full, minlength=G)
    A = hist.net.adjacency
    # W_in[a, j] = sum over followers i of j with g_i = a of 1/d_i
    onehot = np.eye(G)[g]
    W_in = np.asarray((A.T @ (onehot * hist.inv_deg[:, None])).T)   # (G, m)
    cens_grp = g[hist.cens_node]
    for a in range(G):
        if sizes[a] == 0:
            continue
        members = g == a
        # momentum: beta closed form, eta by profile
        S0, S1 = stats.own0[members].sum(), stats.own1[members].sum()
        sel = cens_g == a
        resid = hist.cens_resid[sel]

        def own_mass(rate, resid=resid, n=full_cnt[a]):
            return n + k.cumulative(resid, rate).sum()

        if S0 > 0:
            def prof(rate, S0=S0, S1=S1, own_mass=own_mass):
                return S0 * (math.log(S0 / own_mass(rate)) - 1.0) + S0 * float(_log_norm(k, rate)) - rate * S1
            eta[a], _ = _update_rate(prof, eta[a], config.golden_tol)
            beta[a] = S0 / own_mass(eta[a])
        else:
            beta[a] = 0.0

        # network: phi row closed form, gamma by profile
        T0, T1 = stats.net0[members].sum(), stats.net1[members].sum()
        num = stats.net_by_parent_group[members].sum(axis=0)
        wj = W_in[a]
        base_exp = np.bincount(g, wj * hist.n_full, minlength=G)
        cw = wj[hist.cens_node]

        def exposure(rate, cw=cw, base_exp=base_exp):
            F = k.cumulative(hist.cens_resid, rate)
            return base_exp + np.bincount(cens_grp, cw * F, minlength=G)

        if T0 > 0:
            def prof(rate, num=num, T0=T0, T1=T1, exposure=exposure):
                e = exposure(rate)
                ok = num > 0
                return float(np.sum(num[ok] * (np.log(num[ok] / e[ok]) - 1.0))) \
                    + T0 * float(_log_norm(k, rate)) - rate * T1
            gamma[a], _ = _update_rate(prof, gamma[a], config.golden_tol)
        e = exposure(gamma[a])
        # no exposure means no follower edges into group h: keep the old value
        phi[a] = np.where(e > 0, num / np.where(e > 0, e, 1.0), phi[a])

    return GnhpModel(
        baseline=SplineBaseline(basis, W),
        beta=beta, eta=eta, gamma=gamma, phi=phi,
        membership=g, truncation=model.truncation,
    )


# ----------------------------------------------------------------------
# initialization


def node_features(data, bins=12):
    """Phase histogram, log activity and mean log gap for every node."""
    m = data.m
    feats = np.zeros((m, bins + 2))
    for i in range(m):
        t = data.node_times(i)
        if t.size:
            phase = np.mod(t, data.period) / data.period
            h = np.bincount(np.minimum((phase * bins).astype(int), bins - 1), minlength=bins)
            feats[i, :bins] = h / t.size
        feats[i, bins] = math.log1p(t.size)
        if t.size > 1:
            feats[i, bins + 1] = float(np.mean(np.log(np.diff(t) + 1e-9)))
    return feats


def mean_gap(data):
    gaps = np.concatenate([np.diff(data.node_times(i)) for i in range(data.m)] or [np.empty(0)])
    if gaps.size == 0:
        return 1.0
    return float(np.mean(gaps))


def initial_weights(data, membership, basis, G, share=0.5):
    """Per-group phase histograms on the knot spans, scaled to a baseline share."""
    n = basis.num_basis
    W = np.full((G, n), WEIGHT_FLOOR_MU / basis.scale)
    periods = max(data.horizon / basis.period, 1e-12)
    span_len = np.diff(basis.knots)
    phase = np.mod(data.times, basis.period)
    span = np.clip(np.searchsorted(basis.knots, phase, side="right") - 1, 0, n - 1)
    # phase at which each basis function peaks
    grid = np.linspace(0.0, basis.period, 20 * n, endpoint=False)
    peak = grid[np.argmax(basis.evaluate(grid), axis=0)]
    peak_span = np.clip(np.searchsorted(basis.knots, peak, side="right") - 1, 0, n - 1)
    ge = membership[data.nodes]
    for a in range(G):
        members = int(np.sum(membership == a))
        if members == 0:
            continue
        cnt = np.bincount(span[ge == a], minlength=n)
        rate = cnt / (members * periods * span_len)
        W[a] = np.maximum(share * rate[peak_span] / basis.scale, W[a])
    return W


def posterior_features(net, data, hist, config, bins=12):
    """Node statistics from the posterior of a one-group fit.

    Background-attributed phase histogram (as a rate), and the fractions of
    events attributed to own and to network triggering.
    """
    one = initialize(net, data, 1, config=config, features="basic")
    run = run_em(one, hist, "fixed_membership", config, config.start_max_iter)
    resp = e_step(run.model, hist)
    stats = _Stats(resp, hist, run.model)
    phase = np.mod(data.times, data.period) / data.period
    cell = np.minimum((phase * bins).astype(int), bins - 1)
    hist_bg = np.zeros((data.m, bins))
    np.add.at(hist_bg, (data.nodes, cell), resp.background)
    hist_bg /= max(data.horizon / data.period, 1e-12)
    n = np.maximum(data.counts, 1).astype(float)
    blocks = [hist_bg, (stats.own0 / n)[:, None], (stats.net0 / n)[:, None]]
    # each block gets unit overall scale so the histogram does not dominate
    return np.hstack([blk / (blk.std() if blk.std() > 0 else 1.0) for blk in blocks])


def cluster_nodes(feats, G, seed):
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=G, n_init=20, random_state=int(seed))
    return km.fit_predict(feats).astype(np.int64)


def start_from_labels(data, labels, G, config, basis):
    rate = float(np.clip(1.0 / mean_gap(data), RATE_BOUNDS[0], RATE_BOUNDS[1]))
    return GnhpModel(
        baseline=SplineBaseline(basis, initial_weights(data, labels, basis, G)),
        beta=np.full(G, 0.2),
        eta=np.full(G, rate),
        gamma=np.full(G, rate),
        phi=np.full((G, G), 0.2),
        membership=labels,
        truncation=config.truncation,
    )


def initialize(net, data, G, rng=None, config=None, basis=None, features=None, hist=None):
    """K-means labels, histogram baselines and flat triggering values.

    ``features="basic"`` clusters the standardized phase histogram, log
    activity and mean log gap; ``"posterior"`` clusters statistics from a
    one-group fit (see ``posterior_features``).
    """
    config = config or FitConfig()
    rng = np.random.default_rng(rng)
    basis = basis or PeriodicSplineBasis(config.num_basis, data.period, config.order)
    features = features or config.init_features
    if G == 1:
        labels = np.zeros(data.m, np.int64)
    elif features == "basic":
        feats = node_features(data)
        sd = feats.std(axis=0)
        feats = (feats - feats.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        labels = cluster_nodes(feats, G, rng.integers(2**31 - 1))
    elif features == "posterior":
        hist = hist or History(data, net, config.truncation)
        labels = cluster_nodes(posterior_features(net, data, hist, config), G, rng.integers(2**31 - 1))
    else:
        raise ValueError(f"unknown init features {features!r}")
    return start_from_labels(data, labels, G, config, basis)


def initial_models(net, data, G, hist, config, rng):
    """Starting points: posterior-feature and basic-feature K-means, then random restarts."""
    basis = PeriodicSplineBasis(config.num_basis, data.period, config.order)
    n = max(config.n_starts, 1)
    if G == 1:
        return [start_from_labels(data, np.zeros(data.m, np.int64), 1, config, basis)]
    post = posterior_features(net, data, hist, config) if config.init_features == "posterior" else None
    basic = node_features(data)
    sd = basic.std(axis=0)
    basic = (basic - basic.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    primary = post if post is not None else basic
    labels = [cluster_nodes(primary, G, rng.integers(2**31 - 1))]
    if n > 1 and post is not None:
        labels.append(cluster_nodes(basic, G, rng.integers(2**31 - 1)))
    starts = [start_from_labels(data, lab, G, config, basis) for lab in labels]
    while len(starts) < n:
        lab = cluster_nodes(primary, G, rng.integers(2**31 - 1))
        starts.append(perturbed_start(start_from_labels(data, lab, G, config, basis), rng))
    return starts[:n]


def perturbed_start(model, rng, fraction=0.3):
    """Random restart: relabel a fraction of nodes and jitter the triggering values."""
    G = model.n_groups
    g = model.membership.copy()
    if G > 1:
        flip = rng.random(g.size) < fraction
        g[flip] = rng.integers(0, G, flip.sum())
    jitter = lambda x: x * np.exp(rng.normal(0.0, 0.3, np.shape(x)))
    return model.copy(
        membership=g,
        beta=np.clip(jitter(model.beta), 0.01, 0.9),
        eta=np.clip(jitter(model.eta), RATE_BOUNDS[0], RATE_BOUNDS[1]),
        gamma=np.clip(jitter(model.gamma), RATE_BOUNDS[0], RATE_BOUNDS[1]),
        phi=np.clip(jitter(model.phi), 0.01, 0.9),
    )


# ----------------------------------------------------------------------
# EM driver


@dataclass
class EmRun:
    model: GnhpModel
    trace: list
    converged: bool
    iterations: int
    flags: dict


def run_em(model, hist, mode, config, max_iter=None, rng=None, stem_iter=0):
    """Alternate E- and M-steps until the relative log-likelihood change is below ``tol``."""
    max_iter = config.max_iter if max_iter is None else max_iter
    flags = {}
    trace = []
    for _ in range(stem_iter):
        resp = e_step(model, hist)
        resp = sample_responsibilities(resp, hist, rng)
        model = m_step(resp, hist, model, mode, config, flags)
    resp, ll = e_step(model, hist, return_loglik=True)
    trace.append(ll)
    converged = False
    for it in range(max_iter):
        model = m_step(resp, hist, model, mode, config, flags)
        resp, ll = e_step(model, hist, return_loglik=True)
        trace.append(ll)
        if abs(trace[-1] - trace[-2]) <= config.tol * max(abs(trace[-2]), 1e-300):
            converged = True
            break
    return EmRun(model, trace, converged, len(trace) - 1, flags)


# ----------------------------------------------------------------------
# refinement


@dataclass
class Refinement:
    membership: np.ndarray
    varphi_row: np.ndarray      # group whose phi row each node uses
    switched: np.ndarray        # group changed
    updated: np.ndarray         # gain above threshold (group or phi row changed)
    gain: np.ndarray
    threshold: float
    profile_value: float        # sum over nodes of the chosen l_i
    transition: object


def refinement_threshold(node_ll, membership, G):
    sds = []
    for a in range(G):
        v = node_ll[membership == a]
        sds.append(float(np.std(v, ddof=1)) if v.size > 1 else 0.0)
    return 2.0 / G * sum(sds)


def refine_memberships(model, hist, threshold=None):
    """Relabel nodes whose node likelihood improves by more than ``threshold``.

    Candidates pair the parameters of any group with any row of phi applied
    to the neighbours' current groups; ``threshold=None`` uses the
    data-driven value ``(2/G) * sum_g sd_g``.
    """
    G = model.n_groups
    m = hist.m
    g = model.membership
    current = node_log_likelihoods(model, hist)
    if threshold is None:
        threshold = refinement_threshold(current, g, G)
    best = current.copy()
    best_a, best_r = g.copy(), g.copy()
    for a in range(G):
        pa = np.full(m, a)
        for r in range(G):
            try:
                cand = node_log_likelihoods(model, hist, param_group=pa, phi_row=np.full(m, r))
            except InfeasibleModelError:
                continue
            better = cand > best
            best[better] = cand[better]
            best_a[better] = a
            best_r[better] = r
    gain = best - current
    switch = gain > threshold
    new_g = np.where(switch, best_a, g)
    row = np.where(switch, best_r, g)
    chosen = np.where(switch, best, current)
    net = hist.net
    src = hist.edge_src
    phi_edge = model.phi[row[src], g[net.out_idx]]
    trans = transition_from_arrays(net, model.beta[new_g], phi_edge)
    return Refinement(new_g, row, new_g != g, switch, gain, float(threshold), float(chosen.sum()), trans)


# ----------------------------------------------------------------------
# observed-likelihood membership sweeps


def membership_gains(model, hist):
    """Exact change of ``sum_i l_i`` when a single node moves to each group.

    Entry ``[i, a]`` accounts for node ``i``'s own term under the parameters
    and phi row of group ``a`` and for the terms of its followers, whose
    network intensities depend on ``i``'s group. Entries for the current
    group are zero.
    """
    G, m = model.n_groups, hist.m
    g = model.membership
    k = model.kernel
    terms = event_terms(model, hist)
    current = node_log_likelihoods(model, hist, terms=terms)
    gain = np.empty((m, G))
    for a in range(G):
        try:
            gain[:, a] = node_log_likelihoods(model, hist, param_group=np.full(m, a))
        except InfeasibleModelError:
            gain[:, a] = -np.inf
    gain -= current[:, None]

    cn, pn = hist.net_child_node, hist.net_parent_node
    base = hist.inv_deg[cn] * k.density(hist.net_dt, model.gamma[g[cn]])
    # intensity changes are summed per (child event, parent node)
    key, inv = np.unique(hist.net_child * m + pn, return_inverse=True)
    key_event, key_parent = key // m, key % m
    lam = terms.lam[key_event]
    onehot = np.eye(G)[g]
    W = np.asarray(hist.net.adjacency.T @ (onehot * hist.inv_deg[:, None]))
    mass = np.column_stack([hist.mass_per_node(k, model.gamma[h]) for h in range(G)])
    WM = W * mass
    gc = g[cn]
    for a in range(G):
        delta = np.bincount(inv, base * (model.phi[gc, a] - model.phi[gc, g[pn]]), minlength=key.size)
        new = lam + delta
        with np.errstate(divide="ignore", invalid="ignore"):
            dlog = np.where(new > 0, np.log(new) - np.log(lam), -np.inf)
        logpart = np.bincount(key_parent, dlog, minlength=m)
        comp = (WM * (model.phi[:, a][None, :] - model.phi[:, g].T)).sum(axis=1)
        gain[:, a] += (logpart - comp) / hist.T
    gain[np.arange(m), g] = 0.0
    return gain


def sweep_memberships(model, hist):
    """Move every node with a positive exact gain, backing off if the joint move fails.

    Returns the new membership vector, or ``None`` when nothing improves.
    """
    gain = membership_gains(model, hist)
    best = np.argmax(gain, axis=1)
    top = gain[np.arange(hist.m), best]
    movers = np.nonzero(top > 1e-12)[0]
    if movers.size == 0:
        return None
    movers = movers[np.argsort(-top[movers], kind="stable")]
    total = node_log_likelihoods(model, hist).sum()
    while movers.size:
        g = model.membership.copy()
        g[movers] = best[movers]
        try:
            if node_log_likelihoods(model.copy(membership=g), hist).sum() > total:
                return g
        except InfeasibleModelError:
            pass
        movers = movers[: movers.size // 2]
    return None


def polish_memberships(model, hist, config):
    """Alternate exact membership sweeps with short fixed-membership EM refits."""
    moved = 0
    for _ in range(config.polish_rounds):
        g = sweep_memberships(model, hist)
        if g is None:
            break
        moved += int(np.sum(g != model.membership))
        model = run_em(model.copy(membership=g), hist, "fixed_membership", config,
                       config.polish_refit_iter).model
    return model, moved


# ----------------------------------------------------------------------
# fit


@dataclass
class FitResult:
    model: GnhpModel
    loglik: float
    trace: list
    converged: bool
    iterations: int
    refinement: Refinement = None
    refined_transition: object = None
    inference: object = None
    start_logliks: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def membership(self):
        return self.model.membership

    @property
    def standard_errors(self):
        return None if self.inference is None else self.inference.standard_errors

    def diagnostics(self):
        d = {
            "loglik": self.loglik,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "trace": [float(x) for x in self.trace],
            "start_logliks": [float(x) for x in self.start_logliks],
            "flags": {k: (sorted(v) if isinstance(v, set) else v) for k, v in self.flags.items()},
        }
        if self.refinement is not None:
            d["refinement"] = {
                "threshold": self.refinement.threshold,
                "switched": int(self.refinement.switched.sum()),
                "updated": int(self.refinement.updated.sum()),
            }
        if self.inference is not None:
            d["standard_errors"] = dict(zip(self.inference.names, map(float, self.inference.standard_errors)))
            d["hessian_condition_number"] = self.inference.condition_number
            d["hessian_singular"] = bool(self.inference.singular)
        return d


def _fit_start(model, hist, config, rng):
    run = run_em(model, hist, "hard_membership", config, config.start_max_iter, rng, config.stem_iter)
    model, trace = run.model, list(run.trace)
    if config.polish and model.n_groups > 1:
        model, moved = polish_memberships(model, hist, config)
        run.flags["polish_moves"] = moved
        if moved:
            trace.append(node_log_likelihoods(model, hist).mean())
    return EmRun(model, trace, run.converged, run.iterations, run.flags)


def fit(net, data, G, config=None, init=None, hist=None):
    """Maximum likelihood fit with ``G`` groups.

    Every start runs hard-membership EM followed by exact membership sweeps;
    the best start by observed log-likelihood is refined and refitted with
    fixed memberships, and standard errors come from the refit.
    """
    config = config or FitConfig()
    if G < 1:
        raise ValueError("G must be >= 1")
    if data.n_events == 0:
        raise ValueError("no events to fit")
    rng = np.random.default_rng(config.seed)
    hist = hist or History(data, net, config.truncation)
    starts = initial_models(net, data, G, hist, config, rng)
    if init is not None:
        starts = [init] + starts[: max(config.n_starts, 1) - 1]

    runs = [_fit_start(s, hist, config, rng) for s in starts]
    start_ll = [r.trace[-1] for r in runs]
    best = runs[int(np.argmax(start_ll))]
    model = best.model
    flags = dict(best.flags)
    trace = list(best.trace)

    refinement = None
    if config.refine and G > 1:
        refinement = refine_memberships(model, hist, config.refine_threshold)
        model = model.copy(membership=refinement.membership)
    refit = run_em(model, hist, "fixed_membership", config, config.refit_max_iter)
    model = refit.model
    trace += refit.trace[1:]
    converged = refit.converged
    if not converged:
        log.warning("EM did not converge within %d iterations", config.refit_max_iter)
        flags["em_not_converged"] = True
    flags.update(refit.flags)

    inference = None
    if config.standard_errors:
        inference = score_and_hessian_plugin(model, net, data, hist)
        if inference.singular:
            flags["hessian_condition_number"] = inference.condition_number
    if refinement is not None:
        src = hist.edge_src
        phi_edge = model.phi[refinement.varphi_row[src], model.membership[net.out_idx]]
        refined_B = transition_from_arrays(net, model.beta[model.membership], phi_edge)
    else:
        refined_B = build_transition(net, model)
    return FitResult(
        model=model,
        loglik=float(trace[-1]),
        trace=trace,
        converged=converged,
        iterations=best.iterations + refit.iterations,
        refinement=refinement,
        refined_transition=refined_B,
        inference=inference,
        start_logliks=start_ll,
        flags=flags,
    )
