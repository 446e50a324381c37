"""Simulation of the group network Hawkes process.

``simulate_branching`` uses the immigrant/offspring construction and keeps
provenance labels. ``simulate_thinning`` is an independent sequential
thinning sampler over the pooled process, used to cross-check the first.
"""

from dataclasses import dataclass

import numpy as np

from .model import EventData
from .network import build_transition

MAX_EVENTS = 1_000_000


class EventCapExceeded(RuntimeError):
    """Raised when a replicate produces more events than the cap."""


@dataclass
class SimulatedEvents:
    """Events plus optional provenance, aligned with ``data.times``.

    ``parent_node`` and ``parent_index`` are -1 for immigrant events;
    ``parent_index`` counts within the parent node's own sequence.
    """

    data: EventData
    parent_node: np.ndarray = None
    parent_index: np.ndarray = None
    generation: np.ndarray = None
    family: np.ndarray = None
    root_node: np.ndarray = None
    root_time: np.ndarray = None

    @property
    def has_provenance(self):
        return self.parent_node is not None

    def to_csv(self, path):
        extra = None
        if self.has_provenance:
            extra = {
                "parent_node": self.parent_node,
                "parent_index": self.parent_index,
                "generation": self.generation,
            }
        self.data.to_csv(path, extra)


def _immigrants(model, T, rng):
    """Background events per node by thinning against the baseline supremum."""
    g = model.membership
    sup = model.baseline.sup()
    nodes, times = [], []
    for a in range(model.n_groups):
        members = np.nonzero(g == a)[0]
        if members.size == 0 or sup[a] <= 0 or T <= 0:
            continue
        n = rng.poisson(sup[a] * T * members.size)
        cand_t = rng.uniform(0.0, T, n)
        cand_i = rng.choice(members, n)
        keep = rng.random(n) * sup[a] <= model.baseline.evaluate(cand_t)[a]
        nodes.append(cand_i[keep])
        times.append(cand_t[keep])
    if not nodes:
        return np.empty(0, np.int64), np.empty(0)
    return np.concatenate(nodes), np.concatenate(times)


def _offspring(model, net, node, time, horizon, rng):
    """One generation of children of the events ``(node, time)``.

    ``horizon`` is the remaining window per parent (``T - time`` or inf).
    Returns (parent position, child node, child time).
    """
    k = model.kernel
    g = model.membership
    gp = g[node]
    # own-node children
    own_owner, own_lag = k.sample_offspring_batch(
        model.beta[gp], model.eta[gp], horizon, rng)
    # follower children: expand each parent over the followers of its node
    deg = net.in_degree[node]
    pos = np.repeat(np.arange(node.size), deg)
    starts = net.in_ptr[node]
    offs = np.arange(pos.size) - np.repeat(np.cumsum(deg) - deg, deg)
    follower = net.in_idx[np.repeat(starts, deg) + offs]
    gf = g[follower]
    mult = model.phi[gf, gp[pos]] / net.out_degree[follower]
    net_owner, net_lag = k.sample_offspring_batch(
        mult, model.gamma[gf], horizon[pos], rng)
    parent = np.concatenate([own_owner, pos[net_owner]])
    child_node = np.concatenate([node[own_owner], follower[net_owner]])
    child_time = np.concatenate([time[own_owner] + own_lag, time[pos[net_owner]] + net_lag])
    return parent, child_node, child_time


def simulate_branching(model, net, T, rng=None, max_events=MAX_EVENTS):
    """Simulate on [0, T] by the branching construction, with provenance."""
    rng = np.random.default_rng(rng)
    build_transition(net, model).check_stable()
    T = float(T)
    node, time = _immigrants(model, T, rng)
    n0 = node.size
    all_node, all_time = [node], [time]
    all_parent = [np.full(n0, -1)]
    all_gen = [np.zeros(n0, np.int64)]
    all_fam = [np.arange(n0)]
    total, offset, gen = n0, 0, 0
    fam = np.arange(n0)
    while node.size:
        gen += 1
        parent, node, time = _offspring(model, net, node, time, T - time, rng)
        fam = fam[parent]
        all_node.append(node)
        all_time.append(time)
        all_parent.append(parent + offset)
        all_gen.append(np.full(node.size, gen))
        all_fam.append(fam)
        offset = total
        total += node.size
        if total > max_events:
            raise EventCapExceeded(f"more than {max_events} events in one replicate")

    nodes = np.concatenate(all_node)
    times = np.concatenate(all_time)
    parent = np.concatenate(all_parent)
    generation = np.concatenate(all_gen)
    family = np.concatenate(all_fam)
    data = EventData.from_arrays(nodes, times, net.m, T, model.period)
    # EventData orders by (node, time); map creation ids onto that order
    order = np.lexsort((times, nodes))
    rank = np.empty(order.size, np.int64)
    rank[order] = np.arange(order.size)
    within = rank - data.ptr[nodes]
    has_parent = parent >= 0
    p_node = np.where(has_parent, nodes[np.maximum(parent, 0)], -1)
    p_index = np.where(has_parent, within[np.maximum(parent, 0)], -1)
    return SimulatedEvents(
        data=data,
        parent_node=p_node[order],
        parent_index=p_index[order],
        generation=generation[order],
        family=family[order],
        root_node=nodes[:n0][family][order],
        root_time=times[:n0][family][order],
    )


def simulate_families(model, net, root, n_families, rng=None, max_events=MAX_EVENTS):
    """Per-node event counts of ``n_families`` cascades started by one event at ``root``.

    The horizon is unbounded so every child is kept; the root event itself is
    counted. Returns an ``(n_families, m)`` integer array.
    """
    rng = np.random.default_rng(rng)
    build_transition(net, model).check_stable()
    counts = np.zeros((n_families, net.m), np.int64)
    counts[:, root] = 1
    node = np.full(n_families, root, np.int64)
    fam = np.arange(n_families)
    total = n_families
    while node.size:
        zeros = np.zeros(node.size)
        parent, node, _ = _offspring(model, net, node, zeros, zeros + np.inf, rng)
        fam = fam[parent]
        np.add.at(counts, (fam, node), 1)
        total += node.size
        if total > max_events:
            raise EventCapExceeded(f"more than {max_events} events")
    return counts


def _coupling(model, net):
    """Dense ``(m, m)`` multipliers and rates of the triggering terms."""
    m = net.m
    g = model.membership
    A = net.adjacency.toarray()
    deg = net.out_degree.astype(float)
    inv = np.divide(1.0, deg, out=np.zeros(m), where=deg > 0)
    C = model.phi[g[:, None], g[None, :]] * A * inv[:, None]
    R = np.repeat(model.gamma[g][:, None], m, axis=1)
    idx = np.arange(m)
    C[idx, idx] = model.beta[g]
    R[idx, idx] = model.eta[g]
    return C, R


def simulate_thinning(model, net, T, rng=None, max_events=MAX_EVENTS):
    """Sequential thinning of the pooled process (no provenance).

    Between accepted events every triggering term is non-increasing, so the
    bound ``sum_i sup mu_i + sum_i trig_i(t)`` stays valid until the next
    acceptance.
    """
    rng = np.random.default_rng(rng)
    build_transition(net, model).check_stable()
    T = float(T)
    k = model.kernel
    b = model.truncation
    g = model.membership
    C, R = _coupling(model, net)
    sup_mu = model.baseline.sup()[g]
    sup_total = sup_mu.sum()
    ev_node, ev_time = [], []
    recent_node = np.empty(0, np.int64)
    recent_time = np.empty(0)
    t, trig_total = 0.0, 0.0
    while True:
        bound = sup_total + trig_total
        if bound <= 0:
            break
        t += rng.exponential(1.0 / bound)
        if t > T:
            break
        live = recent_time >= t - b
        recent_node, recent_time = recent_node[live], recent_time[live]
        if recent_node.size:
            kern = k.density(t - recent_time[None, :], R[:, recent_node])
            trig = (C[:, recent_node] * kern).sum(axis=1)
        else:
            trig = np.zeros(net.m)
        lam = model.baseline.evaluate(np.array([t]))[g, 0] + trig
        trig_total = trig.sum()
        u = rng.random() * bound
        total = lam.sum()
        if u <= total:
            i = int(np.searchsorted(np.cumsum(lam), u, side="right"))
            i = min(i, net.m - 1)
            ev_node.append(i)
            ev_time.append(t)
            recent_node = np.append(recent_node, i)
            recent_time = np.append(recent_time, t)
            # the new event adds its jump at lag zero
            trig_total += float(C[:, i] @ k.normalizer(R[:, i]))
            if len(ev_node) > max_events:
                raise EventCapExceeded(f"more than {max_events} events in one replicate")
    data = EventData.from_arrays(ev_node, ev_time, net.m, T, model.period)
    return SimulatedEvents(data=data)
