import csv

import numpy as np
import pytest
from scipy import stats

from conftest import random_model, random_network, two_node_model, two_node_network
from gnhp.model import GnhpModel, SplineBaseline, constant_baseline_model
from gnhp.network import InstabilityError, Network, build_transition, generate_sbm, neumann_solve
from gnhp.presets import three_group_model
from gnhp.simulate import EventCapExceeded, simulate_branching, simulate_families, simulate_thinning
from gnhp.splines import PeriodicSplineBasis


def poisson_model(m, level=0.5, G=1):
    basis = PeriodicSplineBasis(6, 12.0)
    return constant_baseline_model(basis, [level] * G, [0.0] * G, [1.0] * G, [1.0] * G,
                                   np.zeros((G, G)), np.zeros(m, np.int64))


def test_no_triggering_gives_poisson_means():
    rng = np.random.default_rng(0)
    net = random_network(3, 0.7, rng)
    basis = PeriodicSplineBasis(6, 12.0)
    w = np.array([[0.02, 0.1, 0.3, 0.05, 0.2, 0.1]])
    model = GnhpModel(SplineBaseline(basis, w), [0.0], [1.0], [1.0], [[0.0]], [0, 0, 0])
    T = 20.0
    mean = float(model.baseline.integral(0.0, T)[0])
    counts = np.array([simulate_branching(model, net, T, rng).data.counts for _ in range(5000)])
    se = counts.std(axis=0, ddof=1) / np.sqrt(counts.shape[0])
    assert np.all(np.abs(counts.mean(axis=0) - mean) < 3 * se)


def test_two_node_family_offspring():
    fam = simulate_families(two_node_model(), two_node_network(), root=1, n_families=20_000, rng=1)
    se = fam[:, 0].std(ddof=1) / np.sqrt(fam.shape[0])
    assert abs(fam[:, 0].mean() - 0.7143) < 3 * se
    assert np.all(fam[:, 1] >= 1)


def test_family_sizes_match_column_sums():
    rng = np.random.default_rng(2)
    net = random_network(8, 0.3, rng)
    model = random_model(rng, 8, 2)
    B = build_transition(net, model)
    for root in (0, 5):
        e = np.zeros(8)
        e[root] = 1
        target = neumann_solve(B, e).sum()
        size = simulate_families(model, net, root, 20_000, rng).sum(axis=1)
        assert abs(size.mean() - target) < 3 * size.std(ddof=1) / np.sqrt(size.size)


def test_event_count_near_branching_mass():
    rng = np.random.default_rng(3)
    net, _ = generate_sbm(100, rng=rng)
    truth = three_group_model(m=100, rng=rng)
    T = 60.0
    mu_bar = truth.baseline.integral(0.0, T)[truth.membership]
    expected = neumann_solve(build_transition(net, truth), mu_bar).sum()
    totals = [simulate_branching(truth, net, T, rng).data.n_events for _ in range(10)]
    # offspring cut off at T make the realized mean slightly smaller
    assert abs(np.mean(totals) / expected - 1) < 0.10


def test_thinning_poisson_counts():
    rng = np.random.default_rng(4)
    net = Network(3, [0, 1], [1, 2])
    c, T = 0.5, 10.0
    model = poisson_model(3, c)
    totals = np.array([simulate_thinning(model, net, T, rng).data.n_events for _ in range(1000)])
    lam = 3 * c * T
    edges = np.array([0, 9, 11, 13, 15, 17, 19, 21, 100])
    obs = np.histogram(totals, edges)[0]
    cdf = stats.poisson.cdf(edges[1:] - 1, lam) - stats.poisson.cdf(edges[:-1] - 1, lam)
    assert stats.chisquare(obs, cdf / cdf.sum() * obs.sum()).pvalue > 0.01


def test_empty_horizon():
    net, model = two_node_network(), two_node_model()
    assert simulate_thinning(model, net, 0.0, 0).data.n_events == 0
    assert simulate_branching(model, net, 0.0, 0).data.n_events == 0


def test_provenance_is_valid():
    rng = np.random.default_rng(5)
    net = random_network(12, 0.3, rng)
    model = random_model(rng, 12, 2)
    out = simulate_branching(model, net, 48.0, rng)
    d = out.data
    b = model.truncation
    root = out.parent_node < 0
    assert np.all(out.generation[root] == 0)
    assert np.all(out.parent_index[root] == -1)
    for e in np.nonzero(~root)[0]:
        i, j = d.nodes[e], out.parent_node[e]
        assert j == i or j in net.out_neighbors(i)
        tp = d.node_times(j)[out.parent_index[e]]
        assert 0 < d.times[e] - tp <= b
        assert out.generation[e] >= 1


def test_determinism():
    net, model = two_node_network(), two_node_model()
    a = simulate_branching(model, net, 30.0, 9).data
    b = simulate_branching(model, net, 30.0, 9).data
    np.testing.assert_array_equal(a.times, b.times)
    c = simulate_thinning(model, net, 30.0, 9).data
    d = simulate_thinning(model, net, 30.0, 9).data
    np.testing.assert_array_equal(c.times, d.times)


def test_unstable_model_rejected():
    net = two_node_network()
    model = two_node_model().copy(beta=np.array([1.1, 0.2]))
    with pytest.raises(InstabilityError):
        simulate_branching(model, net, 10.0, 0)
    with pytest.raises(InstabilityError):
        simulate_thinning(model, net, 10.0, 0)


def test_event_cap():
    with pytest.raises(EventCapExceeded):
        simulate_branching(two_node_model(level=5.0), two_node_network(), 100.0, 0, max_events=100)


def test_csv_with_provenance(tmp_path):
    rng = np.random.default_rng(6)
    net = random_network(6, 0.4, rng)
    out = simulate_branching(random_model(rng, 6, 2), net, 24.0, rng)
    out.to_csv(tmp_path / "ev.csv")
    with open(tmp_path / "ev.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["node", "time", "parent_node", "parent_index", "generation"]
    times = [float(r["time"]) for r in rows]
    assert times == sorted(times)
    assert len(rows) == out.data.n_events
