import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model, random_network
from gnhp.estimate import (
    FitConfig,
    Responsibilities,
    complete_log_likelihood,
    e_step,
    fit,
    initialize,
    m_step,
    membership_gains,
    refine_memberships,
    run_em,
    sample_responsibilities,
    start_from_labels,
)
from gnhp.metrics import group_accuracy
from gnhp.model import EventData, GnhpModel, History, SplineBaseline, constant_baseline_model, node_log_likelihoods
from gnhp.network import Network, generate_sbm
from gnhp.presets import three_group_model
from gnhp.simulate import simulate_branching
from gnhp.splines import PeriodicSplineBasis


def small_problem(seed, m=6, G=2, T=60.0):
    rng = np.random.default_rng(seed)
    net = random_network(m, 0.4, rng)
    model = random_model(rng, m, G)
    data = simulate_branching(model, net, T, rng).data
    return net, model, data, History(data, net, model.truncation)


def true_responsibilities(sim, hist):
    d = sim.data
    has = sim.parent_node >= 0
    pidx = np.where(has, d.ptr[np.maximum(sim.parent_node, 0)] + sim.parent_index, -1)
    return Responsibilities(
        background=(~has).astype(float),
        own=(hist.own_parent == pidx[hist.own_child]).astype(float),
        net=(hist.net_parent == pidx[hist.net_child]).astype(float),
    )


def spline_start(truth, data, net, config):
    basis = PeriodicSplineBasis(config.num_basis, data.period, config.order)
    start = start_from_labels(data, truth.membership, truth.n_groups, config, basis)
    return start.copy(beta=truth.beta, eta=truth.eta, gamma=truth.gamma, phi=truth.phi)


# ----------------------------------------------------------------------
# E-step


def test_isolated_node_background_only():
    basis = PeriodicSplineBasis(4, 12.0)
    model = constant_baseline_model(basis, [0.5, 0.5], [0.0, 0.3], [1.0, 1.0], [1.0, 1.0],
                                    [[0.2, 0.2], [0.2, 0.2]], [0, 1])
    net = Network(2, [1], [0])
    data = EventData([[1.0, 1.5, 2.0], [1.2, 3.0]], horizon=10.0)
    hist = History(data, net, 5.0)
    resp = e_step(model, hist)
    np.testing.assert_allclose(resp.background[:3], 1.0)


def test_two_candidate_normalization():
    basis = PeriodicSplineBasis(4, 12.0)
    c, beta = 0.4, 0.3
    model = constant_baseline_model(basis, [c], [beta], [1.2], [1.0], [[0.0]], [0])
    data = EventData([[1.0, 2.5]], horizon=10.0)
    hist = History(data, Network(1), 5.0)
    resp = e_step(model, hist)
    f = model.kernel.density(1.5, 1.2)
    assert resp.own[0] == pytest.approx(beta * f / (c + beta * f), rel=1e-12)
    assert resp.background[1] == pytest.approx(c / (c + beta * f), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_responsibilities_sum_to_one(seed):
    net, model, data, hist = small_problem(seed, T=30.0)
    resp = e_step(model, hist)
    np.testing.assert_allclose(resp.totals(hist), 1.0, atol=1e-12)
    hard = sample_responsibilities(resp, hist, np.random.default_rng(seed))
    np.testing.assert_array_equal(hard.totals(hist), 1.0)


def test_posterior_favours_true_parent(three_group_sim):
    net, truth, sim = three_group_sim
    hist = History(sim.data, net, truth.truncation)
    resp = e_step(truth, hist)
    true = true_responsibilities(sim, hist)
    N = sim.data.n_events
    events = np.random.default_rng(0).choice(N, 1000, replace=False)
    p_true = resp.background * true.background
    p_true += np.bincount(hist.own_child, resp.own * true.own, minlength=N)
    p_true += np.bincount(hist.net_child, resp.net * true.net, minlength=N)
    wrong = resp.background * (1 - true.background)
    for child, p, t in ((hist.own_child, resp.own, true.own), (hist.net_child, resp.net, true.net)):
        cand = np.zeros(N)
        np.maximum.at(cand, child, p * (1 - t))
        wrong = np.maximum(wrong, cand)
    assert p_true[events].mean() > wrong[events].mean()


# ----------------------------------------------------------------------
# M-step


def test_zero_network_mass_gives_zero_phi():
    net, model, data, hist = small_problem(1)
    resp = e_step(model, hist)
    resp = Responsibilities(resp.background + np.bincount(hist.net_child, resp.net, minlength=hist.n_events),
                            resp.own, np.zeros_like(resp.net))
    new = m_step(resp, hist, model)
    # entries with exposure become zero; the rest have no data and keep their value
    changed = new.phi != model.phi
    assert changed.any()
    assert np.all(new.phi[changed] == 0.0)


def test_single_node_poisson_mass():
    basis = PeriodicSplineBasis(8, 12.0)
    model = constant_baseline_model(basis, [1.0], [0.0], [1.0], [1.0], [[0.0]], [0])
    rng = np.random.default_rng(2)
    T = 48.0
    data = EventData([np.sort(rng.uniform(0, T, 70))], horizon=T)
    hist = History(data, Network(1), 5.0)
    new = m_step(e_step(model, hist), hist, model)
    assert new.baseline.integral(0.0, T)[0] == pytest.approx(70.0, rel=1e-8)
    assert new.beta[0] == 0.0


def test_complete_data_mstep_recovers_truth():
    K = 10
    config = FitConfig()
    est = []
    for rep in range(K):
        rng = np.random.default_rng(500 + rep)
        net, _ = generate_sbm(100, rng=rng)
        truth = three_group_model(m=100, rng=rng)
        sim = simulate_branching(truth, net, 240.0, rng)
        hist = History(sim.data, net, truth.truncation)
        resp = true_responsibilities(sim, hist)
        np.testing.assert_array_equal(resp.totals(hist), 1.0)
        new = m_step(resp, hist, spline_start(truth, sim.data, net, config), config=config)
        est.append(np.concatenate([new.beta, new.eta, new.gamma, new.phi.ravel()]))
    est = np.array(est)
    target = np.concatenate([truth.beta, truth.eta, truth.gamma, truth.phi.ravel()])
    se = est.std(axis=0, ddof=1) / np.sqrt(K)
    assert np.all(np.abs(est.mean(axis=0) - target) <= 3 * se)


def test_complete_likelihood_decomposition(three_group_sim):
    net, truth, sim = three_group_sim
    hist = History(sim.data, net, truth.truncation)
    model = spline_start(truth, sim.data, net, FitConfig())
    resp = true_responsibilities(sim, hist)
    parts = complete_log_likelihood(model, hist, resp)
    # direct evaluation with the hard parent labels
    d, k, g = sim.data, model.kernel, model.membership
    mu = np.array([model.baseline.evaluate(np.array([t]))[g[i], 0] for i, t in zip(d.nodes, d.times)])
    total = 0.0
    for e in range(d.n_events):
        i = d.nodes[e]
        j = sim.parent_node[e]
        if j < 0:
            total += np.log(mu[e])
            continue
        lag = d.times[e] - d.node_times(j)[sim.parent_index[e]]
        if j == i:
            total += np.log(model.beta[g[i]] * k.density(lag, model.eta[g[i]]))
        else:
            total += np.log(model.phi[g[i], g[j]] / net.out_degree[i] * k.density(lag, model.gamma[g[i]]))
    T = d.horizon
    for i in range(net.m):
        total -= model.baseline.integral(0.0, T)[g[i]]
        total -= model.beta[g[i]] * k.cumulative(T - d.node_times(i), model.eta[g[i]]).sum()
        for j in net.out_neighbors(i):
            total -= model.phi[g[i], g[j]] / net.out_degree[i] * k.cumulative(
                T - d.node_times(j), model.gamma[g[i]]).sum()
    assert parts.sum() == pytest.approx(total, rel=1e-10)


def test_mstep_raises_expected_complete_likelihood():
    for seed in range(5):
        net, model, data, hist = small_problem(40 + seed, T=120.0)
        resp = e_step(model, hist)
        for mode in ("fixed_membership", "hard_membership"):
            new = m_step(resp, hist, model, mode)
            before = complete_log_likelihood(model, hist, resp).sum()
            after = complete_log_likelihood(new, hist, resp).sum()
            assert after >= before - 1e-9


def test_empty_group_is_frozen_and_flagged():
    net, model, data, hist = small_problem(3, G=2)
    model = model.copy(membership=np.zeros(net.m, np.int64))
    flags = {}
    new = m_step(e_step(model, hist), hist, model, flags=flags)
    assert flags["empty_groups"] == {1}
    assert new.beta[1] == model.beta[1] and new.eta[1] == model.eta[1]
    np.testing.assert_array_equal(new.weights[1], model.weights[1])


# ----------------------------------------------------------------------
# EM driver and initialization


def test_em_trace_non_decreasing():
    for seed in range(3):
        net, model, data, hist = small_problem(60 + seed, T=120.0)
        run = run_em(model, hist, "fixed_membership", FitConfig(), max_iter=40)
        assert np.all(np.diff(run.trace) >= -1e-8)


def test_initialize_single_group_and_determinism(three_group_sim):
    net, truth, sim = three_group_sim
    one = initialize(net, sim.data, 1, rng=0)
    assert np.all(one.membership == 0)
    a = initialize(net, sim.data, 3, rng=4, features="basic")
    b = initialize(net, sim.data, 3, rng=4, features="basic")
    np.testing.assert_array_equal(a.membership, b.membership)


def test_kmeans_initial_accuracy():
    default, basic, rand = [], [], []
    for rep in range(3):
        rng = np.random.default_rng(900 + rep)
        net, _ = generate_sbm(100, rng=rng)
        truth = three_group_model(m=100, rng=rng)
        data = simulate_branching(truth, net, 240.0, rng).data
        default.append(group_accuracy(initialize(net, data, 3, rng=rep).membership, truth.membership, 3, 3))
        init = initialize(net, data, 3, rng=rep, features="basic")
        basic.append(group_accuracy(init.membership, truth.membership, 3, 3))
        rand.append(group_accuracy(rng.integers(0, 3, 100), truth.membership, 3, 3))
    assert np.mean(default) >= 0.6
    assert np.mean(basic) > np.mean(rand)


def test_permutation_equivariance():
    net, model, data, hist = small_problem(7, m=8, G=3, T=120.0)
    config = FitConfig()
    perm = np.array([1, 2, 0])
    a = run_em(model, hist, "hard_membership", config, max_iter=10).model
    b = run_em(model.permuted(perm), hist, "hard_membership", config, max_iter=10).model
    # summation order differs between labelings, so agreement is to roundoff growth
    np.testing.assert_allclose(b.beta, a.beta[perm], rtol=1e-6)
    np.testing.assert_allclose(b.phi, a.phi[np.ix_(perm, perm)], rtol=1e-6, atol=1e-12)
    inv = np.argsort(perm)
    np.testing.assert_array_equal(b.membership, inv[a.membership])


def test_membership_gains_are_exact():
    net, model, data, hist = small_problem(8, m=7, G=3, T=90.0)
    gains = membership_gains(model, hist)
    base = node_log_likelihoods(model, hist).sum()
    for i in range(net.m):
        for a in range(3):
            g = model.membership.copy()
            g[i] = a
            brute = node_log_likelihoods(model.copy(membership=g), hist).sum() - base
            assert gains[i, a] == pytest.approx(brute, abs=1e-12)


def test_config_parsing():
    cfg = FitConfig.from_mapping({"n_starts": "3", "refine": "false", "tol": "1e-5",
                                  "refine_threshold": "none", "init_features": "basic"})
    assert cfg.n_starts == 3 and cfg.refine is False and cfg.tol == 1e-5
    assert cfg.refine_threshold is None and cfg.init_features == "basic"
    with pytest.raises(ValueError):
        FitConfig.from_mapping({"bogus": 1})


# ----------------------------------------------------------------------
# fit and refinement


def test_fit_single_group():
    net, model, data, hist = small_problem(9, T=60.0)
    res = fit(net, data, 1, FitConfig(n_starts=1))
    assert np.all(res.membership == 0)
    assert res.converged
    assert res.inference.standard_errors.shape == (4,)


def test_fit_recovers_groups(three_group_sim, three_group_fit):
    net, truth, sim = three_group_sim
    assert group_accuracy(three_group_fit.membership, truth.membership, 3, 3) >= 0.95
    assert three_group_fit.converged
    assert np.all(np.diff(three_group_fit.trace[-20:]) >= -1e-8)


def test_refinement_examples(three_group_sim, three_group_fit):
    net, truth, sim = three_group_sim
    model = three_group_fit.model
    hist = History(sim.data, net, model.truncation)
    off = refine_memberships(model, hist, threshold=np.inf)
    np.testing.assert_array_equal(off.membership, model.membership)
    zero = refine_memberships(model, hist, threshold=0.0)
    assert zero.switched.mean() < 0.05
    assert np.all(zero.updated >= zero.switched)
    current = node_log_likelihoods(model, hist).sum()
    assert zero.profile_value >= current - 1e-9
    auto = refine_memberships(model, hist)
    assert auto.threshold > 0
    assert auto.transition.is_stable()
