"""Comparing fitted models with a known truth."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def confusion(est, true, G_est=None, G_true=None):
    est, true = np.asarray(est), np.asarray(true)
    G_est = int(est.max()) + 1 if G_est is None else G_est
    G_true = int(true.max()) + 1 if G_true is None else G_true
    C = np.zeros((G_est, G_true), np.int64)
    np.add.at(C, (est, true), 1)
    return C


def group_accuracy(est, true, G_est=None, G_true=None):
    """Fraction of nodes correctly grouped under the best one-to-one relabeling."""
    C = confusion(est, true, G_est, G_true)
    r, c = linear_sum_assignment(-C)
    return float(C[r, c].sum()) / len(est)


def label_permutation(est, true, G):
    """``perm`` with estimated group ``perm[h]`` matched to true group ``h``."""
    C = confusion(est, true, G, G)
    r, c = linear_sum_assignment(-C)
    perm = np.empty(G, np.int64)
    perm[c] = r
    return perm


def phase_grid(period, minutes=1.0):
    return np.arange(0.0, period, minutes / 60.0)


def baseline_l1(model_a, model_b, grid=None):
    """``[g, h] = int over one period of |mu_a,g - mu_b,h|`` on a 1-minute grid."""
    grid = phase_grid(model_b.period) if grid is None else grid
    step = grid[1] - grid[0]
    mu_a = model_a.baseline.evaluate(grid)
    mu_b = model_b.baseline.evaluate(grid)
    return np.abs(mu_a[:, None, :] - mu_b[None, :, :]).sum(axis=2) * step


def parameter_permutation(est, truth):
    """Match groups by baseline L1 distance plus the distance of (beta, eta, gamma)."""
    D = baseline_l1(est, truth)
    th = np.linalg.norm(est.theta()[:, None, :] - truth.theta()[None, :, :], axis=2)
    r, c = linear_sum_assignment(D + th)
    perm = np.empty(truth.n_groups, np.int64)
    perm[c] = r
    return perm


def matched_errors(est, truth, perm=None):
    """Signed errors of beta, eta, gamma and phi after relabeling the estimate."""
    if est.n_groups != truth.n_groups:
        raise ValueError("matching needs equal group counts")
    perm = parameter_permutation(est, truth) if perm is None else np.asarray(perm)
    return {
        "beta": est.beta[perm] - truth.beta,
        "eta": est.eta[perm] - truth.eta,
        "gamma": est.gamma[perm] - truth.gamma,
        "phi": est.phi[np.ix_(perm, perm)] - truth.phi,
    }


def node_varphi(model, net, membership=None):
    """Per-edge entries ``phi[g_i, g_j] / sqrt(d_i)`` aligned with ``net.out_idx``."""
    g = model.membership if membership is None else membership
    src = np.repeat(np.arange(net.m), net.out_degree)
    return model.phi[g[src], g[net.out_idx]] / np.sqrt(net.out_degree[src])


def pseudo_distance(model_a, model_b, net):
    """Node-averaged distance between two parameterizations, possibly with different G.

    Spline weights are compared by Euclidean norm when both models share a
    basis; otherwise baselines are compared by their L1 distance over one period.
    """
    ga, gb = model_a.membership, model_b.membership
    if (model_a.baseline.kind == "spline" and model_b.baseline.kind == "spline"
            and model_a.baseline.basis == model_b.baseline.basis):
        dw = np.linalg.norm(model_a.weights[ga] - model_b.weights[gb], axis=1)
    else:
        dw = baseline_l1(model_a, model_b)[ga, gb]
    dth = np.linalg.norm(model_a.theta()[ga] - model_b.theta()[gb], axis=1)
    diff = node_varphi(model_a, net) - node_varphi(model_b, net)
    src = np.repeat(np.arange(net.m), net.out_degree)
    dphi = np.sqrt(np.bincount(src, diff * diff, minlength=net.m))
    return float(np.mean(dw + dth + dphi))


def pd_parameter(est, truth, name, est_membership=None):
    """``mean_i |est[g_i_hat] - truth[g_i]|`` for ``name`` in beta, eta, gamma."""
    gh = est.membership if est_membership is None else est_membership
    return float(np.mean(np.abs(getattr(est, name)[gh] - getattr(truth, name)[truth.membership])))


def pd_baseline(est, truth, est_membership=None):
    gh = est.membership if est_membership is None else est_membership
    return float(np.mean(baseline_l1(est, truth)[gh, truth.membership]))


def pd_transition(B_est, B_true, net):
    """``sqrt(mean_i sum_{j in N_i} (b_hat_ij - b_ij)^2)`` over network edges."""
    src = np.repeat(np.arange(net.m), net.out_degree)
    dst = net.out_idx
    a = np.asarray(B_est.matrix[src, dst]).ravel() if B_est.matrix.nnz else np.zeros(src.size)
    b = np.asarray(B_true.matrix[src, dst]).ravel() if B_true.matrix.nnz else np.zeros(src.size)
    return float(np.sqrt(np.sum((a - b) ** 2) / net.m))


def groups_nested(est, true, G_est=None):
    """True when every non-empty estimated group lies inside a single true group."""
    C = confusion(est, true, G_est)
    return bool(np.all((C > 0).sum(axis=1) <= 1))


def rmse(errors):
    errors = np.asarray(errors, float)
    return np.sqrt(np.mean(errors ** 2, axis=0))
