"""Scikit-learn style wrappers around ``fit`` and ``select_groups``."""

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    check_events,
    check_is_fitted,
    check_network,
    check_positive,
    check_positive_int,
)
from .estimate import FitConfig, fit
from .influence import influence_report
from .model import History, InfeasibleModelError, node_log_likelihoods
from .select import select_groups


class GroupNetworkHawkes(BaseEstimator):
    """Fit a group network Hawkes process with a fixed number of groups.

    ``fit(X, network=net)`` takes ``EventData`` (or ``(nodes, times, horizon)``).
    After fitting, ``membership_`` holds the refined group of every node and
    ``predict`` returns it for the data it was given.
    """

    def __init__(self, n_groups=3, num_basis=36, order=4, period=12.0, truncation=5.0,
                 n_starts=20, tol=1e-6, max_iter=500, refine=True, standard_errors=True,
                 random_state=0):
        self.n_groups = n_groups
        self.num_basis = num_basis
        self.order = order
        self.period = period
        self.truncation = truncation
        self.n_starts = n_starts
        self.tol = tol
        self.max_iter = max_iter
        self.refine = refine
        self.standard_errors = standard_errors
        self.random_state = random_state

    def _config(self):
        return FitConfig(
            num_basis=check_positive_int(self.num_basis, "num_basis"),
            order=check_positive_int(self.order, "order"),
            period=check_positive(self.period, "period"),
            truncation=check_positive(self.truncation, "truncation"),
            n_starts=check_positive_int(self.n_starts, "n_starts"),
            tol=check_positive(self.tol, "tol"),
            max_iter=check_positive_int(self.max_iter, "max_iter"),
            refine=bool(self.refine),
            standard_errors=bool(self.standard_errors),
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, y=None, network=None):
        net = check_network(network)
        data = check_events(X, net, self.period)
        G = check_positive_int(self.n_groups, "n_groups")
        self.result_ = fit(net, data, G, self._config())
        self.network_ = net
        self.model_ = self.result_.model
        self.membership_ = self.model_.membership.copy()
        self.transition_ = self.result_.refined_transition
        self.standard_errors_ = self.result_.standard_errors
        self.loglik_ = self.result_.loglik
        return self

    def transform(self, X):
        """Node log-likelihood under each group's parameters, shape ``(m, G)``."""
        check_is_fitted(self)
        data = check_events(X, self.network_, self.period)
        hist = History(data, self.network_, self.model_.truncation)
        out = np.full((data.m, self.model_.n_groups), -np.inf)
        for a in range(self.model_.n_groups):
            try:
                out[:, a] = node_log_likelihoods(self.model_, hist, param_group=np.full(data.m, a))
            except InfeasibleModelError:
                pass
        return out

    def predict(self, X=None):
        """Group of every node; for new data, the best group per node given the fit."""
        check_is_fitted(self)
        if X is None:
            return self.membership_.copy()
        return np.argmax(self.transform(X), axis=1)

    def score(self, X, y=None):
        """Average log-likelihood per node and unit time."""
        check_is_fitted(self)
        data = check_events(X, self.network_, self.period)
        hist = History(data, self.network_, self.model_.truncation)
        return float(node_log_likelihoods(self.model_, hist).mean())

    def influence(self, grid=None):
        check_is_fitted(self)
        return influence_report(self.model_, self.network_, self.transition_, self.membership_, grid)


class GroupSelector(BaseEstimator):
    """Pick the number of groups in ``[g_min, g_max]`` by the penalized likelihood."""

    def __init__(self, g_min=1, g_max=5, penalty="median", num_basis=36, order=4, period=12.0,
                 truncation=5.0, n_starts=20, tol=1e-6, max_iter=500, random_state=0):
        self.g_min = g_min
        self.g_max = g_max
        self.penalty = penalty
        self.num_basis = num_basis
        self.order = order
        self.period = period
        self.truncation = truncation
        self.n_starts = n_starts
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None, network=None):
        net = check_network(network)
        data = check_events(X, net, self.period)
        g_min = check_positive_int(self.g_min, "g_min")
        g_max = check_positive_int(self.g_max, "g_max", g_min)
        est = GroupNetworkHawkes(num_basis=self.num_basis, order=self.order, period=self.period,
                                 truncation=self.truncation, n_starts=self.n_starts, tol=self.tol,
                                 max_iter=self.max_iter, random_state=self.random_state)
        self.result_ = select_groups(net, data, g_min, g_max, est._config(), variant=self.penalty)
        self.n_groups_ = self.result_.chosen
        self.lic_table_ = self.result_.table()
        self.penalty_ = self.result_.lam
        self.model_ = self.result_.fit_for(self.n_groups_).model
        return self

    def predict(self, X=None):
        check_is_fitted(self)
        return self.model_.membership.copy()
