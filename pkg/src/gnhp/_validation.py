"""Input checks shared by the estimator wrappers and the command line."""

import numbers

import numpy as np

from .model import EventData
from .network import Network


class NotFittedError(AttributeError):
    pass


def check_network(net):
    if not isinstance(net, Network):
        raise TypeError(f"expected a Network, got {type(net).__name__}")
    return net


def check_events(X, net=None, period=None):
    """Accept ``EventData`` or a ``(nodes, times, horizon)`` tuple."""
    if isinstance(X, tuple) and len(X) == 3:
        if net is None:
            raise ValueError("a network is needed to build events from arrays")
        nodes, times, horizon = X
        X = EventData.from_arrays(nodes, times, net.m, horizon, 12.0 if period is None else period)
    if not isinstance(X, EventData):
        raise TypeError(f"expected EventData, got {type(X).__name__}")
    if net is not None and X.m != net.m:
        raise ValueError(f"events cover {X.m} nodes but the network has {net.m}")
    if X.n_events == 0:
        raise ValueError("no events")
    return X


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_is_fitted(est, attr="model_"):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
