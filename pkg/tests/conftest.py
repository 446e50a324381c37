import numpy as np
import pytest

from gnhp.model import GnhpModel, SplineBaseline, constant_baseline_model
from gnhp.network import Network
from gnhp.splines import PeriodicSplineBasis


def two_node_network():
    # node 0 follows node 1
    return Network(2, [0], [1])


def two_node_model(level=0.5):
    basis = PeriodicSplineBasis(4, 12.0, order=4)
    return constant_baseline_model(
        basis, [level, level], beta=[0.3, 0.2], eta=[1.0, 1.0], gamma=[1.0, 1.0],
        phi=[[0.0, 0.4], [0.0, 0.0]], membership=[0, 1],
    )


def random_network(m, p, rng):
    draw = rng.random((m, m)) < p
    np.fill_diagonal(draw, False)
    src, dst = np.nonzero(draw)
    return Network(m, src, dst)


def random_model(rng, m, G, num_basis=6, period=12.0, truncation=5.0):
    basis = PeriodicSplineBasis(num_basis, period)
    w = rng.uniform(0.02, 0.12, size=(G, num_basis))
    membership = rng.integers(0, G, size=m)
    membership[:G] = np.arange(G)
    return GnhpModel(
        baseline=SplineBaseline(basis, w),
        beta=rng.uniform(0.1, 0.4, G),
        eta=rng.uniform(0.5, 2.0, G),
        gamma=rng.uniform(0.5, 2.0, G),
        phi=rng.uniform(0.0, 0.4, (G, G)),
        membership=membership,
        truncation=truncation,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def three_group_sim():
    """Three-group truth on an m=100 SBM over 20 periods, with provenance."""
    from gnhp.network import generate_sbm
    from gnhp.presets import three_group_model
    from gnhp.simulate import simulate_branching

    rng = np.random.default_rng(77)
    net, _ = generate_sbm(100, rng=rng)
    truth = three_group_model(m=100, rng=rng)
    sim = simulate_branching(truth, net, 240.0, rng)
    return net, truth, sim


@pytest.fixture(scope="session")
def three_group_fit(three_group_sim):
    from gnhp.estimate import FitConfig, fit

    net, truth, sim = three_group_sim
    return fit(net, sim.data, 3, FitConfig(n_starts=2, seed=1))
