import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model, random_network
from gnhp.estimate import FitConfig
from gnhp.model import EventData
from gnhp.network import Network
from gnhp.select import choose_groups, lic_lambda, merge_closest, read_lic_table, select_groups
from gnhp.simulate import simulate_branching


def complete_network(m):
    src, dst = np.nonzero(~np.eye(m, dtype=bool))
    return Network(m, src, dst)


def test_lambda_example():
    net = complete_network(17)  # every out-degree is 16
    rng = np.random.default_rng(0)
    data = EventData([np.sort(rng.uniform(0, 60, 100)) for _ in range(17)], horizon=60.0)
    assert lic_lambda(data, net) == pytest.approx(0.03521985, rel=1e-6)


def test_lambda_unit_powers():
    net = Network(2, [0, 1], [1, 0])
    data = EventData([[1.0], [2.0]], horizon=10.0)
    assert lic_lambda(data, net) == pytest.approx(1 / 150)
    assert lic_lambda(data, net, "mean") == pytest.approx(1 / 250)
    with pytest.raises(ValueError):
        lic_lambda(data, net, "nope")


def test_choose_groups_rules():
    Gs = [2, 3, 4, 5]
    ll = [-0.534, -0.5255, -0.5234, -0.522]
    assert choose_groups(Gs, ll, 1e9) == 2
    assert choose_groups(Gs, ll, 0.0) == 5
    assert choose_groups([1, 2], [-1.0, -0.5], 0.5) == 1  # exact tie goes to fewer groups


@settings(max_examples=50, deadline=None)
@given(ll=st.lists(st.floats(-5, 0), min_size=2, max_size=6), shift=st.floats(-100, 100),
       lam=st.floats(0, 1))
def test_selection_invariant_to_shift(ll, shift, lam):
    Gs = list(range(1, len(ll) + 1))
    # quantize so the shift cannot create or break ties through rounding
    ll = np.round(np.asarray(ll), 3)
    lam = round(lam, 3)
    shift = round(shift, 3)
    assert choose_groups(Gs, ll, lam) == choose_groups(Gs, ll + shift, lam)


def test_merge_closest_reduces_groups():
    rng = np.random.default_rng(1)
    model = random_model(rng, 12, 3)
    merged = merge_closest(model)
    assert merged.n_groups == 2
    assert merged.membership.max() <= 1
    assert merged.weights.shape == (2, model.weights.shape[1])
    with pytest.raises(ValueError):
        merge_closest(merge_closest(merged))


def test_select_groups_small(tmp_path):
    rng = np.random.default_rng(2)
    net = random_network(16, 0.25, rng)
    model = random_model(rng, 16, 2)
    data = simulate_branching(model, net, 120.0, rng).data
    cfg = FitConfig(n_starts=1, num_basis=8, standard_errors=False)
    res = select_groups(net, data, 1, 3, cfg)
    assert [r.G for r in res.rows] == [1, 2, 3]
    assert res.chosen in (1, 2, 3)
    assert res.lam == pytest.approx(lic_lambda(data, net))
    for r in res.rows:
        assert r.lic == pytest.approx(r.loglik - res.lam * r.G)
    best = max(res.rows, key=lambda r: (r.lic, -r.G))
    assert res.chosen == best.G
    res.to_csv(tmp_path / "lic.csv")
    table = read_lic_table(tmp_path / "lic.csv")
    assert [row[0] for row in table] == [1, 2, 3]
    np.testing.assert_allclose([row[3] for row in table], [r.lic for r in res.rows], rtol=1e-9)
    huge = select_groups(net, data, 1, 2, cfg, lam=1e9)
    assert huge.chosen == 1


def test_select_groups_validates_range():
    with pytest.raises(ValueError):
        select_groups(Network(2, [0], [1]), EventData([[1.0], [2.0]], 5.0), 3, 2)
