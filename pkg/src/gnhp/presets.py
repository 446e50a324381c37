"""Built-in simulation truth with three groups on a 12-hour period."""

import numpy as np

from .model import BumpBaseline, GnhpModel

THREE_GROUP = dict(
    integrals=[1.5, 1.0, 0.5],
    ratios=[4.0, 6.0, 2.0],
    starts=[[3.0], [7.0], [5.0, 8.0]],
    widths=[1.0, 2.0, 1.0],
    beta=[0.5, 0.4, 0.7],
    eta=[1.5, 1.0, 2.0],
    gamma=[1.0, 2.0, 0.5],
    phi=[[0.4, 0.1, 0.1], [0.6, 0.4, 0.5], [0.15, 0.2, 0.1]],
    proportions=[0.3, 0.4, 0.3],
)

PRESETS = ("paper-t1",)


def three_group_baseline(period=12.0):
    p = THREE_GROUP
    return BumpBaseline.calibrated(p["integrals"], p["ratios"], p["starts"], p["widths"], period)


def assign_groups(m, proportions, rng):
    """Exact group sizes ``round(m * proportions)`` in random node order."""
    proportions = np.asarray(proportions, float)
    sizes = np.floor(m * proportions).astype(int)
    # largest remainders get the leftover nodes
    rest = m - sizes.sum()
    sizes[np.argsort(-(m * proportions - sizes), kind="stable")[:rest]] += 1
    labels = np.repeat(np.arange(proportions.size), sizes)
    return rng.permutation(labels)


def three_group_model(membership=None, m=None, rng=None, period=12.0, truncation=5.0):
    """Three-group truth; memberships drawn with proportions 0.3/0.4/0.3 if not given."""
    p = THREE_GROUP
    if membership is None:
        if m is None:
            raise ValueError("give either membership or m")
        membership = assign_groups(m, p["proportions"], np.random.default_rng(rng))
    return GnhpModel(
        baseline=three_group_baseline(period),
        beta=p["beta"],
        eta=p["eta"],
        gamma=p["gamma"],
        phi=p["phi"],
        membership=membership,
        truncation=truncation,
    )


def preset_model(name, **kwargs):
    if name != "paper-t1":
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return three_group_model(**kwargs)
