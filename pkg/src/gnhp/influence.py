"""Influence measures derived from the transition matrix.

Column ``i`` of ``(I - B)^{-1}`` is the expected number of events at every
node descending from (and including) one event at ``i``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .network import TransitionMatrix, build_transition, neumann_solve


def node_influence(B):
    """``1^T (I - B)^{-1}``: expected cascade size started by one event at each node."""
    if not isinstance(B, TransitionMatrix):
        B = TransitionMatrix(B)
    return neumann_solve(B, np.ones(B.m), transpose=True)


def group_indicators(membership, G):
    return np.eye(G)[np.asarray(membership)].astype(float)


def group_influence_matrix(B, membership, G):
    """``[g, h] = e_{S_h}^T (I - B)^{-1} e_{S_g}``: events in group h caused by one event in every node of g."""
    E = group_indicators(membership, G)
    M = neumann_solve(B, E)
    return (E.T @ M).T


def group_impact_curves(model, net, grid=None, transition=None, membership=None):
    """``GIF[g, h, k] = e_{S_h}^T (I - B)^{-1} e_{S_g} mu_g(grid[k])``.

    Uses ``transition`` and ``membership`` when given (e.g. the refined
    ones); the default grid is every 5 minutes over one period.
    """
    if grid is None:
        grid = np.arange(0.0, model.period, 5.0 / 60.0)
    grid = np.asarray(grid, float)
    g = model.membership if membership is None else np.asarray(membership)
    B = transition if transition is not None else build_transition(net, model.copy(membership=g))
    agg = group_influence_matrix(B, g, model.n_groups)
    mu = model.baseline.evaluate(grid)
    return grid, agg[:, :, None] * mu[:, None, :]


@dataclass
class InfluenceReport:
    influence: np.ndarray
    membership: np.ndarray
    ranking: np.ndarray
    group_matrix: np.ndarray
    grid: np.ndarray
    gif: np.ndarray

    def top(self, k):
        idx = self.ranking[:k]
        return list(zip(idx.tolist(), self.membership[idx].tolist(), self.influence[idx].tolist()))

    def ranking_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "group", "influence"])
            for i in self.ranking:
                w.writerow([int(i), int(self.membership[i]), f"{self.influence[i]:.10g}"])

    def curves_to_csv(self, path):
        G = self.gif.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "source_group", "target_group", "gif"])
            for k, t in enumerate(self.grid):
                for a in range(G):
                    for b in range(G):
                        w.writerow([f"{t:.6f}", a, b, f"{self.gif[a, b, k]:.10g}"])


def read_ranking(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([int(r["node"]) for r in rows]),
            np.array([int(r["group"]) for r in rows]),
            np.array([float(r["influence"]) for r in rows]))


def read_curves(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["t"]) for r in rows]),
            np.array([int(r["source_group"]) for r in rows]),
            np.array([int(r["target_group"]) for r in rows]),
            np.array([float(r["gif"]) for r in rows]))


def influence_report(model, net, transition=None, membership=None, grid=None):
    g = model.membership if membership is None else np.asarray(membership)
    B = transition if transition is not None else build_transition(net, model.copy(membership=g))
    infl = node_influence(B)
    ranking = np.argsort(-infl, kind="stable")
    grid, gif = group_impact_curves(model, net, grid, B, g)
    return InfluenceReport(infl, g, ranking, group_influence_matrix(B, g, model.n_groups), grid, gif)
