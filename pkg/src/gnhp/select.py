"""Choosing the number of groups with a penalized likelihood criterion."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .estimate import FitConfig, fit
from .model import GnhpModel, History, SplineBaseline

log = logging.getLogger(__name__)


def lic_lambda(data, net, variant="median"):
    """Penalty per group.

    ``"median"``: ``(15 T)^-1 median(n_i)^0.6 mean(d_i)^0.25``.
    ``"mean"``: ``(25 T)^-1 mean(n_i)^0.6 mean(d_i)^0.25``.
    """
    if data.n_events == 0:
        raise ValueError("no events")
    T = data.horizon
    dbar = float(np.mean(net.out_degree))
    if variant == "median":
        return float(np.median(data.counts)) ** 0.6 * dbar ** 0.25 / (15.0 * T)
    if variant == "mean":
        return float(np.mean(data.counts)) ** 0.6 * dbar ** 0.25 / (25.0 * T)
    raise ValueError(f"unknown penalty variant {variant!r}")


@dataclass
class LicRow:
    G: int
    loglik: float
    penalty: float
    lic: float
    converged: bool
    fit: object = None
    error: str = None


@dataclass
class LicResult:
    rows: list
    chosen: int
    lam: float
    flags: dict = field(default_factory=dict)

    def table(self):
        return [(r.G, r.loglik, r.penalty, r.lic, r.converged) for r in self.rows]

    def fit_for(self, G):
        for r in self.rows:
            if r.G == G:
                return r.fit
        raise KeyError(G)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["G", "loglik", "penalty", "lic", "converged"])
            for r in sorted(self.rows, key=lambda r: r.G):
                w.writerow([r.G, f"{r.loglik:.10g}", f"{r.penalty:.10g}", f"{r.lic:.10g}", int(r.converged)])


def read_lic_table(path):
    with open(path, newline="") as fh:
        return [
            (int(r["G"]), float(r["loglik"]), float(r["penalty"]), float(r["lic"]), bool(int(r["converged"])))
            for r in csv.DictReader(fh)
        ]


def choose_groups(Gs, logliks, lam):
    """Argmax of ``loglik - lam * G``; ties go to the smaller G."""
    Gs = np.asarray(Gs)
    lic = np.asarray(logliks, float) - lam * Gs
    top = np.max(lic)
    return int(np.min(Gs[lic == top]))


def merge_closest(model):
    """Merge the two groups with the closest (w, theta) into one; used as a warm start."""
    G = model.n_groups
    if G < 2:
        raise ValueError("need at least two groups to merge")
    W = model.weights
    th = model.theta()
    best, pair = np.inf, (0, 1)
    for a in range(G):
        for b in range(a + 1, G):
            dist = np.linalg.norm(W[a] - W[b]) + np.linalg.norm(th[a] - th[b])
            if dist < best:
                best, pair = dist, (a, b)
    a, b = pair
    keep = [h for h in range(G) if h != b]
    sizes = np.bincount(model.membership, minlength=G).astype(float) + 1e-12
    wa, wb = sizes[a] / (sizes[a] + sizes[b]), sizes[b] / (sizes[a] + sizes[b])
    W2 = W.copy()
    W2[a] = wa * W[a] + wb * W[b]
    th2 = th.copy()
    th2[a] = wa * th[a] + wb * th[b]
    phi = model.phi.copy()
    phi[a, :] = wa * phi[a, :] + wb * phi[b, :]
    phi[:, a] = wa * phi[:, a] + wb * phi[:, b]
    relabel = np.empty(G, np.int64)
    relabel[keep] = np.arange(G - 1)
    relabel[b] = relabel[a]
    return GnhpModel(
        baseline=SplineBaseline(model.baseline.basis, W2[keep]),
        beta=th2[keep, 0], eta=th2[keep, 1], gamma=th2[keep, 2],
        phi=phi[np.ix_(keep, keep)],
        membership=relabel[model.membership],
        truncation=model.truncation,
    )


def select_groups(net, data, g_min, g_max, config=None, lam=None, variant="median", warm_start=True):
    """Fit every G in ``[g_min, g_max]`` (largest first) and pick the LIC maximizer."""
    if not 1 <= g_min <= g_max:
        raise ValueError("need 1 <= g_min <= g_max")
    config = config or FitConfig()
    lam = lic_lambda(data, net, variant) if lam is None else float(lam)
    hist = History(data, net, config.truncation)
    rows = []
    warm = None
    for G in range(g_max, g_min - 1, -1):
        try:
            res = fit(net, data, G, config, init=warm, hist=hist)
        except Exception as exc:  # recorded per G, selection goes on
            log.warning("fit with G=%d failed: %s", G, exc)
            rows.append(LicRow(G, np.nan, lam * G, np.nan, False, None, str(exc)))
            warm = None
            continue
        rows.append(LicRow(G, res.loglik, lam * G, res.loglik - lam * G, res.converged, res))
        warm = merge_closest(res.model) if warm_start and G > 1 else None
    ok = [r for r in rows if r.fit is not None]
    if not ok:
        raise RuntimeError("every fit failed")
    chosen = choose_groups([r.G for r in ok], [r.loglik for r in ok], lam)
    flags = {}
    by_g = sorted(ok, key=lambda r: r.G)
    drops = [b.G for a, b in zip(by_g, by_g[1:]) if b.loglik < a.loglik - 1e-3]
    if drops:
        flags["under_optimized"] = drops
    return LicResult(sorted(rows, key=lambda r: r.G), chosen, lam, flags)
