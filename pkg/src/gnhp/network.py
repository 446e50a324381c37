"""Directed follower networks, random generators and the transition matrix.

``a_ij = 1`` means node ``i`` follows node ``j``: events at ``j`` excite ``i``.
The out-neighbours of ``i`` are the nodes it follows.
"""

import csv

import numpy as np
import scipy.sparse as sp


class InstabilityError(ValueError):
    """Raised when the branching process is not subcritical."""


class Network:
    """Immutable directed network in compressed adjacency form.

    Parameters
    ----------
    m : int
        Number of nodes.
    src, dst : array-like of int
        Edge list; each edge means ``src`` follows ``dst``.
    """

    def __init__(self, m, src=(), dst=()):
        m = int(m)
        if m < 1:
            raise ValueError("network needs at least one node")
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src and dst must have equal length")
        if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= m or dst.max() >= m):
            raise ValueError("edge endpoint out of range")
        if np.any(src == dst):
            raise ValueError("self loops are not allowed")
        adj = sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(m, m))
        adj.sum_duplicates()
        adj.data[:] = 1.0
        adj.sort_indices()
        self.m = m
        self.adjacency = adj
        self.out_ptr = adj.indptr.astype(np.int64)
        self.out_idx = adj.indices.astype(np.int64)
        self.out_degree = np.diff(self.out_ptr)
        adj_t = adj.T.tocsr()
        adj_t.sort_indices()
        self.in_ptr = adj_t.indptr.astype(np.int64)
        self.in_idx = adj_t.indices.astype(np.int64)
        self.in_degree = np.diff(self.in_ptr)
        # position in the out-ordered edge arrays of each in-ordered entry
        out_src = np.repeat(np.arange(m), self.out_degree)
        self.in_edge = np.lexsort((out_src, self.out_idx)).astype(np.int64)

    @property
    def n_edges(self):
        return int(self.out_idx.size)

    def out_neighbors(self, i):
        return self.out_idx[self.out_ptr[i]:self.out_ptr[i + 1]]

    def in_neighbors(self, j):
        return self.in_idx[self.in_ptr[j]:self.in_ptr[j + 1]]

    def edges(self):
        """Edge list ``(src, dst)`` sorted by source then destination."""
        src = np.repeat(np.arange(self.m), self.out_degree)
        return src, self.out_idx.copy()

    def __eq__(self, other):
        return (
            isinstance(other, Network)
            and self.m == other.m
            and np.array_equal(self.out_ptr, other.out_ptr)
            and np.array_equal(self.out_idx, other.out_idx)
        )

    def __repr__(self):
        return f"Network(m={self.m}, edges={self.n_edges})"

    # ------------------------------------------------------------------
    def to_csv(self, path):
        src, dst = self.edges()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst"])
            w.writerows(zip(src.tolist(), dst.tolist()))

    @classmethod
    def from_csv(cls, path, m=None):
        """Read a ``src,dst`` edge list; ``m`` defaults to the largest id + 1."""
        src, dst = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"src", "dst"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected header 'src,dst'")
            for row in reader:
                src.append(int(row["src"]))
                dst.append(int(row["dst"]))
        if m is None:
            m = max(max(src, default=-1), max(dst, default=-1)) + 1
        return cls(m, src, dst)


# ----------------------------------------------------------------------
# generators


def sbm_default_probabilities(m):
    """Within- and between-block edge probabilities used in the SBM design."""
    return 0.3 * m ** -0.3, 0.3 * m ** -0.8


def generate_sbm(m, blocks=3, p_within=None, p_between=None, rng=None):
    """Directed stochastic block model with uniform block labels.

    Returns the network and the block label of every node.
    """
    rng = np.random.default_rng(rng)
    if m < 2:
        raise ValueError("m must be >= 2")
    dw, db = sbm_default_probabilities(m)
    p_within = dw if p_within is None else p_within
    p_between = db if p_between is None else p_between
    for p in (p_within, p_between):
        if not 0 <= p <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
    labels = rng.integers(0, blocks, size=m)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_within, p_between)
    draw = rng.random((m, m)) < prob
    np.fill_diagonal(draw, False)
    src, dst = np.nonzero(draw)
    return Network(m, src, dst), labels


def power_law_pmf(m, exponent=2.0):
    f = np.arange(1, m, dtype=float)
    p = f ** -exponent
    return f.astype(np.int64), p / p.sum()


def generate_power_law(m, exponent=2.0, rng=None):
    """Network whose follower counts follow ``P(f) ~ f^-exponent`` on 1..m-1.

    Each node draws its follower count, then that many distinct followers
    uniformly from the other nodes.
    """
    rng = np.random.default_rng(rng)
    if m < 2:
        raise ValueError("m must be >= 2")
    if not exponent > 1:
        raise ValueError("exponent must be > 1")
    support, pmf = power_law_pmf(m, exponent)
    counts = rng.choice(support, size=m, p=pmf)
    src, dst = [], []
    for i in range(m):
        others = rng.choice(m - 1, size=counts[i], replace=False)
        followers = others + (others >= i)
        src.append(followers)
        dst.append(np.full(counts[i], i))
    return Network(m, np.concatenate(src), np.concatenate(dst))


# ----------------------------------------------------------------------
# transition matrix


class TransitionMatrix:
    """Expected direct offspring counts ``B[i, j]`` of a parent at ``j`` landing on ``i``."""

    def __init__(self, matrix):
        B = sp.csr_matrix(matrix, dtype=float)
        if B.shape[0] != B.shape[1]:
            raise ValueError("transition matrix must be square")
        if B.nnz and B.data.min() < 0:
            raise ValueError("transition matrix must be nonnegative")
        self.matrix = B
        self.row_sums = np.asarray(B.sum(axis=1)).ravel()
        self.norm_inf = float(self.row_sums.max(initial=0.0))
        self._spectral_radius = None

    @property
    def m(self):
        return self.matrix.shape[0]

    def toarray(self):
        return self.matrix.toarray()

    def unstable_rows(self):
        """Rows whose sum is at least one."""
        return np.nonzero(self.row_sums >= 1.0)[0]

    @property
    def spectral_radius(self):
        if self._spectral_radius is None:
            self._spectral_radius = _spectral_radius(self.matrix)
        return self._spectral_radius

    def is_stable(self):
        """Subcritical branching: spectral radius below one.

        ``norm_inf < 1`` is the sufficient condition; when it fails the
        spectral radius is checked directly.
        """
        return self.norm_inf < 1.0 or self.spectral_radius < 1.0

    def check_stable(self):
        if not self.is_stable():
            raise InstabilityError(
                f"transition matrix is not subcritical (||B||_inf={self.norm_inf:.4g}, "
                f"spectral radius={self.spectral_radius:.4g})"
            )


def _spectral_radius(B):
    m = B.shape[0]
    if m <= 400:
        return float(np.max(np.abs(np.linalg.eigvals(B.toarray())), initial=0.0))
    from scipy.sparse.linalg import eigs

    try:
        vals = eigs(B, k=1, which="LM", return_eigenvectors=False, maxiter=5000)
        return float(np.abs(vals).max())
    except Exception:  # ARPACK failure, fall back to dense
        return float(np.max(np.abs(np.linalg.eigvals(B.toarray()))))


def transition_from_arrays(net, beta_node, phi_edge):
    """Assemble B from a per-node diagonal and per-edge network effects.

    ``phi_edge`` is aligned with ``net.out_idx`` (already the raw phi value,
    divided by the out-degree here).
    """
    src = np.repeat(np.arange(net.m), net.out_degree)
    deg = net.out_degree[src].astype(float)
    rows = np.concatenate([np.arange(net.m), src])
    cols = np.concatenate([np.arange(net.m), net.out_idx])
    vals = np.concatenate([np.asarray(beta_node, float), np.asarray(phi_edge, float) / deg])
    return TransitionMatrix(sp.csr_matrix((vals, (rows, cols)), shape=(net.m, net.m)))


def build_transition(net, model):
    """Transition matrix ``b_ij = phi[g_i, g_j] a_ij / d_i + beta[g_i] 1{i=j}``."""
    g = np.asarray(model.membership)
    if g.shape != (net.m,):
        raise ValueError("membership length must equal the number of nodes")
    if g.min(initial=0) < 0 or g.max(initial=0) >= model.n_groups:
        raise ValueError("membership index out of range")
    src = np.repeat(np.arange(net.m), net.out_degree)
    phi_edge = model.phi[g[src], g[net.out_idx]]
    return transition_from_arrays(net, model.beta[g], phi_edge)


def neumann_solve(B, v, tol=1e-12, max_iter=100000, transpose=False):
    """``(I - B)^{-1} v`` (or with ``B^T``) by the Neumann series.

    Iterates ``x += B^k v`` until the increment's 1-norm drops below ``tol``.
    ``v`` may be a vector or a matrix of right-hand sides (one per column).
    """
    if isinstance(B, TransitionMatrix):
        B.check_stable()
        M = B.matrix
    else:
        M = sp.csr_matrix(B)
    if transpose:
        M = M.T.tocsr()
    term = np.array(v, dtype=float)
    x = term.copy()
    for _ in range(max_iter):
        term = M @ term
        x += term
        if np.abs(term).sum(axis=0).max(initial=0.0) < tol:
            return x
    raise InstabilityError("Neumann series did not converge")


def solve_influence(B, target, source):
    """Expected number of offspring in ``target`` of one parent at ``source``.

    ``target`` is an integer index array, or a boolean/float indicator
    vector with one entry per node.
    """
    m = B.m if isinstance(B, TransitionMatrix) else B.shape[0]
    e = np.zeros(m)
    e[source] = 1.0
    col = neumann_solve(B, e)
    target = np.asarray(target)
    if target.dtype == bool or np.issubdtype(target.dtype, np.floating):
        if target.shape != (m,):
            raise ValueError("indicator must have one entry per node")
        mask = target != 0
    else:
        mask = np.zeros(m, dtype=bool)
        mask[target] = True
    return float(col[mask].sum())
