"""
Communication graphs over blocks, random edge selection, and the graph
Laplacian machinery used to measure distances in convergence bounds.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import TopologyError

TOPOLOGIES = ("ring", "clique", "star-ring", "tree-ring")


class CommGraph:
    """
    Undirected connected graph on ``b`` blocks with an edge distribution.

    Parameters
    ----------
    b : int
        Number of nodes (blocks).
    edges : array_like, shape (E, 2)
        Unordered pairs; stored with ``i < j``.
    probabilities : array_like, optional
        Selection probabilities ``p_ij``, uniform when omitted. Must sum to one.
    """

    def __init__(self, b, edges, probabilities=None, name=""):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size == 0:
            raise TopologyError("graph has no edges")
        if np.any(edges < 0) or np.any(edges >= b):
            raise TopologyError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise TopologyError("self-loops are not allowed")
        edges = np.sort(edges, axis=1)
        if len(np.unique(edges, axis=0)) != len(edges):
            raise TopologyError("duplicate edges")
        if probabilities is None:
            probabilities = np.full(len(edges), 1.0 / len(edges))
        p = np.asarray(probabilities, dtype=np.float64)
        if p.shape != (len(edges),) or np.any(p <= 0):
            raise TopologyError("need one positive probability per edge")
        if abs(p.sum() - 1.0) > 1e-12:
            raise TopologyError(f"edge probabilities sum to {p.sum():.15g}, not 1")
        self.b = int(b)
        self.edges = edges
        self.probabilities = p
        self.name = name
        for arr in (self.edges, self.probabilities):
            arr.setflags(write=False)
        if not self.is_connected():
            raise TopologyError(f"graph '{name}' on {b} nodes is not connected")

    def __len__(self):
        return len(self.edges)

    def __repr__(self):
        return f"CommGraph({self.name or 'custom'}, b={self.b}, |E|={len(self)})"

    def is_connected(self):
        adj = coo_matrix((np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])),
                         shape=(self.b, self.b))
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1

    def node_probabilities(self):
        """``p_i = sum over edges touching i of p_ij``."""
        out = np.zeros(self.b)
        np.add.at(out, self.edges[:, 0], self.probabilities)
        np.add.at(out, self.edges[:, 1], self.probabilities)
        return out

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.b)


def _ring(b):
    return [(i, (i + 1) % b) for i in range(b)]


def _star(b, center=0):
    return [(center, i) for i in range(b) if i != center]


def _binary_tree(b):
    return [((i - 1) // 2, i) for i in range(1, b)]


def build_topology(kind, b, weighting="uniform"):
    """
    Build one of the named communication graphs.

    Parameters
    ----------
    kind : {'ring', 'clique', 'star-ring', 'tree-ring'}
        ``star-ring`` is the union of a star centred at node 0 with a ring;
        ``tree-ring`` the union of a complete binary tree (heap order) with a
        ring. Edges shared by both parts are kept once.
    b : int
        Number of nodes, at least 3.
    weighting : {'uniform'}
        Edge distribution; uniform over distinct edges.

    Returns
    -------
    CommGraph
    """
    kind = kind.lower().replace("_", "-").replace("+", "-")
    if b < 3:
        raise TopologyError(f"topologies need b >= 3, got {b}")
    if weighting != "uniform":
        raise TopologyError(f"unsupported weighting '{weighting}'")
    if kind == "clique":
        iu = np.triu_indices(b, k=1)
        edges = np.column_stack(iu)
    elif kind == "ring":
        edges = _ring(b)
    elif kind == "star-ring":
        edges = _star(b) + _ring(b)
    elif kind == "tree-ring":
        edges = _binary_tree(b) + _ring(b)
    else:
        raise TopologyError(f"unknown topology '{kind}', expected one of {TOPOLOGIES}")
    edges = np.unique(np.sort(np.asarray(edges, dtype=np.int64), axis=1), axis=0)
    return CommGraph(b, edges, name=kind)


class EdgeSampler:
    """
    I.i.d. edge draws by inversion of the cumulative edge distribution.

    Iterating yields ``(i, j)`` tuples. Uniform variates are drawn in batches
    from ``numpy.random.default_rng(seed)``, so two samplers with the same
    seed produce the same edge sequence.
    """

    def __init__(self, graph, seed=None, batch=4096):
        self.graph = graph
        self.rng = np.random.default_rng(seed)
        cdf = np.cumsum(graph.probabilities)
        cdf[-1] = 1.0
        self._cdf = cdf
        self._batch = batch
        self._buf = []

    def draw(self, size):
        """Edge indices for ``size`` draws."""
        u = self.rng.random(size)
        return np.searchsorted(self._cdf, u, side="right")

    def __iter__(self):
        return self

    def __next__(self):
        if not self._buf:
            idx = self.draw(self._batch)
            # reversed so that pop() returns draws in order
            self._buf = [tuple(e) for e in self.graph.edges[idx[::-1]].tolist()]
        return self._buf.pop()


def edge_sampler(graph, seed=None):
    return EdgeSampler(graph, seed)


#%% LAPLACIAN AND NORMS

@dataclass(frozen=True)
class KMatrix:
    """
    Graph Laplacian ``laplacian`` (off-diagonal ``-p_ij / 2L``), the diagonal
    ``diagonal`` with entries ``p_i / L``, and the Kronecker lift dimensions
    ``n_y``, ``n_z`` that turn them into the block norm matrix.
    """

    laplacian: np.ndarray
    diagonal: np.ndarray
    n_y: int
    n_z: int
    pinv_laplacian: np.ndarray = field(repr=False)

    @property
    def b(self):
        return self.laplacian.shape[0]

    def dense(self):
        """The full ``(L kron I_ny) (+) (D kron I_nz)`` block diagonal matrix."""
        ky = np.kron(self.laplacian, np.eye(self.n_y))
        kz = np.kron(self.diagonal, np.eye(self.n_z))
        out = np.zeros((ky.shape[0] + kz.shape[0],) * 2)
        out[:ky.shape[0], :ky.shape[0]] = ky
        out[ky.shape[0]:, ky.shape[0]:] = kz
        return out


def symmetric_pinv(M, rtol=1e-12):
    """Pseudo-inverse of a symmetric matrix via ``eigh`` with a relative cutoff."""
    w, V = np.linalg.eigh(M)
    cutoff = rtol * max(np.max(np.abs(w), initial=0.0), np.finfo(float).tiny)
    keep = np.abs(w) > cutoff
    return (V[:, keep] / w[keep]) @ V[:, keep].T


def build_k_matrix(graph, L, n_y=1, n_z=0):
    if L <= 0:
        raise ValueError("Lipschitz constant must be positive")
    if not graph.is_connected():
        raise TopologyError("Laplacian norm needs a connected graph")
    b = graph.b
    lap = np.zeros((b, b))
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.probabilities / (2.0 * L)
    np.add.at(lap, (i, j), -w)
    np.add.at(lap, (j, i), -w)
    lap[np.diag_indices(b)] = -lap.sum(axis=1)
    diag = np.diag(graph.node_probabilities() / L)
    return KMatrix(lap, diag, int(n_y), int(n_z), symmetric_pinv(lap))


def _split_yz(x, K):
    x = np.asarray(x, dtype=np.float64)
    ny = K.b * K.n_y
    if x.shape != (ny + K.b * K.n_z,):
        raise ValueError(f"expected a stacked (y, z) vector of length {ny + K.b * K.n_z}")
    return x[:ny].reshape(K.b, K.n_y), x[ny:].reshape(K.b, K.n_z)


def k_norm(x, K):
    """``sqrt(x^T K x)`` for a stacked ``(y, z)`` vector."""
    Y, Z = _split_yz(x, K)
    val = np.sum(Y * (K.laplacian @ Y)) + np.sum(Z * (K.diagonal @ Z))
    return float(np.sqrt(max(val, 0.0)))


def k_dual_norm(x, K):
    """
    Dual norm ``sqrt(y^T (L^+ kron I) y + z^T (D^-1 kron I) z)``.

    ``x`` is the stacked vector ``(y_1, ..., y_b, z_1, ..., z_b)``. The pseudo
    inverse discards the component of ``y`` along the Laplacian null space.
    """
    Y, Z = _split_yz(x, K)
    d = np.diag(K.diagonal)
    val = np.sum(Y * (K.pinv_laplacian @ Y))
    if Z.size:
        val += np.sum(Z * Z / d[:, None])
    return float(np.sqrt(max(val, 0.0)))


def r0_proxy(x0, x_star, K):
    """
    ``||x0 - x*||*`` in the graph dual norm.

    This is a computable lower bound on the level-set distance appearing in
    the O(1/k) bounds, and is labelled as a proxy wherever it is reported.
    Both points are stacked ``(y, z)`` vectors (see :mod:`lccd.reduction`
    for mapping general problems into that layout).
    """
    return k_dual_norm(np.asarray(x0, float) - np.asarray(x_star, float), K)

