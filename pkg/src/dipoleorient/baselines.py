"""Hoppe-style orientation propagation along a minimum spanning tree."""

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .geometry import SpatialIndex

# csgraph treats stored zeros as missing edges, so every weight is shifted
_EDGE_OFFSET = 1e-9


@dataclass
class RiemannianGraph:
    """Symmetrized k-NN edges ``(i < j)`` with weights ``1 - |n_i . n_j|``."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    bridges: int = 0

    def matrix(self):
        return coo_matrix((self.weights + _EDGE_OFFSET, (self.rows, self.cols)),
                          shape=(self.n, self.n)).tocsr()


def _edge_weights(normals, i, j):
    return np.clip(1.0 - np.abs(np.einsum("ij,ij->i", normals[i], normals[j])), 0.0, 1.0)


def _nearest_pair(positions, a, b):
    """Closest pair (p in a, q in b) between two disjoint index sets."""
    d, near = cKDTree(positions[b]).query(positions[a])
    best = int(np.argmin(d))
    return int(a[best]), int(b[near[best]])


def riemannian_graph(cloud: PointCloud, k: int = 16) -> RiemannianGraph:
    """k-NN graph, bridged until connected.

    Disconnected components are joined one at a time: the component holding
    point 0 is linked to the rest through their closest point pair.
    """
    n = len(cloud)
    nbrs = SpatialIndex(cloud.positions).knn_all(k)
    i = np.repeat(np.arange(n), nbrs.shape[1])
    j = nbrs.reshape(-1)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    pairs = np.unique(np.column_stack([lo, hi]), axis=0)
    rows, cols = pairs[:, 0], pairs[:, 1]

    bridges = 0
    if n > 1:
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, comp = connected_components(adj, directed=False)
        if ncomp > 1:
            extra = []
            grown = comp == comp[0]
            while not grown.all():
                a, b = np.flatnonzero(grown), np.flatnonzero(~grown)
                p, q = _nearest_pair(cloud.positions, a, b)
                extra.append((min(p, q), max(p, q)))
                grown |= comp == comp[q]
            bridges = len(extra)
            extra = np.array(extra, dtype=np.int64)
            rows = np.concatenate([rows, extra[:, 0]])
            cols = np.concatenate([cols, extra[:, 1]])
    return RiemannianGraph(n, rows, cols, _edge_weights(cloud.normals, rows, cols), bridges)


@njit(cache=True)
def _propagate_tree(order, parent, normals):
    for t in range(1, order.shape[0]):
        j = order[t]
        p = parent[j]
        d = normals[p, 0] * normals[j, 0] + normals[p, 1] * normals[j, 1] + normals[p, 2] * normals[j, 2]
        if d < 0.0:
            normals[j, 0] = -normals[j, 0]
            normals[j, 1] = -normals[j, 1]
            normals[j, 2] = -normals[j, 2]


def hoppe_orient(cloud: PointCloud, k: int = 16) -> PointCloud:
    """Orient normals by propagation along the MST of the Riemannian graph.

    The root is the point with the largest z (ties: lowest index), forced to
    face +z. The tree is walked breadth first with children in index order,
    and each child is flipped when it disagrees with its parent.
    """
    if cloud.normals is None:
        raise ValueError("hoppe_orient needs unsigned normals")
    out = cloud.copy()
    n = len(out)
    if n == 0:
        return out
    root = int(np.argmax(out.positions[:, 2]))
    if out.normals[root, 2] < 0:
        out.normals[root] *= -1.0
    if n == 1:
        return out
    graph = riemannian_graph(out, k)
    tree = minimum_spanning_tree(graph.matrix())
    tree = (tree + tree.T).tocsr()
    tree.sort_indices()
    order, parent = breadth_first_order(tree, root, directed=False, return_predecessors=True)
    _propagate_tree(order.astype(np.int64), parent.astype(np.int64), out.normals)
    return out
