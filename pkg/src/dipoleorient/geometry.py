"""Spatial index, eigen-decomposition and PCA normal estimation."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud


class SpatialIndex:
    """Balanced kd-tree over a fixed set of positions.

    ``knn`` excludes the query point itself, so a query for ``k`` neighbors
    returns ``min(k, N - 1)`` indices sorted by nondecreasing distance.
    """

    def __init__(self, positions):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        if positions.ndim != 2 or len(positions) == 0:
            raise ValueError("cannot index an empty point set")
        if not np.isfinite(positions).all():
            raise ValueError("positions must be finite")
        self.positions = positions
        self.tree = cKDTree(positions, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return len(self.positions)

    def knn(self, i: int, k: int) -> np.ndarray:
        return self.knn_all(k, np.array([i]))[0]

    def knn_all(self, k: int, which=None):
        """Neighbors of the indexed points ``which`` (default: all).

        Returns an (M, min(k, N-1)) integer array.
        """
        n = len(self.positions)
        which = np.arange(n) if which is None else np.asarray(which)
        kk = min(k, n - 1)
        if kk <= 0:
            return np.empty((len(which), 0), dtype=np.int64)
        # ask for one extra so the query point can be dropped
        _, idx = self.tree.query(self.positions[which], k=kk + 1)
        idx = np.asarray(idx).reshape(len(which), kk + 1)
        keep = idx != which[:, None]
        # duplicates may push the query point itself out of the result
        missing = keep.all(axis=1)
        keep[missing, -1] = False
        out = idx[keep].reshape(len(which), kk).astype(np.int64)
        return out

    def query(self, points, k: int):
        """k nearest indexed points to arbitrary query positions."""
        dist, idx = self.tree.query(np.atleast_2d(points), k=k)
        return dist, idx


def build_index(positions) -> SpatialIndex:
    return SpatialIndex(positions)


@dataclass
class EigenDecomp:
    values: np.ndarray   # descending
    vectors: np.ndarray  # column i pairs with values[i]

    @property
    def flatness(self) -> float:
        """Smallest eigenvalue after scaling the largest to 1."""
        if self.values[0] <= 0:
            return 0.0
        return max(self.values[2], 0.0) / self.values[0]


def symmetric_eigen3(m, tol: float = 1e-12) -> EigenDecomp:
    """Eigenpairs of a symmetric 3x3 matrix, eigenvalues in descending order."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("expected a 3x3 matrix")
    scale = max(1.0, np.abs(m).max())
    if np.abs(m - m.T).max() > tol * scale:
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return EigenDecomp(w[::-1].copy(), v[:, ::-1].copy())


def batched_eigen3(mats: np.ndarray):
    """Descending eigenvalues and matching eigenvectors for a stack of (M, 3, 3)."""
    w, v = np.linalg.eigh(mats)
    return w[:, ::-1], v[:, :, ::-1]


def covariance(points: np.ndarray) -> np.ndarray:
    c = points - points.mean(axis=0)
    return c.T @ c / len(points)


def estimate_normals_pca(cloud: PointCloud, index: SpatialIndex, k: int = 16,
                         only=None):
    """Unsigned normals from the covariance of each point's k-NN neighborhood.

    Returns ``(cloud, degenerate_count)``. The new cloud carries estimated
    normals (normal_given False) for the points in ``only`` (default: all)
    and keeps existing normals elsewhere. Neighborhoods where all k+1 points
    coincide get +z.
    """
    n = len(cloud)
    if k < 3 or n <= k:
        raise ValueError(f"need N > k >= 3 (N={n}, k={k})")
    which = np.arange(n) if only is None else np.flatnonzero(only)
    out = cloud.copy()
    if out.normals is None:
        out.normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        out.normal_given[:] = False
    if len(which) == 0:
        return out, 0

    degenerate = 0
    chunk = 200_000
    for lo in range(0, len(which), chunk):
        w = which[lo:lo + chunk]
        nbrs = index.knn_all(k, w)
        hood = np.concatenate([cloud.positions[w][:, None, :], cloud.positions[nbrs]], axis=1)
        centered = hood - hood.mean(axis=1, keepdims=True)
        cov = np.einsum("mki,mkj->mij", centered, centered) / hood.shape[1]
        vals, vecs = batched_eigen3(cov)
        normals = vecs[:, :, 2].copy()
        flat = (hood == hood[:, :1]).all(axis=(1, 2))
        normals[flat] = (0.0, 0.0, 1.0)
        degenerate += int(flat.sum())
        out.normals[w] = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        out.normal_given[w] = False
    return out, degenerate
