"""Voxel patches, planarity tests and per-patch coherent orientation."""

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .cloud import InvariantError, PointCloud, UnitCubeTransform
from .geometry import EigenDecomp, SpatialIndex, covariance, symmetric_eigen3

VOXEL_WIDTH = 1.0 / 25.0
MIN_PATCH_SIZE = 100
PLANARITY_THRESHOLD = 0.00015

_OFFSETS = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]


@dataclass
class Patch:
    id: int
    indices: np.ndarray
    centroid: np.ndarray
    eigen: EigenDecomp
    planar: bool = False
    oriented: bool = False

    def __len__(self):
        return len(self.indices)

    @property
    def flatness(self) -> float:
        return self.eigen.flatness


def make_patch(pid: int, indices, positions) -> Patch:
    indices = np.asarray(indices, dtype=np.int64)
    pts = positions[indices]
    eig = symmetric_eigen3(covariance(pts))
    return Patch(pid, indices, pts.mean(axis=0), eig)


def normalize_unit_cube(cloud: PointCloud):
    """Scale uniformly so the longest bounding-box side spans [0, 1].

    The shorter sides are centred on 0.5. Normals are untouched.
    """
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    extent = (hi - lo).max()
    if not extent > 0:
        raise ValueError("cannot normalize a cloud whose points all coincide")
    tf = UnitCubeTransform(center=(lo + hi) / 2.0, scale=1.0 / extent)
    out = cloud.copy()
    out.positions = tf.forward(cloud.positions)
    return out, tf


def voxel_keys(positions, width):
    nvox = int(np.ceil(1.0 / width - 1e-9))
    keys = np.floor(positions / width).astype(np.int64)
    return np.clip(keys, 0, nvox - 1)


def voxel_partition(cloud: PointCloud, width: float = VOXEL_WIDTH,
                    min_size: int = MIN_PATCH_SIZE) -> list[Patch]:
    """Group points by voxel, then merge undersized voxel groups.

    An undersized group is merged into the 26-adjacent group whose centroid
    is nearest to its own; smallest groups are merged first (ties: lowest
    id) until no undersized group has a nonempty neighbor. Clouds with fewer
    than ``min_size`` points give one patch.
    """
    if not 0 < width <= 1:
        raise ValueError("voxel width must lie in (0, 1]")
    pos = cloud.positions
    n = len(pos)
    if n < min_size:
        return [make_patch(0, np.arange(n), pos)]

    keys = voxel_keys(pos, width)
    uniq, cell = np.unique(keys, axis=0, return_inverse=True)
    cell = cell.reshape(-1)
    ncell = len(uniq)
    sizes = np.bincount(cell, minlength=ncell).astype(np.int64)
    sums = np.zeros((ncell, 3))
    np.add.at(sums, cell, pos)

    lookup = {tuple(k): i for i, k in enumerate(uniq.tolist())}
    neighbors = []
    for k in uniq.tolist():
        nb = set()
        for o in _OFFSETS:
            j = lookup.get((k[0] + o[0], k[1] + o[1], k[2] + o[2]))
            if j is not None:
                nb.add(j)
        neighbors.append(nb)

    owner = np.arange(ncell)  # cell -> surviving group id
    alive = np.ones(ncell, dtype=bool)
    heap = [(int(sizes[g]), g) for g in range(ncell) if sizes[g] < min_size]
    heapq.heapify(heap)
    while heap:
        size, g = heapq.heappop(heap)
        if not alive[g] or sizes[g] != size or size >= min_size or not neighbors[g]:
            continue
        c = sums[g] / sizes[g]
        cand = sorted(neighbors[g])
        dist = [np.sum((sums[h] / sizes[h] - c) ** 2) for h in cand]
        target = cand[int(np.argmin(dist))]
        # merge g into target
        sizes[target] += sizes[g]
        sums[target] += sums[g]
        alive[g] = False
        owner[owner == g] = target
        for h in neighbors[g]:
            neighbors[h].discard(g)
            if h != target:
                neighbors[h].add(target)
                neighbors[target].add(h)
        neighbors[g] = set()
        if sizes[target] < min_size:
            heapq.heappush(heap, (int(sizes[target]), target))

    survivors = np.flatnonzero(alive)  # ascending = lexicographic voxel order
    remap = np.full(ncell, -1)
    remap[survivors] = np.arange(len(survivors))
    labels = remap[owner[cell]]
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(len(survivors) + 1))
    patches = [make_patch(p, order[bounds[p]:bounds[p + 1]], pos)
               for p in range(len(survivors))]
    check_partition(patches, n)
    return patches


def check_partition(patches, n):
    labels = np.full(n, -1, dtype=np.int64)
    for p in patches:
        if np.any(labels[p.indices] >= 0):
            raise InvariantError(f"patch {p.id} overlaps another patch")
        labels[p.indices] = p.id
    if np.any(labels < 0):
        raise InvariantError("patches do not cover every point")
    return labels


def patch_labels(patches, n) -> np.ndarray:
    labels = np.empty(n, dtype=np.int64)
    for p in patches:
        labels[p.indices] = p.id
    return labels


def classify_planar(patch: Patch, threshold: float = PLANARITY_THRESHOLD) -> bool:
    """Smallest covariance eigenvalue (largest scaled to 1) below threshold.

    Fewer than three points, or collinear points, count as planar.
    """
    vals = patch.eigen.values
    if len(patch) < 3 or vals[0] <= 0 or vals[1] <= 1e-12 * vals[0]:
        planar = True
    else:
        planar = patch.flatness < threshold
    patch.planar = planar
    return planar


def coherent_orient_patch(patch: Patch, cloud: PointCloud, reference=None) -> np.ndarray:
    """Flip normals in place so they face away from a reference point.

    The reference defaults to the patch centroid; planar patches use the
    centroid pushed one patch diameter along -e3 so every normal lands on
    the +e3 side. A dot product of exactly zero keeps the current sign.
    Returns the flipped point indices.
    """
    idx = patch.indices
    pts = cloud.positions[idx]
    if reference is None:
        reference = patch.centroid
        if patch.planar:
            diameter = 2.0 * np.sqrt(((pts - patch.centroid) ** 2).sum(axis=1).max())
            reference = patch.centroid - diameter * patch.eigen.vectors[:, 2]
    d = np.einsum("ij,ij->i", cloud.normals[idx], pts - np.asarray(reference))
    flip = idx[d < 0]
    cloud.normals[flip] *= -1.0
    return flip


@dataclass
class ConfidenceProvider:
    """Per-point dipole weights.

    ``uniform`` gives 1 everywhere. ``consistency`` gives the clamped mean
    agreement ``max(0, mean_j n_i . n_j)`` over the k nearest neighbors.
    ``file`` returns externally supplied values.
    """

    strategy: str = "uniform"
    k: int = 16
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.strategy not in ("uniform", "consistency", "file"):
            raise ValueError(f"unknown confidence strategy {self.strategy!r}")
        if self.strategy == "file" and self.values is None:
            raise ValueError("file strategy needs values")


def confidence(provider: ConfidenceProvider, cloud: PointCloud,
               index: SpatialIndex | None = None) -> np.ndarray:
    n = len(cloud)
    if provider.strategy == "uniform":
        return np.ones(n)
    if provider.strategy == "file":
        vals = np.asarray(provider.values, dtype=np.float64)
        if vals.shape != (n,):
            raise ValueError(f"confidence values: expected {n}, got {vals.shape}")
        return np.clip(vals, 0.0, 1.0)
    if index is None:
        index = SpatialIndex(cloud.positions)
    nbrs = index.knn_all(provider.k)
    if nbrs.shape[1] == 0:
        return np.ones(n)
    agree = np.einsum("ij,ikj->ik", cloud.normals, cloud.normals[nbrs]).mean(axis=1)
    return np.clip(agree, 0.0, 1.0)
