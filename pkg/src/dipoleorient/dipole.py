"""Dipole potential, field and patch interaction energy.

Every oriented point acts as a dipole with polarization along its unit
normal, weighted by its confidence c:

    u(r) = c (n . r) / (4 pi |r|^3)
    E(r) = grad u = -c (3 (n . r^) r^ - n) / (4 pi |r|^3)

with ``r = at - source``. E is the plain gradient (no physics minus sign),
so a normal agrees with the field when it points towards rising potential.
Distances are clamped below by ``eps``; clamped pairs are counted.

The pairwise sums run in numba kernels parallel over measurement points.
Each measurement point is summed by one thread in source order, so results
are bit-reproducible regardless of the thread count.
"""

import math
from dataclasses import dataclass

import numpy as np
import numba
from numba import njit, prange

from .cloud import PointCloud

# the system TBB is too old for numba; skip probing it
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

DEFAULT_EPS = 1e-6
FOUR_PI = 4.0 * math.pi


# reassociation lets LLVM vectorize the source loop; each target is still
# reduced by a single fixed code path, so outputs stay deterministic and
# exactly odd under global negation of the normals
_FASTMATH = {"reassoc", "contract", "nsz"}


@njit(parallel=True, fastmath=_FASTMATH, cache=True)
def _field_kernel(sx, sy, sz, snx, sny, snz, sq, src_label, tgt_pos, tgt_label, eps2, out):
    m = tgt_pos.shape[0]
    s = sx.shape[0]
    clamped = np.zeros(m, dtype=np.int64)
    for i in prange(m):
        xi = tgt_pos[i, 0]
        yi = tgt_pos[i, 1]
        zi = tgt_pos[i, 2]
        li = tgt_label[i]
        ex = 0.0
        ey = 0.0
        ez = 0.0
        cnt = 0
        for j in range(s):
            keep = li < 0 or src_label[j] != li
            rx = xi - sx[j]
            ry = yi - sy[j]
            rz = zi - sz[j]
            d2 = rx * rx + ry * ry + rz * rz
            cnt += keep and d2 < eps2
            d2 = max(d2, eps2)
            inv2 = 1.0 / d2
            k = (sq[j] if keep else 0.0) * inv2 * math.sqrt(inv2)
            t = 3.0 * (snx[j] * rx + sny[j] * ry + snz[j] * rz) * inv2
            ex -= k * (t * rx - snx[j])
            ey -= k * (t * ry - sny[j])
            ez -= k * (t * rz - snz[j])
        out[i, 0] = ex
        out[i, 1] = ey
        out[i, 2] = ez
        clamped[i] = cnt
    return clamped.sum()


@njit(parallel=True, fastmath=_FASTMATH, cache=True)
def _potential_kernel(sx, sy, sz, snx, sny, snz, sq, tgt_pos, eps2, out):
    m = tgt_pos.shape[0]
    s = sx.shape[0]
    clamped = np.zeros(m, dtype=np.int64)
    for i in prange(m):
        xi = tgt_pos[i, 0]
        yi = tgt_pos[i, 1]
        zi = tgt_pos[i, 2]
        acc = 0.0
        cnt = 0
        for j in range(s):
            rx = xi - sx[j]
            ry = yi - sy[j]
            rz = zi - sz[j]
            d2 = rx * rx + ry * ry + rz * rz
            cnt += d2 < eps2
            d2 = max(d2, eps2)
            inv2 = 1.0 / d2
            acc += sq[j] * (snx[j] * rx + sny[j] * ry + snz[j] * rz) * inv2 * math.sqrt(inv2)
        out[i] = acc
        clamped[i] = cnt
    return clamped.sum()


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _sources(pos, normals, weights):
    """Structure-of-arrays source layout; weights pre-divided by 4 pi."""
    pos = _f64(pos).reshape(-1, 3)
    normals = _f64(normals).reshape(-1, 3)
    q = _f64(weights).reshape(-1) / FOUR_PI
    return (_f64(pos[:, 0]), _f64(pos[:, 1]), _f64(pos[:, 2]),
            _f64(normals[:, 0]), _f64(normals[:, 1]), _f64(normals[:, 2]), q)


def field_at(src_pos, src_normals, src_weights, targets, eps=DEFAULT_EPS,
             src_labels=None, tgt_labels=None):
    """Summed dipole field at ``targets``.

    When labels are given, a source never contributes to a target carrying
    the same non-negative label (leave-own-patch-out sums).
    Returns ``(E, clamped_pairs)``.
    """
    src_pos = _f64(src_pos).reshape(-1, 3)
    targets = _f64(targets).reshape(-1, 3)
    if src_labels is None:
        src_labels = np.full(len(src_pos), -1, dtype=np.int64)
    if tgt_labels is None:
        tgt_labels = np.full(len(targets), -1, dtype=np.int64)
    out = np.empty((len(targets), 3))
    clamped = _field_kernel(
        *_sources(src_pos, src_normals, src_weights),
        np.ascontiguousarray(src_labels, dtype=np.int64), targets,
        np.ascontiguousarray(tgt_labels, dtype=np.int64), float(eps) ** 2, out)
    return out, int(clamped)


def potential_at(src_pos, src_normals, src_weights, targets, eps=DEFAULT_EPS):
    """Summed dipole potential at ``targets``. Returns ``(u, clamped_pairs)``."""
    targets = _f64(targets).reshape(-1, 3)
    out = np.empty(len(targets))
    clamped = _potential_kernel(
        *_sources(src_pos, src_normals, src_weights), targets, float(eps) ** 2, out)
    return out, int(clamped)


@dataclass
class DipoleSource:
    position: np.ndarray
    normal: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("dipole polarization must be a unit vector")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("dipole weight must lie in [0, 1]")


def dipole_potential(source: DipoleSource, at, eps=DEFAULT_EPS) -> float:
    u, _ = potential_at(source.position, source.normal, [source.weight], at, eps)
    return float(u[0])


def dipole_field(source: DipoleSource, at, eps=DEFAULT_EPS) -> np.ndarray:
    e, _ = field_at(source.position, source.normal, [source.weight], at, eps)
    return e[0]


def rowdot(a, b):
    return np.einsum("ij,ij->i", a, b)


class FieldAccumulator:
    """Running field of all oriented patches plus cached patch interactions.

    ``E[k]`` holds the summed field of every accumulated patch other than
    the one containing point ``k``; ``V[j]`` caches the interaction energy of
    patch ``j`` with the current field and is kept in sync incrementally.
    """

    def __init__(self, labels, n_patches: int, eps: float = DEFAULT_EPS):
        self.labels = np.ascontiguousarray(labels, dtype=np.int64)
        self.n_patches = n_patches
        self.eps = eps
        self.E = np.zeros((len(self.labels), 3))
        self.V = np.zeros(n_patches)
        self.oriented = np.zeros(n_patches, dtype=bool)
        self.clamped = 0

    def __len__(self):
        return len(self.labels)


def accumulate_patch(acc: FieldAccumulator, patch, cloud: PointCloud):
    """Add the field of ``patch`` to every point outside it and update V."""
    src = patch.indices
    tgt = np.flatnonzero(acc.labels != patch.id)
    if len(tgt):
        dE, clamped = field_at(
            cloud.positions[src], cloud.normals[src], cloud.confidence[src],
            cloud.positions[tgt], acc.eps)
        acc.E[tgt] += dE
        acc.clamped += clamped
        w = cloud.confidence[tgt] * rowdot(cloud.normals[tgt], dE)
        acc.V += np.bincount(acc.labels[tgt], weights=w, minlength=acc.n_patches)
    acc.oriented[patch.id] = True


def patch_interaction(patch, acc: FieldAccumulator, cloud: PointCloud) -> float:
    """Confidence-weighted sum of n . E over the patch's points."""
    idx = patch.indices
    return float(np.sum(cloud.confidence[idx] * rowdot(cloud.normals[idx], acc.E[idx])))


def leave_patch_out_field(cloud: PointCloud, labels, eps=DEFAULT_EPS):
    """Field at every point from all points outside its own patch."""
    return field_at(cloud.positions, cloud.normals, cloud.confidence,
                    cloud.positions, eps, src_labels=labels, tgt_labels=labels)
