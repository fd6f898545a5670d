"""Greedy dipole propagation over coherent patches, diffusion and interpolation."""

import time
from dataclasses import dataclass, field

import numpy as np

from .cloud import InvariantError, PointCloud
from .dipole import (
    DEFAULT_EPS,
    FieldAccumulator,
    accumulate_patch,
    field_at,
    leave_patch_out_field,
    rowdot,
)
from .patching import Patch, make_patch, patch_labels


@dataclass
class PropagationConfig:
    diffusion_passes: int = 1
    subsample_threshold: int = 500_000
    subsample_fraction: float = 0.1
    seed: int = 0
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.diffusion_passes < 0:
            raise ValueError("diffusion passes must be >= 0")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample fraction must lie in (0, 1]")


@dataclass
class TraceEntry:
    patch_id: int
    interaction: float
    flipped: bool


@dataclass
class DiffusionEntry:
    point_id: int
    agreement: float  # n . E at the moment of the flip


@dataclass
class PropagationTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    diffusion: list[DiffusionEntry] = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)
    interpolated_flips: int = 0
    low_confidence: int = 0
    accumulator: FieldAccumulator | None = field(default=None, repr=False)

    @property
    def visit_order(self) -> list[int]:
        return [e.patch_id for e in self.entries]

    @property
    def flipped_patches(self) -> list[int]:
        return [e.patch_id for e in self.entries if e.flipped]

    @property
    def clamped_pairs(self) -> int:
        return 0 if self.accumulator is None else self.accumulator.clamped


def select_seed(patches: list[Patch]) -> int:
    """Id of the flattest patch; ties go to the lowest id."""
    if not patches:
        raise ValueError("no patches to seed from")
    best = min(patches, key=lambda p: (p.flatness, p.id))
    return best.id


def propagate(cloud: PointCloud, patches: list[Patch],
              config: PropagationConfig | None = None) -> PropagationTrace:
    """Orient every patch against the field of the patches oriented before it.

    Starting from the flattest patch, repeatedly pick the remaining patch
    with the largest |V| (ties: lowest id), flip it when V < 0, and add its
    dipoles to the field. Normals of ``cloud`` are modified in place. The
    returned trace carries the accumulator, whose ``E`` is the
    leave-own-patch-out field once the loop finishes.
    """
    config = config or PropagationConfig()
    t0 = time.perf_counter()
    n_patches = len(patches)
    if [p.id for p in patches] != list(range(n_patches)):
        raise ValueError("patch ids must be 0..P-1 in list order")
    labels = patch_labels(patches, len(cloud))
    acc = FieldAccumulator(labels, n_patches, config.eps)
    trace = PropagationTrace(accumulator=acc)

    seed = select_seed(patches)
    trace.entries.append(TraceEntry(seed, 0.0, False))
    accumulate_patch(acc, patches[seed], cloud)
    patches[seed].oriented = True
    remaining = np.ones(n_patches, dtype=bool)
    remaining[seed] = False

    for _ in range(n_patches - 1):
        if np.isnan(acc.V).any():
            raise InvariantError("NaN in patch interactions")
        score = np.where(remaining, np.abs(acc.V), -1.0)
        i = int(np.argmax(score))
        v = float(acc.V[i])
        flipped = v < 0
        if flipped:
            cloud.normals[patches[i].indices] *= -1.0
        trace.entries.append(TraceEntry(i, v, flipped))
        remaining[i] = False
        accumulate_patch(acc, patches[i], cloud)
        patches[i].oriented = True

    if not np.isfinite(acc.E).all():
        raise InvariantError("non-finite accumulated field")
    trace.wall_times["propagation"] = time.perf_counter() - t0
    return trace


def diffuse(cloud: PointCloud, acc: FieldAccumulator, passes: int = 1,
            trace: PropagationTrace | None = None) -> int:
    """Flip individual points whose normal opposes the field of the other patches.

    The first pass reuses ``acc.E``; later passes recompute it from scratch.
    Flips within a pass are decided against a frozen field. Stops early once
    a pass flips nothing. Returns the total number of flips.
    """
    t0 = time.perf_counter()
    total = 0
    for p in range(passes):
        if p > 0:
            acc.E, clamped = leave_patch_out_field(cloud, acc.labels, acc.eps)
            acc.clamped += clamped
        dots = rowdot(cloud.normals, acc.E)
        flip = np.flatnonzero(dots < 0)
        if len(flip) == 0:
            break
        cloud.normals[flip] *= -1.0
        cloud.flipped_by_diffusion[flip] ^= True
        if trace is not None:
            trace.diffusion.extend(DiffusionEntry(int(k), float(dots[k])) for k in flip)
        total += len(flip)
    if trace is not None:
        trace.wall_times["diffusion"] = trace.wall_times.get("diffusion", 0.0) + (
            time.perf_counter() - t0)
    return total


@dataclass
class Interpolation:
    normals: np.ndarray          # oriented normals of the new points
    flipped: np.ndarray          # bool mask over new points
    low_confidence: int          # new points with n . E exactly zero
    given_normals: np.ndarray    # given normals after optional re-correction
    given_flipped: np.ndarray    # bool mask over given points
    clamped_pairs: int = 0


def interpolate_orientation(given: PointCloud, new_positions, new_normals,
                            recorrect: bool = False, eps: float = DEFAULT_EPS) -> Interpolation:
    """Orient new points by the field of points whose normals are given.

    Sources are the points of ``given`` flagged ``normal_given``, weighted by
    ``given.confidence``. A new normal is flipped iff n . E < 0. With
    ``recorrect``, one diffusion pass over the given points follows, using
    the field of every other point (given and newly oriented).
    """
    src = np.flatnonzero(given.normal_given)
    if len(src) == 0:
        raise ValueError("interpolation needs at least one given normal")
    new_positions = np.asarray(new_positions, dtype=np.float64).reshape(-1, 3)
    normals = np.array(new_normals, dtype=np.float64).reshape(-1, 3)
    E, clamped = field_at(given.positions[src], given.normals[src],
                          given.confidence[src], new_positions, eps)
    dots = rowdot(normals, E)
    flipped = dots < 0
    normals[flipped] *= -1.0

    given_normals = given.normals.copy()
    given_flipped = np.zeros(len(given), dtype=bool)
    if recorrect:
        pos = np.vstack([given.positions[src], new_positions])
        nrm = np.vstack([given.normals[src], normals])
        w = np.concatenate([given.confidence[src], np.ones(len(normals))])
        labels = np.arange(len(pos))
        E2, c2 = field_at(pos, nrm, w, pos[:len(src)], eps,
                          src_labels=labels, tgt_labels=labels[:len(src)])
        clamped += c2
        bad = rowdot(given.normals[src], E2) < 0
        given_flipped[src[bad]] = True
        given_normals[src[bad]] *= -1.0
    return Interpolation(normals, flipped, int(np.sum(dots == 0)),
                         given_normals, given_flipped, clamped)


def subsample_patches(patches: list[Patch], fraction: float, rng) -> np.ndarray:
    """Uniform random subset of each patch (at least one point), sorted."""
    keep = []
    for p in patches:
        m = max(1, int(round(fraction * len(p))))
        keep.append(rng.choice(p.indices, size=m, replace=False))
    return np.sort(np.concatenate(keep))


def orient_large(cloud: PointCloud, patches: list[Patch],
                 config: PropagationConfig | None = None) -> PropagationTrace:
    """Propagate + diffuse, on a per-patch random subsample for large clouds.

    At or below ``config.subsample_threshold`` points this is exactly
    :func:`propagate` followed by :func:`diffuse`. Above it, the subsample is
    oriented in full and every other point is oriented by interpolation
    against the subsample's field. Normals are modified in place.
    """
    config = config or PropagationConfig()
    if len(cloud) <= config.subsample_threshold:
        trace = propagate(cloud, patches, config)
        diffuse(cloud, trace.accumulator, config.diffusion_passes, trace)
        return trace

    rng = np.random.default_rng(config.seed)
    keep = subsample_patches(patches, config.subsample_fraction, rng)
    local = np.full(len(cloud), -1, dtype=np.int64)
    local[keep] = np.arange(len(keep))
    sub = cloud.subset(keep)
    sub_patches = []
    for p in patches:
        members = local[p.indices]
        sp = make_patch(p.id, np.sort(members[members >= 0]), sub.positions)
        sp.planar = p.planar
        sub_patches.append(sp)

    trace = propagate(sub, sub_patches, config)
    diffuse(sub, trace.accumulator, config.diffusion_passes, trace)
    cloud.normals[keep] = sub.normals
    cloud.flipped_by_diffusion[keep] = sub.flipped_by_diffusion
    # diffusion entries refer to subsample rows; map back to cloud ids
    for d in trace.diffusion:
        d.point_id = int(keep[d.point_id])

    t0 = time.perf_counter()
    rest = np.setdiff1d(np.arange(len(cloud)), keep, assume_unique=True)
    E, clamped = field_at(sub.positions, sub.normals, sub.confidence,
                          cloud.positions[rest], config.eps)
    trace.accumulator.clamped += clamped
    dots = rowdot(cloud.normals[rest], E)
    flip = rest[dots < 0]
    cloud.normals[flip] *= -1.0
    trace.interpolated_flips = len(flip)
    trace.low_confidence = int(np.sum(dots == 0))
    trace.wall_times["interpolation"] = time.perf_counter() - t0
    for p in patches:
        p.oriented = True
    return trace
