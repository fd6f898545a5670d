"""End-to-end orientation: normalize, estimate, patch, propagate, diffuse."""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import PointCloud
from .evaluation import EvalReport
from .geometry import SpatialIndex, estimate_normals_pca
from .patching import (
    MIN_PATCH_SIZE,
    PLANARITY_THRESHOLD,
    VOXEL_WIDTH,
    ConfidenceProvider,
    classify_planar,
    coherent_orient_patch,
    confidence,
    normalize_unit_cube,
    voxel_partition,
)
from .propagation import PropagationConfig, orient_large


@dataclass
class OrientParams:
    voxel_width: float = VOXEL_WIDTH
    min_patch: int = MIN_PATCH_SIZE
    planar_thresh: float = PLANARITY_THRESHOLD
    knn: int = 16
    diffusion_passes: int = 1
    subsample_above: int = 500_000
    subsample_fraction: float = 0.1
    seed: int = 0
    confidence: ConfidenceProvider = field(default_factory=ConfidenceProvider)
    flip_to: tuple | None = None  # (point index, direction 3-vector)

    def propagation_config(self) -> PropagationConfig:
        return PropagationConfig(self.diffusion_passes, self.subsample_above,
                                 self.subsample_fraction, self.seed)

    def describe(self) -> dict:
        d = asdict(self)
        d["confidence"] = self.confidence.strategy
        if self.flip_to is not None:
            d["flip_to"] = [int(self.flip_to[0]), [float(x) for x in self.flip_to[1]]]
        return d


@dataclass
class OrientResult:
    cloud: PointCloud
    report: EvalReport
    trace: object
    patches: list


def apply_flip_to(cloud: PointCloud, index: int, direction) -> bool:
    """Negate all normals if point ``index`` disagrees with ``direction``."""
    if np.dot(cloud.normals[index], direction) < 0:
        cloud.normals *= -1.0
        return True
    return False


def orient(cloud: PointCloud, params: OrientParams | None = None) -> OrientResult:
    """Globally orient ``cloud``; returns a new cloud in the input frame.

    Points flagged ``normal_given`` keep their normal direction as the
    unsigned estimate; every other point gets a PCA normal.
    """
    params = params or OrientParams()
    times = {}
    t = time.perf_counter()
    work, tf = normalize_unit_cube(cloud)
    index = SpatialIndex(work.positions)
    need = ~work.normal_given if work.normals is not None else np.ones(len(work), bool)
    degenerate = 0
    if need.any():
        if len(work) > params.knn:
            work, degenerate = estimate_normals_pca(work, index, params.knn, only=need)
        else:
            # too few points for k-NN normals: use the global PCA plane
            from .geometry import covariance, symmetric_eigen3
            nrm = symmetric_eigen3(covariance(work.positions)).vectors[:, 2]
            if work.normals is None:
                work.normals = np.tile(nrm, (len(work), 1))
            work.normals[need] = nrm
            work.normal_given[need] = False
    times["normals"] = time.perf_counter() - t

    t = time.perf_counter()
    patches = voxel_partition(work, params.voxel_width, params.min_patch)
    coherence_flips = 0
    for p in patches:
        classify_planar(p, params.planar_thresh)
        coherence_flips += len(coherent_orient_patch(p, work))
    work.confidence = confidence(params.confidence, work, index)
    times["patching"] = time.perf_counter() - t

    trace = orient_large(work, patches, params.propagation_config())
    times.update(trace.wall_times)
    if params.flip_to is not None:
        apply_flip_to(work, params.flip_to[0], params.flip_to[1])

    out = work.copy()
    out.positions = cloud.positions.copy()  # exact, not a round trip
    report = EvalReport(
        parameters=params.describe(),
        point_count=len(cloud),
        patch_count=len(patches),
        planar_patch_count=sum(p.planar for p in patches),
        flips_in_coherence=coherence_flips,
        flips_in_propagation=len(trace.flipped_patches),
        flips_in_diffusion=len(trace.diffusion),
        clamped_pairs=trace.clamped_pairs,
        degenerate_normals=degenerate,
        low_confidence_points=trace.low_confidence,
        visit_order=trace.visit_order,
        interactions=[e.interaction for e in trace.entries],
        flipped_patches=trace.flipped_patches,
        wall_times=times,
    )
    return OrientResult(out, report, trace, patches)
