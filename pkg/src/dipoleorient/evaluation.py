"""Synthetic shapes with exact normals, the orientation metric and probes."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import PointCloud
from .dipole import DEFAULT_EPS, potential_at

SHAPES = ("sphere", "torus", "slab", "cube", "two-spheres-nested")

TORUS_R = 1.0
TORUS_TUBE = 0.3
SLAB_GAP = 0.02


@dataclass
class SyntheticShape:
    kind: str = "sphere"
    n: int = 1000
    noise: float = 0.0  # sigma as a fraction of the bounding-box diagonal
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPES:
            raise ValueError(f"unknown shape {self.kind!r}; choose from {SHAPES}")
        if self.n < 100:
            raise ValueError("synthetic shapes need at least 100 samples")


def _sphere(rng, n, radius=1.0):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v, v.copy()


def _torus(rng, n):
    # rejection on the area element (R + r cos v) gives uniform area density
    pts = []
    have = 0
    while have < n:
        m = 2 * (n - have) + 16
        u = rng.uniform(0, 2 * np.pi, m)
        v = rng.uniform(0, 2 * np.pi, m)
        accept = rng.uniform(0, 1, m) < (TORUS_R + TORUS_TUBE * np.cos(v)) / (TORUS_R + TORUS_TUBE)
        pts.append(np.column_stack([u[accept], v[accept]]))
        have += int(accept.sum())
    uv = np.vstack(pts)[:n]
    u, v = uv[:, 0], uv[:, 1]
    normals = np.column_stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)])
    ring = TORUS_R + TORUS_TUBE * np.cos(v)
    positions = np.column_stack([ring * np.cos(u), ring * np.sin(u), TORUS_TUBE * np.sin(v)])
    return positions, normals


def torus_normal(positions):
    """Analytic outward normal of the (R=1, r=0.3) torus at surface points."""
    ring = positions[:, :2] / np.linalg.norm(positions[:, :2], axis=1, keepdims=True)
    core = np.column_stack([TORUS_R * ring, np.zeros(len(positions))])
    d = positions - core
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _slab(rng, n):
    top = n // 2
    xy = rng.uniform(-0.5, 0.5, size=(n, 2))
    z = np.where(np.arange(n) < top, SLAB_GAP / 2, -SLAB_GAP / 2)
    normals = np.zeros((n, 3))
    normals[:, 2] = np.sign(z)
    return np.column_stack([xy, z]), normals


def _cube(rng, n):
    face = rng.integers(0, 6, size=n)
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    positions = rng.uniform(-0.5, 0.5, size=(n, 3))
    positions[np.arange(n), axis] = 0.5 * sign
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return positions, normals


def _nested(rng, n):
    # split by area: 1^2 : 0.5^2 = 4 : 1
    outer = int(round(0.8 * n))
    p1, n1 = _sphere(rng, outer, 1.0)
    p2, n2 = _sphere(rng, n - outer, 0.5)
    return np.vstack([p1, p2]), np.vstack([n1, n2])


def generate(shape: SyntheticShape) -> PointCloud:
    """Uniform area sample of the shape with exact outward normals.

    Noise, if any, displaces points along their true normal by a Gaussian of
    sigma ``noise * bbox_diagonal``.
    """
    rng = np.random.default_rng(shape.seed)
    make = {"sphere": _sphere, "torus": _torus, "slab": _slab,
            "cube": _cube, "two-spheres-nested": _nested}[shape.kind]
    positions, normals = make(rng, shape.n)
    if shape.noise > 0:
        diag = np.linalg.norm(positions.max(axis=0) - positions.min(axis=0))
        positions = positions + normals * rng.normal(0, shape.noise * diag, size=(shape.n, 1))
    return PointCloud(positions, normals)


def scramble_signs(cloud: PointCloud, seed: int = 0) -> PointCloud:
    """Copy of ``cloud`` with every normal negated with probability 1/2."""
    rng = np.random.default_rng(seed)
    out = cloud.copy()
    out.normals *= np.where(rng.random(len(cloud)) < 0.5, -1.0, 1.0)[:, None]
    return out


def correctness_mask(estimated: np.ndarray, truth: np.ndarray):
    """Per-point correctness after choosing the better global sign."""
    dots = np.einsum("ij,ij->i", estimated, truth)
    if np.sum(dots < 0) > np.sum(dots > 0):
        return dots < 0
    return dots > 0


@dataclass
class Accuracy:
    percent: float
    sign: int
    correct: int
    total: int


def accuracy(estimated: PointCloud, truth: PointCloud) -> Accuracy:
    """Percentage of normals with positive dot product against ground truth.

    Orientation is only defined up to a global sign, so the sign s in {+1,-1}
    that maximises the count is applied first (ties keep +1).
    """
    if len(estimated) != len(truth):
        raise ValueError(f"size mismatch: {len(estimated)} vs {len(truth)}")
    dots = np.einsum("ij,ij->i", estimated.normals, truth.normals)
    pos, neg = int(np.sum(dots > 0)), int(np.sum(dots < 0))
    sign, correct = (1, pos) if pos >= neg else (-1, neg)
    return Accuracy(100.0 * correct / len(truth), sign, correct, len(truth))


def probe_potential(cloud: PointCloud, queries, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Summed dipole potential of the oriented cloud at each query point."""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(queries) == 0:
        return np.empty(0)
    u, _ = potential_at(cloud.positions, cloud.normals, cloud.confidence, queries, eps)
    return u


def interior_probes(kind: str, n: int, seed: int = 0) -> np.ndarray:
    """Points well inside the solid bounded by a synthetic closed shape."""
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * 0.8 * np.cbrt(rng.uniform(0, 1, (n, 1)))
    if kind == "torus":
        u = rng.uniform(0, 2 * np.pi, n)
        v = rng.uniform(0, 2 * np.pi, n)
        rho = 0.6 * TORUS_TUBE * np.sqrt(rng.uniform(0, 1, n))
        ring = TORUS_R + rho * np.cos(v)
        return np.column_stack([ring * np.cos(u), ring * np.sin(u), rho * np.sin(v)])
    if kind == "cube":
        return rng.uniform(-0.4, 0.4, size=(n, 3))
    if kind == "two-spheres-nested":
        # shell between the two spheres
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * rng.uniform(0.6, 0.9, (n, 1))
    raise ValueError(f"{kind!r} is not a closed shape")


@dataclass
class EvalReport:
    """Everything recorded about one run; serialized by ``io.write_report``."""

    parameters: dict = field(default_factory=dict)
    accuracy: float | None = None
    global_sign: int | None = None
    point_count: int = 0
    patch_count: int = 0
    planar_patch_count: int = 0
    flips_in_coherence: int = 0
    flips_in_propagation: int = 0
    flips_in_diffusion: int = 0
    clamped_pairs: int = 0
    degenerate_normals: int = 0
    low_confidence_points: int = 0
    visit_order: list = field(default_factory=list)
    interactions: list = field(default_factory=list)
    flipped_patches: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def score(self, estimated: PointCloud, truth: PointCloud) -> Accuracy:
        acc = accuracy(estimated, truth)
        self.accuracy = acc.percent
        self.global_sign = acc.sign
        return acc
