"""Point cloud container shared by every stage of the pipeline."""

from dataclasses import dataclass

import numpy as np


class InvariantError(RuntimeError):
    """An internal consistency check failed (broken partition, NaN field...)."""


@dataclass
class PointCloud:
    """Positions with optional unit normals and per-point bookkeeping.

    ``normals`` is either ``None`` or an (N, 3) array of unit vectors.
    ``confidence`` holds the dipole weights c_i in [0, 1]; it never
    influences the normal length.
    """

    positions: np.ndarray
    normals: np.ndarray | None = None
    confidence: np.ndarray | None = None
    normal_given: np.ndarray | None = None
    flipped_by_diffusion: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        n = len(self.positions)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if self.normals.shape != (n, 3):
                raise ValueError("normals must match positions")
        if self.confidence is None:
            self.confidence = np.ones(n)
        else:
            self.confidence = np.ascontiguousarray(self.confidence, dtype=np.float64)
            if self.confidence.shape != (n,):
                raise ValueError("confidence must have one entry per point")
        if self.normal_given is None:
            self.normal_given = np.full(n, self.normals is not None)
        if self.flipped_by_diffusion is None:
            self.flipped_by_diffusion = np.zeros(n, dtype=bool)

    def __len__(self):
        return len(self.positions)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def copy(self) -> "PointCloud":
        def c(a):
            return None if a is None else a.copy()

        return PointCloud(
            c(self.positions), c(self.normals), c(self.confidence),
            c(self.normal_given), c(self.flipped_by_diffusion), c(self.colors),
        )

    def subset(self, idx) -> "PointCloud":
        def s(a):
            return None if a is None else a[idx].copy()

        return PointCloud(
            s(self.positions), s(self.normals), s(self.confidence),
            s(self.normal_given), s(self.flipped_by_diffusion), s(self.colors),
        )


def unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


@dataclass
class UnitCubeTransform:
    """Uniform scale + translation taking a cloud into [0, 1]^3.

    Forward: ``(x - center) * scale + 0.5``.
    """

    center: np.ndarray
    scale: float

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) * self.scale + 0.5

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return (y - 0.5) / self.scale + self.center
