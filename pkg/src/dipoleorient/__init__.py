"""Global normal orientation of point clouds by dipole field propagation."""

from .cloud import InvariantError, PointCloud
from .io import parse_cloud, write_cloud
from .pipeline import OrientParams, OrientResult, orient

__version__ = "0.1.0"

__all__ = ["InvariantError", "PointCloud", "parse_cloud", "write_cloud",
           "OrientParams", "OrientResult", "orient", "__version__"]
