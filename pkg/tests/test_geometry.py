import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import plane_grid
from dipoleorient.cloud import PointCloud
from dipoleorient.evaluation import SyntheticShape, generate
from dipoleorient.geometry import (
    SpatialIndex,
    build_index,
    covariance,
    estimate_normals_pca,
    symmetric_eigen3,
)


def brute_knn(pos, k):
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    kk = min(k, len(pos) - 1)
    return np.sort(d, axis=1)[:, :kk]


# --------------------------------------------------------------------------
# Spatial index
# --------------------------------------------------------------------------

class TestSpatialIndex:
    def test_single_point(self):
        idx = build_index([[0.0, 0.0, 0.0]])
        assert idx.knn(0, 5).size == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_index(np.empty((0, 3)))

    def test_cube_corners(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
        idx = build_index(corners)
        nb = idx.knn(0, 3)
        assert sorted(nb.tolist()) == [1, 2, 4]

    def test_excludes_self_and_sorted(self, rng):
        pos = rng.uniform(0, 1, (500, 3))
        nb = SpatialIndex(pos).knn_all(8)
        assert not np.any(nb == np.arange(500)[:, None])
        d = np.linalg.norm(pos[nb] - pos[:, None, :], axis=2)
        assert np.all(np.diff(d, axis=1) >= 0)

    @pytest.mark.parametrize("k", [1, 4, 16])
    def test_matches_brute_force(self, rng, k):
        pos = rng.uniform(0, 1, (2000, 3))
        nb = SpatialIndex(pos).knn_all(k)
        got = np.linalg.norm(pos[nb] - pos[:, None, :], axis=2)
        np.testing.assert_allclose(got, brute_knn(pos, k), rtol=0, atol=1e-15)

    def test_matches_brute_force_10k(self, rng):
        pos = rng.uniform(0, 1, (10_000, 3))
        nb = SpatialIndex(pos).knn_all(4)
        sample = rng.choice(10_000, 300, replace=False)
        for i in sample:
            d = np.linalg.norm(pos - pos[i], axis=1)
            d[i] = np.inf
            np.testing.assert_allclose(np.linalg.norm(pos[nb[i]] - pos[i], axis=1),
                                       np.sort(d)[:4], rtol=0, atol=1e-15)

    def test_fewer_points_than_k(self, rng):
        pos = rng.uniform(0, 1, (5, 3))
        assert SpatialIndex(pos).knn_all(16).shape == (5, 4)

    def test_duplicates_never_return_self(self):
        pos = np.zeros((6, 3))
        nb = SpatialIndex(pos).knn_all(3)
        assert nb.shape == (6, 3)
        assert not np.any(nb == np.arange(6)[:, None])


# --------------------------------------------------------------------------
# Eigen-decomposition
# --------------------------------------------------------------------------

class TestEigen:
    def test_identity(self):
        np.testing.assert_allclose(symmetric_eigen3(np.eye(3)).values, [1, 1, 1])

    def test_diagonal(self):
        e = symmetric_eigen3(np.diag([1.0, 4.0, 0.0]))
        np.testing.assert_allclose(e.values, [4, 1, 0], atol=1e-15)
        np.testing.assert_allclose(np.abs(e.vectors), np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]]),
                                   atol=1e-15)

    def test_rejects_nonsymmetric(self):
        m = np.eye(3)
        m[0, 1] = 1e-6
        with pytest.raises(ValueError):
            symmetric_eigen3(m)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=6, max_size=6))
    def test_residual_and_orthonormality(self, v):
        m = np.array([[v[0], v[1], v[2]], [v[1], v[3], v[4]], [v[2], v[4], v[5]]])
        e = symmetric_eigen3(m)
        scale = max(1.0, np.abs(m).max())
        assert np.all(np.diff(e.values) <= 0)
        for i in range(3):
            r = m @ e.vectors[:, i] - e.values[i] * e.vectors[:, i]
            assert np.linalg.norm(r) < 1e-9 * scale
        np.testing.assert_allclose(e.vectors.T @ e.vectors, np.eye(3), atol=1e-12)
        recon = e.vectors @ np.diag(e.values) @ e.vectors.T
        assert np.abs(recon - m).max() <= 1e-9 * scale

    def test_covariance_is_psd(self, rng):
        e = symmetric_eigen3(covariance(rng.normal(size=(50, 3))))
        assert e.values[2] >= 0


# --------------------------------------------------------------------------
# PCA normals
# --------------------------------------------------------------------------

class TestNormals:
    def test_exact_plane(self):
        cloud = plane_grid()
        out, degenerate = estimate_normals_pca(cloud, SpatialIndex(cloud.positions), k=8)
        assert degenerate == 0
        assert np.all(np.abs(out.normals[:, 2]) > 1 - 1e-9)
        assert not out.normal_given.any()

    def test_sphere_normals_radial(self):
        cloud = generate(SyntheticShape("sphere", 5000, 0.0, seed=3))
        bare = PointCloud(cloud.positions)
        out, _ = estimate_normals_pca(bare, SpatialIndex(bare.positions), k=16)
        cosang = np.abs(np.einsum("ij,ij->i", out.normals, cloud.normals))
        assert np.mean(cosang > np.cos(np.radians(5))) >= 0.99

    def test_degenerate_neighborhoods(self, rng):
        pos = np.vstack([np.zeros((4, 3)), rng.uniform(1, 2, (30, 3))])
        out, degenerate = estimate_normals_pca(PointCloud(pos), SpatialIndex(pos), k=3)
        assert degenerate == 4
        np.testing.assert_array_equal(out.normals[:4], np.tile([0, 0, 1.0], (4, 1)))
        assert np.isfinite(out.normals).all()

    def test_unit_length(self, rng):
        pos = rng.normal(size=(300, 3))
        out, _ = estimate_normals_pca(PointCloud(pos), SpatialIndex(pos), k=10)
        np.testing.assert_allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-14)

    def test_needs_more_points_than_k(self, rng):
        pos = rng.normal(size=(10, 3))
        with pytest.raises(ValueError):
            estimate_normals_pca(PointCloud(pos), SpatialIndex(pos), k=16)

    def test_only_keeps_given(self, rng):
        pos = rng.normal(size=(100, 3))
        given = np.tile([1.0, 0, 0], (100, 1))
        cloud = PointCloud(pos, given)
        only = np.zeros(100, bool)
        only[50:] = True
        out, _ = estimate_normals_pca(cloud, SpatialIndex(pos), k=8, only=only)
        np.testing.assert_array_equal(out.normals[:50], given[:50])
        assert out.normal_given[:50].all() and not out.normal_given[50:].any()

    def test_rotation_equivariant_up_to_sign(self):
        cloud = plane_grid()
        rot = Rotation.from_euler("xyz", [0.3, -1.1, 0.7]).as_matrix()
        rotated = PointCloud(cloud.positions @ rot.T)
        a, _ = estimate_normals_pca(cloud, SpatialIndex(cloud.positions), k=8)
        b, _ = estimate_normals_pca(rotated, SpatialIndex(rotated.positions), k=8)
        want = a.normals @ rot.T
        dots = np.abs(np.einsum("ij,ij->i", want, b.normals))
        assert np.all(dots > 1 - 1e-6)
