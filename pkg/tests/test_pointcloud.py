import numpy as np
import pytest

from cog3d.errors import EmptyCloud, ImageTooSmall, TooFewPoints
from cog3d.geometry import CameraIntrinsics, CameraPose, project_point
from cog3d.pointcloud import compute_gradients, depth_to_cloud, estimate_normals

K = CameraIntrinsics(fx=120.0, fy=120.0, cx=40.0, cy=30.0)
IDENTITY = CameraPose(rotation=np.eye(3), translation=np.zeros(3))


# ------------------------------------------------------------ backprojection


def test_flat_wall_depth():
    depth = np.full((60, 80), 2.0)
    cloud = depth_to_cloud(depth, K, IDENTITY)
    assert len(cloud.points) == 60 * 80
    assert np.allclose(cloud.points[:, 2], 2.0)


def test_projection_round_trip():
    rng = np.random.default_rng(0)
    depth = np.zeros((60, 80))
    rows = rng.integers(0, 60, 100)
    cols = rng.integers(0, 80, 100)
    depth[rows, cols] = rng.uniform(0.5, 5.0, 100)
    r, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(r) < 0:
        r[:, 0] = -r[:, 0]
    pose = CameraPose(rotation=r, translation=rng.normal(size=3))
    cloud = depth_to_cloud(depth, K, pose)
    for p, (row, col) in zip(cloud.points, cloud.pixels):
        u, v = project_point(p, K, pose)
        assert u == pytest.approx(col, abs=1e-6)
        assert v == pytest.approx(row, abs=1e-6)


def test_point_count_equals_valid_pixels():
    rng = np.random.default_rng(1)
    depth = rng.uniform(-1.0, 3.0, (40, 50))
    n_valid = int(np.sum(depth > 0))
    cloud = depth_to_cloud(depth, K, IDENTITY)
    assert len(cloud.points) == n_valid


def test_empty_depth_raises():
    with pytest.raises(EmptyCloud):
        depth_to_cloud(np.zeros((10, 10)), K, IDENTITY)


# ------------------------------------------------------------------ gradients


def test_constant_image_zero_gradients():
    img = np.full((20, 30, 3), 128, dtype=np.uint8)
    g = compute_gradients(img)
    assert np.all(g.magnitude == 0.0)


def test_vertical_step_edge():
    img = np.zeros((10, 12, 3), dtype=np.uint8)
    img[:, 6:, 0] = 100
    g = compute_gradients(img)
    # three-tap [-1, 0, 1] response straddling the edge
    assert g.magnitude[5, 5] == pytest.approx(100.0)
    assert g.magnitude[5, 6] == pytest.approx(100.0)
    assert g.orientation[5, 5] == pytest.approx(0.0)


def test_border_magnitudes_zero():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (15, 17, 3), dtype=np.uint8)
    g = compute_gradients(img)
    assert np.all(g.magnitude[0, :] == 0)
    assert np.all(g.magnitude[-1, :] == 0)
    assert np.all(g.magnitude[:, 0] == 0)
    assert np.all(g.magnitude[:, -1] == 0)


def gradient_oracle(img):
    """Direct three-tap [-1, 0, 1] convolution, channel of max magnitude."""
    f = img.astype(np.float64)
    h, w, _ = f.shape
    dx = np.zeros((h, w, 3))
    dy = np.zeros((h, w, 3))
    dx[:, 1:-1, :] = f[:, 2:, :] - f[:, :-2, :]
    dy[1:-1, :, :] = f[2:, :, :] - f[:-2, :, :]
    mag2 = dx ** 2 + dy ** 2
    best = np.argmax(mag2, axis=2)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    bx, by = dx[ii, jj, best], dy[ii, jj, best]
    mag = np.sqrt(bx ** 2 + by ** 2)
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    ori = np.mod(np.arctan2(-by, bx), np.pi)
    return ori, mag


def test_gradients_match_convolution_oracle_bit_exact():
    rng = np.random.default_rng(3)
    for _ in range(20):
        img = rng.integers(0, 256, (12, 14, 3), dtype=np.uint8)
        g = compute_gradients(img)
        ori, mag = gradient_oracle(img)
        assert np.array_equal(g.magnitude, mag)
        interior = mag > 0
        assert np.array_equal(g.orientation[interior], ori[interior])


def test_orientation_range():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (20, 20, 3), dtype=np.uint8)
    g = compute_gradients(img)
    assert np.all((g.orientation >= 0) & (g.orientation < np.pi))
    assert np.all(g.magnitude >= 0)


def test_image_too_small_raises():
    with pytest.raises(ImageTooSmall):
        compute_gradients(np.zeros((2, 5, 3), dtype=np.uint8))


# -------------------------------------------------------------------- normals


def plane_cloud(n=400, seed=5):
    rng = np.random.default_rng(seed)
    pts = np.column_stack(
        [rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), np.full(n, 1.0)]
    )
    return pts


def make_cloud(points, camera=np.array([0.0, 0.0, -2.0])):
    from cog3d.pointcloud import ScenePointCloud

    return ScenePointCloud(
        points=points,
        pixels=np.zeros((len(points), 2), dtype=np.int64),
        camera_center=camera,
    )


def test_planar_cloud_normals():
    cloud = estimate_normals(make_cloud(plane_cloud()))
    assert np.allclose(np.abs(cloud.normals[:, 2]), 1.0, atol=1e-3)


def test_normals_unit_length_and_camera_facing():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-1, 1, (300, 3))
    camera = np.array([0.0, 0.0, -3.0])
    cloud = estimate_normals(make_cloud(pts, camera))
    norms = np.linalg.norm(cloud.normals, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)
    rays = pts - camera
    dots = np.sum(cloud.normals * rays, axis=1)
    assert np.all(dots <= 1e-9)


def test_sphere_normals_match_analytic():
    rng = np.random.default_rng(7)
    v = rng.normal(size=(2000, 3))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True)
    camera = np.array([0.0, 0.0, 0.0])  # camera at sphere center
    cloud = estimate_normals(make_cloud(pts, camera))
    cos = np.abs(np.sum(cloud.normals * pts, axis=1))
    angles = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    assert np.quantile(angles, 0.95) < 5.0


def test_too_few_points_raises():
    with pytest.raises(TooFewPoints):
        estimate_normals(make_cloud(plane_cloud(n=10)), k=15)


def test_degenerate_collinear_neighborhood_no_failure():
    pts = np.column_stack(
        [np.linspace(0, 1, 40), np.zeros(40), np.zeros(40)]
    )
    cloud = estimate_normals(make_cloud(pts), k=5)
    assert np.allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-6)
