import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safe_landing import geometry as g
from safe_landing.classes import DEFAULT_CLASSES
from safe_landing.geometry import (
    DEFAULT_CAMERA,
    CameraModel,
    DegeneratePose,
    GroundPoint,
    RigidPose,
    SingularConfiguration,
    nadir_pose,
)
from safe_landing.semantic_map import SemanticGroundMap


def random_pose(rng, max_tilt_deg=25.0):
    tilt = math.radians(max_tilt_deg)
    return nadir_pose(
        rng.uniform(-100, 100),
        rng.uniform(-100, 100),
        rng.uniform(1.0, 100.0),
        yaw=rng.uniform(-math.pi, math.pi),
        pitch=rng.uniform(-tilt, tilt),
        roll=rng.uniform(-tilt, tilt),
    )


def pinhole(p, cam, pose):
    """Independent dehomogenised [K|0] T m projection."""
    m = np.array([p[0], p[1], 0.0, 1.0])
    s = cam.K @ (pose.matrix @ m)[:3]
    return s[0] / s[2], s[1] / s[2]


# -- camera and pose ---------------------------------------------------


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 4.0, 1.0, 4, 4)


def test_rigid_pose_rejects_reflection():
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_pose_compose_with_inverse_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pose = random_pose(rng)
        ident = pose.compose(pose.inverse())
        assert np.allclose(ident.matrix, np.eye(4), atol=1e-9, rtol=0)


def test_nadir_pose_looks_down():
    pose = nadir_pose(3.0, -2.0, 50.0, yaw=0.4)
    assert np.allclose(pose.optical_axis, [0, 0, -1])
    assert pose.height == pytest.approx(50.0)
    assert pose.heading == pytest.approx(0.4)


# -- projection ----------------------------------------------------------


def test_point_under_camera_hits_principal_point():
    u, v = g.project_ground_to_pixel(GroundPoint(0.0, 0.0), DEFAULT_CAMERA, nadir_pose(0, 0, 50))
    assert (u, v) == pytest.approx((DEFAULT_CAMERA.cx, DEFAULT_CAMERA.cy))


def test_pinhole_arithmetic():
    cam = CameraModel(1000.0, 1000.0, 640.0, 360.0, 1280, 720)
    u, v = g.project_ground_to_pixel((5.0, 0.0), cam, nadir_pose(0, 0, 50))
    assert u == pytest.approx(640.0 + 100.0, abs=1e-9)
    assert v == pytest.approx(360.0, abs=1e-9)


def test_projection_matches_matrix_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        pose = random_pose(rng)
        p = pose.center[:2] + rng.uniform(-5, 5, 2)
        got = g.project_ground_to_pixel(p, DEFAULT_CAMERA, pose, clip=False)
        assert got == pytest.approx(pinhole(p, DEFAULT_CAMERA, pose), abs=1e-8)


def test_out_of_view():
    pose = nadir_pose(0, 0, 50)
    half = 50 * DEFAULT_CAMERA.width / DEFAULT_CAMERA.fx / 2
    assert g.project_ground_to_pixel((half + 1.0, 0.0), DEFAULT_CAMERA, pose) is None
    # u = M exactly is outside the half-open image
    assert g.project_ground_to_pixel((half, 0.0), DEFAULT_CAMERA, pose) is None
    assert g.project_ground_to_pixel((half - 1e-6, 0.0), DEFAULT_CAMERA, pose) is not None


def test_low_camera_is_degenerate():
    with pytest.raises(DegeneratePose):
        g.project_ground_to_pixel((0, 0), DEFAULT_CAMERA, nadir_pose(0, 0, 0.1))


def test_horizontal_optical_axis_is_degenerate():
    pose = nadir_pose(0, 0, 10, pitch=math.pi / 2)
    with pytest.raises(DegeneratePose):
        g.project_ground_to_pixel((0, 0), DEFAULT_CAMERA, pose)


# -- footprint -------------------------------------------------------------


@pytest.mark.parametrize("h", [5.0, 10.0, 50.0])
def test_footprint_square_side(h):
    fp = g.ground_footprint(DEFAULT_CAMERA, nadir_pose(2.0, -1.0, h))
    side = h * DEFAULT_CAMERA.width / DEFAULT_CAMERA.fx
    edges = np.linalg.norm(np.roll(fp, -1, axis=0) - fp, axis=1)
    assert edges == pytest.approx([side] * 4, rel=1e-12)
    assert fp.mean(axis=0) == pytest.approx([2.0, -1.0], abs=1e-9)


def test_footprint_doubles_with_height():
    a = g.ground_footprint(DEFAULT_CAMERA, nadir_pose(0, 0, 10))
    b = g.ground_footprint(DEFAULT_CAMERA, nadir_pose(0, 0, 20))
    assert b == pytest.approx(2 * a, abs=1e-9)


def test_footprint_rejects_steep_tilt():
    with pytest.raises(DegeneratePose):
        g.ground_footprint(DEFAULT_CAMERA, nadir_pose(0, 0, 10, pitch=math.radians(50)))


def test_footprint_corner_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        pose = random_pose(rng)
        fp = g.ground_footprint(DEFAULT_CAMERA, pose)
        for corner, p in zip(DEFAULT_CAMERA.corners, fp):
            uv = g.project_ground_to_pixel(p, DEFAULT_CAMERA, pose, clip=False)
            assert np.abs(np.subtract(uv, corner)).max() < 1e-6


# -- registration ----------------------------------------------------------


def test_registration_identity():
    pose = nadir_pose(4, 5, 30, yaw=0.3)
    H = g.registration_homography(pose, pose, DEFAULT_CAMERA)
    assert H == pytest.approx(np.eye(3), abs=1e-12)


def test_registration_translation():
    dx, dy = 3.5, -1.25
    H = g.registration_homography(nadir_pose(0, 0, 30), nadir_pose(dx, dy, 30), DEFAULT_CAMERA)
    expected = np.array([[1, 0, -dx], [0, 1, -dy], [0, 0, 1.0]])
    assert H == pytest.approx(expected, abs=1e-10)


def test_registration_yaw_matches_least_squares_fit():
    a = nadir_pose(10, 20, 40, yaw=0.0)
    b = nadir_pose(10, 20, 40, yaw=math.radians(30))
    H = g.registration_homography(a, b, DEFAULT_CAMERA)
    c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
    assert H[:2, :2] == pytest.approx(np.array([[c, s], [-s, c]]), abs=1e-10)
    # brute-force affine fit from 100 random ground points mapped by hand
    rng = np.random.default_rng(0)
    world = rng.uniform(-20, 20, (100, 2)) + [10, 20]
    rel = world - [10, 20]
    src = rel  # map frame of a (yaw 0)
    dst = np.column_stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]])
    A = np.column_stack([src, np.ones(100)])
    fit, *_ = np.linalg.lstsq(A, dst, rcond=None)
    assert H[:2, :] == pytest.approx(fit.T, abs=1e-9)


def test_registration_round_trip_is_identity():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a, b = random_pose(rng), random_pose(rng)
        Hab = g.registration_homography(a, b, DEFAULT_CAMERA)
        Hba = g.registration_homography(b, a, DEFAULT_CAMERA)
        assert np.abs(Hab @ Hba - np.eye(3)).max() < 1e-9
        assert Hab[2, 2] == 1.0


def test_dlt_rejects_collinear_points():
    pts = np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]])
    with pytest.raises(SingularConfiguration):
        g.dlt_homography(pts, pts)


def test_dlt_recovers_known_homography():
    H = np.array([[1.1, 0.2, 3.0], [-0.1, 0.9, -2.0], [1e-3, 2e-3, 1.0]])
    src = np.array([[0, 0], [10, 0], [10, 10], [0, 10], [5, 3.0]])
    dst = g.apply_homography(H, src)
    assert g.dlt_homography(src, dst) == pytest.approx(H, abs=1e-9)


# -- warping -----------------------------------------------------------------


def random_map(rng, X=12, Y=10):
    grid = SemanticGroundMap.empty(X, Y, 0.5)
    probs = rng.dirichlet(np.ones(DEFAULT_CLASSES.count - 1), size=(X, Y))
    full = np.zeros((X, Y, DEFAULT_CLASSES.count))
    mask = np.arange(DEFAULT_CLASSES.count) != DEFAULT_CLASSES.person
    full[..., mask] = probs
    full[..., DEFAULT_CLASSES.person] = rng.random((X, Y))
    return grid.replace(probs=full, last_observed=rng.integers(0, 5, (X, Y)))


def test_warp_identity_is_bit_identical():
    grid = random_map(np.random.default_rng(0))
    out = g.warp_map(grid, np.eye(3))
    assert np.array_equal(out.probs, grid.probs)
    assert np.array_equal(out.last_observed, grid.last_observed)


def test_warp_one_cell_translation():
    grid = random_map(np.random.default_rng(1))
    cs = grid.cell_size
    # content moves +1 cell along x: destination (i, j) reads source (i-1, j)
    H = np.array([[1, 0, cs], [0, 1, 0], [0, 0, 1.0]])
    out = g.warp_map(grid, H)
    assert np.array_equal(out.probs[1:], grid.probs[:-1])
    assert np.array_equal(out.probs[0], np.broadcast_to(grid.uninformed_vector(), out.probs[0].shape))
    assert np.all(out.last_observed[0] == -1)


def test_warp_cells_are_copies_or_uninformed():
    rng = np.random.default_rng(5)
    for _ in range(20):
        grid = random_map(rng)
        th = rng.uniform(-math.pi, math.pi)
        H = np.array([[math.cos(th), -math.sin(th), rng.uniform(-2, 2)], [math.sin(th), math.cos(th), rng.uniform(-2, 2)], [0, 0, 1]])
        out = g.warp_map(grid, H)
        src = grid.probs.reshape(-1, grid.probs.shape[-1])
        uninf = grid.uninformed_vector()
        for vec in out.probs.reshape(-1, grid.probs.shape[-1]):
            assert np.array_equal(vec, uninf) or (src == vec).all(axis=1).any()


@settings(max_examples=50, deadline=None)
@given(
    th=st.floats(-math.pi, math.pi),
    tx=st.floats(-5, 5),
    ty=st.floats(-5, 5),
    seed=st.integers(0, 2**16),
)
def test_warp_keeps_valid_vectors(th, tx, ty, seed):
    grid = random_map(np.random.default_rng(seed), 8, 8)
    H = np.array([[math.cos(th), -math.sin(th), tx], [math.sin(th), math.cos(th), ty], [0, 0, 1]])
    out = g.warp_map(grid, H)
    non_person = np.delete(out.probs, DEFAULT_CLASSES.person, axis=-1)
    assert (out.probs >= 0).all()
    assert (non_person.sum(axis=-1) <= 1 + 1e-9).all()


def test_warp_rejects_singular():
    grid = random_map(np.random.default_rng(0))
    with pytest.raises(SingularConfiguration):
        g.warp_map(grid, np.zeros((3, 3)))
