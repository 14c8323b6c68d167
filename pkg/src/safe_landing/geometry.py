"""Pinhole camera model, flat-ground projection and map re-registration.

Conventions
-----------
World frame: right-handed, x/y on the ground plane, z up, ground at z = 0.

Camera frame: x right, y down, z along the optical axis.  A pose maps
world points into the camera frame, ``X_cam = R @ X_world + t``.

Image frame: continuous pixel coordinates, pixel ``i`` covers ``[i, i + 1)``
so an image of width M spans ``[0, M)``.  Frames are stored as
``(height, width, ...)`` arrays and indexed ``[v, u]``.

Map frame: the metric ground map is ego-anchored.  Its origin is the ground
point below the camera centre and its x axis is the camera x axis projected
onto the ground, so a yaw change rotates the map and a horizontal move
translates it.  Map coordinates are metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .semantic_map import SemanticGroundMap

MIN_HEIGHT = 0.1
MIN_INCIDENCE_COS = 1e-6
MAX_NADIR_ANGLE = math.radians(45.0)
HELD_OUT_TOLERANCE = 1e-6


class GeometryError(ValueError):
    pass


class DegeneratePose(GeometryError):
    """The camera cannot see the ground plane in a usable way."""


class SingularConfiguration(GeometryError):
    """Point correspondences do not determine a homography."""


class GroundPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def corners(self) -> np.ndarray:
        """Image corners in pixel coordinates, clockwise from the origin."""
        M, N = float(self.width), float(self.height)
        return np.array([[0.0, 0.0], [M, 0.0], [M, N], [0.0, N]])

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )


# 128 px square sensor with a 1.25 footprint/height ratio: 62.5 m ground
# coverage at 50 m (fits the default 64 m map) and 6.25 m at 5 m, just
# covering a 3 m safety disc.
DEFAULT_CAMERA = CameraModel(fx=102.4, fy=102.4, cx=64.0, cy=64.0, width=128, height=128)


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray
    source: str = "world"
    target: str = "camera"

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_camera_center(
        cls, center: np.ndarray, camera_to_world: np.ndarray
    ) -> "RigidPose":
        R = np.asarray(camera_to_world, dtype=float).T
        return cls(R, -R @ np.asarray(center, dtype=float))

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def center(self) -> np.ndarray:
        """Camera centre in the source frame (world for world->camera poses)."""
        return -self.rotation.T @ self.translation

    @property
    def height(self) -> float:
        return float(self.center[2])

    @property
    def optical_axis(self) -> np.ndarray:
        """Camera z axis expressed in the world frame."""
        return self.rotation[2].copy()

    @property
    def heading(self) -> float:
        """Yaw of the camera x axis projected onto the ground."""
        x_axis = self.rotation[0]
        return math.atan2(x_axis[1], x_axis[0])

    def inverse(self) -> "RigidPose":
        R = self.rotation.T
        return RigidPose(R, -R @ self.translation, source=self.target, target=self.source)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self @ other``: apply ``other`` first, then ``self``."""
        if other.target != self.source:
            raise ValueError(f"cannot compose {other.target!r} into {self.source!r}")
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            source=other.source,
            target=self.target,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RigidPose):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.source == other.source
            and self.target == other.target
        )

    __hash__ = None  # type: ignore[assignment]


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# camera x -> world x, camera y -> world -y, optical axis -> world -z
_NADIR_BASE = np.diag([1.0, -1.0, -1.0])


def nadir_pose(
    x: float, y: float, altitude: float, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0
) -> RigidPose:
    """World->camera pose of a downward camera at ``(x, y, altitude)``.

    With zero angles the image u axis points along world +x and v along -y.
    ``pitch`` and ``roll`` tilt the optical axis away from nadir.
    """
    camera_to_world = _rot_z(yaw) @ _rot_x(roll) @ _rot_y(pitch) @ _NADIR_BASE
    return RigidPose.from_camera_center(np.array([x, y, altitude], dtype=float), camera_to_world)


def _check_pose(pose: RigidPose) -> None:
    if pose.height <= MIN_HEIGHT:
        raise DegeneratePose(f"camera height {pose.height:.3f} m is at or below {MIN_HEIGHT} m")
    if abs(pose.optical_axis[2]) < MIN_INCIDENCE_COS:
        raise DegeneratePose("optical axis is parallel to the ground plane")


def project_points(
    xy: np.ndarray, cam: CameraModel, pose: RigidPose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ground->pixel projection.

    Returns ``(u, v, in_view)``; ``u``/``v`` are NaN for points behind the
    camera.
    """
    _check_pose(pose)
    xy = np.asarray(xy, dtype=float)
    R, t = pose.rotation, pose.translation
    xc = xy[..., 0] * R[0, 0] + xy[..., 1] * R[0, 1] + t[0]
    yc = xy[..., 0] * R[1, 0] + xy[..., 1] * R[1, 1] + t[1]
    zc = xy[..., 0] * R[2, 0] + xy[..., 1] * R[2, 1] + t[2]
    front = zc > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, cam.fx * xc / zc + cam.cx, np.nan)
        v = np.where(front, cam.fy * yc / zc + cam.cy, np.nan)
    in_view = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return u, v, in_view


def project_ground_to_pixel(
    p: GroundPoint | tuple[float, float],
    cam: CameraModel,
    pose: RigidPose,
    *,
    clip: bool = True,
) -> tuple[float, float] | None:
    """Project a ground point into the image.

    Returns ``None`` (out of view) for points behind the camera or, when
    ``clip`` is set, outside ``[0, M) x [0, N)``.
    """
    u, v, in_view = project_points(np.asarray(p, dtype=float), cam, pose)
    if not np.isfinite(u):
        return None
    if clip and not in_view:
        return None
    return float(u), float(v)


def back_project(uv: np.ndarray, cam: CameraModel, pose: RigidPose) -> np.ndarray:
    """Intersect pixel rays with the ground plane; returns ``(..., 2)`` xy."""
    _check_pose(pose)
    uv = np.asarray(uv, dtype=float)
    rays = np.stack(
        [(uv[..., 0] - cam.cx) / cam.fx, (uv[..., 1] - cam.cy) / cam.fy, np.ones(uv.shape[:-1])],
        axis=-1,
    )
    dirs = rays @ pose.rotation  # R^T applied row-wise
    if np.any(dirs[..., 2] >= 0):
        raise DegeneratePose("some pixel rays do not intersect the ground plane")
    c = pose.center
    s = -c[2] / dirs[..., 2]
    return c[:2] + s[..., None] * dirs[..., :2]


@lru_cache(maxsize=8)
def _pixel_rays(cam: CameraModel) -> np.ndarray:
    u = np.arange(cam.width) + 0.5
    v = np.arange(cam.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    rays = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    rays.setflags(write=False)
    return rays


def pixel_ground_points(cam: CameraModel, pose: RigidPose) -> np.ndarray:
    """Ground xy under every pixel centre, shape ``(height, width, 2)``."""
    _check_pose(pose)
    dirs = _pixel_rays(cam) @ pose.rotation
    if np.any(dirs[..., 2] >= 0):
        raise DegeneratePose("some pixel rays do not intersect the ground plane")
    c = pose.center
    s = -c[2] / dirs[..., 2]
    return c[:2] + s[..., None] * dirs[..., :2]


def ground_footprint(cam: CameraModel, pose: RigidPose) -> np.ndarray:
    """The four image corners back-projected to the ground, shape ``(4, 2)``."""
    _check_pose(pose)
    if -pose.optical_axis[2] < math.cos(MAX_NADIR_ANGLE):
        raise DegeneratePose("optical axis is more than 45 degrees from nadir")
    return back_project(cam.corners, cam, pose)


def map_from_world(pose: RigidPose) -> np.ndarray:
    """3x3 planar transform taking world xy into the pose's map frame."""
    psi = pose.heading
    c, s = math.cos(psi), math.sin(psi)
    cx, cy = pose.center[:2]
    return np.array(
        [[c, s, -(c * cx + s * cy)], [-s, c, -(-s * cx + c * cy)], [0.0, 0.0, 1.0]]
    )


def world_from_map(pose: RigidPose) -> np.ndarray:
    psi = pose.heading
    c, s = math.cos(psi), math.sin(psi)
    cx, cy = pose.center[:2]
    return np.array([[c, -s, cx], [s, c, cy], [0.0, 0.0, 1.0]])


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    x = H[0, 0] * pts[..., 0] + H[0, 1] * pts[..., 1] + H[0, 2]
    y = H[1, 0] * pts[..., 0] + H[1, 1] * pts[..., 1] + H[1, 2]
    w = H[2, 0] * pts[..., 0] + H[2, 1] * pts[..., 1] + H[2, 2]
    return np.stack([x / w, y / w], axis=-1)


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if mean_dist <= 0:
        raise SingularConfiguration("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalised direct linear transform from >= 4 point pairs.

    The result is scaled so that ``H[2, 2] == 1``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2 or len(src) < 4:
        raise ValueError("need matching (n, 2) arrays with n >= 4")
    Ts, Td = _normalizing_transform(src), _normalizing_transform(dst)
    s = apply_homography(Ts, src)
    d = apply_homography(Td, dst)
    n = len(s)
    A = np.zeros((2 * n, 9))
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    A[0::2, 0:3] = np.column_stack([-x, -y, -np.ones(n)])
    A[0::2, 6:9] = np.column_stack([u * x, u * y, u])
    A[1::2, 3:6] = np.column_stack([-x, -y, -np.ones(n)])
    A[1::2, 6:9] = np.column_stack([v * x, v * y, v])
    _, sv, vt = np.linalg.svd(A)
    if sv[7] <= 1e-10 * sv[0]:
        raise SingularConfiguration("DLT system is rank deficient (degenerate points)")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-12:
        raise SingularConfiguration("homography cannot be normalised")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        raise SingularConfiguration("homography is not invertible")
    return H


def registration_homography(
    pose_prev: RigidPose, pose_curr: RigidPose, cam: CameraModel
) -> np.ndarray:
    """Homography from the previous map frame into the current one.

    Estimated by DLT from the previous footprint corners and checked on the
    ground point under the principal point.
    """
    corners = ground_footprint(cam, pose_prev)
    held_out = back_project(np.array([cam.cx, cam.cy]), cam, pose_prev)
    # both maps only need to be valid frames; the current footprint is not used
    _check_pose(pose_curr)
    to_prev, to_curr = map_from_world(pose_prev), map_from_world(pose_curr)
    H = dlt_homography(apply_homography(to_prev, corners), apply_homography(to_curr, corners))
    predicted = apply_homography(H, apply_homography(to_prev, held_out))
    residual = float(np.linalg.norm(predicted - apply_homography(to_curr, held_out)))
    if residual > HELD_OUT_TOLERANCE:
        raise SingularConfiguration(f"held-out residual {residual:.3e} m exceeds tolerance")
    return H


def warp_arrays(grid: "SemanticGroundMap", H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour resampling of a map's arrays through ``H``.

    Returns a freshly allocated flat ``(X*Y, C)`` probability array and the
    matching ``(X, Y)`` last-observed array.
    """
    H = np.asarray(H, dtype=float)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise SingularConfiguration("warp homography is not invertible")
    src = apply_homography(np.linalg.inv(H), grid.cell_centers())
    si, sj = grid.fractional_index(src[..., 0], src[..., 1])
    si = np.floor(si + 0.5).astype(np.int64)
    sj = np.floor(sj + 0.5).astype(np.int64)
    inside = (si >= 0) & (si < grid.X) & (sj >= 0) & (sj < grid.Y)
    flat = np.where(inside, si * grid.Y + sj, 0).ravel()
    C = grid.probs.shape[-1]
    probs = np.take(grid.probs.reshape(-1, C), flat, axis=0)
    outside = ~inside.ravel()
    if outside.any():
        probs[outside] = grid.uninformed_vector()
    last = np.where(inside, np.take(grid.last_observed.ravel(), flat).reshape(inside.shape), -1)
    return probs, last


def warp_map(grid: "SemanticGroundMap", H: np.ndarray) -> "SemanticGroundMap":
    """Resample a map through ``H`` with nearest-neighbour lookup.

    Destination cells whose source falls outside the grid are reset to the
    uninformed state.
    """
    probs, last = warp_arrays(grid, H)
    return grid.replace(probs=probs.reshape(grid.probs.shape), last_observed=last)
