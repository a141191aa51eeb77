"""Projective-geometry primitives for quadric-landmark SLAM.

Homogeneous points, image lines, 3D planes, pinhole cameras, dual quadrics
(surfaces defined by their tangent planes) and dual conics (their perspective
images, defined by tangent lines), plus the conversions among them.

Conventions used throughout the package:

* Image lines are stored normalized so that sqrt(l1^2 + l2^2) = 1, with the
  sign fixed by l3 >= 0 (ties broken by l1 > 0, then l2 > 0). The line at
  infinity is normalized to (0, 0, 1).
* Camera extrinsics are world-to-camera: X_cam = R @ X_world + t, so the
  projection matrix is literally P = K [R | t].
* A dual quadric is kept at the fixed scale where its 4x4 matrix has entry
  (4,4) = 1; after any congruence transform the matrix is renormalized by
  that entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateGeometryError",
    "HomPoint2",
    "ImageLine",
    "Plane",
    "CameraIntrinsics",
    "RobotPose",
    "CameraExtrinsics",
    "ProjectionMatrix",
    "DualQuadric",
    "DualConic",
    "wrap_angle",
    "rot2",
    "rotz",
    "line_from_points",
    "bbox_to_lines",
    "bbox_corners",
    "projection_matrix",
    "backproject_line",
    "quadric_from_vector",
    "vector_from_quadric",
    "ellipsoid_to_dual_quadric",
    "project_quadric",
    "tangency_residual",
    "pose_to_extrinsics",
    "left_facing_mount",
    "dual_conic_bbox",
]

_EPS_SCALE = 1e-12


class DegenerateGeometryError(ValueError):
    """Raised for degenerate geometric input (coincident points, zero-scale
    quadrics, lines that cannot be normalized)."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi].

    Values already in range are returned unchanged (bit-exact), so wrapping
    is idempotent.
    """
    theta = float(theta)
    if -math.pi < theta <= math.pi:
        return theta
    w = theta - math.tau * math.floor((theta + math.pi) / math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


def rot2(theta: float) -> np.ndarray:
    """2x2 planar rotation matrix."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotz(theta: float) -> np.ndarray:
    """3x3 rotation about the z axis."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HomPoint2:
    """Homogeneous 2D point (image points are in pixels)."""

    coords: np.ndarray

    def __post_init__(self):
        coords = _frozen_array(self.coords, (3,))
        if not np.any(coords):
            raise DegenerateGeometryError("homogeneous point must be nonzero")
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_xy(cls, x: float, y: float) -> "HomPoint2":
        return cls(np.array([x, y, 1.0]))

    def xy(self) -> np.ndarray:
        """Dehomogenized (x, y)."""
        return self.coords[:2] / self.coords[2]


def _normalize_line_coords(coords: np.ndarray) -> np.ndarray:
    norm = math.hypot(coords[0], coords[1])
    # Skipping the division when the norm is already 1 (to rounding) makes
    # normalization bit-exactly idempotent, which serialization relies on.
    if norm > _EPS_SCALE:
        if abs(norm - 1.0) > 1e-12:
            coords = coords / norm
    else:
        # Line at infinity: only the third component carries information.
        if coords[2] != 1.0 and coords[2] != -1.0:
            coords = coords / abs(coords[2])
    l1, l2, l3 = coords
    flip = l3 < 0 or (l3 == 0 and (l1 < 0 or (l1 == 0 and l2 < 0)))
    return -coords if flip else coords


@dataclass(frozen=True)
class ImageLine:
    """Homogeneous image line (l1, l2, l3), stored normalized.

    Normalization: sqrt(l1^2 + l2^2) = 1 (unit normal) with the sign fixed
    so l3 >= 0, breaking ties by l1 > 0 then l2 > 0. The tangency residual
    of a quadric is gauge-dependent in the line scale; this fixes the gauge.
    """

    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(3)
        if not np.any(coords):
            raise DegenerateGeometryError("image line must be nonzero")
        coords = _normalize_line_coords(coords)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)


@dataclass(frozen=True)
class Plane:
    """Homogeneous 3D plane (pi1, pi2, pi3, pi4); points satisfy pi . X = 0."""

    coords: np.ndarray

    def __post_init__(self):
        coords = _frozen_array(self.coords, (4,))
        if not np.any(coords):
            raise DegenerateGeometryError("plane must be nonzero")
        object.__setattr__(self, "coords", coords)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RobotPose:
    """Planar robot pose (x, y in meters, heading theta in radians).

    theta is wrapped to (-pi, pi] at construction.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, arr) -> "RobotPose":
        x, y, theta = np.asarray(arr, dtype=float)
        return cls(float(x), float(y), float(theta))


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rigid transform: X_cam = rotation @ X_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen_array(self.rotation, (3, 3))
        t = _frozen_array(self.translation, (3,))
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-12, rtol=0.0):
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-12:
            raise ValueError("rotation must be proper (det = 1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, point_world) -> np.ndarray:
        return self.rotation @ np.asarray(point_world, dtype=float) + self.translation

    def inverse_transform(self, point_cam) -> np.ndarray:
        return self.rotation.T @ (np.asarray(point_cam, dtype=float) - self.translation)

    def compose(self, other: "CameraExtrinsics") -> "CameraExtrinsics":
        """self after other: X -> self(other(X))."""
        return CameraExtrinsics(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass(frozen=True)
class ProjectionMatrix:
    """3x4 pinhole projection matrix."""

    P: np.ndarray

    def __post_init__(self):
        P = _frozen_array(self.P, (3, 4))
        if np.linalg.matrix_rank(P) != 3:
            raise DegenerateGeometryError("projection matrix must have rank 3")
        object.__setattr__(self, "P", P)


# Index pairs of the upper triangle of the 4x4 dual quadric matrix covered by
# the 9-vector q = (q1..q9); the remaining (3,3) entry is fixed to 1.
_Q_UPPER = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3)]


@dataclass(frozen=True)
class DualQuadric:
    """Dual quadric with 9 free parameters.

    The quadric surface is defined by its tangent planes: pi^T Q* pi = 0.
    The symmetric 4x4 matrix Q* is stored as the 9-vector of its upper
    triangle with the trailing (4,4) entry pinned to 1, which makes the
    centroid directly readable as (q4, q7, q9).
    """

    q: np.ndarray

    def __post_init__(self):
        q = _frozen_array(self.q, (9,))
        object.__setattr__(self, "q", q)

    def matrix(self) -> np.ndarray:
        return quadric_from_vector(self.q)

    def centroid(self) -> np.ndarray:
        return np.array([self.q[3], self.q[6], self.q[8]])

    @classmethod
    def identity(cls) -> "DualQuadric":
        return cls(np.array([1.0, 0, 0, 0, 1.0, 0, 0, 1.0, 0]))

    @classmethod
    def from_matrix(cls, Q) -> "DualQuadric":
        return cls(vector_from_quadric(Q))


@dataclass(frozen=True)
class DualConic:
    """Dual conic: 3x3 symmetric matrix whose tangent lines satisfy l^T C* l = 0."""

    C: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float).reshape(3, 3)
        if not np.allclose(C, C.T, atol=1e-12, rtol=0.0):
            raise ValueError("dual conic matrix must be symmetric")
        C = 0.5 * (C + C.T)
        C.setflags(write=False)
        object.__setattr__(self, "C", C)


def line_from_points(a: HomPoint2, b: HomPoint2) -> ImageLine:
    """Line through two homogeneous points, via their cross product.

    Raises:
        DegenerateGeometryError: if the points are proportional (coincident).
    """
    cross = np.cross(a.coords, b.coords)
    scale = max(np.max(np.abs(a.coords)) * np.max(np.abs(b.coords)), _EPS_SCALE)
    if np.max(np.abs(cross)) <= _EPS_SCALE * scale:
        raise DegenerateGeometryError("points are coincident; line is undefined")
    return ImageLine(cross)


def bbox_corners(u_min: float, v_min: float, u_max: float, v_max: float) -> tuple:
    """Corners of an axis-aligned box in cyclic order."""
    return (
        HomPoint2.from_xy(u_min, v_min),
        HomPoint2.from_xy(u_max, v_min),
        HomPoint2.from_xy(u_max, v_max),
        HomPoint2.from_xy(u_min, v_max),
    )


def bbox_to_lines(corners) -> tuple:
    """The four bounding-box lines joining consecutive corner pairs.

    corners must be four homogeneous points in cyclic order; line k joins
    corner k to corner k+1 (wrapping).
    """
    if len(corners) != 4:
        raise ValueError("a bounding box has exactly four corners")
    return tuple(
        line_from_points(corners[k], corners[(k + 1) % 4]) for k in range(4)
    )


def projection_matrix(K: CameraIntrinsics, E: CameraExtrinsics) -> ProjectionMatrix:
    """P = K [R | t]."""
    Rt = np.hstack([E.rotation, E.translation.reshape(3, 1)])
    return ProjectionMatrix(K.K @ Rt)


def backproject_line(P: ProjectionMatrix, l: ImageLine) -> Plane:
    """Back-project an image line to the 3D plane pi = P^T l.

    Every world point projecting onto the line lies on the plane, which
    passes through the camera center.
    """
    return Plane(P.P.T @ l.coords)


def quadric_from_vector(q) -> np.ndarray:
    """Expand the 9-vector parametrization into the symmetric 4x4 matrix.

    Layout: q fills the upper triangle row by row; the (4,4) entry is 1.
    """
    q = np.asarray(q, dtype=float).reshape(9)
    Q = np.empty((4, 4))
    for value, (i, j) in zip(q, _Q_UPPER):
        Q[i, j] = value
        Q[j, i] = value
    Q[3, 3] = 1.0
    return Q

def vector_from_quadric(Q) -> np.ndarray:
    """Inverse of quadric_from_vector: renormalize so (4,4) = 1 and read off q.

    Raises:
        DegenerateGeometryError: if the (4,4) entry is (near) zero, i.e. the
            quadric cannot be represented at the fixed scale.
    """
    Q = np.asarray(Q, dtype=float).reshape(4, 4)
    scale = Q[3, 3]
    if abs(scale) < _EPS_SCALE:
        raise DegenerateGeometryError("quadric has (4,4) entry ~ 0; cannot fix scale")
    Qn = Q / scale
    return np.array([Qn[i, j] for (i, j) in _Q_UPPER])


def ellipsoid_to_dual_quadric(center, semi_axes, rotation=None) -> DualQuadric:
    """Dual quadric of an ellipsoid with the given center, semi-axes and
    orientation (rotation maps body axes to world).

    Built as T diag(a^2, b^2, c^2, -1) T^T with T the body-to-world rigid
    transform, then renormalized to the fixed (4,4) = 1 scale.
    """
    center = np.asarray(center, dtype=float).reshape(3)
    semi = np.asarray(semi_axes, dtype=float).reshape(3)
    if np.any(semi <= 0):
        raise ValueError("semi-axes must be positive")
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float).reshape(3, 3)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = center
    Q = T @ np.diag([semi[0] ** 2, semi[1] ** 2, semi[2] ** 2, -1.0]) @ T.T
    return DualQuadric.from_matrix(Q)


def project_quadric(P: ProjectionMatrix, q: DualQuadric) -> DualConic:
    """Perspective image of a dual quadric: C* = P Q* P^T."""
    C = P.P @ q.matrix() @ P.P.T
    return DualConic(0.5 * (C + C.T))


def tangency_residual(l: ImageLine, P: ProjectionMatrix, q: DualQuadric) -> float:
    """Tangency defect l^T P Q* P^T l.

    Zero iff the plane back-projected from the line is tangent to the
    quadric; the magnitude is gauge-fixed by the stored line normalization.
    """
    a = P.P.T @ l.coords
    return float(a @ q.matrix() @ a)


def left_facing_mount() -> CameraExtrinsics:
    """Robot-to-camera transform for a camera looking 90 degrees to the left.

    Optical center at the robot origin; optical axis along robot +y, image
    x axis along the robot heading, image y axis pointing down (world -z).
    """
    # Columns of the camera-to-robot rotation are the camera axes expressed
    # in the robot frame; the mount stores its inverse (robot-to-camera).
    cam_to_robot = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, -1.0, 0.0],
        ]
    )
    return CameraExtrinsics(cam_to_robot.T, np.zeros(3))


def pose_to_extrinsics(x: RobotPose, mount: CameraExtrinsics) -> CameraExtrinsics:
    """World-to-camera extrinsics of the mounted camera at a robot pose.

    The SE(2) pose is lifted to SE(3) on the z = 0 plane and composed with
    the fixed robot-to-camera mount.
    """
    R_wr = rotz(x.theta)  # robot-to-world
    p = np.array([x.x, x.y, 0.0])
    world_to_robot = CameraExtrinsics(R_wr.T, -R_wr.T @ p)
    return mount.compose(world_to_robot)


def dual_conic_bbox(C: DualConic) -> tuple:
    """Axis-aligned bounding box (u_min, v_min, u_max, v_max) of a dual conic.

    Solves for the two vertical and two horizontal tangent lines of the
    conic; this is the exact bounding box an ideal detector would report
    for the projected outline of an ellipsoid.

    Raises:
        DegenerateGeometryError: if the conic has no real axis-aligned
            tangents (not an ellipse-like outline).
    """
    M = C.C
    if abs(M[2, 2]) < _EPS_SCALE:
        raise DegenerateGeometryError("conic tangent box undefined ((3,3) entry ~ 0)")
    # Vertical tangents l = (1, 0, -u): C11 - 2 u C13 + u^2 C33 = 0.
    du = M[0, 2] ** 2 - M[0, 0] * M[2, 2]
    dv = M[1, 2] ** 2 - M[1, 1] * M[2, 2]
    if du <= 0 or dv <= 0:
        raise DegenerateGeometryError("conic has no real axis-aligned tangent lines")
    hu, hv = math.sqrt(du) / abs(M[2, 2]), math.sqrt(dv) / abs(M[2, 2])
    u0, v0 = M[0, 2] / M[2, 2], M[1, 2] / M[2, 2]
    return (u0 - hu, v0 - hv, u0 + hu, v0 + hv)
