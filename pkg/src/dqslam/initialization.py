"""Variable initialization: odometry chaining for poses, plane-constraint
SVD fit (with identity fallback) for quadrics.

The SVD fit stacks one linear constraint per observed box line, obtained by
expanding the tangency equation of the back-projected plane against the
symmetric quadric matrix. Close-to-planar camera trajectories make that
system rank-deficient; a condition test on the two smallest singular values
detects this and triggers the identity fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors import motion_model
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    DualQuadric,
    RobotPose,
    pose_to_extrinsics,
    projection_matrix,
)

__all__ = [
    "InsufficientObservationsError",
    "DegenerateSolutionError",
    "InitStrategy",
    "init_poses",
    "init_quadric_fallback",
    "fit_dual_quadric",
    "init_quadric_svd",
    "initialize_quadrics",
]

_MODES = ("identity", "svd", "svd-with-fallback")


class InsufficientObservationsError(ValueError):
    """Fewer detections than the quadric's degrees of freedom require."""


class DegenerateSolutionError(ValueError):
    """The plane-constraint system does not determine a usable quadric."""


@dataclass(frozen=True)
class InitStrategy:
    """How to initialize quadric landmarks.

    condition_threshold: the SVD solution is accepted only when the ratio
    of the smallest to the second-smallest singular value falls below this,
    i.e. when the nullspace direction is isolated.
    """

    mode: str = "identity"
    condition_threshold: float = 0.1

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if not 0.0 < self.condition_threshold <= 1.0:
            raise ValueError("condition_threshold must lie in (0, 1]")


def init_poses(odometry, x0: RobotPose) -> list:
    """Chain the motion model through raw odometry, starting at x0."""
    poses = [x0]
    for u in odometry:
        poses.append(motion_model(poses[-1], u))
    return poses


def init_quadric_fallback() -> DualQuadric:
    """Identity-matrix quadric: unit sphere-like surface at the origin."""
    return DualQuadric(np.array([1.0, 0, 0, 0, 1.0, 0, 0, 1.0, 0]))


def _plane_constraint_rows(planes: np.ndarray) -> np.ndarray:
    """Tangency constraints as linear rows against (q1..q9, q10).

    Each plane pi contributes the exact symmetric expansion of
    pi^T Q* pi = 0, with cross terms carrying their factor of 2 and the
    trailing coefficient multiplying the fixed-scale entry.
    """
    p1, p2, p3, p4 = planes[:, 0], planes[:, 1], planes[:, 2], planes[:, 3]
    return np.stack(
        [
            p1 * p1,
            2 * p1 * p2,
            2 * p1 * p3,
            2 * p1 * p4,
            p2 * p2,
            2 * p2 * p3,
            2 * p2 * p4,
            p3 * p3,
            2 * p3 * p4,
            p4 * p4,
        ],
        axis=1,
    )


def fit_dual_quadric(
    planes: np.ndarray, condition_threshold: float = 0.1
) -> DualQuadric:
    """Least-squares quadric from tangent planes, via SVD nullspace.

    planes: (n, 4) homogeneous plane rows; normalized to unit Euclidean
    norm before assembling the system (conditions the SVD).

    Raises:
        InsufficientObservationsError: fewer than 9 constraint rows.
        DegenerateSolutionError: the smallest singular value is not isolated
            (ratio test fails) or the fixed-scale coefficient vanishes.
    """
    planes = np.asarray(planes, dtype=float).reshape(-1, 4)
    if planes.shape[0] < 9:
        raise InsufficientObservationsError(
            f"{planes.shape[0]} planes constrain at most {planes.shape[0]} of 9 DOF"
        )
    planes = planes / np.linalg.norm(planes, axis=1, keepdims=True)
    A = _plane_constraint_rows(planes)
    _, S, Vt = np.linalg.svd(A)
    v = Vt[-1]
    if len(S) < 10:  # fewer rows than unknowns: exact nullspace
        S = np.concatenate([S, np.zeros(10 - len(S))])
    ratio = S[-1] / S[-2] if S[-2] > 0 else 1.0
    if ratio >= condition_threshold:
        raise DegenerateSolutionError(
            f"nullspace not isolated (singular-value ratio {ratio:.3g})"
        )
    if abs(v[9]) < 1e-12:
        raise DegenerateSolutionError("fit has (4,4) coefficient ~ 0; scale is lost")
    q = v[:9] / v[9]
    if not np.all(np.isfinite(q)):
        raise DegenerateSolutionError("fit produced non-finite parameters")
    return DualQuadric(q)


def init_quadric_svd(
    detections,
    poses,
    intrinsics: CameraIntrinsics,
    mount: CameraExtrinsics,
    *,
    condition_threshold: float = 0.1,
) -> DualQuadric:
    """SVD initialization of one landmark from its bounding-box detections.

    poses is indexed by each detection's pose_index and may contain
    RobotPose entries (combined with the mount) or ready CameraExtrinsics
    (used as-is, e.g. for non-planar camera rigs).

    Raises:
        InsufficientObservationsError: fewer than 3 detections.
        DegenerateSolutionError: see fit_dual_quadric.
    """
    detections = list(detections)
    if len(detections) < 3:
        raise InsufficientObservationsError(
            f"need at least 3 detections, got {len(detections)}"
        )
    planes = []
    for det in detections:
        camera = poses[det.pose_index]
        if isinstance(camera, RobotPose):
            camera = pose_to_extrinsics(camera, mount)
        P = projection_matrix(intrinsics, camera).P
        for line in det.lines:
            planes.append(P.T @ line.coords)
    return fit_dual_quadric(np.array(planes), condition_threshold)


def initialize_quadrics(
    detections,
    poses,
    intrinsics: CameraIntrinsics,
    mount: CameraExtrinsics,
    landmark_ids,
    strategy: InitStrategy | None = None,
):
    """Initialize every landmark in landmark_ids per the strategy.

    Returns:
        (quadrics, used_fallback): one DualQuadric per landmark id, and
        flags marking which of them came from the identity fallback.
    """
    strategy = strategy or InitStrategy()
    by_landmark: dict = {j: [] for j in landmark_ids}
    for det in detections:
        if det.landmark_id in by_landmark:
            by_landmark[det.landmark_id].append(det)

    quadrics, used_fallback = [], []
    for j in landmark_ids:
        if strategy.mode == "identity":
            quadrics.append(init_quadric_fallback())
            used_fallback.append(True)
            continue
        try:
            q = init_quadric_svd(
                by_landmark[j],
                poses,
                intrinsics,
                mount,
                condition_threshold=strategy.condition_threshold,
            )
            quadrics.append(q)
            used_fallback.append(False)
        except (InsufficientObservationsError, DegenerateSolutionError):
            if strategy.mode == "svd":
                raise
            quadrics.append(init_quadric_fallback())
            used_fallback.append(True)
    return quadrics, used_fallback
