"""Trajectory, landmark-centroid and volume error metrics, plus
cross-trial aggregation.

The position and centroid errors are mean Euclidean distances (the square
root sits inside the sum); set conventional=True for the usual
root-of-mean-of-squares instead. Volumes compare the cube of the smallest
semi-axis of the estimated quadric against the true cube volume; estimates
whose shape matrix is not ellipsoidal are flagged invalid and excluded
from (but counted in) the aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DualQuadric

__all__ = [
    "TrialResult",
    "rmse_pos",
    "rmse_lm",
    "quadric_volume_cube",
    "rmse_volume",
    "aggregate",
    "format_table",
    "MODES",
]

MODES = ("monocular", "with-relpos")


@dataclass(frozen=True)
class TrialResult:
    """Per-trial metric record."""

    seed: int
    mode: str
    rmse_pos_init: float
    rmse_pos_slam: float
    rmse_lm: float
    rmse_volume: float  # nan when every landmark estimate is non-ellipsoidal
    volume_valid: tuple  # per-landmark flags, False = non-ellipsoidal
    iterations: int
    final_cost: float

    @property
    def volume_invalid_count(self) -> int:
        return sum(not ok for ok in self.volume_valid)


def rmse_pos(est, gt, conventional: bool = False) -> float:
    """Mean planar distance between estimated and true robot positions.

    With conventional=True, computes sqrt(mean(squared distance)) instead
    of the mean distance.
    """
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} vs {len(gt)}")
    d = np.array(
        [[e.x - g.x, e.y - g.y] for e, g in zip(est, gt)]
    )
    dist = np.hypot(d[:, 0], d[:, 1])
    if conventional:
        return float(np.sqrt(np.mean(dist**2)))
    return float(np.mean(dist))


def rmse_lm(est, gt, conventional: bool = False) -> float:
    """Mean distance between estimated quadric centroids and true cube
    centers, matched by landmark id."""
    by_id = {lm.id: lm for lm in gt}
    if sorted(by_id) != sorted(j for j in range(len(est))):
        raise ValueError("landmark ids do not match the estimate list")
    dist = np.array(
        [
            np.linalg.norm(est[j].centroid() - by_id[j].center)
            for j in range(len(est))
        ]
    )
    if conventional:
        return float(np.sqrt(np.mean(dist**2)))
    return float(np.mean(dist))


def quadric_volume_cube(q: DualQuadric):
    """Cube volume assigned to a quadric: (smallest semi-axis)^3.

    The quadric is translated to its centroid; the eigenvalues of the
    centered shape block (negated at the fixed (4,4)=1 scale) are the
    squared semi-axes. Returns None when they are not all positive, i.e.
    the estimate is not an ellipsoid.
    """
    Q = q.matrix()
    c = q.centroid()
    H = np.eye(4)
    H[:3, 3] = -c
    Qc = H @ Q @ H.T
    block = Qc[:3, :3] / Qc[3, 3]
    semi_sq = -np.linalg.eigvalsh(block)
    if np.any(semi_sq <= 0):
        return None
    return float(np.min(np.sqrt(semi_sq)) ** 3)


def rmse_volume(est, gt) -> float:
    """Mean absolute volume error over the ellipsoidal estimates.

    Raises:
        ValueError: if no estimate is ellipsoidal.
    """
    by_id = {lm.id: lm for lm in gt}
    errors = []
    for j, q in enumerate(est):
        vol = quadric_volume_cube(q)
        if vol is not None:
            errors.append(abs(vol - by_id[j].side ** 3))
    if not errors:
        raise ValueError("no ellipsoidal estimates; volume error undefined")
    return float(np.mean(errors))


_METRICS = ("rmse_pos_init", "rmse_pos_slam", "rmse_lm", "rmse_volume")


def aggregate(results) -> dict:
    """Average and median of every metric, per mode.

    Returns a nested dict summary[mode][metric] = {"avg": .., "med": ..};
    trials whose volume error is undefined are excluded from the volume
    statistics, with summary[mode]["rmse_volume"]["n_excluded"] reporting
    the count. summary[mode]["volume_invalid_landmarks"] totals the
    per-landmark invalid flags.
    """
    results = list(results)
    if not results:
        raise ValueError("no trial results to aggregate")
    summary: dict = {}
    for mode in sorted({r.mode for r in results}):
        rows = [r for r in results if r.mode == mode]
        entry: dict = {}
        for metric in _METRICS:
            values = np.array([getattr(r, metric) for r in rows])
            finite = values[np.isfinite(values)]
            stats = {
                "avg": float(np.mean(finite)) if finite.size else float("nan"),
                "med": float(np.median(finite)) if finite.size else float("nan"),
            }
            if metric == "rmse_volume":
                stats["n_excluded"] = int(values.size - finite.size)
            entry[metric] = stats
        entry["volume_invalid_landmarks"] = int(
            sum(r.volume_invalid_count for r in rows)
        )
        entry["n_trials"] = len(rows)
        summary[mode] = entry
    return summary


def format_table(summary: dict) -> str:
    """Render the aggregate summary as a fixed-width text table."""
    header = (
        f"{'mode':<14} {'init pos avg':>12} {'init pos med':>12} "
        f"{'slam pos avg':>12} {'slam pos med':>12} "
        f"{'lm avg':>9} {'lm med':>9} {'vol avg':>9} {'vol med':>9}"
    )
    lines = [header, "-" * len(header)]
    for mode, entry in summary.items():
        lines.append(
            f"{mode:<14} "
            f"{entry['rmse_pos_init']['avg']:>12.3f} {entry['rmse_pos_init']['med']:>12.3f} "
            f"{entry['rmse_pos_slam']['avg']:>12.3f} {entry['rmse_pos_slam']['med']:>12.3f} "
            f"{entry['rmse_lm']['avg']:>9.3f} {entry['rmse_lm']['med']:>9.3f} "
            f"{entry['rmse_volume']['avg']:>9.3f} {entry['rmse_volume']['med']:>9.3f}"
        )
    return "\n".join(lines)
