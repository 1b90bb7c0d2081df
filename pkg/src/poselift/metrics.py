"""Pose evaluation metrics: MPJPE, Procrustes-aligned MPJPE, and 3DPCK.

MPJPE and 3DPCK align poses by root translation only; PA-MPJPE first solves
the least-squares similarity transform (rotation, uniform scale, translation)
between the point sets, with the reflection branch rejected so anatomically
mirrored poses do not score as perfect matches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .skeleton import Pose3D

PCK_THRESHOLD_MM = 150.0


@dataclass
class SimilarityTransform:
    """Proper-rotation similarity transform x -> scale * rotation @ x + translation."""

    rotation: np.ndarray  # (3, 3)
    scale: float
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise InputError("similarity transform needs a 3x3 rotation and 3-vector translation")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            raise InputError("rotation must be orthonormal")
        if abs(float(np.linalg.det(self.rotation)) - 1.0) > 1e-9:
            raise InputError("rotation must be proper (det +1)")
        if not self.scale > 0:
            raise InputError(f"scale must be positive, got {self.scale}")

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return self.scale * (coords @ self.rotation.T) + self.translation


def _paired(pred: Pose3D, gt: Pose3D) -> tuple[np.ndarray, np.ndarray]:
    if pred.n_joints != gt.n_joints:
        raise InputError(f"joint count mismatch: {pred.n_joints} vs {gt.n_joints}")
    return pred.coords, gt.coords


def mpjpe(pred: Pose3D, gt: Pose3D, root_index: int) -> float:
    """Mean per-joint distance in mm after aligning the root joints."""
    p, g = _paired(pred, gt)
    if not 0 <= root_index < p.shape[0]:
        raise InputError(f"root index {root_index} out of range")
    diff = (p - p[root_index]) - (g - g[root_index])
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def procrustes_align(pred: Pose3D, gt: Pose3D) -> tuple[SimilarityTransform, Pose3D]:
    """Least-squares similarity alignment of pred onto gt.

    Solves min over (s, R, t) of sum ||s R p_n + t - g_n||^2 via the centered
    cross-covariance SVD, forcing det(R) = +1. Degenerate point sets (fewer
    than 3 joints, or collinear/coincident after centering) are rejected.
    """
    p, g = _paired(pred, gt)
    n = p.shape[0]
    if n < 3:
        raise InputError("procrustes alignment needs at least 3 joints")
    mu_p = p.mean(axis=0)
    mu_g = g.mean(axis=0)
    x = p - mu_p
    y = g - mu_g
    var_x = float(np.sum(x * x)) / n
    cov = (y.T @ x) / n
    u, d, vt = np.linalg.svd(cov)
    rank_x = int(np.sum(np.linalg.svd(x, compute_uv=False) > 1e-9 * max(1.0, np.abs(x).max())))
    rank_y = int(np.sum(np.linalg.svd(y, compute_uv=False) > 1e-9 * max(1.0, np.abs(y).max())))
    if var_x == 0.0 or rank_x < 2 or rank_y < 2:
        raise InputError("degenerate point set: procrustes alignment is underdetermined")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rotation = u @ np.diag(sign) @ vt
    scale = float(np.sum(d * sign)) / var_x
    if scale <= 0.0:
        raise InputError("degenerate point set: nonpositive optimal scale")
    translation = mu_g - scale * (rotation @ mu_p)
    transform = SimilarityTransform(rotation=rotation, scale=scale, translation=translation)
    aligned = Pose3D(coords=transform.apply(p), frame_tag=gt.frame_tag)
    return transform, aligned


def pa_mpjpe(pred: Pose3D, gt: Pose3D) -> float:
    """Mean per-joint distance in mm after optimal similarity alignment."""
    _, aligned = procrustes_align(pred, gt)
    return float(np.mean(np.linalg.norm(aligned.coords - gt.coords, axis=1)))


def pck3d(pred: Pose3D, gt: Pose3D, root_index: int, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Fraction of joints within threshold_mm (inclusive) after root alignment."""
    p, g = _paired(pred, gt)
    if not 0 <= root_index < p.shape[0]:
        raise InputError(f"root index {root_index} out of range")
    if not threshold_mm >= 0:
        raise InputError(f"threshold must be nonnegative, got {threshold_mm}")
    diff = (p - p[root_index]) - (g - g[root_index])
    return float(np.mean(np.linalg.norm(diff, axis=1) <= threshold_mm))


def evaluate_poses(
    preds: list[Pose3D],
    gts: list[Pose3D],
    root_index: int,
    threshold_mm: float = PCK_THRESHOLD_MM,
) -> tuple[list[dict], dict]:
    """Score prediction/ground-truth pairs.

    Returns (per-sample rows, aggregate means); each row carries the sample
    index, mpjpe, pa_mpjpe, and pck3d.
    """
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions vs {len(gts)} ground-truth poses")
    if not preds:
        raise InputError("nothing to evaluate")
    rows = []
    for i, (p, g) in enumerate(zip(preds, gts)):
        rows.append(
            {
                "index": i,
                "mpjpe_mm": mpjpe(p, g, root_index),
                "pa_mpjpe_mm": pa_mpjpe(p, g),
                "pck3d": pck3d(p, g, root_index, threshold_mm),
            }
        )
    aggregate = {
        "mpjpe_mm": float(np.mean([r["mpjpe_mm"] for r in rows])),
        "pa_mpjpe_mm": float(np.mean([r["pa_mpjpe_mm"] for r in rows])),
        "pck3d": float(np.mean([r["pck3d"] for r in rows])),
    }
    return rows, aggregate
