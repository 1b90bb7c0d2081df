"""Ground-truth joint and bone Gaussian heatmaps plus the 2D heatmap loss.

Joint maps put an unnormalized Gaussian (peak 1) at each visible joint; bone
maps apply the same Gaussian to the squared distance from each pixel to the
closed bone segment, so a degenerate bone reduces exactly to a joint map.
Pixel centers sit at integer coordinates and the full grid is evaluated with
no truncation radius, which keeps the rendering exactly reproducible by a
per-pixel brute-force evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .skeleton import Pose2D, Skeleton


@dataclass
class HeatmapStack:
    """K single-channel grids (joints or bones) with their rendering sigma."""

    data: np.ndarray  # (K, H, W) float64, values in [0, 1]
    width: int
    height: int
    sigma: float

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise InputError(f"heatmap stack must be (K, H, W), got {self.data.shape}")
        if self.data.shape[1:] != (self.height, self.width):
            raise InputError(
                f"stack shape {self.data.shape} does not match {self.height}x{self.width}"
            )
        if self.width < 1 or self.height < 1:
            raise InputError("heatmap dimensions must be positive")
        if not np.all(np.isfinite(self.data)):
            raise InputError("heatmap values must be finite")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise InputError("heatmap values must lie in [0, 1]")
        if not self.sigma > 0:
            raise InputError(f"sigma must be positive, got {self.sigma}")


def _check_render_args(w: int, h: int, sigma: float) -> None:
    if w < 1 or h < 1:
        raise InputError(f"grid must be at least 1x1, got {w}x{h}")
    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")


def render_joint_heatmaps(pose: Pose2D, w: int, h: int, sigma: float) -> HeatmapStack:
    """Render one Gaussian map per joint.

    Each pixel p gets exp(-||p - joint||^2 / (2 sigma^2)); invisible joints
    produce an all-zero map.
    """
    _check_render_args(w, h, sigma)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    two_sigma_sq = 2.0 * sigma * sigma
    data = np.zeros((pose.n_joints, h, w), dtype=np.float64)
    for j in range(pose.n_joints):
        if not pose.visibility[j]:
            continue
        u, v = pose.coords[j]
        dx2 = (xs - u) ** 2
        dy2 = (ys - v) ** 2
        # dx2 + dy2 ordering matches the scalar formula; addition commutes bitwise.
        data[j] = np.exp(-(dx2[None, :] + dy2[:, None]) / two_sigma_sq)
    return HeatmapStack(data=data, width=w, height=h, sigma=float(sigma))


def render_bone_heatmaps(pose: Pose2D, skel: Skeleton, w: int, h: int, sigma: float) -> HeatmapStack:
    """Render one Gaussian map per bone using squared point-to-segment distance.

    Pixel value is exp(-D2 / (2 sigma^2)) where D2 is the squared Euclidean
    distance from the pixel to the closed segment between the bone's joints,
    so every pixel on the segment reads 1. Bones with an invisible endpoint
    produce an all-zero map.
    """
    _check_render_args(w, h, sigma)
    if pose.n_joints != skel.n_joints:
        raise InputError(f"pose has {pose.n_joints} joints, skeleton has {skel.n_joints}")
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    px = np.broadcast_to(xs[None, :], (h, w))
    py = np.broadcast_to(ys[:, None], (h, w))
    two_sigma_sq = 2.0 * sigma * sigma
    data = np.zeros((len(skel.bones), h, w), dtype=np.float64)
    for k, (a, b) in enumerate(skel.bones):
        if not (pose.visibility[a] and pose.visibility[b]):
            continue
        ax, ay = pose.coords[a]
        bx, by = pose.coords[b]
        abx = bx - ax
        aby = by - ay
        denom = abx * abx + aby * aby
        apx = px - ax
        apy = py - ay
        if denom == 0.0:
            d2 = apx * apx + apy * apy
        else:
            t = np.clip((apx * abx + apy * aby) / denom, 0.0, 1.0)
            dx = apx - t * abx
            dy = apy - t * aby
            d2 = dx * dx + dy * dy
        data[k] = np.exp(-d2 / two_sigma_sq)
    return HeatmapStack(data=data, width=w, height=h, sigma=float(sigma))


def sigma_schedule(epoch: int, total_epochs: int, sigma_start: float, sigma_end: float) -> float:
    """Linearly shrink sigma from sigma_start (epoch 0) to sigma_end (last epoch)."""
    if total_epochs < 1 or not 0 <= epoch < total_epochs:
        raise InputError(f"epoch {epoch} outside [0, {total_epochs})")
    if not sigma_start >= sigma_end > 0:
        raise InputError("need sigma_start >= sigma_end > 0")
    if total_epochs == 1:
        return float(sigma_start)
    return float(sigma_start + (sigma_end - sigma_start) * (epoch / (total_epochs - 1)))


def _stack_values(x: HeatmapStack | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, HeatmapStack) else np.asarray(x, dtype=np.float64)


def loss_l2d(pred: HeatmapStack | np.ndarray, gt: HeatmapStack | np.ndarray) -> tuple[float, np.ndarray]:
    """Summed squared error over all maps and its gradient w.r.t. pred.

    Returns (sum((gt - pred)^2), 2 (pred - gt)). Raw arrays are accepted so
    externally predicted tensors need not satisfy the [0, 1] stack invariant.
    """
    p = _stack_values(pred)
    g = _stack_values(gt)
    if p.shape != g.shape:
        raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
    diff = p - g
    return float(np.sum(diff * diff)), 2.0 * diff
