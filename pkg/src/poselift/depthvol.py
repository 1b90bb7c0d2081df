"""Depth-centric volume codec plus the volumetric and ordinal depth losses.

Each joint owns a C x H x W slice; its 2D Gaussian heatmap is written into
the channel indexed by the discretized root-relative depth, all other
channels stay zero. Joints may share a channel index because no summation
happens across joints. Depth decodes back through a channel soft-argmax to
the left edge of the winning bin, so a ground-truth encoding reconstructs
z_r to within one channel width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .heatmap2d import render_joint_heatmaps
from .skeleton import Pose25D, Pose2D
from .softargmax import DEFAULT_GAIN, soft_argmax_channels


@dataclass
class DepthVolume:
    """Per-joint depth-indexed heatmap volume."""

    data: np.ndarray  # (N, C, H, W) float64, values in [0, 1]
    depth_scale: float  # mm, half-range of z_r mapped into the cube

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise InputError(f"volume must be (N, C, H, W), got {self.data.shape}")
        if self.data.shape[1] < 2:
            raise InputError(f"need at least 2 channels, got {self.data.shape[1]}")
        if not np.all(np.isfinite(self.data)):
            raise InputError("volume values must be finite")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise InputError("volume values must lie in [0, 1]")
        if not self.depth_scale > 0:
            raise InputError(f"depth_scale must be positive, got {self.depth_scale}")

    @property
    def n_joints(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass
class OrdinalLogits:
    """Per-pixel threshold probabilities P^c, strictly inside (0, 1)."""

    data: np.ndarray  # (C, H, W)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise InputError(f"ordinal probabilities must be (C, H, W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InputError("ordinal probabilities must be finite")
        if self.data.size and not (self.data.min() > 0.0 and self.data.max() < 1.0):
            raise InputError("ordinal probabilities must lie strictly inside (0, 1)")


def discretize_depth(z_r: float, depth_scale: float, C: int) -> int:
    """Map root-relative depth to a channel index.

    Returns clamp(floor((z_r / (2 depth_scale) + 1/2) * C), 0, C-1):
    -depth_scale lands on 0, 0 on C/2, and +depth_scale clamps to C-1.
    """
    if not depth_scale > 0:
        raise InputError(f"depth_scale must be positive, got {depth_scale}")
    if C < 2:
        raise InputError(f"need at least 2 channels, got {C}")
    if not math.isfinite(z_r):
        raise InputError(f"z_r must be finite, got {z_r}")
    idx = math.floor((z_r / (2.0 * depth_scale) + 0.5) * C)
    return int(min(max(idx, 0), C - 1))


def encode_volume(pose: Pose25D, w: int, h: int, C: int, sigma: float) -> DepthVolume:
    """Place each joint's 2D Gaussian at its discretized depth channel.

    Summing the result over the channel axis reproduces the plain joint
    heatmap stack bit for bit, since each slice has exactly one live channel.
    """
    if C < 2:
        raise InputError(f"need at least 2 channels, got {C}")
    maps = render_joint_heatmaps(Pose2D(coords=pose.uv), w, h, sigma)
    data = np.zeros((pose.n_joints, C, h, w), dtype=np.float64)
    for j in range(pose.n_joints):
        channel = discretize_depth(float(pose.z[j]), pose.depth_scale, C)
        data[j, channel] = maps.data[j]
    return DepthVolume(data=data, depth_scale=pose.depth_scale)


def _volume_values(x: DepthVolume | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, DepthVolume) else np.asarray(x, dtype=np.float64)


def loss_l3d(pred: DepthVolume | np.ndarray, gt: DepthVolume | np.ndarray) -> tuple[float, np.ndarray]:
    """Summed squared error over all voxels and its gradient w.r.t. pred."""
    p = _volume_values(pred)
    g = _volume_values(gt)
    if p.shape != g.shape:
        raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
    diff = p - g
    return float(np.sum(diff * diff)), 2.0 * diff


def loss_ordinal_depth(
    probs: OrdinalLogits | np.ndarray,
    gt_depth: np.ndarray,
    mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Negated ordinal log-likelihood of per-pixel depth labels.

    With 0-indexed labels d and threshold probabilities P^c ~ P(d > c), each
    masked pixel contributes -[sum_{c<d} log P^c + sum_{c>=d} log(1 - P^c)],
    so predictions concentrated farther from the true channel pay more.
    Returns the scalar and d(loss)/d(P): -1/P^c for c < d, 1/(1 - P^c) for
    c >= d, zero at unmasked pixels.
    """
    p = probs.data if isinstance(probs, OrdinalLogits) else np.asarray(probs, dtype=np.float64)
    if p.ndim != 3:
        raise InputError(f"ordinal probabilities must be (C, H, W), got {p.shape}")
    if p.size == 0 or not np.all(np.isfinite(p)) or p.min() <= 0.0 or p.max() >= 1.0:
        raise InputError("ordinal probabilities must lie strictly inside (0, 1)")
    c, hh, ww = p.shape
    labels = np.asarray(gt_depth)
    maskb = np.asarray(mask, dtype=bool)
    if labels.shape != (hh, ww) or maskb.shape != (hh, ww):
        raise InputError(f"labels and mask must be ({hh}, {ww})")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError("depth labels must be integers")
    if labels.min() < 0 or labels.max() > c - 1:
        raise InputError(f"depth labels must lie in [0, {c - 1}]")
    below = np.arange(c)[:, None, None] < labels[None, :, :]
    active = maskb[None, :, :]
    loss = -float(np.sum(np.where(below, np.log(p), np.log1p(-p)) * active))
    grad = np.where(below, -1.0 / p, 1.0 / (1.0 - p)) * active
    return loss, grad


def decode_depth(volume: DepthVolume, gain: float = DEFAULT_GAIN) -> np.ndarray:
    """Recover per-joint depth in mm from a volume via channel soft-argmax.

    z = (expected_channel / C - 1/2) * 2 * depth_scale. All-zero slices have
    no depth information and raise.
    """
    c = volume.channels
    z = np.empty(volume.n_joints, dtype=np.float64)
    for j in range(volume.n_joints):
        volume_slice = volume.data[j]
        if not volume_slice.any():
            raise InputError(f"joint {j}: all-zero slice has undefined depth")
        _, _, channel = soft_argmax_channels(gain * volume_slice)
        z[j] = (channel / c - 0.5) * (2.0 * volume.depth_scale)
    return z
