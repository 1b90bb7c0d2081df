"""Differentiable soft-argmax decoding of heatmaps and depth volumes.

A grid is softmax-normalized (with max subtraction for stability) and the
expected coordinate under that distribution is returned. Ground-truth
Gaussians live in [0, 1], so a pre-softmax gain sharpens the distribution
enough for expectations to track peaks; predicted logits can use gain 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import InputError
from .skeleton import Pose25D

if TYPE_CHECKING:
    from .depthvol import DepthVolume

DEFAULT_GAIN = 50.0


def _checked(h: np.ndarray, ndim: int) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != ndim:
        raise InputError(f"expected a {ndim}d grid, got shape {h.shape}")
    if h.size == 0:
        raise InputError("empty grid")
    if not np.all(np.isfinite(h)):
        raise InputError("grid values must be finite")
    return h


def _softmax(h: np.ndarray) -> np.ndarray:
    e = np.exp(h - h.max())
    return e / e.sum()


@dataclass
class NormalizedHeatmap:
    """Softmax-normalized grid: strictly positive entries summing to one."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.size == 0:
            raise InputError("empty grid")
        # mathematically every entry is positive, but entries 700+ nats below
        # the peak underflow to exactly 0 in double precision, so only
        # nonnegativity can be enforced here
        if not np.all(self.data >= 0.0):
            raise InputError("normalized heatmap entries must be nonnegative")
        if abs(float(self.data.sum()) - 1.0) > 1e-12:
            raise InputError("normalized heatmap must sum to 1")


def softmax_normalize(h: np.ndarray) -> NormalizedHeatmap:
    """Softmax over the whole grid (any rank), stable under large values."""
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise InputError("empty grid")
    if not np.all(np.isfinite(h)):
        raise InputError("grid values must be finite")
    return NormalizedHeatmap(data=_softmax(h))


def soft_argmax_2d(h: np.ndarray) -> tuple[float, float]:
    """Expected (u, v) pixel coordinate under the softmax-normalized map.

    Coordinates are 0-indexed pixel centers; the result always lies inside
    [0, W-1] x [0, H-1].
    """
    h = _checked(h, 2)
    p = _softmax(h)
    hh, ww = h.shape
    u = float(np.sum(p.sum(axis=0) * np.arange(ww, dtype=np.float64)))
    v = float(np.sum(p.sum(axis=1) * np.arange(hh, dtype=np.float64)))
    return u, v


def soft_argmax_2d_jacobian(h: np.ndarray) -> np.ndarray:
    """d(u, v)/d(grid) for soft_argmax_2d, shape (2, H, W).

    With s the normalized map and u the expectation, du/dh_q = s_q (x_q - u);
    same form for v.
    """
    h = _checked(h, 2)
    p = _softmax(h)
    hh, ww = h.shape
    xs = np.arange(ww, dtype=np.float64)[None, :]
    ys = np.arange(hh, dtype=np.float64)[:, None]
    u = float(np.sum(p * xs))
    v = float(np.sum(p * ys))
    return np.stack([p * (xs - u), p * (ys - v)])


def soft_argmax_channels(volume_slice: np.ndarray) -> tuple[float, float, float]:
    """Expected (u, v, c) under the jointly normalized (C, H, W) slice."""
    g = _checked(volume_slice, 3)
    p = _softmax(g)
    cc, hh, ww = g.shape
    u = float(np.sum(p.sum(axis=(0, 1)) * np.arange(ww, dtype=np.float64)))
    v = float(np.sum(p.sum(axis=(0, 2)) * np.arange(hh, dtype=np.float64)))
    c = float(np.sum(p.sum(axis=(1, 2)) * np.arange(cc, dtype=np.float64)))
    return u, v, c


def soft_argmax_channels_jacobian(volume_slice: np.ndarray) -> np.ndarray:
    """d(u, v, c)/d(slice) for soft_argmax_channels, shape (3, C, H, W)."""
    g = _checked(volume_slice, 3)
    p = _softmax(g)
    cc, hh, ww = g.shape
    xs = np.arange(ww, dtype=np.float64)[None, None, :]
    ys = np.arange(hh, dtype=np.float64)[None, :, None]
    cs = np.arange(cc, dtype=np.float64)[:, None, None]
    u = float(np.sum(p * xs))
    v = float(np.sum(p * ys))
    c = float(np.sum(p * cs))
    return np.stack([p * (xs - u), p * (ys - v), p * (cs - c)])


def assemble_pose25d(volume: "DepthVolume", gain: float = DEFAULT_GAIN) -> Pose25D:
    """Decode a full volume into a 2.5D pose via per-joint soft-argmax.

    The raw grid is multiplied by gain before the softmax; the expected
    channel c maps to depth z = (c / C - 1/2) * 2 * depth_scale, i.e. the
    left edge of the channel's depth bin.
    """
    data = np.asarray(volume.data, dtype=np.float64)
    if data.ndim != 4:
        raise InputError(f"volume must be (N, C, H, W), got {data.shape}")
    n, cc, _, _ = data.shape
    uv = np.empty((n, 2), dtype=np.float64)
    z = np.empty(n, dtype=np.float64)
    for j in range(n):
        u, v, c = soft_argmax_channels(gain * data[j])
        uv[j] = (u, v)
        z[j] = (c / cc - 0.5) * (2.0 * volume.depth_scale)
    return Pose25D(uv=uv, z=z, depth_scale=volume.depth_scale)
