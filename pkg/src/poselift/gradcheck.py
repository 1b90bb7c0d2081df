"""Finite-difference verification of every analytic gradient in the package.

Each op gets randomized small instances; trials that sit too close to a
non-differentiable point (ReLU or L1 kinks) are resampled, since central
differences are meaningless across a kink. The harness reports the max
relative error per op so a caller can compare against TOLERANCE.

The sign-flip switch negates the analytic gradients before comparison. It
exists as a negative control: a harness that cannot flag a deliberately
wrong gradient proves nothing when it passes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .depthvol import loss_l3d, loss_ordinal_depth
from .errors import InputError
from .heatmap2d import loss_l2d
from .lifting import _forward_train, backward, init_network, loss_pose
from .seeding import derive_rng
from .softargmax import (
    soft_argmax_2d,
    soft_argmax_2d_jacobian,
    soft_argmax_channels,
    soft_argmax_channels_jacobian,
)

TOLERANCE = 1e-4
DEFAULT_TRIALS = 20
FD_STEP = 1e-5
KINK_MARGIN = 1e-3


def _fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        bumped = x.copy().reshape(-1)
        bumped[i] += step
        hi = f(bumped.reshape(x.shape))
        bumped[i] -= 2.0 * step
        lo = f(bumped.reshape(x.shape))
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def _max_rel(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _check_loss_l2d(rng: np.random.Generator, step: float, flip: bool) -> float:
    pred = rng.uniform(0.0, 1.0, size=(2, 5, 4))
    gt = rng.uniform(0.0, 1.0, size=(2, 5, 4))
    _, grad = loss_l2d(pred, gt)
    if flip:
        grad = -grad
    fd = _fd_gradient(lambda p: loss_l2d(p, gt)[0], pred, step)
    return _max_rel(grad, fd)


def _check_loss_l3d(rng: np.random.Generator, step: float, flip: bool) -> float:
    pred = rng.uniform(0.0, 1.0, size=(2, 3, 4, 5))
    gt = rng.uniform(0.0, 1.0, size=(2, 3, 4, 5))
    _, grad = loss_l3d(pred, gt)
    if flip:
        grad = -grad
    fd = _fd_gradient(lambda p: loss_l3d(p, gt)[0], pred, step)
    return _max_rel(grad, fd)


def _check_loss_ordinal(rng: np.random.Generator, step: float, flip: bool) -> float:
    c, hh, ww = 4, 3, 3
    probs = rng.uniform(0.1, 0.9, size=(c, hh, ww))  # keeps p +- step inside (0, 1)
    labels = rng.integers(0, c, size=(hh, ww))
    mask = rng.random((hh, ww)) < 0.7
    _, grad = loss_ordinal_depth(probs, labels, mask)
    if flip:
        grad = -grad
    fd = _fd_gradient(lambda p: loss_ordinal_depth(p, labels, mask)[0], probs, step)
    return _max_rel(grad, fd)


def _check_loss_pose(rng: np.random.Generator, step: float, flip: bool) -> float:
    n = int(rng.integers(2, 7))
    while True:
        pred = rng.normal(size=(n, 3)) * 10.0
        gt = rng.normal(size=(n, 3)) * 10.0
        if np.min(np.abs(pred - gt)) > KINK_MARGIN:
            break
    _, grad = loss_pose(pred, gt)
    if flip:
        grad = -grad
    fd = _fd_gradient(lambda p: loss_pose(p, gt)[0], pred, step)
    return _max_rel(grad, fd)


def _check_soft_argmax_2d(rng: np.random.Generator, step: float, flip: bool) -> float:
    h = rng.uniform(0.0, 2.0, size=(5, 6))
    r = rng.normal(size=2)
    jac = soft_argmax_2d_jacobian(h)
    grad = np.tensordot(r, jac, axes=1)
    if flip:
        grad = -grad
    fd = _fd_gradient(lambda g: float(np.dot(r, soft_argmax_2d(g))), h, step)
    return _max_rel(grad, fd)


def _check_soft_argmax_channels(rng: np.random.Generator, step: float, flip: bool) -> float:
    g = rng.uniform(0.0, 2.0, size=(3, 4, 5))
    r = rng.normal(size=3)
    jac = soft_argmax_channels_jacobian(g)
    grad = np.tensordot(r, jac, axes=1)
    if flip:
        grad = -grad
    fd = _fd_gradient(lambda q: float(np.dot(r, soft_argmax_channels(q))), g, step)
    return _max_rel(grad, fd)


def _check_lifting(rng: np.random.Generator, step: float, flip: bool) -> float:
    while True:
        net = init_network(2, int(rng.integers(1 << 30)), width=8, n_blocks=1, dropout_rate=0.0)
        net.params["out.W"] = rng.normal(scale=0.5, size=net.params["out.W"].shape)
        net.params["out.b"] = rng.normal(scale=0.1, size=net.params["out.b"].shape)
        x = rng.normal(size=(4, 6))
        t = rng.normal(size=(4, 6)) * 2.0
        y, cache = _forward_train(net, x, None)
        if np.min(np.abs(y - t)) <= KINK_MARGIN:
            continue
        margins = [
            np.min(np.abs(blk[f"relu_in{half}"]))
            for blk in cache["blocks"]
            for half in (1, 2)
        ]
        if min(margins) > KINK_MARGIN:
            break
    _, grads = backward(net, x, t)
    worst = 0.0
    for name in sorted(net.params):
        original = net.params[name].copy()

        def loss_at(candidate: np.ndarray, _name: str = name) -> float:
            net.params[_name] = candidate
            out, _ = _forward_train(net, x, None)
            net.params[_name] = original
            return float(np.sum(np.abs(out - t)) / (net.n_joints * x.shape[0]))

        analytic = -grads[name] if flip else grads[name]
        fd = _fd_gradient(loss_at, original, step)
        worst = max(worst, _max_rel(analytic, fd))
    return worst


CHECKS: dict[str, Callable[[np.random.Generator, float, bool], float]] = {
    "loss_l2d": _check_loss_l2d,
    "loss_l3d": _check_loss_l3d,
    "loss_ordinal": _check_loss_ordinal,
    "loss_pose": _check_loss_pose,
    "soft_argmax_2d": _check_soft_argmax_2d,
    "soft_argmax_channels": _check_soft_argmax_channels,
    "lifting": _check_lifting,
}


def run_gradcheck(
    ops: list[str] | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    step: float = FD_STEP,
    inject_sign_flip: bool = False,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    Returns {op: max error over trials}; compare against TOLERANCE.
    """
    selected = list(CHECKS) if ops is None else list(ops)
    unknown = [op for op in selected if op not in CHECKS]
    if unknown:
        raise InputError(f"unknown gradcheck ops: {', '.join(unknown)} (valid: {', '.join(CHECKS)})")
    if trials < 1:
        raise InputError(f"need at least one trial, got {trials}")
    results: dict[str, float] = {}
    for op in selected:
        rng = derive_rng(seed, f"gradcheck-{op}")
        results[op] = max(CHECKS[op](rng, step, inject_sign_flip) for _ in range(trials))
    return results
