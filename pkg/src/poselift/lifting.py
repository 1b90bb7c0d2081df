"""Residual MLP lifting network with its own backward pass and optimizer.

Architecture: dense (3N -> width), five residual blocks of
[dense -> batch-norm -> relu -> dropout] twice with an additive skip, and a
zero-initialized dense (width -> 3N) head, so a fresh network predicts the
zero pose. Inputs are normalized per joint as (u/W - 1/2, v/W - 1/2,
z_r/depth_scale); targets are root-relative millimeters.

Everything is float64 numpy. The backward pass differentiates through the
batch statistics, dropout uses inverted scaling with seeded masks, and the
optimizer is Adam with a step-decay schedule, so training is bit-for-bit
reproducible from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import json
import struct

import numpy as np

from typing import TYPE_CHECKING, Sequence

from .errors import FormatError, InputError, NumericalError
from .metrics import mpjpe
from .seeding import derive_rng
from .skeleton import Pose3D, Pose25D, Skeleton, normalize_scale

if TYPE_CHECKING:
    from .datagen import SampleRecord

BN_EPS = 1e-8  # small enough that normalized batch variance stays 1 within 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_MAGIC = b"PLNETCK1"


@dataclass
class LiftingNetwork:
    n_joints: int
    width: int
    n_blocks: int
    dropout_rate: float
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]
    mode: str = "eval"

    def __post_init__(self) -> None:
        if self.mode not in ("train", "eval"):
            raise InputError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InputError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        d = 3 * self.n_joints
        expected: dict[str, tuple[int, ...]] = {"in.W": (d, self.width), "in.b": (self.width,)}
        for i in range(self.n_blocks):
            for half in (1, 2):
                expected[f"b{i}.fc{half}.W"] = (self.width, self.width)
                expected[f"b{i}.fc{half}.b"] = (self.width,)
                expected[f"b{i}.bn{half}.gamma"] = (self.width,)
                expected[f"b{i}.bn{half}.beta"] = (self.width,)
        expected["out.W"] = (self.width, d)
        expected["out.b"] = (d,)
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                raise InputError(f"parameter {name} missing or misshaped")
            if not np.all(np.isfinite(self.params[name])):
                raise InputError(f"parameter {name} is not finite")
        for i in range(self.n_blocks):
            for half in (1, 2):
                for stat in ("mean", "var"):
                    name = f"b{i}.bn{half}.{stat}"
                    if name not in self.stats or self.stats[name].shape != (self.width,):
                        raise InputError(f"running statistic {name} missing or misshaped")
            if np.any(self.stats[f"b{i}.bn1.var"] < 0) or np.any(self.stats[f"b{i}.bn2.var"] < 0):
                raise InputError("running variance must be nonnegative")

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def stat_names(self) -> list[str]:
        return sorted(self.stats)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    dropout_rate: float = 0.25
    lr_decay_epoch: int = 17
    lr_decay_factor: float = 0.1
    bn_momentum: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.batch_size < 2 or self.epochs < 1:
            raise InputError("learning rate must be >= 0, batch size >= 2, epochs >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InputError("dropout rate must be in [0, 1)")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise InputError("lr decay factor must be in (0, 1]")


def init_network(
    n_joints: int,
    seed: int,
    width: int = 1024,
    n_blocks: int = 5,
    dropout_rate: float = 0.25,
) -> LiftingNetwork:
    """Seed-deterministic initialization.

    Hidden dense weights are uniform(-b, b) with b = sqrt(6 / fan_in); biases
    zero; batch-norm scale 1 and shift 0; the output layer is all zero so the
    initial forward pass is the zero pose.
    """
    if n_joints < 1:
        raise InputError(f"need at least one joint, got {n_joints}")
    rng = derive_rng(seed, "lifting-init")
    d = 3 * n_joints

    def dense(fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    params: dict[str, np.ndarray] = {"in.W": dense(d, width), "in.b": np.zeros(width)}
    stats: dict[str, np.ndarray] = {}
    for i in range(n_blocks):
        for half in (1, 2):
            params[f"b{i}.fc{half}.W"] = dense(width, width)
            params[f"b{i}.fc{half}.b"] = np.zeros(width)
            params[f"b{i}.bn{half}.gamma"] = np.ones(width)
            params[f"b{i}.bn{half}.beta"] = np.zeros(width)
            stats[f"b{i}.bn{half}.mean"] = np.zeros(width)
            stats[f"b{i}.bn{half}.var"] = np.ones(width)
    params["out.W"] = np.zeros((width, d))
    params["out.b"] = np.zeros(d)
    return LiftingNetwork(
        n_joints=n_joints,
        width=width,
        n_blocks=n_blocks,
        dropout_rate=dropout_rate,
        params=params,
        stats=stats,
    )


def flatten_input(pose: Pose25D, image_width: float) -> np.ndarray:
    """Normalize a 2.5D pose into the network's 3N input layout."""
    if not image_width > 0:
        raise InputError(f"image width must be positive, got {image_width}")
    out = np.empty(3 * pose.n_joints, dtype=np.float64)
    out[0::3] = pose.uv[:, 0] / image_width - 0.5
    out[1::3] = pose.uv[:, 1] / image_width - 0.5
    out[2::3] = pose.z / pose.depth_scale
    return out


def flatten_target(pose: Pose3D, root_index: int) -> np.ndarray:
    """Root-relative target coordinates, flattened to 3N mm values."""
    if not 0 <= root_index < pose.n_joints:
        raise InputError(f"root index {root_index} out of range")
    rel = pose.coords - pose.coords[root_index]
    return rel.reshape(-1).astype(np.float64)


def training_arrays(
    records: Sequence["SampleRecord"],
    skel: Skeleton,
    depth_scale: float = 1000.0,
    normalize_geodesic: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack dataset records into (inputs, targets) arrays for train().

    Inputs come from each record's 2.5D projection; targets are the
    root-relative camera-space pose. With normalize_geodesic the target pose
    is first rescaled so its neck-to-knee geodesic length matches the
    canonical reference, removing subject scale from the regression target.
    """
    if not records:
        raise InputError("need at least one record")
    xs, ys = [], []
    for rec in records:
        pose25 = Pose25D(uv=rec.pose2d.coords, z=rec.z_root_relative, depth_scale=depth_scale)
        xs.append(flatten_input(pose25, float(rec.camera.width)))
        target = rec.pose3d_camera
        if normalize_geodesic:
            target = normalize_scale(target, skel)
        ys.append(flatten_target(target, skel.root_index))
    return np.stack(xs), np.stack(ys)


def unflatten_pose(vector: np.ndarray) -> Pose3D:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.size % 3:
        raise InputError(f"flat pose must have 3N entries, got shape {vector.shape}")
    return Pose3D(coords=vector.reshape(-1, 3), frame_tag="root_relative")


def loss_pose(pred: Pose3D | np.ndarray, gt: Pose3D | np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error over joints: (1/N) sum |gt - pred|, with subgradient.

    The gradient w.r.t. pred is sign(pred - gt)/N, defined as 0 at ties.
    """
    p = pred.coords if isinstance(pred, Pose3D) else np.asarray(pred, dtype=np.float64)
    g = gt.coords if isinstance(gt, Pose3D) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
    n = p.shape[0] if p.ndim == 2 else p.size // 3
    diff = p - g
    return float(np.sum(np.abs(diff)) / n), np.sign(diff) / n


def _batch(x: np.ndarray, n_joints: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != 3 * n_joints:
        raise InputError(f"expected (B, {3 * n_joints}) inputs, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("network inputs must be finite")
    return x


def _bn_train(a: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, dict]:
    mu = a.mean(axis=0)
    centered = a - mu
    var = np.mean(centered * centered, axis=0)  # biased, matches the backward pass
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = centered * inv
    return gamma * xhat + beta, {"a": a, "mu": mu, "var": var, "inv": inv, "xhat": xhat}


def _bn_backward(dout: np.ndarray, cache: dict, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, mu, inv, xhat = cache["a"], cache["mu"], cache["inv"], cache["xhat"]
    b = a.shape[0]
    dgamma = np.sum(dout * xhat, axis=0)
    dbeta = np.sum(dout, axis=0)
    dxhat = dout * gamma
    centered = a - mu
    dvar = np.sum(dxhat * centered, axis=0) * (-0.5) * inv**3
    dmu = -inv * np.sum(dxhat, axis=0) + dvar * (-2.0 / b) * np.sum(centered, axis=0)
    da = dxhat * inv + dvar * (2.0 / b) * centered + dmu / b
    return da, dgamma, dbeta


def _forward_train(
    net: LiftingNetwork,
    x: np.ndarray,
    dropout_rng: np.random.Generator | None,
    update_stats: bool = False,
    bn_momentum: float = 0.1,
) -> tuple[np.ndarray, dict]:
    """Train-mode forward with caches for the backward pass."""
    x = _batch(x, net.n_joints)
    if x.shape[0] < 2:
        raise InputError("batch norm needs a batch of at least 2 samples in train mode")
    if net.dropout_rate > 0.0 and dropout_rng is None:
        raise InputError("train-mode forward with dropout needs an rng")
    p = net.params
    cache: dict = {"x": x, "blocks": []}
    h = x @ p["in.W"] + p["in.b"]
    for i in range(net.n_blocks):
        blk: dict = {"h_in": h}
        d_prev = h
        for half in (1, 2):
            a = d_prev @ p[f"b{i}.fc{half}.W"] + p[f"b{i}.fc{half}.b"]
            bn_out, bn_cache = _bn_train(a, p[f"b{i}.bn{half}.gamma"], p[f"b{i}.bn{half}.beta"])
            if update_stats:
                m = bn_momentum
                net.stats[f"b{i}.bn{half}.mean"] = (1 - m) * net.stats[f"b{i}.bn{half}.mean"] + m * bn_cache["mu"]
                net.stats[f"b{i}.bn{half}.var"] = (1 - m) * net.stats[f"b{i}.bn{half}.var"] + m * bn_cache["var"]
            r = np.maximum(bn_out, 0.0)
            if net.dropout_rate > 0.0:
                mask = (dropout_rng.random(r.shape) >= net.dropout_rate) / (1.0 - net.dropout_rate)
            else:
                mask = None
            d = r * mask if mask is not None else r
            blk[f"in{half}"] = d_prev
            blk[f"bn{half}"] = bn_cache
            blk[f"relu_in{half}"] = bn_out
            blk[f"mask{half}"] = mask
            d_prev = d
        h = blk["h_in"] + d_prev
        cache["blocks"].append(blk)
    cache["h_final"] = h
    y = h @ p["out.W"] + p["out.b"]
    return y, cache


def forward(
    net: LiftingNetwork,
    x: np.ndarray,
    mode: str | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Run the network on (B, 3N) or (3N,) inputs; returns matching shape.

    Eval mode is a pure function of the parameters and input (running
    statistics, no dropout); train mode uses batch statistics and seeded
    dropout masks.
    """
    mode = mode or net.mode
    if mode == "train":
        single = np.asarray(x).ndim == 1
        y, _ = _forward_train(net, x, dropout_rng)
        return y[0] if single else y
    if mode != "eval":
        raise InputError(f"unknown mode {mode!r}")
    xb = _batch(x, net.n_joints)
    p = net.params
    h = xb @ p["in.W"] + p["in.b"]
    for i in range(net.n_blocks):
        d_prev = h
        for half in (1, 2):
            a = d_prev @ p[f"b{i}.fc{half}.W"] + p[f"b{i}.fc{half}.b"]
            inv = 1.0 / np.sqrt(net.stats[f"b{i}.bn{half}.var"] + BN_EPS)
            xhat = (a - net.stats[f"b{i}.bn{half}.mean"]) * inv
            bn_out = p[f"b{i}.bn{half}.gamma"] * xhat + p[f"b{i}.bn{half}.beta"]
            d_prev = np.maximum(bn_out, 0.0)
        h = h + d_prev
    y = h @ p["out.W"] + p["out.b"]
    return y[0] if np.asarray(x).ndim == 1 else y


def predict_pose3d(net: LiftingNetwork, pose: Pose25D, image_width: float) -> Pose3D:
    """Eval-mode forward from a 2.5D pose to a root-relative 3D pose."""
    return unflatten_pose(forward(net, flatten_input(pose, image_width), mode="eval"))


def _backprop(net: LiftingNetwork, cache: dict, dy: np.ndarray) -> dict[str, np.ndarray]:
    p = net.params
    grads: dict[str, np.ndarray] = {}
    grads["out.W"] = cache["h_final"].T @ dy
    grads["out.b"] = dy.sum(axis=0)
    dh = dy @ p["out.W"].T
    for i in reversed(range(net.n_blocks)):
        blk = cache["blocks"][i]
        dd = dh  # gradient into the block's non-residual branch output
        for half in (2, 1):
            if blk[f"mask{half}"] is not None:
                dr = dd * blk[f"mask{half}"]
            else:
                dr = dd
            dbn_out = dr * (blk[f"relu_in{half}"] > 0.0)
            da, dgamma, dbeta = _bn_backward(dbn_out, blk[f"bn{half}"], p[f"b{i}.bn{half}.gamma"])
            grads[f"b{i}.bn{half}.gamma"] = dgamma
            grads[f"b{i}.bn{half}.beta"] = dbeta
            grads[f"b{i}.fc{half}.W"] = blk[f"in{half}"].T @ da
            grads[f"b{i}.fc{half}.b"] = da.sum(axis=0)
            dd = da @ p[f"b{i}.fc{half}.W"].T
        dh = dh + dd  # residual: skip path plus branch path
    grads["in.W"] = cache["x"].T @ dh
    grads["in.b"] = dh.sum(axis=0)
    return grads


def backward(
    net: LiftingNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean pose loss over the batch and its gradient for every parameter."""
    x = _batch(inputs, net.n_joints)
    t = _batch(targets, net.n_joints)
    if x.shape[0] != t.shape[0]:
        raise InputError(f"{x.shape[0]} inputs vs {t.shape[0]} targets")
    y, cache = _forward_train(net, x, dropout_rng)
    b = x.shape[0]
    diff = y - t
    loss = float(np.sum(np.abs(diff)) / (net.n_joints * b))
    dy = np.sign(diff) / (net.n_joints * b)
    return loss, _backprop(net, cache, dy)


@dataclass
class _AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - ADAM_BETA1**self.t
        correction2 = 1.0 - ADAM_BETA2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m += (1.0 - ADAM_BETA1) * (g - m)
            v += (1.0 - ADAM_BETA2) * (g * g - v)
            mhat = m / correction1
            vhat = v / correction2
            params[name] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def train(
    net: LiftingNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
) -> tuple[LiftingNetwork, list[dict]]:
    """Adam training loop, deterministic given cfg.seed.

    inputs and targets are (M, 3N) arrays (see flatten_input and
    flatten_target). Returns the trained network and one history row per
    epoch: {"epoch", "lr", "train_loss", "train_mpjpe"}. Raises
    NumericalError with the epoch index if the loss stops being finite.
    """
    x = _batch(inputs, net.n_joints)
    t = _batch(targets, net.n_joints)
    if x.shape[0] != t.shape[0]:
        raise InputError(f"{x.shape[0]} inputs vs {t.shape[0]} targets")
    m = x.shape[0]
    if m < 2:
        raise InputError("training needs at least 2 samples")
    net.dropout_rate = float(cfg.dropout_rate)
    net.mode = "train"
    shuffle_rng = derive_rng(cfg.seed, "train-shuffle")
    dropout_rng = derive_rng(cfg.seed, "train-dropout")
    adam = _AdamState()
    history: list[dict] = []
    target_poses = [unflatten_pose(row) for row in t]
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * (cfg.lr_decay_factor if epoch >= cfg.lr_decay_epoch else 1.0)
        order = shuffle_rng.permutation(m)
        chunks = [order[i : i + cfg.batch_size] for i in range(0, m, cfg.batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
            chunks.pop()
        epoch_losses = []
        for idx in chunks:
            xb, tb = x[idx], t[idx]
            yb, cache = _forward_train(net, xb, dropout_rng, update_stats=True, bn_momentum=cfg.bn_momentum)
            diff = yb - tb
            loss = float(np.sum(np.abs(diff)) / (net.n_joints * len(idx)))
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch}: loss={loss}")
            dy = np.sign(diff) / (net.n_joints * len(idx))
            grads = _backprop(net, cache, dy)
            adam.step(net.params, grads, lr)
            epoch_losses.append(loss)
        preds = forward(net, x, mode="eval")
        if not np.all(np.isfinite(preds)):
            # batch losses can stay finite while the optimizer step blows
            # the parameters up; catch that here rather than downstream
            raise NumericalError(f"training diverged at epoch {epoch}: non-finite predictions")
        train_mpjpe = float(
            np.mean([mpjpe(unflatten_pose(row), gt, 0) for row, gt in zip(preds, target_poses)])
        )
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(epoch_losses)),
                "train_mpjpe": train_mpjpe,
            }
        )
    net.mode = "eval"
    return net, history


def save_checkpoint(path: str | Path, net: LiftingNetwork, extra: dict | None = None) -> None:
    """Versioned binary checkpoint: magic, JSON architecture header, f64 payload."""
    header = {
        "format_version": 1,
        "n_joints": net.n_joints,
        "width": net.width,
        "n_blocks": net.n_blocks,
        "dropout_rate": net.dropout_rate,
        "param_order": net.param_names(),
        "stat_order": net.stat_names(),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    for name in header["param_order"]:
        parts.append(np.ascontiguousarray(net.params[name], dtype="<f8").tobytes())
    for name in header["stat_order"]:
        parts.append(np.ascontiguousarray(net.stats[name], dtype="<f8").tobytes())
    from .tensorio import atomic_write_bytes

    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[LiftingNetwork, dict]:
    """Read a checkpoint back; returns (network, extra header fields)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    if len(blob) < len(CHECKPOINT_MAGIC) + 4 or blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if len(blob) < offset + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from None
    offset += header_len
    if header.get("format_version") != 1:
        raise FormatError(f"{path}: unsupported version {header.get('format_version')}")
    n_joints, width, n_blocks = header["n_joints"], header["width"], header["n_blocks"]
    shapes: dict[str, tuple[int, ...]] = {"in.W": (3 * n_joints, width), "in.b": (width,)}
    for i in range(n_blocks):
        for half in (1, 2):
            shapes[f"b{i}.fc{half}.W"] = (width, width)
            shapes[f"b{i}.fc{half}.b"] = (width,)
            shapes[f"b{i}.bn{half}.gamma"] = (width,)
            shapes[f"b{i}.bn{half}.beta"] = (width,)
    shapes["out.W"] = (width, 3 * n_joints)
    shapes["out.b"] = (3 * n_joints,)
    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    for name in header["param_order"]:
        if name not in shapes:
            raise FormatError(f"{path}: unexpected parameter {name}")
        count = int(np.prod(shapes[name]))
        if len(blob) < offset + 8 * count:
            raise FormatError(f"{path}: truncated payload at {name}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shapes[name]).copy()
        offset += 8 * count
    for name in header["stat_order"]:
        count = width
        if len(blob) < offset + 8 * count:
            raise FormatError(f"{path}: truncated payload at {name}")
        stats[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        offset += 8 * count
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    try:
        net = LiftingNetwork(
            n_joints=n_joints,
            width=width,
            n_blocks=n_blocks,
            dropout_rate=float(header["dropout_rate"]),
            params=params,
            stats=stats,
        )
    except (KeyError, InputError) as exc:
        raise FormatError(f"{path}: inconsistent checkpoint: {exc}") from None
    return net, header.get("extra", {})
