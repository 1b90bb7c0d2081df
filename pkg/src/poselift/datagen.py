"""Synthetic pose and camera data for desk-scale training and roundtrip tests.

Poses are grown along the kinematic tree: every bone keeps its configured
length exactly and points along its canonical direction perturbed inside a
hard cone, which keeps samples roughly anatomical and bounds the depth extent
of any pose. With the default camera and bone set, |z_r| stays well inside
one meter, so depth discretization never clamps on generated data.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .seeding import derive_rng
from .skeleton import Pose2D, Pose3D, Skeleton, default_skeleton
from .tensorio import atomic_write_text

CONE_HALF_ANGLE_DEG = 35.0

# Canonical bone lengths (mm), in default-skeleton bone order. The geodesic
# path (spine-neck, pelvis-spine, pelvis-r_hip, r_hip-r_knee) sums to 1077.
DEFAULT_BONE_LENGTHS_MM = np.array([
    233.0,  # pelvis-spine
    255.0,  # spine-neck
    115.0,  # neck-head
    90.0,   # head-head_top
    150.0,  # neck-l_shoulder
    280.0,  # l_shoulder-l_elbow
    250.0,  # l_elbow-l_wrist
    150.0,  # neck-r_shoulder
    280.0,  # r_shoulder-r_elbow
    250.0,  # r_elbow-r_wrist
    135.0,  # pelvis-l_hip
    454.0,  # l_hip-l_knee
    446.0,  # l_knee-l_ankle
    135.0,  # pelvis-r_hip
    454.0,  # r_hip-r_knee
    446.0,  # r_knee-r_ankle
])

# Canonical unit directions per bone (x right, y down, z toward the camera
# axis): torso and head grow upward, limbs hang down, hips and shoulders
# spread laterally. All z components are zero so the cone angle alone bounds
# each bone's depth extent.
DEFAULT_BONE_DIRECTIONS = np.array([
    (0.0, -1.0, 0.0),
    (0.0, -1.0, 0.0),
    (0.0, -1.0, 0.0),
    (0.0, -1.0, 0.0),
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 1.0, 0.0),
    (-1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 1.0, 0.0),
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 1.0, 0.0),
    (-1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 1.0, 0.0),
])


@dataclass(frozen=True)
class Camera:
    """Pinhole camera over a pixel grid."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")


def default_camera() -> Camera:
    return Camera(fx=1146.0, fy=1146.0, cx=127.5, cy=127.5, width=256, height=256)


@dataclass
class SampleRecord:
    """One synthetic subject: camera-space 3D pose plus its 2.5D projection."""

    pose3d_camera: Pose3D
    pose2d: Pose2D
    z_root_relative: np.ndarray
    camera: Camera
    subject_scale: float


@dataclass
class GenerationConfig:
    skeleton: Skeleton = field(default_factory=default_skeleton)
    camera: Camera = field(default_factory=default_camera)
    bone_lengths_mm: np.ndarray = field(default_factory=lambda: DEFAULT_BONE_LENGTHS_MM.copy())
    scale_jitter: bool = False
    jitter_range: tuple[float, float] = (0.8, 1.2)
    depth_range_mm: tuple[float, float] = (3000.0, 6000.0)
    center_jitter_px: float = 30.0


def _tangent_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    aux = np.array([1.0, 0.0, 0.0]) if abs(direction[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(direction, aux)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(direction, e1)


def sample_pose(
    skel: Skeleton,
    rng_seed: int | np.random.Generator,
    bone_lengths_mm: np.ndarray,
) -> Pose3D:
    """Grow a random pose along the kinematic tree.

    Each bone takes its exact configured length; its direction is the
    canonical direction tilted by a clipped tangent-plane Gaussian, never
    more than CONE_HALF_ANGLE_DEG away. The root lands at a random position
    near the origin.
    """
    lengths = np.asarray(bone_lengths_mm, dtype=np.float64)
    if lengths.shape != (len(skel.bones),):
        raise InputError(f"need {len(skel.bones)} bone lengths, got {lengths.shape}")
    if not np.all(lengths > 0):
        raise InputError("bone lengths must be positive")
    if skel.bones == default_skeleton().bones:
        canonical = DEFAULT_BONE_DIRECTIONS
    else:
        # custom trees get isotropic placeholder directions, still cone-jittered
        canonical = np.tile(np.array([[0.0, 1.0, 0.0]]), (len(skel.bones), 1))
    rng = np.random.default_rng(rng_seed)
    tan_max = math.tan(math.radians(CONE_HALF_ANGLE_DEG))
    coords = np.zeros((skel.n_joints, 3), dtype=np.float64)
    coords[skel.root_index] = rng.uniform(-200.0, 200.0, size=3)
    # bones are stored parent-first for the default tree, but walk in BFS
    # order so custom orderings work too
    remaining = list(range(len(skel.bones)))
    placed = {skel.root_index}
    while remaining:
        progressed = False
        for idx in list(remaining):
            parent, child = skel.bones[idx]
            if parent not in placed:
                continue
            base = canonical[idx]
            e1, e2 = _tangent_basis(base)
            offset = rng.normal(scale=0.35, size=2)
            norm = float(np.hypot(offset[0], offset[1]))
            if norm > tan_max:
                offset *= tan_max / norm
            direction = base + offset[0] * e1 + offset[1] * e2
            direction /= np.linalg.norm(direction)
            coords[child] = coords[parent] + lengths[idx] * direction
            placed.add(child)
            remaining.remove(idx)
            progressed = True
        if not progressed:
            raise InputError("bone list is not a tree reachable from the root")
    return Pose3D(coords=coords, frame_tag="camera")


def project(pose: Pose3D, cam: Camera, root_index: int = 0) -> tuple[Pose2D, np.ndarray]:
    """Pinhole projection plus root-relative depth (z_root - z_joint)."""
    z = pose.coords[:, 2]
    if np.any(z <= 0.0):
        raise InputError("all joints must lie strictly in front of the camera")
    if not 0 <= root_index < pose.n_joints:
        raise InputError(f"root index {root_index} out of range")
    u = cam.fx * pose.coords[:, 0] / z + cam.cx
    v = cam.fy * pose.coords[:, 1] / z + cam.cy
    z_r = z[root_index] - z
    return Pose2D(coords=np.stack([u, v], axis=1)), z_r


def _generate_sample(seed: int, index: int, cfg: GenerationConfig) -> SampleRecord:
    rng = derive_rng(seed, "sample", index)
    scale = float(rng.uniform(*cfg.jitter_range)) if cfg.scale_jitter else 1.0
    pose = sample_pose(cfg.skeleton, rng, cfg.bone_lengths_mm * scale)
    root_z = float(rng.uniform(*cfg.depth_range_mm))
    du, dv = rng.uniform(-cfg.center_jitter_px, cfg.center_jitter_px, size=2)
    target_root = np.array([root_z * du / cfg.camera.fx, root_z * dv / cfg.camera.fy, root_z])
    coords = pose.coords + (target_root - pose.coords[cfg.skeleton.root_index])
    placed = Pose3D(coords=coords, frame_tag="camera")
    pose2d, z_r = project(placed, cfg.camera, cfg.skeleton.root_index)
    return SampleRecord(
        pose3d_camera=placed,
        pose2d=pose2d,
        z_root_relative=z_r,
        camera=cfg.camera,
        subject_scale=scale,
    )


def camera_to_json_dict(cam: Camera) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "w": cam.width, "h": cam.height}


def sample_to_json_dict(record: SampleRecord) -> dict:
    return {
        "pose3d": record.pose3d_camera.coords.tolist(),
        "pose2d": record.pose2d.coords.tolist(),
        "z_r": record.z_root_relative.tolist(),
        "camera": camera_to_json_dict(record.camera),
        "subject_scale": record.subject_scale,
    }


def sample_from_json_dict(doc: dict) -> SampleRecord:
    try:
        cam = doc["camera"]
        camera = Camera(
            fx=float(cam["fx"]), fy=float(cam["fy"]),
            cx=float(cam["cx"]), cy=float(cam["cy"]),
            width=int(cam["w"]), height=int(cam["h"]),
        )
        return SampleRecord(
            pose3d_camera=Pose3D(np.array(doc["pose3d"], dtype=np.float64), frame_tag="camera"),
            pose2d=Pose2D(np.array(doc["pose2d"], dtype=np.float64)),
            z_root_relative=np.array(doc["z_r"], dtype=np.float64),
            camera=camera,
            subject_scale=float(doc["subject_scale"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad sample record: {exc}") from None


def _config_fingerprint(cfg: GenerationConfig) -> tuple[dict, str]:
    doc = {
        "skeleton": {
            "joint_names": list(cfg.skeleton.joint_names),
            "bones": [list(b) for b in cfg.skeleton.bones],
            "root": cfg.skeleton.root_index,
            "geodesic_path": list(cfg.skeleton.geodesic_path),
        },
        "camera": camera_to_json_dict(cfg.camera),
        "bone_lengths_mm": np.asarray(cfg.bone_lengths_mm, dtype=float).tolist(),
        "scale_jitter": bool(cfg.scale_jitter),
        "jitter_range": list(cfg.jitter_range),
        "depth_range_mm": list(cfg.depth_range_mm),
        "center_jitter_px": float(cfg.center_jitter_px),
    }
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return doc, hashlib.blake2s(canonical.encode("utf-8")).hexdigest()


def generate_dataset(
    n: int,
    seed: int,
    out_dir: str | Path,
    cfg: GenerationConfig | None = None,
) -> tuple[Path, Path]:
    """Write n sample records as JSONL plus a manifest; fully seed-determined.

    Returns (samples_path, manifest_path). Regeneration with the same seed
    and config produces byte-identical files.
    """
    if n < 1:
        raise InputError(f"need at least one sample, got {n}")
    cfg = cfg or GenerationConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(n):
        record = _generate_sample(seed, i, cfg)
        lines.append(json.dumps(sample_to_json_dict(record), sort_keys=True, separators=(",", ":")))
    samples_path = out / "samples.jsonl"
    atomic_write_text(samples_path, "\n".join(lines) + "\n")
    cfg_doc, cfg_hash = _config_fingerprint(cfg)
    manifest = {
        "format": "poselift-dataset-v1",
        "seed": seed,
        "n": n,
        "config": cfg_doc,
        "config_hash": cfg_hash,
    }
    manifest_path = out / "manifest.json"
    atomic_write_text(manifest_path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return samples_path, manifest_path


def load_dataset(path: str | Path) -> list[SampleRecord]:
    """Read a JSONL dataset; malformed lines report their line number."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"dataset not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid json: {exc}") from None
            try:
                records.append(sample_from_json_dict(doc))
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise FormatError(f"dataset is empty: {path}")
    return records
