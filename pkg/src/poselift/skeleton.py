"""Canonical skeleton, pose value types, and geodesic scale normalization.

The skeleton is a rooted kinematic tree: N named joints, N-1 (parent, child)
bones, and a distinguished geodesic path from the neck down to a knee whose
accumulated bone length defines the scale-normalization reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

GEODESIC_REFERENCE_MM = 1077.0


@dataclass(frozen=True)
class Skeleton:
    """Immutable kinematic tree over named joints.

    Attributes:
        joint_names: joint identifiers, length N.
        bones: (parent_index, child_index) pairs, length N-1, forming a tree.
        root_index: index of the root joint.
        geodesic_path: joint indices from the neck to a knee; consecutive
            entries must be connected by a bone.
    """

    joint_names: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]
    root_index: int
    geodesic_path: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.joint_names)
        if n < 2:
            raise InputError("skeleton needs at least two joints")
        if len(self.bones) != n - 1:
            raise InputError(f"expected {n - 1} bones for {n} joints, got {len(self.bones)}")
        if not 0 <= self.root_index < n:
            raise InputError(f"root index {self.root_index} out of range for {n} joints")
        children = [c for _, c in self.bones]
        for p, c in self.bones:
            if not (0 <= p < n and 0 <= c < n):
                raise InputError(f"bone ({p}, {c}) references a missing joint")
        if sorted(children) != sorted(set(range(n)) - {self.root_index}):
            raise InputError("every non-root joint must appear as a child exactly once")
        # N-1 edges with unique children and full reachability from the root
        # is exactly the rooted-tree condition.
        adjacency: dict[int, list[int]] = {}
        for p, c in self.bones:
            adjacency.setdefault(p, []).append(c)
        seen = {self.root_index}
        frontier = [self.root_index]
        while frontier:
            nxt = []
            for j in frontier:
                for c in adjacency.get(j, []):
                    if c not in seen:
                        seen.add(c)
                        nxt.append(c)
            frontier = nxt
        if len(seen) != n:
            raise InputError("bones do not connect all joints to the root")
        if len(self.geodesic_path) < 2:
            raise InputError("geodesic path needs at least two joints")
        bone_sets = {frozenset(b) for b in self.bones}
        for a, b in zip(self.geodesic_path, self.geodesic_path[1:]):
            if frozenset((a, b)) not in bone_sets:
                raise InputError(f"geodesic path step ({a}, {b}) is not a bone")
        first = self.joint_names[self.geodesic_path[0]].lower()
        last = self.joint_names[self.geodesic_path[-1]].lower()
        if "neck" not in first or "knee" not in last:
            raise InputError("geodesic path must run from the neck to a knee")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)


@dataclass
class Pose3D:
    """Joint positions in millimeters, either camera-space or root-relative."""

    coords: np.ndarray  # (N, 3) float64
    frame_tag: str = "camera"

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise InputError(f"pose3d coords must be (N, 3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise InputError("pose3d coords must be finite")
        if self.frame_tag not in ("camera", "root_relative"):
            raise InputError(f"unknown frame tag {self.frame_tag!r}")

    @property
    def n_joints(self) -> int:
        return self.coords.shape[0]


@dataclass
class Pose2D:
    """Joint positions in crop-frame pixels plus per-joint visibility."""

    coords: np.ndarray  # (N, 2) float64
    visibility: np.ndarray | None = None  # (N,) bool

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise InputError(f"pose2d coords must be (N, 2), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise InputError("pose2d coords must be finite")
        if self.visibility is None:
            self.visibility = np.ones(self.coords.shape[0], dtype=bool)
        else:
            self.visibility = np.asarray(self.visibility, dtype=bool)
            if self.visibility.shape != (self.coords.shape[0],):
                raise InputError("visibility length must match the joint count")

    @property
    def n_joints(self) -> int:
        return self.coords.shape[0]


@dataclass
class Pose25D:
    """Per-joint image coordinates plus root-relative metric depth.

    uv is in pixels, z is z_root - z_joint in millimeters, and depth_scale is
    the half-range of depth mapped into the volume cube downstream.
    """

    uv: np.ndarray  # (N, 2) float64
    z: np.ndarray  # (N,) float64
    depth_scale: float = 1000.0

    def __post_init__(self) -> None:
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.uv.ndim != 2 or self.uv.shape[1] != 2:
            raise InputError(f"uv must be (N, 2), got {self.uv.shape}")
        if self.z.shape != (self.uv.shape[0],):
            raise InputError("z length must match the joint count")
        if not (np.all(np.isfinite(self.uv)) and np.all(np.isfinite(self.z))):
            raise InputError("2.5d pose values must be finite")
        if not self.depth_scale > 0:
            raise InputError(f"depth_scale must be positive, got {self.depth_scale}")

    @property
    def n_joints(self) -> int:
        return self.uv.shape[0]


_DEFAULT_JOINTS = (
    "pelvis", "spine", "neck", "head", "head_top",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
)

_DEFAULT_BONES = (
    (0, 1), (1, 2), (2, 3), (3, 4),
    (2, 5), (5, 7), (7, 9),
    (2, 6), (6, 8), (8, 10),
    (0, 11), (11, 13), (13, 15),
    (0, 12), (12, 14), (14, 16),
)


def default_skeleton() -> Skeleton:
    """Return the canonical 17-joint skeleton.

    Pelvis-rooted tree with torso chain pelvis-spine-neck-head-head_top, arms
    hanging off the neck, legs off the pelvis. The geodesic path runs
    neck -> spine -> pelvis -> r_hip -> r_knee.
    """
    return Skeleton(
        joint_names=_DEFAULT_JOINTS,
        bones=_DEFAULT_BONES,
        root_index=0,
        geodesic_path=(2, 1, 0, 12, 14),
    )


def geodesic_distance(pose: Pose3D, skel: Skeleton) -> float:
    """Accumulated Euclidean length of the skeleton's geodesic path, in mm."""
    if pose.n_joints != skel.n_joints:
        raise InputError(f"pose has {pose.n_joints} joints, skeleton has {skel.n_joints}")
    path = np.asarray(skel.geodesic_path)
    segments = pose.coords[path[1:]] - pose.coords[path[:-1]]
    return float(np.sum(np.linalg.norm(segments, axis=1)))


def normalize_scale(pose: Pose3D, skel: Skeleton, reference_mm: float = GEODESIC_REFERENCE_MM) -> Pose3D:
    """Rescale a pose so its geodesic distance equals reference_mm.

    Raises InputError for degenerate poses whose geodesic distance is zero.
    """
    distance = geodesic_distance(pose, skel)
    if distance <= 0.0:
        raise InputError("cannot normalize a pose with zero geodesic distance")
    return Pose3D(coords=pose.coords * (reference_mm / distance), frame_tag=pose.frame_tag)


def skeleton_to_json_dict(skel: Skeleton) -> dict:
    return {
        "joint_names": list(skel.joint_names),
        "bones": [list(b) for b in skel.bones],
        "root": skel.root_index,
        "geodesic_path": list(skel.geodesic_path),
    }


def skeleton_from_json_dict(doc: dict) -> Skeleton:
    try:
        return Skeleton(
            joint_names=tuple(str(n) for n in doc["joint_names"]),
            bones=tuple((int(p), int(c)) for p, c in doc["bones"]),
            root_index=int(doc["root"]),
            geodesic_path=tuple(int(j) for j in doc["geodesic_path"]),
        )
    except KeyError as exc:
        raise InputError(f"skeleton document missing key {exc}") from None
