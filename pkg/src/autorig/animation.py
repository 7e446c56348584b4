"""Linear blend skinning, random poses and the rigged-asset container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Mesh, NormalizationTransform, Skeleton


@dataclass(frozen=True, eq=False)
class RiggedAsset:
    mesh: Mesh
    skeleton: Skeleton
    skin: np.ndarray  # (v, j) rows on the simplex
    transform: NormalizationTransform | None = None

    def __post_init__(self):
        w = np.array(self.skin, dtype=np.float64)
        if w.shape != (len(self.mesh.vertices), self.skeleton.num_joints):
            raise GeometryError("skin matrix must be vertices x joints")
        if np.any(w < -1e-12) or not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
            raise GeometryError("skin rows must lie on the simplex")
        w.setflags(write=False)
        object.__setattr__(self, "skin", w)

    def with_skin(self, skin) -> "RiggedAsset":
        return RiggedAsset(self.mesh, self.skeleton, skin, self.transform)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-space rigid transform per joint: ``x -> rotations[j] @ x + translations[j]``."""

    rotations: np.ndarray  # (j, 3, 3)
    translations: np.ndarray  # (j, 3)
    angles: np.ndarray | None = None  # local rotation angle per joint, degrees
    axes: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.rotations, dtype=np.float64)
        t = np.asarray(self.translations, dtype=np.float64)
        if r.ndim != 3 or r.shape[1:] != (3, 3) or t.shape != (len(r), 3):
            raise GeometryError("pose needs (j,3,3) rotations and (j,3) translations")
        eye = np.broadcast_to(np.eye(3), r.shape)
        if not np.allclose(r @ r.transpose(0, 2, 1), eye, atol=1e-9):
            raise GeometryError("pose rotations must be orthonormal")
        if not np.allclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise GeometryError("pose rotations must have determinant +1")
        object.__setattr__(self, "rotations", r)
        object.__setattr__(self, "translations", t)

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        return cls(np.tile(np.eye(3), (n_joints, 1, 1)), np.zeros((n_joints, 3)))

    @classmethod
    def rigid(cls, n_joints: int, rotation, translation) -> "Pose":
        r = np.asarray(rotation, dtype=np.float64)
        return cls(np.tile(r, (n_joints, 1, 1)), np.tile(np.asarray(translation, float), (n_joints, 1)))

    @classmethod
    def translate(cls, n_joints: int, offsets: dict[int, np.ndarray]) -> "Pose":
        t = np.zeros((n_joints, 3))
        for j, off in offsets.items():
            t[j] = off
        return cls(np.tile(np.eye(3), (n_joints, 1, 1)), t)


def lbs_deform(asset: RiggedAsset, pose: Pose) -> Mesh:
    """``v' = sum_j w_vj (R_j v + t_j)``."""
    if len(pose.rotations) != asset.skeleton.num_joints:
        raise GeometryError("pose joint count does not match skeleton")
    v = asset.mesh.vertices
    w = asset.skin
    # (j, v, 3) per-joint transformed copies, blended by weight
    per_joint = np.einsum("jab,vb->jva", pose.rotations, v) + pose.translations[:, None, :]
    out = np.einsum("vj,jva->va", w, per_joint)
    return Mesh(out, asset.mesh.faces)


def axis_angle_matrix(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


def _about(rotation: np.ndarray, pivot: np.ndarray):
    """Rotation about ``pivot`` as (R, t)."""
    return rotation, pivot - rotation @ pivot


def pose_from_local(skeleton: Skeleton, local_rotations) -> Pose:
    """World transforms from per-joint local rotations about rest positions.

    With a parent map the rotations compose down the hierarchy; otherwise each
    joint rotates independently.
    """
    n = skeleton.num_joints
    rots = np.empty((n, 3, 3))
    trans = np.empty((n, 3))
    if skeleton.parent is None:
        for j in range(n):
            rots[j], trans[j] = _about(local_rotations[j], skeleton.joints[j])
        return Pose(rots, trans)
    for j in skeleton.topological_order():
        r, t = _about(local_rotations[j], skeleton.joints[j])
        p = skeleton.parent.get(j)
        if p is None:
            rots[j], trans[j] = r, t
        else:
            rots[j] = rots[p] @ r
            trans[j] = rots[p] @ t + trans[p]
    return Pose(rots, trans)


def random_poses(skeleton: Skeleton, count: int = 10, max_angle: float = 30.0, seed: int = 0) -> list[Pose]:
    """Per joint: a uniformly random axis and an angle uniform in [-max_angle, max_angle] degrees."""
    rng = np.random.default_rng(seed)
    n = skeleton.num_joints
    poses = []
    for _ in range(count):
        axes = rng.normal(size=(n, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        angles = rng.uniform(-max_angle, max_angle, size=n)
        local = np.stack([axis_angle_matrix(a, np.deg2rad(t)) for a, t in zip(axes, angles)])
        pose = pose_from_local(skeleton, local)
        poses.append(Pose(pose.rotations, pose.translations, angles, axes))
    return poses


def weight_colors(skin, joint: int) -> np.ndarray:
    """Per-vertex RGB ramp (blue -> red) for one joint's weights."""
    w = np.clip(np.asarray(skin)[:, joint], 0.0, 1.0)
    return np.stack([w, np.zeros_like(w), 1.0 - w], axis=1)
