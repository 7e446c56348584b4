"""Mesh and skeleton types, unit-cube normalization, surface sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised when a mesh or skeleton violates its structural invariants."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        if len(v) < 3 or len(f) < 1:
            raise GeometryError("mesh needs at least 3 vertices and 1 face")
        if not np.all(np.isfinite(v)):
            raise GeometryError("mesh vertices must be finite")
        if f.min() < 0 or f.max() >= len(v):
            raise GeometryError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise GeometryError("degenerate face (repeated vertex index)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joints (j x 3), bones (b x 2 joint-index pairs), optional root and parent map."""

    joints: np.ndarray
    bones: np.ndarray
    root: int | None = None
    parent: dict[int, int] | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        j = _frozen(self.joints, np.float64).reshape(-1, 3)
        b = _frozen(self.bones, np.int64).reshape(-1, 2)
        if len(j) < 2 or len(b) < 1:
            raise GeometryError("skeleton needs at least 2 joints and 1 bone")
        if not np.all(np.isfinite(j)):
            raise GeometryError("joint positions must be finite")
        if b.min() < 0 or b.max() >= len(j):
            raise GeometryError("bone index out of range")
        if np.any(b[:, 0] == b[:, 1]):
            raise GeometryError("self-loop bone")
        keys = {tuple(sorted(map(int, pair))) for pair in b}
        if len(keys) != len(b):
            raise GeometryError("duplicate bone")
        root = self.root
        if root is not None:
            root = int(root)
            if not 0 <= root < len(j):
                raise GeometryError("root index out of range")
        parent = self.parent
        if parent is not None:
            parent = {int(k): int(v) for k, v in parent.items()}
            _check_forest(parent, len(j), root)
        if self.names is not None and len(self.names) != len(j):
            raise GeometryError("joint name count does not match joint count")
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "bones", b)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "parent", parent)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def num_bones(self) -> int:
        return len(self.bones)

    def with_joints(self, joints) -> "Skeleton":
        return Skeleton(joints, self.bones, self.root, self.parent, self.names)

    def topological_order(self) -> list[int]:
        """Joints ordered so each parent precedes its children (requires a parent map)."""
        if self.parent is None:
            raise GeometryError("skeleton has no parent map")
        children: dict[int, list[int]] = {}
        for c, p in self.parent.items():
            children.setdefault(p, []).append(c)
        roots = [i for i in range(self.num_joints) if i not in self.parent]
        order, queue = [], deque(sorted(roots))
        while queue:
            u = queue.popleft()
            order.append(u)
            queue.extend(sorted(children.get(u, [])))
        return order


def _check_forest(parent: dict[int, int], n: int, root: int | None) -> None:
    for c, p in parent.items():
        if not (0 <= c < n and 0 <= p < n) or c == p:
            raise GeometryError("invalid parent map entry")
    if root is not None and root in parent:
        raise GeometryError("root must not have a parent")
    for start in parent:
        seen = set()
        u = start
        while u in parent:
            if u in seen:
                raise GeometryError("parent map contains a cycle")
            seen.add(u)
            u = parent[u]


def parent_map_from_root(bones: np.ndarray, n_joints: int, root: int) -> dict[int, int]:
    """Orient an undirected bone tree away from ``root``.

    Raises if the bone graph has a cycle or a joint unreachable from the root.
    """
    adj: dict[int, list[int]] = {i: [] for i in range(n_joints)}
    for a, b in bones:
        adj[int(a)].append(int(b))
        adj[int(b)].append(int(a))
    if not adj[root]:
        raise GeometryError("root joint has no incident bone")
    parent: dict[int, int] = {}
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v == parent.get(u):
                continue
            if v in seen:
                raise GeometryError("bone graph contains a cycle")
            seen.add(v)
            parent[v] = u
            queue.append(v)
    if len(seen) != n_joints:
        raise GeometryError("joints disconnected from the root")
    return parent


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps model units into the unit cube: ``p_norm = (p - center) * scale``."""

    center: tuple[float, float, float]
    scale: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.center)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationTransform":
        return cls(tuple(float(c) for c in d["center"]), float(d["scale"]))


def normalize_to_unit_cube(mesh: Mesh, skeleton: Skeleton | None = None):
    """Center the mesh bounding box at the origin and scale its longest side to 1.

    The same isotropic transform is applied to ``skeleton``. Returns
    ``(mesh, skeleton, transform)``.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise GeometryError("mesh has zero extent")
    center = 0.5 * (lo + hi)
    tf = NormalizationTransform(tuple(float(c) for c in center), 1.0 / extent)
    out_mesh = Mesh(np.clip(tf.apply(mesh.vertices), -0.5, 0.5), mesh.faces)
    out_skel = skeleton.with_joints(tf.apply(skeleton.joints)) if skeleton is not None else None
    return out_mesh, out_skel, tf


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None
    source_vertex: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        p = _frozen(self.points, np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = _frozen(self.normals, np.float64).reshape(-1, 3)
            if len(n) != len(p):
                raise GeometryError("normal count does not match point count")
            object.__setattr__(self, "normals", n)
        sv = _frozen(self.source_vertex, np.int64).reshape(-1)
        if len(sv) and len(sv) != len(p):
            raise GeometryError("source_vertex count does not match point count")
        object.__setattr__(self, "source_vertex", sv)

    def __len__(self) -> int:
        return len(self.points)


def nearest_vertex(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Index of the nearest vertex per point; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    out = np.empty(len(points), dtype=np.int64)
    chunk = max(1, (1 << 21) // max(1, len(vertices)))
    for lo in range(0, len(points), chunk):
        diff = points[lo:lo + chunk, None, :] - vertices[None, :, :]
        d = (diff * diff).sum(axis=-1)
        out[lo:lo + chunk] = np.argmin(d, axis=1)
    return out


def sample_surface(mesh: Mesh, count: int, seed: int) -> PointCloud:
    """Area-weighted uniform samples with face normals and nearest-vertex tags."""
    if count <= 0:
        raise GeometryError("sample count must be positive")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise GeometryError("mesh has zero surface area")
    face = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    t = mesh.triangles[face]
    pts = (
        (1.0 - r1)[:, None] * t[:, 0]
        + (r1 * (1.0 - r2))[:, None] * t[:, 1]
        + (r1 * r2)[:, None] * t[:, 2]
    )
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), np.array([0.0, 0.0, 1.0]))
    return PointCloud(pts, n, nearest_vertex(pts, mesh.vertices))


def nearest_vertex_transfer(points: PointCloud, per_vertex) -> np.ndarray:
    """Row ``i`` of the result is row ``source_vertex[i]`` of ``per_vertex``."""
    data = np.asarray(per_vertex)
    if data.ndim != 2:
        raise GeometryError("per-vertex data must be a matrix")
    sv = points.source_vertex
    if len(sv) != len(points):
        raise GeometryError("point cloud has no source_vertex annotation")
    if len(sv) and sv.max() >= len(data):
        raise GeometryError("source_vertex index exceeds per-vertex row count")
    return data[sv]
