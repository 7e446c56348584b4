"""Procedural rigged shapes with exact ground-truth skinning.

Each asset is a tree skeleton (chain, star, biped or quadruped) wrapped in a
union of capsules, meshed by marching cubes on the capsule-union distance
field. Ground-truth weights are a Gaussian falloff over each vertex's two
nearest bones, credited to the bones' parent joints.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from skimage.measure import marching_cubes

from .animation import RiggedAsset
from .geometry import Mesh, Skeleton, normalize_to_unit_cube, parent_map_from_root, sample_surface
from .io import atomic_write, dumps, emit_rig, format_obj, points_to_bytes
from .sequencer import N_BINS, quantize, tokenize

TEMPLATES = ("chain", "star", "biped", "quadruped")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    template: str = "chain"
    joint_range: tuple[int, int] = (3, 10)
    limb_length: tuple[float, float] = (0.12, 0.25)
    radius: float = 0.045  # fraction of the skeleton's longest extent
    seed: int = 0
    mesh_resolution: float = 2.2  # grid cells per capsule radius

    def validate(self) -> None:
        lo, hi = self.joint_range
        if self.template not in TEMPLATES:
            raise SynthError(f"unknown template {self.template!r}")
        if not 3 <= lo <= hi <= 55:
            raise SynthError("joint range must lie within [3, 55]")
        if not 0 < self.limb_length[0] <= self.limb_length[1]:
            raise SynthError("bad limb length range")
        if not 0 < self.radius < 0.2:
            raise SynthError("radius must be in (0, 0.2)")


def _direction(rng, base, spread):
    d = np.asarray(base, dtype=np.float64) + rng.normal(scale=spread, size=3)
    return d / np.linalg.norm(d)


class _Builder:
    def __init__(self, rng, lengths):
        self.rng = rng
        self.lengths = lengths
        self.joints = [np.zeros(3)]
        self.bones: list[tuple[int, int]] = []

    def limb(self, start: int, count: int, base_dir, spread=0.25):
        cur = start
        for _ in range(count):
            d = _direction(self.rng, base_dir, spread)
            p = self.joints[cur] + d * self.rng.uniform(*self.lengths)
            self.joints.append(p)
            self.bones.append((cur, len(self.joints) - 1))
            cur = len(self.joints) - 1
        return cur


def _split(rng, total: int, parts: int, minimum: int = 1) -> list[int]:
    """Random composition of ``total`` into ``parts`` pieces, each >= minimum."""
    base = [minimum] * parts
    for _ in range(total - minimum * parts):
        base[int(rng.integers(parts))] += 1
    return base


def _skeleton_graph(spec: SynthSpec, rng) -> tuple[np.ndarray, list[tuple[int, int]]]:
    lo, hi = spec.joint_range
    b = _Builder(rng, spec.limb_length)
    t = spec.template
    if t == "chain":
        n = int(rng.integers(lo, hi + 1))
        b.limb(0, n - 1, (0, 0, 1), spread=0.35)
    elif t == "star":
        n = int(rng.integers(max(lo, 4), max(lo, 4, hi) + 1))
        arms = int(rng.integers(3, min(6, n - 1) + 1))
        for k, count in enumerate(_split(rng, n - 1, arms)):
            ang = 2 * np.pi * k / arms
            b.limb(0, count, (np.cos(ang), np.sin(ang), 0.3 * rng.normal()), spread=0.15)
    elif t == "biped":
        n = int(rng.integers(max(lo, 9), max(lo, 9, hi) + 1))
        spine, arm_l, arm_r, leg_l, leg_r = _split(rng, n - 1 - 1, 5)
        top = b.limb(0, spine, (0, 0, 1), spread=0.1)
        b.limb(top, 1, (0, 0, 1), spread=0.05)  # head
        b.limb(top, arm_l, (1, 0, -0.3), spread=0.2)
        b.limb(top, arm_r, (-1, 0, -0.3), spread=0.2)
        b.limb(0, leg_l, (0.3, 0, -1), spread=0.1)
        b.limb(0, leg_r, (-0.3, 0, -1), spread=0.1)
    elif t == "quadruped":
        n = int(rng.integers(max(lo, 11), max(lo, 11, hi) + 1))
        spine, neck, tail, l1, l2, l3, l4 = _split(rng, n - 1, 7)
        front = b.limb(0, spine, (0, 1, 0), spread=0.1)
        b.limb(front, neck, (0, 0.6, 0.8), spread=0.15)
        b.limb(0, tail, (0, -1, 0.2), spread=0.2)
        b.limb(front, l1, (0.35, 0, -1), spread=0.08)
        b.limb(front, l2, (-0.35, 0, -1), spread=0.08)
        b.limb(0, l3, (0.35, 0, -1), spread=0.08)
        b.limb(0, l4, (-0.35, 0, -1), spread=0.08)
    return np.array(b.joints), b.bones


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(p, s) distance from each point to each segment a[s]-b[s]."""
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    denom = np.maximum((ab * ab).sum(-1), 1e-18)
    t = np.clip((ap * ab[None]).sum(-1) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def _capsule_mesh(joints, bones, radius, cells_per_radius) -> Mesh:
    a = joints[bones[:, 0]]
    b = joints[bones[:, 1]]
    step = radius / cells_per_radius
    lo = joints.min(axis=0) - radius - 2 * step
    hi = joints.max(axis=0) + radius + 2 * step
    axes = [np.arange(lo[k], hi[k] + step, step) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    sdf = np.empty(len(grid))
    chunk = 65536
    for s in range(0, len(grid), chunk):
        sdf[s:s + chunk] = _segment_distance(grid[s:s + chunk], a, b).min(axis=1) - radius
    vol = sdf.reshape(len(axes[0]), len(axes[1]), len(axes[2]))
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=(step, step, step))
    verts = verts + lo
    faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])]
    used = np.unique(faces)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    return Mesh(verts[used], remap[faces])


def analytic_skin(vertices, skeleton: Skeleton, radius: float) -> np.ndarray:
    """Gaussian falloff ``exp(-d^2 / r^2)`` over the two nearest bones, renormalized.

    A bone's weight is credited to its parent joint.
    """
    parent = skeleton.parent or {}
    oriented = []
    for a, b in skeleton.bones:
        a, b = int(a), int(b)
        oriented.append((b, a) if parent.get(a) == b else (a, b))
    oriented = np.array(oriented)
    d = _segment_distance(np.asarray(vertices), skeleton.joints[oriented[:, 0]], skeleton.joints[oriented[:, 1]])
    k = min(2, d.shape[1])
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    dn = np.take_along_axis(d, nearest, axis=1)
    w = np.exp(-(dn**2 - dn[:, :1] ** 2) / radius**2)
    w /= w.sum(axis=1, keepdims=True)
    out = np.zeros((len(d), skeleton.num_joints))
    owners = oriented[nearest, 0]
    for c in range(k):
        np.add.at(out, (np.arange(len(d)), owners[:, c]), w[:, c])
    return out


def _distinct_bins(joints: np.ndarray) -> bool:
    q = quantize(np.clip(joints, -0.5, 0.5))
    pair = np.linalg.norm(joints[:, None] - joints[None], axis=-1)
    np.fill_diagonal(pair, np.inf)
    return len(np.unique(q, axis=0)) == len(q) and pair.min() > 4.0 / N_BINS


def synth_skeleton(spec: SynthSpec) -> Skeleton:
    """Template skeleton alone, fitted to the unit cube by its own joint bounds."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    for _ in range(64):
        joints, bones = _skeleton_graph(spec, rng)
        lo, hi = joints.min(axis=0), joints.max(axis=0)
        # rounding can push the extreme joints a hair past the cube faces
        joints = np.clip((joints - 0.5 * (lo + hi)) / float((hi - lo).max()), -0.5, 0.5)
        if _distinct_bins(joints):
            bones_arr = np.array(bones, dtype=np.int64)
            return Skeleton(joints, bones_arr, 0, parent_map_from_root(bones_arr, len(joints), 0))
    raise SynthError("could not place a non-degenerate skeleton for this spec")


def generate(spec: SynthSpec) -> RiggedAsset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    for _ in range(64):
        joints, bones = _skeleton_graph(spec, rng)
        bones_arr = np.array(bones, dtype=np.int64)
        extent = float((joints.max(axis=0) - joints.min(axis=0)).max())
        radius = spec.radius * extent
        raw_mesh = _capsule_mesh(joints, bones_arr, radius, spec.mesh_resolution)
        parent = parent_map_from_root(bones_arr, len(joints), 0)
        skel = Skeleton(joints, bones_arr, root=0, parent=parent)
        mesh, skel, tf = normalize_to_unit_cube(raw_mesh, skel)
        # reject layouts where two joints share a token bin or nearly touch
        if _distinct_bins(skel.joints):
            skin = analytic_skin(mesh.vertices, skel, radius * tf.scale)
            return RiggedAsset(mesh, skel, skin, tf)
    raise SynthError("could not place a non-degenerate skeleton for this spec")


def default_specs(count: int, seed: int = 0, joint_range=(3, 10)) -> list[SynthSpec]:
    """Cycle through the templates with consecutive seeds."""
    out = []
    for i in range(count):
        t = TEMPLATES[i % len(TEMPLATES)]
        lo, hi = joint_range
        if t == "biped":
            lo, hi = max(lo, 9), max(hi, 9)
        elif t == "quadruped":
            lo, hi = max(lo, 11), max(hi, 11)
        out.append(SynthSpec(template=t, joint_range=(lo, hi), seed=seed + i))
    return out


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_corpus(specs: list[SynthSpec], output_dir, point_count: int = 8192) -> dict:
    """Write meshes, rigs, point clouds and token lines for each spec plus a manifest.

    An empty spec list writes nothing and returns an empty manifest.
    """
    manifest = {"version": 1, "assets": []}
    if not specs:
        return manifest
    out = Path(output_dir)
    lines = {"spatial": [], "hierarchical": []}
    for i, spec in enumerate(specs):
        asset = generate(spec)
        stem = f"asset_{i:04d}"
        files = {
            "mesh": (f"{stem}.obj", format_obj(asset.mesh).encode()),
            "rig": (f"{stem}.rig.json", emit_rig(asset.skeleton, asset.skin, asset.transform).encode()),
            "points": (f"{stem}.points.npz",
                       points_to_bytes(sample_surface(asset.mesh, point_count, spec.seed))),
        }
        entry = {"id": stem, "spec": asdict(spec), "files": {}, "sha256": {}}
        for key, (name, data) in files.items():
            atomic_write(out / name, data)
            entry["files"][key] = name
            entry["sha256"][key] = _sha256(data)
        for mode in lines:
            lines[mode].append(tokenize(asset.skeleton, mode).to_line())
            entry.setdefault("token_line", {})[mode] = i
        manifest["assets"].append(entry)
    for mode, ls in lines.items():
        data = "".join(l + "\n" for l in ls).encode()
        atomic_write(out / f"tokens_{mode}.txt", data)
        manifest.setdefault("token_files", {})[mode] = {"file": f"tokens_{mode}.txt", "sha256": _sha256(data)}
    atomic_write(out / "manifest.json", dumps(manifest))
    return manifest
