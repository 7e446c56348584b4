"""Volumetric geodesic distances through a voxelized shape, and the priors built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import Mesh, Skeleton

EXTERIOR, SURFACE, INTERIOR = 0, 1, 2
ORIGIN = -0.5
# box half-size inflation so triangles lying on cell faces mark both neighbours
_BOX_SLACK = 1e-7
# sample spacing for line-of-sight tests, as a fraction of the voxel edge
_VISIBILITY_STEP = 0.25


class GeodesicError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    occupancy: np.ndarray  # (r, r, r) uint8 of EXTERIOR / SURFACE / INTERIOR, indexed [x, y, z]

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @property
    def voxel_size(self) -> float:
        return 1.0 / self.resolution

    @property
    def diagonal(self) -> float:
        return self.voxel_size * np.sqrt(3.0)

    @property
    def passable(self) -> np.ndarray:
        return self.occupancy != EXTERIOR

    def cell_of(self, points) -> np.ndarray:
        """Integer cell coordinates containing each point (clamped to the grid)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        c = np.floor((p - ORIGIN) / self.voxel_size).astype(np.int64)
        return np.clip(c, 0, self.resolution - 1)

    def centers(self, cells) -> np.ndarray:
        return ORIGIN + (np.asarray(cells, dtype=np.float64) + 0.5) * self.voxel_size

    def flat(self, cells) -> np.ndarray:
        r = self.resolution
        cells = np.asarray(cells).reshape(-1, 3)
        return (cells[:, 0] * r + cells[:, 1]) * r + cells[:, 2]

    def unflat(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.occupancy.shape), axis=-1)


def voxelize(mesh: Mesh, resolution: int = 64) -> VoxelGrid:
    """Classify cells of the unit cube as surface, interior or exterior.

    Surface cells overlap at least one triangle (separating-axis test).
    Exterior is everything 6-connected to the grid border without crossing the
    surface; the remaining cells are interior.
    """
    if resolution < 8:
        raise GeodesicError("voxel resolution must be at least 8")
    h = 1.0 / resolution
    surface = _kernels.triangle_voxelize(
        mesh.triangles, resolution, ORIGIN, h, 0.5 * h * (1.0 + _BOX_SLACK)
    ).astype(bool)
    labels, _ = ndimage.label(~surface)
    border = np.zeros_like(surface)
    border[[0, -1], :, :] = True
    border[:, [0, -1], :] = True
    border[:, :, [0, -1]] = True
    outside = np.unique(labels[border & ~surface])
    exterior = np.isin(labels, outside[outside > 0])
    occ = np.full(surface.shape, INTERIOR, dtype=np.uint8)
    occ[exterior] = EXTERIOR
    occ[surface] = SURFACE
    return VoxelGrid(occ)


def _snap_cells(grid: VoxelGrid, points: np.ndarray) -> np.ndarray:
    """Containing cell when passable, else the nearest passable cell center (lowest index on ties)."""
    cells = grid.cell_of(points)
    flat = grid.flat(cells)
    passable = grid.passable.ravel()
    bad = np.flatnonzero(~passable[flat])
    if len(bad):
        cand = np.flatnonzero(passable)
        centers = grid.centers(grid.unflat(cand))
        for i in bad:
            diff = centers - points[i]
            d = (diff * diff).sum(axis=1)
            flat[i] = cand[int(np.argmin(d))]
    return flat


@dataclass(frozen=True, eq=False)
class GeodesicField:
    """Per-joint voxel distances plus the vertex-level results derived from them."""

    grid: VoxelGrid
    cell_distance: np.ndarray  # (n, cells) Dijkstra distance per joint
    vertex_cell: np.ndarray  # (v,) flat cell index per vertex
    vertex_offset: np.ndarray  # (v,) |vertex - cell center|
    visible: np.ndarray  # (v, n) straight segment stays inside the solid
    distance: np.ndarray  # (v, n) final volumetric geodesic distance


def geodesic_field(grid: VoxelGrid, mesh: Mesh, skeleton: Skeleton) -> GeodesicField:
    passable = grid.passable
    if not passable.any():
        raise GeodesicError("voxel grid has no surface or interior cells")
    h = grid.voxel_size
    verts = mesh.vertices
    joints = skeleton.joints
    vcell = _snap_cells(grid, verts)
    voff = np.linalg.norm(verts - grid.centers(grid.unflat(vcell)), axis=1)
    jcell = _snap_cells(grid, joints)
    joff = np.linalg.norm(joints - grid.centers(grid.unflat(jcell)), axis=1)
    occ = np.ascontiguousarray(passable, dtype=np.uint8)
    cell_d = np.stack(
        [_kernels.voxel_dijkstra(occ, int(c), float(o), h) for c, o in zip(jcell, joff)]
    )
    graph = cell_d[:, vcell].T + voff[:, None]
    v, n = len(verts), len(joints)
    starts = np.repeat(joints[None, :, :], v, axis=0).reshape(-1, 3)
    ends = np.repeat(verts[:, None, :], n, axis=1).reshape(-1, 3)
    visible = _kernels.segments_visible(
        occ, starts, ends, h, ORIGIN, h * _VISIBILITY_STEP
    ).reshape(v, n)
    euclid = np.linalg.norm(verts[:, None, :] - joints[None, :, :], axis=-1)
    dist = np.where(visible, euclid, graph)
    return GeodesicField(grid, cell_d, vcell, voff, visible, dist)


def volumetric_geodesic(grid: VoxelGrid, mesh: Mesh, skeleton: Skeleton) -> np.ndarray:
    """Distance (v x n) from every vertex to every joint, routed through the solid.

    A pair whose straight segment stays inside surface/interior cells gets the
    Euclidean distance. Otherwise the distance is the 26-connected shortest
    path between their cells plus the Euclidean offsets from each point to its
    cell center. Joints in exterior cells are snapped to the nearest solid cell.
    Unreachable pairs are ``inf``.
    """
    return geodesic_field(grid, mesh, skeleton).distance


@dataclass(frozen=True, eq=False)
class GeodesicPrior:
    matrix: np.ndarray  # (v, n) rows on the simplex over valid joints
    raw: np.ndarray  # (v, n) distances used
    joint_mask: np.ndarray  # (n,) bool
    fallback_rows: np.ndarray  # (v,) bool, Euclidean distances substituted

    @property
    def used_fallback(self) -> bool:
        return bool(self.fallback_rows.any())


def build_prior(raw, joint_mask=None, sharpness: float = 2.0, floor: float = 1.0 / 64,
                euclidean=None) -> GeodesicPrior:
    """Inverse-power weights ``d^-s / sum_k d_k^-s`` over valid joints.

    Distances are clamped below at ``floor``. Rows with no finite distance fall
    back to ``euclidean`` (required in that case) and are flagged.
    """
    raw = np.array(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise GeodesicError("distance matrix must be 2-D")
    v, n = raw.shape
    mask = np.ones(n, dtype=bool) if joint_mask is None else np.asarray(joint_mask, dtype=bool)
    if mask.shape != (n,):
        raise GeodesicError("joint mask does not match distance columns")
    if not mask.any():
        raise GeodesicError("no valid joints")
    if sharpness <= 0:
        raise GeodesicError("sharpness must be positive")
    valid = raw[:, mask]
    if np.any(valid < 0) or np.any(np.isnan(valid)):
        raise GeodesicError("distances must be nonnegative")
    fallback = ~np.isfinite(valid).any(axis=1)
    if fallback.any():
        if euclidean is None:
            raise GeodesicError("vertex unreachable from every joint and no Euclidean fallback given")
        euc = np.asarray(euclidean, dtype=np.float64)
        raw[fallback] = euc[fallback]
        valid = raw[:, mask]
    d = np.maximum(valid, floor)
    # scale by the row minimum before the power to stay clear of overflow
    ratio = np.min(d, axis=1, keepdims=True) / d
    w = ratio**sharpness
    w = w / w.sum(axis=1, keepdims=True)
    out = np.zeros((v, n))
    out[:, mask] = w
    raw[:, ~mask] = np.inf
    return GeodesicPrior(out, raw, mask, fallback)


def gvb_baseline(prior: GeodesicPrior, k_nearest: int) -> np.ndarray:
    """Geodesic-voxel-binding style skinning: keep each vertex's k nearest joints."""
    if k_nearest < 1:
        raise GeodesicError("k_nearest must be at least 1")
    raw = np.where(prior.joint_mask[None, :], prior.raw, np.inf)
    order = np.argsort(raw, axis=1, kind="stable")
    keep = np.zeros_like(prior.matrix, dtype=bool)
    k = min(k_nearest, int(prior.joint_mask.sum()))
    np.put_along_axis(keep, order[:, :k], True, axis=1)
    keep &= prior.joint_mask[None, :]
    w = np.where(keep, prior.matrix, 0.0)
    s = w.sum(axis=1, keepdims=True)
    # kept joints all unreachable: hand the row to the nearest one
    empty = s[:, 0] <= 0
    if empty.any():
        w[empty] = 0.0
        w[empty, order[empty, 0]] = 1.0
        s = w.sum(axis=1, keepdims=True)
    return w / s


def geodesic_prior(mesh: Mesh, skeleton: Skeleton, resolution: int = 64, sharpness: float = 2.0,
                   joint_mask=None) -> GeodesicPrior:
    """Voxelize, measure and normalize in one call."""
    grid = voxelize(mesh, resolution)
    raw = volumetric_geodesic(grid, mesh, skeleton)
    euclid = np.linalg.norm(mesh.vertices[:, None, :] - skeleton.joints[None, :, :], axis=-1)
    return build_prior(raw, joint_mask, sharpness, grid.voxel_size, euclidean=euclid)
