"""File formats: OBJ meshes, rig JSON, skin matrices, token corpora, checkpoints.

All writers are deterministic (sorted keys, floats at 9 significant digits)
and go through a temp file + rename so a failed run never leaves a partial
output behind.
"""

from __future__ import annotations

import io as _io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Mesh, NormalizationTransform, Skeleton, parent_map_from_root
from .sequencer import TokenSequence

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _f9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _round(obj):
    if isinstance(obj, float):
        return _f9(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, 9 significant digits, trailing newline."""
    return json.dumps(_round(obj), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


# -- OBJ -------------------------------------------------------------------

def parse_obj(text: str) -> Mesh:
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            try:
                verts.append([float(c) for c in parts[1:4]])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad vertex") from exc
            if len(verts[-1]) != 3:
                raise FormatError(f"line {lineno}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            idx = []
            for p in parts[1:]:
                i = int(p.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) != 3:
                raise FormatError(f"line {lineno}: only triangle faces are supported")
            faces.append(idx)
    if not verts or not faces:
        raise FormatError("OBJ has no vertices or faces")
    try:
        return Mesh(np.array(verts), np.array(faces))
    except GeometryError as exc:
        raise FormatError(str(exc)) from exc


def read_obj(path) -> Mesh:
    return parse_obj(Path(path).read_text())


def format_obj(mesh: Mesh, colors=None) -> str:
    buf = _io.StringIO()
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64)
        for v, c in zip(mesh.vertices, colors):
            buf.write("v %.9g %.9g %.9g %.6g %.6g %.6g\n" % (*v, *c))
    else:
        for v in mesh.vertices:
            buf.write("v %.9g %.9g %.9g\n" % tuple(v))
    for f in mesh.faces:
        buf.write("f %d %d %d\n" % tuple(f + 1))
    return buf.getvalue()


def write_obj(path, mesh: Mesh, colors=None) -> None:
    atomic_write(path, format_obj(mesh, colors))


# -- rig JSON --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigFile:
    skeleton: Skeleton
    skin: np.ndarray | None = None
    normalization: NormalizationTransform | None = None


def rig_to_dict(skeleton: Skeleton, skin=None, normalization=None) -> dict:
    names = skeleton.names or tuple(f"joint_{i}" for i in range(skeleton.num_joints))
    d = {
        "version": FORMAT_VERSION,
        "joints": [
            {"name": n, "position": [float(c) for c in p]}
            for n, p in zip(names, skeleton.joints)
        ],
        "bones": [[int(a), int(b)] for a, b in skeleton.bones],
    }
    if skeleton.root is not None:
        d["root"] = int(skeleton.root)
    if skeleton.parent is not None:
        d["parent"] = [[c, p] for c, p in sorted(skeleton.parent.items())]
    if skin is not None:
        skin = np.asarray(skin, dtype=np.float64)
        if skin.shape[1] != skeleton.num_joints:
            raise FormatError("skin column count must equal joint count")
        d["skin"] = {"joint_count": skin.shape[1], "weights": [float(w) for w in skin.ravel()]}
    if normalization is not None:
        d["normalization"] = normalization.to_dict()
    return d


def emit_rig(skeleton: Skeleton, skin=None, normalization=None) -> str:
    return dumps(rig_to_dict(skeleton, skin, normalization))


def parse_rig(text: str) -> RigFile:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid rig JSON: {exc}") from exc
    if not isinstance(d, dict) or d.get("version") != FORMAT_VERSION:
        raise FormatError("unsupported or missing rig version")
    try:
        joints = np.array([j["position"] for j in d["joints"]], dtype=np.float64)
        names = tuple(str(j.get("name", f"joint_{i}")) for i, j in enumerate(d["joints"]))
        bones = np.array(d["bones"], dtype=np.int64)
        root = d.get("root")
        if "parent" in d:
            parent = {int(c): int(p) for c, p in d["parent"]}
        elif root is not None:
            try:
                parent = parent_map_from_root(bones.reshape(-1, 2), len(joints), int(root))
            except GeometryError:
                parent = None
        else:
            parent = None
        skel = Skeleton(joints, bones, root, parent, names)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed rig: {exc}") from exc
    skin = None
    if "skin" in d:
        n = int(d["skin"]["joint_count"])
        w = np.array(d["skin"]["weights"], dtype=np.float64)
        if n != skel.num_joints or w.size % n:
            raise FormatError("skin matrix shape does not match joints")
        skin = w.reshape(-1, n)
    norm = NormalizationTransform.from_dict(d["normalization"]) if "normalization" in d else None
    return RigFile(skel, skin, norm)


def read_rig(path) -> RigFile:
    return parse_rig(Path(path).read_text())


def write_rig(path, skeleton: Skeleton, skin=None, normalization=None) -> None:
    atomic_write(path, emit_rig(skeleton, skin, normalization))


def parse_rignet_text(text: str) -> RigFile:
    """Import shim for the plain-text ``joints / root / hier / skin`` rig layout."""
    names, pos, hier, skin_rows, root = [], [], [], [], None
    for line in text.splitlines():
        p = line.split()
        if not p:
            continue
        if p[0] == "joints":
            names.append(p[1])
            pos.append([float(c) for c in p[2:5]])
        elif p[0] == "root":
            root = p[1]
        elif p[0] == "hier":
            hier.append((p[1], p[2]))
        elif p[0] == "skin":
            skin_rows.append((int(p[1]), [(p[k], float(p[k + 1])) for k in range(2, len(p), 2)]))
    index = {n: i for i, n in enumerate(names)}
    bones = np.array([(index[a], index[b]) for a, b in hier], dtype=np.int64)
    parent = {index[b]: index[a] for a, b in hier}
    skel = Skeleton(np.array(pos), bones, index.get(root), parent, tuple(names))
    skin = None
    if skin_rows:
        skin = np.zeros((max(v for v, _ in skin_rows) + 1, len(names)))
        for v, pairs in skin_rows:
            for n, w in pairs:
                skin[v, index[n]] = w
    return RigFile(skel, skin)


# -- skin matrices ---------------------------------------------------------

def emit_skin(matrix, joint_mask=None, prior: bool = False) -> str:
    m = np.asarray(matrix, dtype=np.float64)
    mask = np.ones(m.shape[1], dtype=bool) if joint_mask is None else np.asarray(joint_mask, bool)
    return dumps({
        "version": FORMAT_VERSION,
        "prior": bool(prior),
        "rows": m.shape[0],
        "joint_count": m.shape[1],
        "joint_mask": [bool(b) for b in mask],
        "weights": [float(w) for w in m.ravel()],
    })


def parse_skin(text: str):
    """Returns ``(matrix, joint_mask, is_prior)``."""
    d = json.loads(text)
    if d.get("version") != FORMAT_VERSION:
        raise FormatError("unsupported skin file version")
    m = np.array(d["weights"], dtype=np.float64).reshape(d["rows"], d["joint_count"])
    return m, np.array(d["joint_mask"], dtype=bool), bool(d["prior"])


# -- token corpora ---------------------------------------------------------

def write_token_lines(path, sequences) -> None:
    atomic_write(path, "".join(s.to_line() + "\n" for s in sequences))


def read_token_lines(path, ordering: str = "spatial") -> list[TokenSequence]:
    lines = Path(path).read_text().splitlines()
    return [TokenSequence.from_line(l, ordering) for l in lines if l.strip()]


# -- point clouds ----------------------------------------------------------

def points_to_bytes(cloud) -> bytes:
    buf = _io.BytesIO()
    normals = cloud.normals if cloud.normals is not None else np.zeros((0, 3))
    np.savez(buf, points=cloud.points, normals=normals, source_vertex=cloud.source_vertex)
    return buf.getvalue()


def read_points(path):
    from .geometry import PointCloud

    with np.load(path) as z:
        normals = z["normals"] if len(z["normals"]) else None
        return PointCloud(z["points"], normals, z["source_vertex"])


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, sections: dict) -> None:
    """``sections`` maps a name to ``(config_dict, {param_name: array})``."""
    header = {"version": FORMAT_VERSION, "sections": {}}
    arrays = {}
    for name, (config, params) in sorted(sections.items()):
        header["sections"][name] = {"config": config, "params": sorted(params)}
        for k, v in params.items():
            arrays[f"{name}/{k}"] = np.asarray(v)
    arrays["__header__"] = np.frombuffer(dumps(header).encode(), dtype=np.uint8)
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def load_checkpoint(path) -> dict:
    with np.load(path) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("version") != FORMAT_VERSION:
            raise FormatError("unsupported checkpoint version")
        out = {}
        for name, sec in header["sections"].items():
            out[name] = (sec["config"], {k: z[f"{name}/{k}"] for k in sec["params"]})
    return out
