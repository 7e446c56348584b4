"""Skeleton <-> token sequence conversion.

Joints are quantized to a 128^3 grid, bones are put into a canonical order
(spatial or hierarchical), and each bone is emitted as six coordinate tokens:
``z y x`` of its first joint followed by ``z y x`` of its second joint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Skeleton, parent_map_from_root

N_BINS = 128
BOS = 128
EOS = 129
PAD = 130
VOCAB_SIZE = 131
TOKENS_PER_BONE = 6
ORDERINGS = ("spatial", "hierarchical")

_CLAMP_SLACK = 1e-9


class TokenizationError(ValueError):
    pass


def quantize(coordinate):
    """Bin a coordinate in [-0.5, 0.5] to an integer in [0, 127].

    Works on scalars and arrays. Values outside the cube by at most 1e-9 are
    clamped; anything further out, or NaN, raises.
    """
    c = np.asarray(coordinate, dtype=np.float64)
    if np.any(np.isnan(c)):
        raise TokenizationError("cannot quantize NaN")
    if np.any(c < -0.5 - _CLAMP_SLACK) or np.any(c > 0.5 + _CLAMP_SLACK):
        raise TokenizationError("coordinate outside [-0.5, 0.5]")
    c = np.clip(c, -0.5, 0.5)
    b = np.minimum(N_BINS - 1, np.floor((c + 0.5) * N_BINS)).astype(np.int64)
    return int(b) if b.ndim == 0 else b


def dequantize(bins):
    b = np.asarray(bins)
    if np.any(b < 0) or np.any(b >= N_BINS) or not np.issubdtype(b.dtype, np.integer):
        raise TokenizationError("bin out of range")
    v = (b.astype(np.float64) + 0.5) / N_BINS - 0.5
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True, eq=False)
class QuantizedSkeleton:
    joints: np.ndarray  # (j, 3) int, xyz bins, unique rows
    bones: np.ndarray  # (b, 2) int
    root: int | None = None


def quantize_skeleton(skeleton: Skeleton) -> QuantizedSkeleton:
    """Quantize joints and merge those that collide on the grid.

    Bones are remapped onto merged joints; resulting self-loops and duplicate
    bones are dropped.
    """
    q = quantize(skeleton.joints).reshape(-1, 3)
    uniq, inverse = np.unique(q, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    seen = set()
    bones = []
    for a, b in skeleton.bones:
        a, b = int(inverse[a]), int(inverse[b])
        key = (min(a, b), max(a, b))
        if a == b or key in seen:
            continue
        seen.add(key)
        bones.append((a, b))
    if not bones:
        raise TokenizationError("skeleton is empty after merging quantized joints")
    root = int(inverse[skeleton.root]) if skeleton.root is not None else None
    return QuantizedSkeleton(uniq.astype(np.int64), np.array(bones, dtype=np.int64), root)


def _sort_joints(qs: QuantizedSkeleton):
    """Sort joints ascending by (z, y, x); return sorted joints and old->new map."""
    j = qs.joints
    order = np.lexsort((j[:, 0], j[:, 1], j[:, 2]))
    remap = np.empty(len(order), dtype=np.int64)
    remap[order] = np.arange(len(order))
    return j[order], remap


def order_spatial(qs: QuantizedSkeleton):
    """Spatial ordering. Returns ``(sorted_joints, bones)`` with bones as (lower, higher)."""
    joints, remap = _sort_joints(qs)
    pairs = sorted(
        (min(int(remap[a]), int(remap[b])), max(int(remap[a]), int(remap[b])))
        for a, b in qs.bones
    )
    return joints, pairs


def order_hierarchical(qs: QuantizedSkeleton):
    """Hierarchical ordering. Returns ``(sorted_joints, bones)`` with bones as (parent, child).

    Layer one holds the root's bones by ascending child index. Each later layer
    groups bones by parent, groups by ascending parent index, children ascending
    within a group.
    """
    if qs.root is None:
        raise TokenizationError("hierarchical ordering needs a root joint")
    joints, remap = _sort_joints(qs)
    bones = np.array([(remap[a], remap[b]) for a, b in qs.bones], dtype=np.int64)
    root = int(remap[qs.root])
    try:
        parent = parent_map_from_root(bones, len(joints), root)
    except GeometryError as exc:
        raise TokenizationError(str(exc)) from exc
    children: dict[int, list[int]] = {}
    for c, p in parent.items():
        children.setdefault(p, []).append(c)
    out = []
    layer = [root]
    while layer:
        nxt = []
        for p in sorted(layer):
            for c in sorted(children.get(p, [])):
                out.append((p, c))
                nxt.append(c)
        layer = nxt
    return joints, out


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    ordering: str = "spatial"

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def num_bones(self) -> int:
        interior = [t for t in self.tokens if t < N_BINS]
        return len(interior) // TOKENS_PER_BONE

    def to_line(self) -> str:
        names = {BOS: "BOS", EOS: "EOS"}
        return " ".join(names.get(t, str(t)) for t in self.tokens if t != PAD)

    @classmethod
    def from_line(cls, line: str, ordering: str = "spatial") -> "TokenSequence":
        names = {"BOS": BOS, "EOS": EOS}
        toks = []
        for word in line.split():
            if word in names:
                toks.append(names[word])
            else:
                t = int(word)
                if not 0 <= t < N_BINS:
                    raise TokenizationError(f"coordinate token out of range: {word}")
                toks.append(t)
        return cls(tuple(toks), ordering)


def _check_ordering(mode: str) -> None:
    if mode not in ORDERINGS:
        raise TokenizationError(f"unknown ordering {mode!r}")


def tokenize(skeleton: Skeleton, mode: str = "spatial") -> TokenSequence:
    _check_ordering(mode)
    qs = quantize_skeleton(skeleton)
    joints, bones = order_spatial(qs) if mode == "spatial" else order_hierarchical(qs)
    toks = [BOS]
    for a, b in bones:
        for j in (a, b):
            x, y, z = (int(v) for v in joints[j])
            toks.extend((z, y, x))
    toks.append(EOS)
    return TokenSequence(tuple(toks), mode)


@dataclass(frozen=True)
class DecodedSkeleton:
    """Detokenization result plus repair diagnostics."""

    skeleton: Skeleton
    dropped_tokens: int = 0
    repaired: bool = False
    terminated: bool = True

    @property
    def valid(self) -> bool:
        return self.terminated and self.dropped_tokens == 0 and not self.repaired


def detokenize(sequence: TokenSequence | list, mode: str | None = None) -> DecodedSkeleton:
    """Rebuild a skeleton from a token stream.

    A trailing partial bone is dropped and counted in ``dropped_tokens``.
    Joints are shared by exact quantized triple. In hierarchical mode the first
    joint is the root and bones are read as (parent, child); a bone whose parent
    has not been seen yet is re-rooted at whichever of its joints was seen
    first, and ``repaired`` is set.
    """
    if isinstance(sequence, TokenSequence):
        toks = list(sequence.tokens)
        mode = mode or sequence.ordering
    else:
        toks = [int(t) for t in sequence]
        mode = mode or "spatial"
    _check_ordering(mode)
    if toks and toks[0] == BOS:
        toks = toks[1:]
    terminated = False
    interior = []
    for t in toks:
        if t == EOS:
            terminated = True
            break
        if t == PAD:
            break
        if t == BOS or not 0 <= t < N_BINS:
            raise TokenizationError(f"unexpected token {t} inside sequence")
        interior.append(t)
    n_full = len(interior) // TOKENS_PER_BONE
    dropped = len(interior) - n_full * TOKENS_PER_BONE
    if n_full == 0:
        raise TokenizationError("no complete bone before end of sequence")

    index: dict[tuple[int, int, int], int] = {}
    joints: list[tuple[int, int, int]] = []

    def joint_id(z, y, x):
        key = (x, y, z)
        if key not in index:
            index[key] = len(joints)
            joints.append(key)
        return index[key]

    repaired = False
    bones: list[tuple[int, int]] = []
    seen_pairs: set[tuple[int, int]] = set()
    parent: dict[int, int] = {}
    root = None
    reached: set[int] = set()
    for k in range(n_full):
        g = interior[k * 6:(k + 1) * 6]
        a = joint_id(*g[0:3])
        b = joint_id(*g[3:6])
        key = (min(a, b), max(a, b))
        if a == b or key in seen_pairs:
            repaired = True
            continue
        seen_pairs.add(key)
        if mode == "hierarchical":
            if root is None:
                root = a
                reached.add(a)
            if a in reached and b not in reached:
                parent[b] = a
            elif b in reached and a not in reached:
                # parent not seen yet: re-root at the joint that was
                repaired = True
                parent[a] = b
                a, b = b, a
            elif a not in reached and b not in reached:
                # detached bone: starts a new subtree at its first joint
                repaired = True
                parent[b] = a
            else:
                # both already placed: would close a cycle
                repaired = True
            reached.update((a, b))
        bones.append((a, b))
    if not bones:
        raise TokenizationError("no valid bone in sequence")
    used = sorted({j for bone in bones for j in bone})
    if len(used) != len(joints):
        remap = {old: new for new, old in enumerate(used)}
        joints = [joints[i] for i in used]
        bones = [(remap[a], remap[b]) for a, b in bones]
        parent = {remap[c]: remap[p] for c, p in parent.items() if c in remap and p in remap}
        root = remap[root] if root is not None else None
    xyz = dequantize(np.array(joints, dtype=np.int64))
    if mode == "hierarchical":
        skel = Skeleton(xyz, np.array(bones), root=root, parent=parent)
    else:
        skel = Skeleton(xyz, np.array(bones))
    return DecodedSkeleton(skel, dropped, repaired, terminated)


def sequence_valid(tokens, mode: str = "spatial") -> bool:
    """True when the stream frames, decodes cleanly and yields a valid skeleton."""
    toks = list(tokens)
    if not toks or toks[0] != BOS or EOS not in toks:
        return False
    try:
        return detokenize(toks, mode).valid
    except (TokenizationError, GeometryError):
        return False


def prefix_closed(sequence: TokenSequence) -> bool:
    """Every bone's first joint is the root or appeared in an earlier bone."""
    interior = [t for t in sequence.tokens if t < N_BINS]
    seen = set()
    for k in range(len(interior) // 6):
        a = tuple(interior[k * 6:k * 6 + 3])
        b = tuple(interior[k * 6 + 3:k * 6 + 6])
        if k > 0 and a not in seen:
            return False
        seen.update((a, b))
    return True


def max_sequence_length(max_bones: int) -> int:
    return TOKENS_PER_BONE * max_bones + 2
