"""Skeleton chamfer metrics and skinning-weight evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .animation import Pose, RiggedAsset, lbs_deform
from .geometry import Skeleton


class MetricError(ValueError):
    pass


def _joint_array(s) -> np.ndarray:
    j = s.joints if isinstance(s, Skeleton) else np.asarray(s, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64).reshape(-1, 3)
    if len(j) == 0:
        raise MetricError("empty joint set")
    return j


def bone_samples(s: Skeleton, samples_per_bone: int = 32) -> np.ndarray:
    """Endpoint-inclusive uniform samples along every bone segment."""
    if s.num_bones == 0:
        raise MetricError("skeleton has no bones")
    if samples_per_bone < 2:
        raise MetricError("need at least 2 samples per bone")
    t = np.linspace(0.0, 1.0, samples_per_bone)[None, :, None]
    a = s.joints[s.bones[:, 0]][:, None, :]
    b = s.joints[s.bones[:, 1]][:, None, :]
    # this form hits both endpoints exactly
    return (a * (1.0 - t) + b * t).reshape(-1, 3)


def _nearest_mean(p: np.ndarray, q: np.ndarray) -> float:
    return float(cdist(p, q).min(axis=1).mean())


def chamfer(p, q) -> float:
    """Half the mean nearest distance p->q plus half the mean q->p."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(q) == 0:
        raise MetricError("empty point set")
    return 0.5 * _nearest_mean(p, q) + 0.5 * _nearest_mean(q, p)


def cd_j2j(a, b) -> float:
    return chamfer(_joint_array(a), _joint_array(b))


def cd_j2b(a: Skeleton, b: Skeleton, samples_per_bone: int = 32) -> float:
    """A's joints against B's bones and B's joints against A's bones, averaged."""
    ja, jb = _joint_array(a), _joint_array(b)
    sa, sb = bone_samples(a, samples_per_bone), bone_samples(b, samples_per_bone)
    return 0.5 * _nearest_mean(ja, sb) + 0.5 * _nearest_mean(jb, sa)


def cd_b2b(a: Skeleton, b: Skeleton, samples_per_bone: int = 32) -> float:
    return chamfer(bone_samples(a, samples_per_bone), bone_samples(b, samples_per_bone))


@dataclass(frozen=True)
class SkeletonReport:
    cd_j2j: float
    cd_j2b: float
    cd_b2b: float

    def as_dict(self) -> dict:
        return asdict(self)


def skeleton_report(pred: Skeleton, truth: Skeleton, samples_per_bone: int = 32) -> SkeletonReport:
    return SkeletonReport(
        cd_j2j(pred, truth),
        cd_j2b(pred, truth, samples_per_bone),
        cd_b2b(pred, truth, samples_per_bone),
    )


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    precision_defined: bool = True
    recall_defined: bool = True

    def __iter__(self):
        return iter((self.precision, self.recall))


def _check_shapes(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise MetricError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return pred, truth


def skin_precision_recall(pred, truth, threshold: float = 1e-4) -> PrecisionRecall:
    """Influence-set precision/recall; an influence is a weight above ``threshold``.

    An empty predicted (or true) influence set reports 0 with the matching
    ``*_defined`` flag cleared.
    """
    pred, truth = _check_shapes(pred, truth)
    sp = pred > threshold
    st = truth > threshold
    inter = int(np.count_nonzero(sp & st))
    n_pred, n_true = int(sp.sum()), int(st.sum())
    precision = inter / n_pred if n_pred else 0.0
    recall = inter / n_true if n_true else 0.0
    return PrecisionRecall(precision, recall, n_pred > 0, n_true > 0)


def skin_avg_l1(pred, truth) -> float:
    pred, truth = _check_shapes(pred, truth)
    return float(np.abs(pred - truth).sum(axis=1).mean())


def deformation_error(asset_pred: RiggedAsset, asset_truth: RiggedAsset, poses: list[Pose]) -> float:
    """Mean vertex distance between the two skinnings over all poses."""
    if not poses:
        raise MetricError("pose list is empty")
    if asset_pred.skin.shape != asset_truth.skin.shape:
        raise MetricError("skin matrices differ in shape")
    errs = []
    for pose in poses:
        a = lbs_deform(asset_pred, pose).vertices
        b = lbs_deform(asset_truth, pose).vertices
        errs.append(np.linalg.norm(a - b, axis=1).mean())
    return float(np.mean(errs))


@dataclass(frozen=True)
class SkinReport:
    precision: float
    recall: float
    avg_l1: float
    avg_dist: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def skin_report(pred, truth, threshold: float = 1e-4, asset: RiggedAsset | None = None,
                poses: list[Pose] | None = None) -> SkinReport:
    pr = skin_precision_recall(pred, truth, threshold)
    dist = None
    if asset is not None and poses:
        dist = deformation_error(asset.with_skin(pred), asset.with_skin(truth), poses)
    return SkinReport(pr.precision, pr.recall, skin_avg_l1(pred, truth), dist)


def format_skeleton_table(rows: dict[str, SkeletonReport]) -> str:
    """Aligned text table; chamfer values shown in units of 1e-2."""
    head = f"{'method':<24}{'CD-J2J':>10}{'CD-J2B':>10}{'CD-B2B':>10}"
    lines = [head, "-" * len(head)]
    for name, r in rows.items():
        lines.append(f"{name:<24}{r.cd_j2j * 100:>10.3f}{r.cd_j2b * 100:>10.3f}{r.cd_b2b * 100:>10.3f}")
    return "\n".join(lines) + "\n"


def format_skin_table(rows: dict[str, SkinReport]) -> str:
    head = f"{'method':<24}{'Prec.':>10}{'Rec.':>10}{'avg L1':>10}{'avg Dist':>10}"
    lines = [head, "-" * len(head)]
    for name, r in rows.items():
        dist = f"{r.avg_dist:>10.4f}" if r.avg_dist is not None else f"{'-':>10}"
        lines.append(
            f"{name:<24}{r.precision * 100:>9.1f}%{r.recall * 100:>9.1f}%{r.avg_l1:>10.3f}{dist}"
        )
    return "\n".join(lines) + "\n"
