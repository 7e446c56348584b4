"""Stage glue: corpus loading, model construction, checkpoints and the two-stage rig predictor."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import PipelineConfig
from .geodesic import geodesic_prior
from .geometry import Mesh, PointCloud, Skeleton, normalize_to_unit_cube, sample_surface
from .io import FormatError, RigFile, load_checkpoint, read_obj, read_points, read_rig, save_checkpoint
from .seqmodel import (Sample, SeqModelConfig, SkeletonModel, TrainingConfig, group_points,
                       sample_skeleton)
from .sequencer import DecodedSkeleton, detokenize, tokenize
from .skindiff import (DenoiserConfig, DiffusionError, Denoiser, NoiseSchedule, SkinExample,
                       SkinTrainingConfig, sample_skin, train_skin)

SKELETON_SECTION = "skeleton"
SKIN_SECTION = "skin"


# -- builders ---------------------------------------------------------------

def seq_config(cfg: PipelineConfig) -> SeqModelConfig:
    return SeqModelConfig(cfg.seq_layers, cfg.seq_heads, cfg.seq_width, cfg.point_count,
                          cfg.shape_groups, cfg.group_size, cfg.max_bones)


def seq_training(cfg: PipelineConfig, steps: int | None = None) -> TrainingConfig:
    return TrainingConfig(cfg.seq_learning_rate, cfg.seq_batch_size, steps or cfg.seq_steps, cfg.seed)


def denoiser_config(cfg: PipelineConfig, shape_width: int | None = None) -> DenoiserConfig:
    return DenoiserConfig(cfg.skin_width, cfg.skin_heads, cfg.skin_stages, cfg.skin_chunk,
                          cfg.max_joints, shape_width=shape_width or cfg.seq_width)


def skin_training(cfg: PipelineConfig, steps: int | None = None) -> SkinTrainingConfig:
    return SkinTrainingConfig(cfg.skin_learning_rate, steps or cfg.skin_steps, cfg.skin_batch_size,
                              cfg.skin_max_points, cfg.seed)


def schedule(cfg: PipelineConfig) -> NoiseSchedule:
    return NoiseSchedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)


# -- checkpoints ------------------------------------------------------------

@dataclass
class Models:
    skeleton: SkeletonModel | None = None
    ordering: str = "spatial"
    denoiser: Denoiser | None = None
    use_shape: bool = False


def load_models(path) -> Models:
    sections = load_checkpoint(path)
    out = Models()
    if SKELETON_SECTION in sections:
        conf, params = sections[SKELETON_SECTION]
        conf = dict(conf)
        out.ordering = conf.pop("ordering", "spatial")
        out.skeleton = SkeletonModel.from_arrays(SeqModelConfig(**conf), params)
    if SKIN_SECTION in sections:
        conf, params = sections[SKIN_SECTION]
        conf = dict(conf)
        out.use_shape = bool(conf.pop("use_shape", False))
        out.denoiser = Denoiser.from_arrays(DenoiserConfig(**conf), params)
    return out


def save_models(path, models: Models) -> None:
    """Write every present model; sections already in ``path`` for absent models are kept."""
    sections = {}
    if Path(path).exists():
        sections = load_checkpoint(path)
    if models.skeleton is not None:
        conf = dict(models.skeleton.config.to_dict(), ordering=models.ordering)
        sections[SKELETON_SECTION] = (conf, models.skeleton.state_arrays())
    if models.denoiser is not None:
        conf = dict(models.denoiser.config.to_dict(), use_shape=models.use_shape)
        sections[SKIN_SECTION] = (conf, models.denoiser.state_arrays())
    save_checkpoint(path, sections)


# -- corpus -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorpusItem:
    mesh: Mesh
    rig: RigFile
    cloud: PointCloud


def load_corpus(directory) -> list[CorpusItem]:
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    items = []
    for entry in manifest.get("assets", []):
        f = entry["files"]
        items.append(CorpusItem(read_obj(root / f["mesh"]), read_rig(root / f["rig"]),
                                read_points(root / f["points"])))
    if not items:
        raise FormatError("corpus is empty")
    return items


def skeleton_samples(items: list[CorpusItem], model: SkeletonModel, ordering: str) -> list[Sample]:
    return [Sample(group_points(it.cloud, model.config), tokenize(it.rig.skeleton, ordering), it.rig.skeleton)
            for it in items]


# -- prediction -------------------------------------------------------------

def shape_tokens(model: SkeletonModel, mesh: Mesh, seed: int) -> torch.Tensor:
    cloud = sample_surface(mesh, model.config.n_points, seed)
    with torch.no_grad():
        return model.encode(group_points(cloud, model.config))[0]


def predict_skeleton(model: SkeletonModel, mesh: Mesh, cfg: PipelineConfig, ordering: str,
                     seed: int) -> DecodedSkeleton:
    """Sample a skeleton for a mesh already in the unit cube."""
    tokens = shape_tokens(model, mesh, seed)
    result = sample_skeleton(tokens, model, cfg.temperature, seed, ordering=ordering)
    return detokenize(result.sequence, ordering)


def skin_example(mesh: Mesh, skeleton: Skeleton, cfg: PipelineConfig, weights=None,
                 tokens: torch.Tensor | None = None) -> SkinExample:
    if skeleton.num_joints > cfg.max_joints:
        raise DiffusionError(f"{skeleton.num_joints} joints exceed the limit of {cfg.max_joints}")
    prior = geodesic_prior(mesh, skeleton, cfg.voxel_resolution, cfg.prior_sharpness).matrix
    return SkinExample.build(mesh.vertices, skeleton.joints, prior, weights, tokens, cfg.max_joints)


def train_skin_stage(models: Models, items: list[CorpusItem], cfg: PipelineConfig,
                     steps: int | None = None) -> list[float]:
    use_shape = models.skeleton is not None
    if models.denoiser is None:
        width = models.skeleton.config.width if use_shape else None
        models.denoiser = Denoiser(denoiser_config(cfg, width), seed=cfg.seed)
        models.use_shape = use_shape
    examples = []
    for it in items:
        tok = shape_tokens(models.skeleton, it.mesh, cfg.seed) if models.use_shape else None
        if it.rig.skin is None:
            raise FormatError("training rig has no skin weights")
        examples.append(skin_example(it.mesh, it.rig.skeleton, cfg, it.rig.skin, tok))
    return train_skin(models.denoiser, examples, schedule(cfg), skin_training(cfg, steps))


def predict_skin(models: Models, mesh: Mesh, skeleton: Skeleton, cfg: PipelineConfig, seed: int) -> np.ndarray:
    if models.denoiser is None:
        raise FormatError("checkpoint has no skinning model")
    tok = None
    if models.use_shape:
        if models.skeleton is None:
            raise FormatError("skinning model needs the skeleton section for shape features")
        tok = shape_tokens(models.skeleton, mesh, seed)
    ex = skin_example(mesh, skeleton, cfg, tokens=tok)
    return sample_skin(models.denoiser, ex, schedule(cfg), cfg.inference_steps, seed)


@dataclass(frozen=True, eq=False)
class PipelineResult:
    skeleton: Skeleton  # in the input mesh frame
    skin: np.ndarray
    transform: object
    decoded: DecodedSkeleton


def run_pipeline(models: Models, mesh: Mesh, cfg: PipelineConfig, ordering: str | None = None,
                 seed: int | None = None) -> PipelineResult:
    """Mesh in any frame -> skeleton and skin in that frame."""
    if models.skeleton is None:
        raise FormatError("checkpoint has no skeleton model")
    seed = cfg.seed if seed is None else seed
    norm_mesh, _, tf = normalize_to_unit_cube(mesh)
    decoded = predict_skeleton(models.skeleton, norm_mesh, cfg, ordering or models.ordering, seed)
    skin = predict_skin(models, norm_mesh, decoded.skeleton, cfg, seed)
    skel = decoded.skeleton.with_joints(tf.invert(decoded.skeleton.joints))
    return PipelineResult(skel, skin, tf, decoded)
