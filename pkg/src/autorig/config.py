"""Pipeline configuration: every tunable default in one JSON-loadable record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .sequencer import N_BINS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # tokenization and shape encoding
    quantization_bins: int = N_BINS
    point_count: int = 8192
    shape_groups: int = 256
    group_size: int = 32
    max_bones: int = 100
    seq_layers: int = 2
    seq_heads: int = 4
    seq_width: int = 128
    # skeleton training and sampling
    seq_learning_rate: float = 1e-3
    seq_batch_size: int = 8
    seq_steps: int = 2000
    temperature: float = 0.0
    # skinning diffusion
    max_joints: int = 55
    diffusion_steps: int = 1000
    inference_steps: int = 25
    beta_start: float = 1e-4
    beta_end: float = 0.02
    skin_width: int = 128
    skin_heads: int = 4
    skin_stages: int = 2
    skin_chunk: int = 512
    skin_learning_rate: float = 1e-3
    skin_batch_size: int = 2
    skin_steps: int = 3000
    skin_max_points: int = 512
    # geometry and evaluation
    voxel_resolution: int = 64
    prior_sharpness: float = 2.0
    gvb_nearest: int = 4
    bone_samples: int = 32
    skin_threshold: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.quantization_bins == N_BINS, f"quantization_bins is fixed at {N_BINS}"),
            (self.point_count >= self.shape_groups >= 1, "need point_count >= shape_groups >= 1"),
            (1 <= self.group_size <= self.point_count, "group_size out of range"),
            (1 <= self.max_bones <= 1000, "max_bones out of range"),
            (self.seq_layers >= 1 and self.seq_heads >= 1, "model needs layers and heads"),
            (self.seq_width % self.seq_heads == 0, "seq_width must divide by seq_heads"),
            (self.skin_width % self.skin_heads == 0, "skin_width must divide by skin_heads"),
            (self.seq_learning_rate > 0 and self.skin_learning_rate > 0, "learning rates must be positive"),
            (self.seq_steps >= 1 and self.skin_steps >= 1, "step counts must be positive"),
            (self.seq_batch_size >= 1 and self.skin_batch_size >= 1, "batch sizes must be positive"),
            (self.temperature >= 0, "temperature must be nonnegative"),
            (1 <= self.max_joints, "max_joints must be positive"),
            (self.diffusion_steps >= 2, "diffusion_steps must be at least 2"),
            (1 <= self.inference_steps <= self.diffusion_steps, "inference_steps out of range"),
            (0 < self.beta_start < self.beta_end < 1, "need 0 < beta_start < beta_end < 1"),
            (self.skin_stages >= 1 and self.skin_chunk >= 1, "bad denoiser stage settings"),
            (self.skin_max_points >= 1, "skin_max_points must be positive"),
            (self.voxel_resolution >= 8, "voxel_resolution must be at least 8"),
            (self.prior_sharpness > 0, "prior_sharpness must be positive"),
            (self.gvb_nearest >= 1, "gvb_nearest must be positive"),
            (self.bone_samples >= 2, "bone_samples must be at least 2"),
            (self.skin_threshold >= 0, "skin_threshold must be nonnegative"),
            (self.seed >= 0, "seed must be nonnegative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        base = cls()
        vals = {}
        for k, v in d.items():
            default = getattr(base, k)
            if isinstance(default, bool) or not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{k} must be numeric")
            if isinstance(default, int) and not float(v).is_integer():
                raise ConfigError(f"{k} must be an integer")
            vals[k] = type(default)(v)
        return replace(base, **vals)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)
