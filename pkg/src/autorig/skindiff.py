"""Functional diffusion over skinning weights.

The diffused function is the residual between the true weights and the
geodesic prior, both mapped to [-1, 1]; the residual itself spans [-2, 2].
The denoiser sees only the noised values at a set of points, the timestep,
the joint positions and optional shape tokens, and regresses the clean
residual directly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .geometry import Mesh, PointCloud, nearest_vertex


class DiffusionError(ValueError):
    pass


MAX_JOINTS = 55


# -- schedule ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Linear-beta schedule. Arrays are indexed 0..T; index 0 is the clean limit."""

    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.steps < 2 or not 0 < self.beta_start < self.beta_end < 1:
            raise DiffusionError("bad schedule parameters")
        betas = np.concatenate([[0.0], np.linspace(self.beta_start, self.beta_end, self.steps)])
        abar = np.cumprod(1.0 - betas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", abar)
        object.__setattr__(self, "alpha", np.sqrt(abar))
        object.__setattr__(self, "sigma", np.sqrt(1.0 - abar))

    def subgrid(self, count: int) -> np.ndarray:
        """``count`` timesteps spaced uniformly over [1, T], descending."""
        if not 1 <= count <= self.steps:
            raise DiffusionError("step count out of range")
        if count == 1:
            return np.array([self.steps])
        return np.round(np.linspace(1, self.steps, count)).astype(np.int64)[::-1]


# -- residual mapping --------------------------------------------------------

def to_range(w):
    return 2.0 * np.asarray(w, dtype=np.float64) - 1.0


def from_range(f):
    return (np.asarray(f, dtype=np.float64) + 1.0) / 2.0


def _pad(matrix, n: int) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[1] > n:
        raise DiffusionError(f"{m.shape[1]} joints exceed the limit of {n}")
    out = np.zeros((m.shape[0], n))
    out[:, :m.shape[1]] = m
    return out


def normalize_weights(weights, prior, joint_mask=None, prior_mask=None, n: int = MAX_JOINTS) -> np.ndarray:
    """Residual ``(2W - 1) - (2G - 1)`` padded to ``n`` columns, masked columns zero."""
    w, g = np.asarray(weights, dtype=np.float64), np.asarray(prior, dtype=np.float64)
    if w.shape != g.shape:
        raise DiffusionError("weights and prior differ in shape")
    mask = _mask(joint_mask, w.shape[1])
    if prior_mask is not None and not np.array_equal(mask, _mask(prior_mask, w.shape[1])):
        raise DiffusionError("weight and prior joint masks differ")
    f0 = to_range(w) - to_range(g)
    f0[:, ~mask] = 0.0
    return _pad(f0, n)


def _mask(mask, count: int) -> np.ndarray:
    return np.ones(count, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)


def weights_from_residual(f0, prior, joint_mask=None) -> np.ndarray:
    """Invert the residual, then clamp, mask and renormalize rows onto the simplex."""
    g = np.asarray(prior, dtype=np.float64)
    j = g.shape[1]
    mask = _mask(joint_mask, j)
    if not mask.any():
        raise DiffusionError("no valid joints")
    w = np.clip(from_range(np.asarray(f0)[:, :j] + to_range(g)), 0.0, 1.0)
    w[:, ~mask] = 0.0
    s = w.sum(axis=1, keepdims=True)
    # a row clamped to all zeros falls back to the prior
    empty = s[:, 0] <= 0
    if empty.any():
        w[empty] = g[empty] * mask
        s[empty] = w[empty].sum(axis=1, keepdims=True)
    return w / s


def forward_noise(f0, t: int, noise, schedule: NoiseSchedule, joint_mask=None):
    """``f_t = alpha_t f0 + sigma_t g``; masked columns stay zero. Works on numpy or torch."""
    if not 0 <= t <= schedule.steps:
        raise DiffusionError(f"timestep {t} outside [0, {schedule.steps}]")
    ft = schedule.alpha[t] * f0 + schedule.sigma[t] * noise
    if joint_mask is not None:
        keep = torch.as_tensor(joint_mask) if isinstance(ft, torch.Tensor) else np.asarray(joint_mask)
        ft = ft * keep
    return ft


# -- denoiser ----------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    width: int = 128
    heads: int = 4
    stages: int = 2
    chunk: int = 512
    max_joints: int = MAX_JOINTS
    fourier_bands: int = 6
    shape_width: int = 128

    def __post_init__(self):
        if self.stages < 1 or self.width % self.heads or self.chunk < 1:
            raise DiffusionError("invalid denoiser config")

    def to_dict(self) -> dict:
        return asdict(self)


class Fourier(nn.Module):
    def __init__(self, bands: int):
        super().__init__()
        self.register_buffer("freqs", (2.0 ** torch.arange(bands)) * math.pi, persistent=False)

    @property
    def dim(self) -> int:
        return 3 + 6 * len(self.freqs)

    def forward(self, x):
        a = (x[..., None] * self.freqs.to(x.dtype)).flatten(-2)
        return torch.cat([x, a.sin(), a.cos()], dim=-1)


def timestep_embedding(t: int, dim: int, dtype) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    a = float(t) * freqs
    return torch.cat([a.sin(), a.cos()]).to(dtype)


class AdaNorm(nn.Module):
    """LayerNorm whose scale and shift come from the time embedding."""

    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width, elementwise_affine=False)
        self.mod = nn.Linear(width, 2 * width)

    def forward(self, x, temb):
        scale, shift = self.mod(temb).chunk(2, dim=-1)
        return self.norm(x) * (1 + scale) + shift


class Stage(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        w = cfg.width
        self.chunk = cfg.chunk
        self.n1, self.n2, self.n3 = AdaNorm(w), AdaNorm(w), AdaNorm(w)
        self.self_attn = nn.MultiheadAttention(w, cfg.heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(w, cfg.heads, batch_first=True)
        self.mlp = nn.Sequential(nn.Linear(w, 4 * w), nn.GELU(), nn.Linear(4 * w, w))

    def forward(self, h, cond, temb):
        # h: (P, w) points in canonical order. Self-attention runs within strided
        # chunks so each chunk spans the whole shape at roughly uniform density.
        x = self.n1(h, temb)
        n_chunks = -(-len(x) // self.chunk)
        upd = torch.zeros_like(x)
        for k in range(n_chunks):
            c = x[k::n_chunks][None]
            upd[k::n_chunks] = self.self_attn(c, c, c, need_weights=False)[0][0]
        h = h + upd
        x = self.n2(h, temb)[None]
        h = h + self.cross_attn(x, cond[None], cond[None], need_weights=False)[0][0]
        return h + self.mlp(self.n3(h, temb))


class Denoiser(nn.Module):
    """x0-predicting set network over points, conditioned on joints and shape tokens.

    Output column ``j`` is produced by a pairwise head from the point feature,
    joint ``j``'s feature and their relative offset.
    """

    def __init__(self, config: DenoiserConfig = DenoiserConfig(), seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            w, n = config.width, config.max_joints
            self.fourier = Fourier(config.fourier_bands)
            fd = self.fourier.dim
            self.point_in = nn.Linear(fd + n, w)
            self.time_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
            self.joint_in = nn.Linear(fd, w)
            self.joint_slot = nn.Embedding(n, w)
            self.shape_in = nn.Linear(config.shape_width, w)
            self.stages = nn.ModuleList(Stage(config) for _ in range(config.stages))
            self.out_norm = nn.LayerNorm(w)
            self.query = nn.Linear(w, w)
            self.key = nn.Linear(w, w)
            self.rel = nn.Linear(fd, w)
            self.head = nn.Linear(w, 1)
        self.to(dtype)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def zero_head(self) -> None:
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()

    def forward(self, points, ft, t: int, joints, joint_mask, shape_tokens=None):
        """points (P,3), ft (P,n), joints (n,3), joint_mask (n,) -> f0 estimate (P,n)."""
        if len(points) == 0:
            raise DiffusionError("no domain points")
        if ft.shape != (len(points), self.config.max_joints):
            raise DiffusionError(f"values must be points x {self.config.max_joints}")
        mask = torch.as_tensor(joint_mask, dtype=torch.bool)
        valid = torch.nonzero(mask).flatten()
        if len(valid) == 0:
            raise DiffusionError("no valid joints")
        order = canonical_order(points, ft)
        pts, vals = points[order], ft[order]
        temb = self.time_mlp(timestep_embedding(t, self.config.width, self.dtype))
        h = self.point_in(torch.cat([self.fourier(pts), vals], dim=-1))
        jpos = joints[valid]
        jtok = self.joint_in(self.fourier(jpos)) + self.joint_slot(valid)
        cond = jtok
        if shape_tokens is not None:
            cond = torch.cat([jtok, self.shape_in(shape_tokens.to(self.dtype))])
        for stage in self.stages:
            h = stage(h, cond, temb)
        q = self.query(self.out_norm(h))
        k = self.key(jtok)
        r = self.rel(self.fourier(pts[:, None, :] - jpos[None, :, :]))
        cols = self.head(F.gelu(q[:, None, :] + k[None, :, :] + r))[..., 0]
        out = torch.zeros(len(pts), self.config.max_joints, dtype=self.dtype)
        out = out.index_copy(1, valid, cols)
        inverse = torch.empty_like(order)
        inverse[order] = torch.arange(len(order))
        return out[inverse]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}

    @classmethod
    def from_arrays(cls, config: DenoiserConfig, arrays: dict, dtype=torch.float32) -> "Denoiser":
        model = cls(config, dtype=dtype)
        model.load_state_dict({k: torch.as_tensor(np.asarray(v)).to(dtype) for k, v in arrays.items()})
        return model


def canonical_order(points: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Lexicographic order on (x, y, z, values...), so chunking ignores input order."""
    keys = torch.cat([points, values], dim=1).detach().cpu().numpy()
    return torch.as_tensor(np.lexsort(keys.T[::-1]), dtype=torch.long)


# -- data --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SkinExample:
    """One training or inference item: domain points, padded joints and prior."""

    points: np.ndarray  # (P, 3)
    joints: np.ndarray  # (n, 3), padded
    joint_mask: np.ndarray  # (n,)
    prior: np.ndarray  # (P, j) on the simplex
    f0: np.ndarray | None = None  # (P, n) residual target
    shape_tokens: torch.Tensor | None = None

    @classmethod
    def build(cls, points, joints, prior, weights=None, shape_tokens=None, n: int = MAX_JOINTS):
        joints = np.asarray(joints, dtype=np.float64)
        mask = np.zeros(n, dtype=bool)
        mask[:len(joints)] = True
        padded = np.zeros((n, 3))
        padded[:len(joints)] = joints
        f0 = normalize_weights(weights, prior, n=n) if weights is not None else None
        return cls(np.asarray(points, dtype=np.float64), padded, mask, np.asarray(prior, dtype=np.float64),
                   f0, shape_tokens)


def _tensor(x, dtype):
    return torch.as_tensor(np.array(x), dtype=dtype)


def denoise(model: Denoiser, ex: SkinExample, ft, t: int):
    return model(_tensor(ex.points, model.dtype), torch.as_tensor(ft, dtype=model.dtype), t,
                 _tensor(ex.joints, model.dtype), ex.joint_mask, ex.shape_tokens)


def skin_loss(model: Denoiser, batch: list[SkinExample], schedule: NoiseSchedule,
              generator: torch.Generator, max_points: int | None = None) -> torch.Tensor:
    """Mean squared error of the x0 estimate over unmasked entries.

    Each item gets its own uniform timestep and, if ``max_points`` is set, a
    random point subset of that size.
    """
    if not batch:
        raise DiffusionError("empty batch")
    total = 0.0
    count = 0
    for ex in batch:
        if ex.f0 is None:
            raise DiffusionError("training example has no target")
        idx = torch.arange(len(ex.points))
        if max_points and len(idx) > max_points:
            idx = torch.randperm(len(idx), generator=generator)[:max_points].sort().values
        t = int(torch.randint(1, schedule.steps + 1, (1,), generator=generator))
        f0 = _tensor(ex.f0, model.dtype)[idx]
        g = torch.randn(f0.shape, generator=generator, dtype=torch.float64).to(model.dtype)
        mask = torch.as_tensor(ex.joint_mask)
        ft = forward_noise(f0, t, g, schedule, mask)
        pred = model(_tensor(ex.points, model.dtype)[idx], ft, t, _tensor(ex.joints, model.dtype),
                     ex.joint_mask, ex.shape_tokens)
        err = (pred - f0)[:, mask]
        total = total + (err * err).sum()
        count += err.numel()
    return total / count


def training_step_skin(model: Denoiser, optimizer, batch, schedule: NoiseSchedule,
                       generator: torch.Generator, max_points: int | None = None) -> float:
    model.train()
    optimizer.zero_grad()
    loss = skin_loss(model, batch, schedule, generator, max_points)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


@dataclass(frozen=True)
class SkinTrainingConfig:
    learning_rate: float = 1e-3
    steps: int = 2000
    batch_size: int = 4
    max_points: int = 1024
    seed: int = 0


def train_skin(model: Denoiser, examples: list[SkinExample], schedule: NoiseSchedule,
               cfg: SkinTrainingConfig = SkinTrainingConfig()) -> list[float]:
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.steps, eta_min=cfg.learning_rate * 0.05)
    losses = []
    for _ in range(cfg.steps):
        pick = rng.choice(len(examples), size=min(cfg.batch_size, len(examples)), replace=False)
        losses.append(training_step_skin(model, opt, [examples[i] for i in sorted(pick)], schedule,
                                         gen, cfg.max_points))
        sched.step()
    return losses


# -- sampling ----------------------------------------------------------------

def sample_residual(model: Denoiser, ex: SkinExample, schedule: NoiseSchedule, steps: int = 25,
                    seed: int = 0) -> np.ndarray:
    """Ancestral sampling on a uniform timestep sub-grid, re-noising from each x0 estimate."""
    gen = torch.Generator().manual_seed(seed)
    mask = torch.as_tensor(ex.joint_mask)
    shape = (len(ex.points), model.config.max_joints)
    grid = schedule.subgrid(steps)
    ab = schedule.alpha_bar
    model.eval()
    with torch.no_grad():
        ft = torch.randn(shape, generator=gen, dtype=torch.float64) * mask
        f0 = ft
        for i, t in enumerate(grid):
            f0 = denoise(model, ex, ft.to(model.dtype), int(t)).double().clamp(-2.0, 2.0) * mask
            if i + 1 == len(grid):
                break
            s = int(grid[i + 1])
            a_ts = ab[t] / ab[s]
            c0 = math.sqrt(ab[s]) * (1 - a_ts) / (1 - ab[t])
            ct = math.sqrt(a_ts) * (1 - ab[s]) / (1 - ab[t])
            var = (1 - a_ts) * (1 - ab[s]) / (1 - ab[t])
            noise = torch.randn(shape, generator=gen, dtype=torch.float64)
            ft = (c0 * f0 + ct * ft + math.sqrt(var) * noise) * mask
    return f0.numpy()


def sample_skin(model: Denoiser, ex: SkinExample, schedule: NoiseSchedule, steps: int = 25,
                seed: int = 0) -> np.ndarray:
    """Sampled weights on the example's points, rows on the masked simplex."""
    j = ex.prior.shape[1]
    if not ex.joint_mask[:j].any():
        raise DiffusionError("no valid joints")
    f0 = sample_residual(model, ex, schedule, steps, seed)
    return weights_from_residual(f0, ex.prior, ex.joint_mask[:j])


def vertex_weights_from_points(point_weights, cloud: PointCloud, mesh: Mesh) -> np.ndarray:
    """Average point rows onto their source vertices; unassigned vertices copy the nearest assigned one."""
    w = np.asarray(point_weights, dtype=np.float64)
    if len(w) == 0 or len(cloud) == 0:
        raise DiffusionError("no points")
    if len(w) != len(cloud):
        raise DiffusionError("one weight row per point is required")
    nv = len(mesh.vertices)
    acc = np.zeros((nv, w.shape[1]))
    cnt = np.zeros(nv)
    np.add.at(acc, cloud.source_vertex, w)
    np.add.at(cnt, cloud.source_vertex, 1.0)
    have = cnt > 0
    acc[have] /= cnt[have, None]
    if not have.all():
        donors = np.flatnonzero(have)
        near = nearest_vertex(mesh.vertices[~have], mesh.vertices[donors])
        acc[~have] = acc[donors[near]]
    return acc / acc.sum(axis=1, keepdims=True)
