"""Shape-conditioned autoregressive skeleton model.

A small point-cloud encoder turns a surface sample into a fixed number of
shape tokens (farthest-point groups pooled by a shared MLP, plus one global
token). They prefix a decoder-only transformer that predicts skeleton tokens
with next-token cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import _kernels
from .geometry import PointCloud, Skeleton
from .sequencer import BOS, EOS, PAD, VOCAB_SIZE, TokenSequence, max_sequence_length, tokenize


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SeqModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    width: int = 128
    n_points: int = 8192
    n_groups: int = 256
    group_size: int = 32
    max_bones: int = 100

    @property
    def shape_tokens(self) -> int:
        return self.n_groups + 1

    @property
    def context(self) -> int:
        return self.shape_tokens + max_sequence_length(self.max_bones)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    augment_scale: bool = False
    augment_shift: bool = False
    augment_rotate: bool = False
    scale_range: tuple[float, float] = (0.8, 1.0)
    shift_max: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0 or self.steps <= 0 or self.batch_size <= 0:
            raise ModelError("learning rate, steps and batch size must be positive")


# -- shape input -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShapeInput:
    """Grouped point features ready for the encoder."""

    grouped: np.ndarray  # (G, K, 6): offset from group center, normal
    centers: np.ndarray  # (G, 3)


def group_points(cloud: PointCloud, config: SeqModelConfig) -> ShapeInput:
    if len(cloud) != config.n_points:
        raise ModelError(f"expected {config.n_points} points, got {len(cloud)}")
    pts = cloud.points
    normals = cloud.normals if cloud.normals is not None else np.zeros_like(pts)
    idx = _kernels.farthest_point_sample(pts, config.n_groups, 0)
    centers = pts[idx]
    diff = centers[:, None, :] - pts[None, :, :]
    d = (diff * diff).sum(-1)
    k = config.group_size
    nn_idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    grouped = np.concatenate([pts[nn_idx] - centers[:, None, :], normals[nn_idx]], axis=-1)
    return ShapeInput(grouped, centers)


def _yaw(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment(shape: ShapeInput, skeleton: Skeleton, rng: np.random.Generator, cfg: TrainingConfig):
    """Random yaw / uniform scale / shift applied jointly to shape and skeleton.

    Grouping is similarity-invariant, so the grouped offsets are transformed
    in place rather than regrouped. The result is refit into the unit cube.
    """
    rot = _yaw(rng.uniform(0.0, 2 * math.pi)) if cfg.augment_rotate else np.eye(3)
    centers = shape.centers @ rot.T
    offsets = shape.grouped[..., :3] @ rot.T
    normals = shape.grouped[..., 3:] @ rot.T
    joints = skeleton.joints @ rot.T
    allp = np.concatenate([(centers[:, None] + offsets).reshape(-1, 3), joints])
    lo, hi = allp.min(0), allp.max(0)
    mid = 0.5 * (lo + hi)
    fit = 1.0 / max(float((hi - lo).max()), 1e-12)
    scale = fit * (rng.uniform(*cfg.scale_range) if cfg.augment_scale else 1.0)
    half = 0.5 * (hi - lo) * scale
    shift = np.zeros(3)
    if cfg.augment_shift:
        slack = np.clip(0.5 - half, 0.0, cfg.shift_max)
        shift = rng.uniform(-slack, slack)
    centers = (centers - mid) * scale + shift
    offsets = offsets * scale
    joints = np.clip((joints - mid) * scale + shift, -0.5, 0.5)
    shape = ShapeInput(np.concatenate([offsets, normals], axis=-1), centers)
    return shape, skeleton.with_joints(joints)


# -- network -----------------------------------------------------------------

class ShapeEncoder(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.point_in = nn.Linear(6, width)
        self.point_out = nn.Linear(width, width)
        self.center = nn.Linear(3, width)
        self.glob = nn.Linear(width, width)

    def forward(self, grouped: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
        h = self.point_out(F.gelu(self.point_in(grouped)))  # (B, G, K, w)
        tokens = h.mean(dim=2) + self.center(centers)
        g = self.glob(tokens.mean(dim=1, keepdim=True))
        return torch.cat([tokens, g], dim=1)


class CausalSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ModelError("width must divide evenly into heads")
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, w = x.shape
        q, k, v = self.qkv(x).split(w, dim=-1)
        shape = (b, n, self.heads, w // self.heads)
        q, k, v = (t.reshape(shape).transpose(1, 2) for t in (q, k, v))
        att = (q @ k.transpose(-1, -2)) / math.sqrt(w // self.heads)
        mask = torch.ones(n, n, dtype=torch.bool, device=x.device).triu(1)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, n, w)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = CausalSelfAttention(width, heads)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class SkeletonModel(nn.Module):
    """Decoder-only transformer over [shape tokens | skeleton tokens]."""

    def __init__(self, config: SeqModelConfig, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = config
        gen = torch.random.fork_rng()
        with gen:
            torch.manual_seed(seed)
            w = config.width
            self.encoder = ShapeEncoder(w)
            self.tok_emb = nn.Embedding(VOCAB_SIZE, w)
            self.pos_emb = nn.Embedding(config.context, w)
            self.blocks = nn.ModuleList(Block(w, config.n_heads) for _ in range(config.n_layers))
            self.ln_f = nn.LayerNorm(w)
            self.head = nn.Linear(w, VOCAB_SIZE)
            for m in self.modules():
                if isinstance(m, (nn.Linear, nn.Embedding)):
                    nn.init.normal_(m.weight, std=0.02)
                if isinstance(m, nn.Linear) and m.bias is not None:
                    nn.init.zeros_(m.bias)
        self.to(dtype)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def encode(self, shape: ShapeInput | list[ShapeInput]) -> torch.Tensor:
        shapes = shape if isinstance(shape, list) else [shape]
        grouped = torch.as_tensor(np.stack([s.grouped for s in shapes]), dtype=self.dtype)
        centers = torch.as_tensor(np.stack([s.centers for s in shapes]), dtype=self.dtype)
        return self.encoder(grouped, centers)

    def forward(self, shape_tokens: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Logits (B, L+1, V); row i predicts token i, row 0 comes from the last shape token."""
        b, s, _ = shape_tokens.shape
        n = s + tokens.shape[1]
        if n > self.config.context:
            raise ModelError(f"sequence of {n} exceeds context {self.config.context}")
        x = torch.cat([shape_tokens, self.tok_emb(tokens)], dim=1)
        x = x + self.pos_emb(torch.arange(n, device=x.device))
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.ln_f(x[:, s - 1:]))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}

    @classmethod
    def from_arrays(cls, config: SeqModelConfig, arrays: dict, dtype=torch.float32) -> "SkeletonModel":
        model = cls(config, dtype=dtype)
        model.load_state_dict({k: torch.as_tensor(np.asarray(v)).to(dtype) for k, v in arrays.items()})
        return model


def encode_shape(cloud: PointCloud, model: SkeletonModel) -> torch.Tensor:
    """Shape tokens (S, width) for one point cloud."""
    with torch.no_grad():
        return model.encode(group_points(cloud, model.config))[0]


def forward_logits(shape_tokens: torch.Tensor, prefix, model: SkeletonModel) -> torch.Tensor:
    """Next-token logits for each prefix position, plus one row from the shape alone."""
    toks = torch.as_tensor(list(prefix.tokens if isinstance(prefix, TokenSequence) else prefix),
                           dtype=torch.long).reshape(1, -1)
    st = shape_tokens if shape_tokens.dim() == 3 else shape_tokens[None]
    return model(st.to(model.dtype), toks)[0]


# -- training ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sample:
    shape: ShapeInput
    sequence: TokenSequence
    skeleton: Skeleton | None = None


def collate(sequences: list[TokenSequence]):
    """Pad with PAD; returns (inputs, targets) where targets ignore PAD."""
    m = max(len(s) for s in sequences)
    arr = torch.full((len(sequences), m), PAD, dtype=torch.long)
    for i, s in enumerate(sequences):
        arr[i, :len(s)] = torch.tensor(s.tokens)
    return arr[:, :-1], arr[:, 1:]


def sequence_loss(model: SkeletonModel, shapes: list[ShapeInput], sequences: list[TokenSequence],
                  shape_tokens: torch.Tensor | None = None) -> torch.Tensor:
    """Mean next-token cross-entropy over supervised (non-PAD) positions."""
    inputs, targets = collate(sequences)
    if (targets != PAD).sum() == 0:
        raise ModelError("batch has no supervised positions")
    st = model.encode(shapes) if shape_tokens is None else shape_tokens
    logits = model(st, inputs)[:, 1:]
    return F.cross_entropy(logits.reshape(-1, VOCAB_SIZE), targets.reshape(-1), ignore_index=PAD)


def make_optimizer(model: nn.Module, lr: float) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=lr)


def training_step(model: SkeletonModel, optimizer: torch.optim.Optimizer, batch: list[Sample]) -> float:
    model.train()
    optimizer.zero_grad()
    loss = sequence_loss(model, [s.shape for s in batch], [s.sequence for s in batch])
    loss.backward()
    optimizer.step()
    return float(loss.detach())


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    accuracy: list[tuple[int, float]] = field(default_factory=list)


def train(model: SkeletonModel, samples: list[Sample], cfg: TrainingConfig, ordering: str = "spatial",
          eval_every: int = 0, target_accuracy: float | None = None, log: TrainLog | None = None) -> TrainLog:
    """Minibatch Adam over ``samples``; deterministic for a fixed ``cfg.seed``.

    With ``target_accuracy`` set, stops at the first evaluation that reaches it.
    """
    log = log or TrainLog()
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    opt = make_optimizer(model, cfg.learning_rate)
    augmenting = cfg.augment_rotate or cfg.augment_scale or cfg.augment_shift
    for step in range(1, cfg.steps + 1):
        pick = rng.choice(len(samples), size=min(cfg.batch_size, len(samples)), replace=False)
        batch = []
        for i in sorted(pick):
            s = samples[i]
            if augmenting and s.skeleton is not None:
                shape, skel = augment(s.shape, s.skeleton, rng, cfg)
                batch.append(Sample(shape, tokenize(skel, ordering), skel))
            else:
                batch.append(s)
        log.losses.append(training_step(model, opt, batch))
        if eval_every and step % eval_every == 0:
            acc = teacher_forced_accuracy(model, samples)
            log.accuracy.append((step, acc))
            if target_accuracy is not None and acc >= target_accuracy:
                break
    return log


def teacher_forced_accuracy(model: SkeletonModel, samples: list[Sample], batch_size: int = 16) -> float:
    model.eval()
    correct = total = 0
    with torch.no_grad():
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            inputs, targets = collate([s.sequence for s in chunk])
            logits = model(model.encode([s.shape for s in chunk]), inputs)[:, 1:]
            keep = targets != PAD
            correct += int((logits.argmax(-1)[keep] == targets[keep]).sum())
            total += int(keep.sum())
    return correct / total


# -- sampling ----------------------------------------------------------------

@dataclass(frozen=True)
class SampleResult:
    sequence: TokenSequence
    truncated: bool


def sample_skeleton(shape_tokens: torch.Tensor, model: SkeletonModel, temperature: float = 0.0,
                    seed: int = 0, max_tokens: int | None = None, ordering: str = "spatial") -> SampleResult:
    """Decode from BOS until EOS or ``max_tokens`` total tokens (BOS and EOS included)."""
    max_tokens = max_tokens or max_sequence_length(model.config.max_bones)
    max_tokens = min(max_tokens, model.config.context - model.config.shape_tokens + 1)
    gen = torch.Generator().manual_seed(seed)
    st = (shape_tokens if shape_tokens.dim() == 3 else shape_tokens[None]).to(model.dtype)
    toks = [BOS]
    model.eval()
    with torch.no_grad():
        while len(toks) < max_tokens:
            logits = model(st, torch.tensor([toks]))[0, -1].clone()
            logits[BOS] = float("-inf")
            logits[PAD] = float("-inf")
            # the last slot can only close the sequence
            if len(toks) == max_tokens - 1:
                nxt = EOS
            elif temperature <= 0:
                nxt = int(torch.argmax(logits))
            else:
                probs = torch.softmax(logits.double() / temperature, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=gen))
            toks.append(nxt)
            if nxt == EOS:
                break
    truncated = toks[-1] != EOS
    return SampleResult(TokenSequence(tuple(toks), ordering), truncated)
