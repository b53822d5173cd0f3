"""Tubelet-embedding video transformer with one sigmoid head per piano key."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .smf import N_KEYS

BCE_EPS = 1e-7
CHECKPOINT_MAGIC = b"PVTCKPT1"


class ConfigError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 16
    resolution: int = 224
    tubelet: int = 2
    patch: int = 16
    dim: int = 768
    layers: int = 12
    heads: int = 12
    channels: int = 3
    mlp_ratio: float = 4.0

    def __post_init__(self):
        for name in ("frames", "resolution", "tubelet", "patch", "dim", "layers", "heads", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.frames % self.tubelet:
            raise ConfigError(f"frames={self.frames} not divisible by tubelet={self.tubelet}")
        if self.resolution % self.patch:
            raise ConfigError(f"resolution={self.resolution} not divisible by patch={self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} not divisible by heads={self.heads}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")

    @property
    def n_tokens(self) -> int:
        return (self.frames // self.tubelet) * (self.resolution // self.patch) ** 2

    @property
    def tubelet_size(self) -> int:
        return self.tubelet * self.patch * self.patch * self.channels


DESK_CONFIG = ModelConfig(frames=16, resolution=32, tubelet=2, patch=8, dim=64, layers=4, heads=4, channels=1)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_dim)
        self.fc2 = nn.Linear(mlp_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(self.norm1(x)), "b n (three h d) -> three b h n d", three=3, h=self.heads)
        attn = torch.softmax(q @ k.transpose(-1, -2) * q.shape[-1] ** -0.5, dim=-1)
        x = x + self.proj(rearrange(attn @ v, "b h n d -> b n (h d)"))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class VideoTransformer(nn.Module):
    """B x T x S x S x C clips -> B x 88 onset likelihoods."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.dim
        self.embed = nn.Linear(config.tubelet_size, d)
        self.pos = nn.Parameter(torch.zeros(1, config.n_tokens, d))
        self.blocks = nn.ModuleList(
            Block(d, config.heads, int(round(d * config.mlp_ratio))) for _ in range(config.layers)
        )
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, N_KEYS)

    def tokens(self, clips: torch.Tensor) -> torch.Tensor:
        c = self.config
        expected = (c.frames, c.resolution, c.resolution, c.channels)
        if clips.ndim != 5 or tuple(clips.shape[1:]) != expected:
            raise ValueError(f"expected clips of shape B x {' x '.join(map(str, expected))}, got {tuple(clips.shape)}")
        return rearrange(
            clips,
            "b (t pt) (y py) (x px) c -> b (t y x) (pt py px c)",
            pt=c.tubelet,
            py=c.patch,
            px=c.patch,
        )

    def embed_tokens(self, clips: torch.Tensor) -> torch.Tensor:
        # each tubelet loses its own mean before the projection, i.e. the
        # embedding is linear with rows constrained to sum to zero; a bright
        # static scene otherwise dominates every token and stalls training
        t = self.tokens(clips)
        return self.embed(t - t.mean(dim=-1, keepdim=True)) + self.pos

    def logits(self, clips: torch.Tensor) -> torch.Tensor:
        x = self.embed_tokens(clips)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x).mean(dim=1))

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(clips))


def init_params(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> VideoTransformer:
    """Build a model with truncated-normal (std 0.02) weights and zero biases."""
    gen = torch.Generator().manual_seed(seed)
    model = VideoTransformer(config).to(dtype)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif isinstance(_owner(model, name), nn.LayerNorm):
                p.fill_(1.0)
            else:
                nn.init.trunc_normal_(p, std=0.02, a=-0.04, b=0.04, generator=gen)
    return model


def _owner(model: nn.Module, param_name: str) -> nn.Module:
    return model.get_submodule(param_name.rpartition(".")[0]) if "." in param_name else model


def forward(clips, params: VideoTransformer) -> torch.Tensor:
    clips = torch.as_tensor(clips, dtype=next(params.parameters()).dtype)
    return params(clips)


def loss_weighted_bce(pred: torch.Tensor, target: torch.Tensor, w: float = 1.0) -> torch.Tensor:
    """Mean of -[w*y*log(p) + (1-y)*log(1-p)] over every element.

    The class weight scales only the positive term, so a soft 0.5 label
    contributes 0.5*w on the positive side.
    """
    pred = torch.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    return -(w * target * torch.log(pred) + (1.0 - target) * torch.log1p(-pred)).mean()


def _first_nonfinite_module(params: VideoTransformer, clips: torch.Tensor) -> str:
    found: list[str] = []
    hooks = []
    for name, module in params.named_modules():
        if name and not list(module.children()):

            def hook(mod, inputs, output, name=name):
                if not found and not torch.isfinite(output).all():
                    found.append(name)

            hooks.append(module.register_forward_hook(hook))
    try:
        with torch.no_grad():
            params(clips)
    finally:
        for h in hooks:
            h.remove()
    return found[0] if found else "loss"


def grad(params: VideoTransformer, batch, w: float = 1.0) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss and exact gradients of weighted BCE through the network.

    ``batch`` is a ``(clips, targets)`` pair. Gradients are keyed by parameter
    name and do not touch ``.grad`` on ``params``.
    """
    clips, target = batch
    dtype = next(params.parameters()).dtype
    clips = torch.as_tensor(clips, dtype=dtype)
    target = torch.as_tensor(target, dtype=dtype)
    names, tensors = zip(*params.named_parameters())
    loss = loss_weighted_bce(params(clips), target, w)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss; first bad output in {_first_nonfinite_module(params, clips)!r}")
    grads = torch.autograd.grad(loss, tensors)
    return float(loss.detach()), dict(zip(names, grads))


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adamw_step(
    params: VideoTransformer,
    grads: dict[str, torch.Tensor],
    state: AdamWState,
    lr: float,
    wd: float = 0.05,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamWState:
    """One in-place AdamW update with decoupled weight decay and bias correction."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.named_parameters():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        p.mul_(1.0 - lr * wd)
        p.addcdiv_(m / bc1, (v / bc2).sqrt_().add_(eps), value=-lr)
    return state


def lr_schedule(step: int, total_steps: int, warmup_frac: float, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` over floor(warmup_frac * total) steps, then cosine decay to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = int(math.floor(warmup_frac * total_steps))
    if step < warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def save_checkpoint(path, params: VideoTransformer, extra: dict | None = None) -> None:
    """Write a self-describing checkpoint.

    Layout: magic, u32 header length, UTF-8 JSON header (config, extra
    metadata, tensor names and shapes), then all tensors as little-endian
    float32 in header order.
    """
    tensors = [(n, t.detach().cpu().to(torch.float32).numpy()) for n, t in params.state_dict().items()]
    header = {
        "config": asdict(params.config),
        "extra": extra or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob)
        for _, a in tensors:
            f.write(a.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[VideoTransformer, dict]:
    data = Path(path).read_bytes()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack("<I", data[pos : pos + 4])
    header = json.loads(data[pos + 4 : pos + 4 + n])
    pos += 4 + n
    model = VideoTransformer(ModelConfig(**header["config"]))
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
        pos += 4 * count
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    model.load_state_dict(state)
    return model, header["extra"]
