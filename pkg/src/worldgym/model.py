"""Action-conditioned video diffusion transformer.

Frames are patchified into tokens; blocks alternate between spatial attention
(within a frame) and causal temporal attention (across frames at the same
spatial index). Per-frame conditioning — a sinusoidal embedding of the frame's
noise level plus a projected action vector (or a learned null-action token) —
modulates every block through AdaLN-Zero, so the model's output is exactly
zero at initialization.

Checkpoint format (single file): one JSON header line holding the config,
arbitrary metadata, and an ordered tensor manifest (name, shape, dtype),
followed by ``\\n`` and the raw float32 little-endian tensor data concatenated
in manifest order.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .env import WorldGymError


class ModelError(WorldGymError):
    pass


@dataclass
class ModelConfig:
    frame_size: int = 32
    patch: int = 4
    channels: int = 3
    hidden_dim: int = 128
    layers: int = 8  # alternating spatial/temporal, must be even
    heads: int = 4
    mlp_ratio: int = 4
    action_dim: int = 3
    context_frames: int = 8  # max window length N_train
    init_seed: int = 0

    def __post_init__(self):
        if self.frame_size % self.patch != 0:
            raise ModelError("frame_size must be divisible by patch")
        if self.layers % 2 != 0:
            raise ModelError("layers must be even (spatial/temporal pairs)")
        if self.hidden_dim % self.heads != 0:
            raise ModelError("hidden_dim must be divisible by heads")

    @property
    def tokens_per_frame(self) -> int:
        return (self.frame_size // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch


def patchify(frames: torch.Tensor, patch: int) -> torch.Tensor:
    """(..., H, W, C) -> (..., H/P * W/P, C*P*P) token sequence."""
    *lead, H, W, C = frames.shape
    if H % patch or W % patch:
        raise ModelError(f"frame {H}x{W} not divisible by patch {patch}")
    gh, gw = H // patch, W // patch
    x = frames.reshape(*lead, gh, patch, gw, patch, C)
    x = x.movedim(-4, -3)  # (..., gh, gw, patch, patch, C)
    return x.reshape(*lead, gh * gw, patch * patch * C)


def unpatchify(tokens: torch.Tensor, frame_size: int, patch: int, channels: int = 3) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    *lead, S, D = tokens.shape
    gh = gw = frame_size // patch
    if S != gh * gw or D != channels * patch * patch:
        raise ModelError(f"token shape ({S},{D}) does not match frame {frame_size}/patch {patch}")
    x = tokens.reshape(*lead, gh, gw, patch, patch, channels)
    x = x.movedim(-3, -4)  # (..., gh, patch, gw, patch, C)
    return x.reshape(*lead, frame_size, frame_size, channels)


def sinusoidal_embedding(u: torch.Tensor, dim: int, max_period: float = 1e4) -> torch.Tensor:
    """Sinusoidal features of a noise level u in [0, 1] (scaled to [0, 1000])."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=u.dtype, device=u.device) / half)
    args = u.unsqueeze(-1) * 1000.0 * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, causal: bool) -> torch.Tensor:
    # (B, heads, S, hd) each; seam point for ablation in tests
    return F.scaled_dot_product_attention(q, k, v, is_causal=causal)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, causal: bool) -> torch.Tensor:
        B, S, D = x.shape
        hd = D // self.heads
        qkv = self.qkv(x).reshape(B, S, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        out = _attend(qkv[0], qkv[1], qkv[2], causal)
        return self.proj(out.transpose(1, 2).reshape(B, S, D))


class DiTBlock(nn.Module):
    """AdaLN-Zero transformer block over one axis (spatial or temporal)."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, causal: bool):
        super().__init__()
        self.causal = causal
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.SiLU(), nn.Linear(mlp_ratio * dim, dim))
        self.modulation = nn.Linear(dim, 6 * dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        # x: (B, S, d); cond: (B, S, d) or broadcastable
        shift1, scale1, gate1, shift2, scale2, gate2 = self.modulation(F.silu(cond)).chunk(6, dim=-1)
        x = x + gate1 * self.attn(self.norm1(x) * (1 + scale1) + shift1, self.causal)
        x = x + gate2 * self.mlp(self.norm2(x) * (1 + scale2) + shift2)
        return x


class WorldModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.token_embed = nn.Linear(config.patch_dim, d)
        self.spatial_pos = nn.Parameter(torch.zeros(config.tokens_per_frame, d))
        self.temporal_pos = nn.Parameter(torch.zeros(config.context_frames, d))
        self.action_proj = nn.Linear(config.action_dim, d)
        self.null_action = nn.Parameter(torch.zeros(d))
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList([
            DiTBlock(d, config.heads, config.mlp_ratio, causal=(i % 2 == 1))
            for i in range(config.layers)
        ])
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False)
        self.final_modulation = nn.Linear(d, 2 * d)
        self.final_proj = nn.Linear(d, config.patch_dim)
        self._init_parameters(config.init_seed)

    def _init_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)

        def trunc(t, std=0.02):
            with torch.no_grad():
                t.copy_(torch.randn(t.shape, generator=gen) * std)

        for name, p in self.named_parameters():
            with torch.no_grad():
                p.zero_()
            if name.endswith(".bias") or name == "null_action":
                if name == "null_action":
                    trunc(p)
                continue
            if "modulation" in name or "final_proj" in name:
                continue  # AdaLN-Zero: gates and output projection stay zero
            if name in ("spatial_pos", "temporal_pos"):
                trunc(p)
            elif p.dim() >= 2:
                # xavier-uniform with a seeded generator
                fan_in, fan_out = p.shape[1], p.shape[0]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                with torch.no_grad():
                    p.copy_((torch.rand(p.shape, generator=gen) * 2 - 1) * bound)

    def condition_vector(self, noise_level: torch.Tensor, actions: torch.Tensor,
                         null_mask: torch.Tensor) -> torch.Tensor:
        """Per-frame conditioning: embedded noise level + action (or null token)."""
        t_emb = self.time_mlp(sinusoidal_embedding(noise_level, self.config.hidden_dim))
        a_emb = self.action_proj(actions)
        null = self.null_action.to(a_emb.dtype)
        a_emb = torch.where(null_mask.unsqueeze(-1), null.expand_as(a_emb), a_emb)
        return t_emb + a_emb

    def forward(self, frames: torch.Tensor, noise_level: torch.Tensor,
                actions: torch.Tensor, null_mask: torch.Tensor) -> torch.Tensor:
        """Predict v for a window of noisy frames.

        frames: (B, T, H, W, C); noise_level: (B, T); actions: (B, T, K);
        null_mask: (B, T) bool. Returns (B, T, H, W, C).
        """
        cfg = self.config
        B, T = frames.shape[:2]
        if T > cfg.context_frames:
            raise ModelError(f"window of {T} frames exceeds context cap {cfg.context_frames}")
        cond = self.condition_vector(noise_level, actions, null_mask)  # (B, T, d)

        x = self.token_embed(patchify(frames, cfg.patch))  # (B, T, S, d)
        S, d = x.shape[2], cfg.hidden_dim
        x = x + self.spatial_pos + self.temporal_pos[:T].unsqueeze(1)

        for i, block in enumerate(self.blocks):
            if block.causal:  # temporal: attend across T per spatial index
                xt = x.transpose(1, 2).reshape(B * S, T, d)
                ct = cond.unsqueeze(1).expand(B, S, T, d).reshape(B * S, T, d)
                x = block(xt, ct).reshape(B, S, T, d).transpose(1, 2)
            else:  # spatial: attend across S within each frame
                xs = x.reshape(B * T, S, d)
                cs = cond.reshape(B * T, 1, d)
                x = block(xs, cs).reshape(B, T, S, d)

        shift, scale = self.final_modulation(F.silu(cond)).chunk(2, dim=-1)
        x = self.final_norm(x) * (1 + scale.unsqueeze(2)) + shift.unsqueeze(2)
        return unpatchify(self.final_proj(x), cfg.frame_size, cfg.patch, cfg.channels)


def save_checkpoint(path: Path, model: WorldModel, metadata: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    manifest = [{"name": k, "shape": list(v.shape), "dtype": "float32"} for k, v in state.items()]
    header = json.dumps({
        "config": asdict(model.config),
        "metadata": metadata or {},
        "tensors": manifest,
    }, sort_keys=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        for k in state:
            f.write(state[k].numpy().astype("<f4").tobytes())


def load_checkpoint(path: Path) -> tuple[WorldModel, dict]:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        model = WorldModel(ModelConfig(**header["config"]))
        state = {}
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise ModelError(f"truncated checkpoint blob at tensor {entry['name']}")
            arr = np.frombuffer(buf, dtype="<f4").reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(arr.copy())
        extra = f.read()
    if extra:
        raise ModelError("trailing bytes after checkpoint blob")
    model.load_state_dict(state)
    return model, header["metadata"]
