"""Noise schedule, training objective, guidance, and the block sampler.

The schedule is a sigmoid schedule parameterized by log-SNR, linear in the
noise level u: lambda(u) = 9 - 18u, alpha = sqrt(sigmoid(lambda)),
sigma = sqrt(sigmoid(-lambda)), so alpha^2 + sigma^2 = 1 identically.

Training draws an independent noise level per frame (so any clean/noisy
context pattern is seen during training) and drops the action conditioning
for whole clips with probability p_drop, enabling classifier-free guidance
at sampling time.

Sampling denoises a block of frames in parallel: context frames stay pinned
clean at u = 0 while all block frames share a common 10-step DDIM trajectory
from u = 1 to u = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .env import WorldGymError
from .model import WorldModel

LOGSNR_MAX = 9.0
LOGSNR_MIN = -9.0


class DiffusionError(WorldGymError):
    pass


def log_snr(u):
    return LOGSNR_MAX + u * (LOGSNR_MIN - LOGSNR_MAX)


def alpha_sigma(u):
    """alpha(u), sigma(u) for scalar/array/tensor u in [0, 1]."""
    lam = log_snr(torch.as_tensor(u, dtype=torch.float64) if not torch.is_tensor(u) else u)
    alpha = torch.sqrt(torch.sigmoid(lam))
    sigma = torch.sqrt(torch.sigmoid(-lam))
    return alpha, sigma


def _bc(x: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Broadcast per-frame scalars onto frame-shaped tensors."""
    return x.reshape(x.shape + (1,) * (like.dim() - x.dim())).to(like.dtype)


def q_sample(x0: torch.Tensor, u, eps: torch.Tensor) -> torch.Tensor:
    """Forward process: x_u = alpha(u) * x0 + sigma(u) * eps."""
    u_t = torch.as_tensor(u, dtype=x0.dtype, device=x0.device)
    if torch.any(u_t < 0) or torch.any(u_t > 1):
        raise DiffusionError("noise level u out of [0, 1]")
    alpha, sigma = alpha_sigma(u_t)
    return _bc(alpha, x0) * x0 + _bc(sigma, x0) * eps


def v_target(x0: torch.Tensor, eps: torch.Tensor, u) -> torch.Tensor:
    """v = alpha * eps - sigma * x0."""
    alpha, sigma = alpha_sigma(torch.as_tensor(u, dtype=x0.dtype, device=x0.device))
    return _bc(alpha, x0) * eps - _bc(sigma, x0) * x0


def from_v(x_u: torch.Tensor, v: torch.Tensor, u) -> tuple[torch.Tensor, torch.Tensor]:
    """Invert v-parameterization: recover (x0_hat, eps_hat) from (x_u, v)."""
    alpha, sigma = alpha_sigma(torch.as_tensor(u, dtype=x_u.dtype, device=x_u.device))
    a, s = _bc(alpha, x_u), _bc(sigma, x_u)
    return a * x_u - s * v, s * x_u + a * v


@dataclass
class SamplerConfig:
    steps: int = 10
    guidance_w: float = 1.5
    eta: float = 0.0
    horizon: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise DiffusionError("steps must be >= 1")
        if self.horizon < 1:
            raise DiffusionError("horizon must be >= 1")
        if self.guidance_w < 0:
            raise DiffusionError("guidance weight must be >= 0")


def training_loss(model: WorldModel, frames: torch.Tensor, actions: torch.Tensor,
                  null_mask: torch.Tensor, generator: torch.Generator,
                  p_drop: float = 0.1, noise_bundle: dict | None = None) -> torch.Tensor:
    """Diffusion-forcing MSE loss on v over a batch of clips.

    frames: (B, T, H, W, C) in [0, 1]; actions: (B, T, K) normalized;
    null_mask: (B, T) bool. Noise levels are independent per frame; action
    dropout applies to whole clips. ``noise_bundle`` pins (u, eps, drop) for
    deterministic evaluation (e.g. finite-difference checks).
    """
    B, T = frames.shape[:2]
    dt, dev = frames.dtype, frames.device
    if noise_bundle is None:
        u = torch.rand(B, T, generator=generator, dtype=dt, device=dev)
        eps = torch.randn(frames.shape, generator=generator, dtype=dt, device=dev)
        drop = torch.rand(B, generator=generator, dtype=dt, device=dev) < p_drop
    else:
        u, eps, drop = noise_bundle["u"], noise_bundle["eps"], noise_bundle["drop"]
    x_u = q_sample(frames, u, eps)
    target = v_target(frames, eps, u)
    mask = null_mask | drop.unsqueeze(1)
    pred = model(x_u, u, actions, mask)
    return torch.mean((pred - target) ** 2)


def cfg_predict(model: WorldModel, frames: torch.Tensor, noise_level: torch.Tensor,
                actions: torch.Tensor, null_mask: torch.Tensor,
                denoise_mask: torch.Tensor, w: float) -> tuple[torch.Tensor, int]:
    """Classifier-free-guided v prediction: v_u + w (v_c - v_u).

    The unconditional branch nulls the actions of the frames being denoised;
    context frames keep their true actions in both branches. Returns the
    guided prediction and the number of model invocations (1 when w == 1).
    """
    if w == 1.0:
        return model(frames, noise_level, actions, null_mask), 1
    uncond_mask = null_mask | denoise_mask
    # batch the two branches through one forward pass
    B = frames.shape[0]
    v_both = model(
        torch.cat([frames, frames], dim=0),
        torch.cat([noise_level, noise_level], dim=0),
        torch.cat([actions, actions], dim=0),
        torch.cat([null_mask, uncond_mask], dim=0),
    )
    v_c, v_u = v_both[:B], v_both[B:]
    return v_u + w * (v_c - v_u), 2


@torch.no_grad()
def sample_block(model: WorldModel, ctx_frames: torch.Tensor, ctx_actions: torch.Tensor,
                 ctx_null_mask: torch.Tensor, block_actions: torch.Tensor,
                 cfg: SamplerConfig, generator: torch.Generator) -> tuple[torch.Tensor, int]:
    """Generate a block of frames conditioned on clean context frames.

    ctx_frames: (Tc, H, W, C) with Tc possibly 0; block_actions: (Tb, K).
    All block frames share each DDIM step's noise level; context frames stay
    pinned at u = 0. Output is clamped to [0, 1] only at the end. Returns
    (block frames (Tb, H, W, C), guided-invocation count).
    """
    cfgm = model.config
    Tc, Tb = ctx_frames.shape[0], block_actions.shape[0]
    if Tb < 1:
        raise DiffusionError("empty action block")
    if Tc + Tb > cfgm.context_frames:
        raise DiffusionError(
            f"context {Tc} + block {Tb} exceeds window capacity {cfgm.context_frames}")

    shape = (Tb, cfgm.frame_size, cfgm.frame_size, cfgm.channels)
    x = torch.randn(shape, generator=generator, dtype=ctx_frames.dtype)

    actions = torch.cat([ctx_actions, block_actions], dim=0).unsqueeze(0)
    null_mask = torch.cat([
        ctx_null_mask, torch.zeros(Tb, dtype=torch.bool)], dim=0).unsqueeze(0)
    denoise_mask = torch.cat([
        torch.zeros(Tc, dtype=torch.bool), torch.ones(Tb, dtype=torch.bool)], dim=0).unsqueeze(0)

    invocations = 0
    for k in range(cfg.steps):
        u = 1.0 - k / cfg.steps
        u_next = 1.0 - (k + 1) / cfg.steps
        window = torch.cat([ctx_frames, x], dim=0).unsqueeze(0)
        levels = torch.cat([
            torch.zeros(Tc, dtype=x.dtype), torch.full((Tb,), u, dtype=x.dtype)]).unsqueeze(0)
        v, calls = cfg_predict(model, window, levels, actions, null_mask, denoise_mask,
                               cfg.guidance_w)
        invocations += calls
        x0_hat, eps_hat = from_v(x, v[0, Tc:], u)
        a_next, s_next = alpha_sigma(torch.tensor(u_next, dtype=torch.float64))
        a_next, s_next = float(a_next), float(s_next)
        if cfg.eta > 0 and u_next > 0:
            a_cur, s_cur = alpha_sigma(torch.tensor(u, dtype=torch.float64))
            sig_t = cfg.eta * float(s_next / s_cur) * float(
                torch.sqrt(torch.clamp(1 - (a_cur / a_next) ** 2, min=0.0)))
            sig_t = min(sig_t, s_next)
            noise = torch.randn(shape, generator=generator, dtype=x.dtype)
            x = a_next * x0_hat + (s_next ** 2 - sig_t ** 2) ** 0.5 * eps_hat + sig_t * noise
        else:
            x = a_next * x0_hat + s_next * eps_hat
    return torch.clamp(x, 0.0, 1.0), invocations
