"""Linear-beta schedule, DDIM stepping and cosine-power classifier-free guidance."""

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class DiffusionSchedule:
    T_train: int
    betas: np.ndarray
    alphas: np.ndarray
    alphas_cumprod: np.ndarray

    def sampling_steps(self, n):
        """Uniform-stride decreasing timesteps, ``n`` of them, ending at 0."""
        if n < 1:
            raise ValueError(f"need at least one sampling step, got {n}")
        stride = self.T_train // n
        return [int(t) for t in range(0, stride * n, stride)][::-1]


def make_schedule(T_train=1000, beta_start=1e-4, beta_end=0.02):
    betas = np.linspace(beta_start, beta_end, T_train, dtype=np.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(T_train, betas, alphas, np.cumprod(alphas))


@dataclass(frozen=True)
class CfgConfig:
    alpha_cfg: float = 2.0
    beta_scale: float = 1.0
    steps: int = 30

    def __post_init__(self):
        if self.alpha_cfg < 1 or self.steps < 1:
            raise ValueError(f"need alpha_cfg >= 1 and steps >= 1, got {self.alpha_cfg}, {self.steps}")


def _abar(schedule, t, like):
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) >= schedule.T_train):
        raise ValueError(f"timestep {t} outside [0, {schedule.T_train})")
    a = torch.as_tensor(schedule.alphas_cumprod[np.asarray(t)], dtype=like.dtype)
    return a.reshape(a.shape + (1,) * (like.ndim - a.ndim))


def q_sample(z0, t, eps, schedule):
    """Forward noising ``sqrt(abar_t)·z0 + sqrt(1 - abar_t)·eps``; ``t`` scalar or per-batch."""
    a = _abar(schedule, t, z0)
    return a.sqrt() * z0 + (1 - a).sqrt() * eps


def predict_z0(z_t, eps, t, schedule):
    a = _abar(schedule, t, z_t)
    return (z_t - (1 - a).sqrt() * eps) / a.sqrt()


def cfg_scale(t_index, cfg):
    """Effective guidance at countdown index ``t_index``.

    The sampling loop passes ``steps - 1 - i`` at iteration ``i``, so the last
    update runs at the full ``alpha_cfg``.
    """
    if not 0 <= t_index <= cfg.steps:
        raise ValueError(f"t_index {t_index} outside [0, {cfg.steps}]")
    delta = (1 - math.cos((1 - t_index / cfg.steps) ** cfg.beta_scale * math.pi)) / 2
    return 1 + (cfg.alpha_cfg - 1) * delta


def guided_eps(eps_uncond, eps_cond, alpha_eff):
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(f"shape mismatch: {tuple(eps_uncond.shape)} vs {tuple(eps_cond.shape)}")
    return eps_uncond + alpha_eff * (eps_cond - eps_uncond)


def clip_z0(z_t, eps_t, t, schedule, clip):
    """Clamp the clean-latent estimate to ``clip = (lo, hi)`` and re-derive the noise."""
    z0 = predict_z0(z_t, eps_t, t, schedule)
    if clip is None:
        return z0, eps_t
    lo, hi = (b.to(z0.dtype) for b in clip)
    z0 = torch.maximum(torch.minimum(z0, hi), lo)
    a = _abar(schedule, t, z_t)
    return z0, (z_t - a.sqrt() * z0) / (1 - a).sqrt()


def ddim_step(z_t, eps_t, t, t_prev, schedule, clip=None):
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``.

    ``clip`` optionally bounds the intermediate clean-latent estimate.
    """
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    z0, eps_t = clip_z0(z_t, eps_t, t, schedule, clip)
    a_prev = _abar(schedule, t_prev, z_t)
    return a_prev.sqrt() * z0 + (1 - a_prev).sqrt() * eps_t


def blend(generated, agnostic, mask):
    """Composite ``mask·generated + (1 - mask)·agnostic`` in pixel space."""
    generated, agnostic, mask = (np.asarray(a, dtype=np.float32) for a in (generated, agnostic, mask))
    if generated.shape != agnostic.shape or mask.shape[-2:] != generated.shape[-2:]:
        raise ValueError(f"shape mismatch: {generated.shape}, {agnostic.shape}, {mask.shape}")
    return mask * generated + (1 - mask) * agnostic


@torch.no_grad()
def sample_latents(model, refs, feats_g, feats_s, cplx_g, cplx_s, cfg, seed, schedule, trace=None, clip=None):
    """Guided DDIM from seeded Gaussian noise; returns z0 of shape (B, 4, H, W).

    Every step runs the null and full condition in one doubled batch.  The
    final update jumps from the last sampled timestep to a clean estimate.
    ``trace`` (a list) collects each step's guided noise when given;
    ``clip`` is passed through to :func:`ddim_step`.
    """
    c = model.config
    B = refs.shape[0]
    dtype = next(model.parameters()).dtype
    gen = torch.Generator().manual_seed(int(seed))
    z = torch.randn((B, c.latent_ch, c.latent_side, c.latent_side), generator=gen).to(dtype)
    steps = schedule.sampling_steps(cfg.steps)
    refs2 = torch.cat([refs, refs])
    fg2, fs2 = torch.cat([feats_g, feats_g]), torch.cat([feats_s, feats_s])
    cg2 = None if cplx_g is None else torch.cat([cplx_g, cplx_g])
    cs2 = None if cplx_s is None else torch.cat([cplx_s, cplx_s])
    drop = torch.cat([torch.ones(B, dtype=torch.bool), torch.zeros(B, dtype=torch.bool)])
    for i, t in enumerate(steps):
        t_index = cfg.steps - 1 - i
        tt = torch.full((2 * B,), t, dtype=torch.long)
        eps_u, eps_c = model(torch.cat([z, z]), refs2, tt, fg2, fs2, cg2, cs2, drop=drop).chunk(2)
        eps = guided_eps(eps_u, eps_c, cfg_scale(t_index, cfg))
        if trace is not None:
            trace.append(eps)
        if i + 1 < len(steps):
            z = ddim_step(z, eps, t, steps[i + 1], schedule, clip)
        else:
            z = clip_z0(z, eps, t, schedule, clip)[0]
    return z
