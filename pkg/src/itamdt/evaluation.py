"""Paired evaluation: sample, decode, blend and score inside the garment mask."""

import json
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import correlate1d

from . import codec as codec_mod
from .losses import denoise_loss
from .sampler import CfgConfig, blend, make_schedule, q_sample, sample_latents
from .training import prepare_split, restore


def gaussian_taps(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter(img, taps):
    return correlate1d(correlate1d(img, taps, axis=-1, mode="reflect"), taps, axis=-2, mode="reflect")


def ssim_map(a, b, data_range=1.0, k1=0.01, k2=0.03):
    """Per-pixel SSIM of two C×H×W images with an 11-tap σ=1.5 Gaussian window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    taps = gaussian_taps()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter(a, taps), _filter(b, taps)
    s_aa = _filter(a * a, taps) - mu_a * mu_a
    s_bb = _filter(b * b, taps) - mu_b * mu_b
    s_ab = _filter(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return num / den


def ssim(a, b, mask=None):
    """Mean SSIM; restricted to ``mask`` (1×H×W) when given."""
    m = ssim_map(a, b)
    if mask is None:
        return float(m.mean())
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64), m.shape)
    return float((m * w).sum() / w.sum())


def masked_mse(a, b, mask):
    """Mean squared difference over pixels (and channels) inside ``mask``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.shape)
    return float((w * (a - b) ** 2).sum() / w.sum())


def psnr(mse, data_range=1.0):
    return float("inf") if mse == 0 else float(10 * np.log10(data_range ** 2 / mse))


def score(generated, target, mask):
    mse = masked_mse(generated, target, mask)
    return {"masked_mse": mse, "psnr": psnr(mse), "ssim": ssim(generated, target, mask)}


def generate(model, data, norm, codec, cfg=CfgConfig(), seed=0, schedule=None, clip=True):
    """Sample every item of ``data`` in one batch; returns ``(z0, decoded, blended)``.

    ``z0`` is in raw codec units.
    """
    schedule = schedule or make_schedule()
    z = sample_latents(model, data.refs, data.feats_g, data.feats_s, data.cplx_g, data.cplx_s,
                       cfg, seed, schedule, clip=norm.clip_bounds() if clip else None)
    z = norm.denormalize(z).double().numpy()
    decoded = np.stack([codec_mod.decode(zi, codec) for zi in z]).astype(np.float32)
    blended = np.stack([blend(d, a, m) for d, a, m in zip(decoded, data.agnostic, data.mask)])
    return z, decoded, blended


def _aggregate(rows):
    keys = rows[0].keys()
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def evaluate(ckpt, data_dir, split="val", seed=0, cfg=CfgConfig(), weights="ema", out=None):
    """Score sampled try-ons and the copy-agnostic baseline against ground truth."""
    model, encoder, config, norm = restore(ckpt, weights)
    codec = codec_mod.build_codec(config.codec_seed, config.codec_f)
    data, _ = prepare_split(data_dir, split, codec, encoder, config.sre, norm)
    _, _, blended = generate(model, data, norm, codec, cfg, seed)
    items = []
    for i, sid in enumerate(data.ids):
        items.append({"id": sid,
                      "model": score(blended[i], data.person[i], data.mask[i]),
                      "copy_agnostic": score(data.agnostic[i], data.person[i], data.mask[i])})
    result = {
        "checkpoint": str(ckpt), "split": split, "seed": seed, "steps": cfg.steps,
        "alpha_cfg": cfg.alpha_cfg, "beta_scale": cfg.beta_scale,
        "aggregate": {"model": _aggregate([it["model"] for it in items]),
                      "copy_agnostic": _aggregate([it["copy_agnostic"] for it in items])},
        "items": items,
    }
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(result, indent=1))
    return result


@torch.no_grad()
def val_denoise_loss(model, data, seed=0, draws=4, T_train=1000):
    """Mean conditional noise MSE over fixed (t, noise) draws per item."""
    schedule = make_schedule(T_train)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for _ in range(draws):
        n = len(data)
        t = torch.randint(T_train, (n,), generator=gen)
        eps = torch.randn(data.z0.shape, generator=gen)
        z_t = q_sample(data.z0, t.numpy(), eps, schedule)
        eps_hat = model(z_t, data.refs, t, data.feats_g, data.feats_s, data.cplx_g, data.cplx_s)
        losses.append(float(denoise_loss(eps, eps_hat)))
    return float(np.mean(losses))
